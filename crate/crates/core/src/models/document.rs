//! Versioned JSON model documents.
//!
//! ```text
//! {"format_version":1,"kind":"mlp","dims":[2,32,2],"activation":"tanh","params":[...]}
//! ```
//!
//! `params` is the flat parameter vector (row-major weight matrices, then
//! biases, layer by layer) written with 17 significant digits. Linear models
//! use `dims = [p]`, `activation = null` and `params = w ++ [b]`.

use serde::Deserialize;

use super::{Activation, LinearClassifier, MlpClassifier, Model};
use crate::distributions::format_f64;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDocument {
    format_version: u32,
    kind: String,
    dims: Vec<usize>,
    activation: Option<Activation>,
    params: Vec<f64>,
}

pub fn serialize_model(model: &Model) -> String {
    let (kind, dims, activation) = match model {
        Model::Linear(m) => ("linear", vec![m.weights.len()], "null".to_string()),
        Model::Mlp(m) => ("mlp", m.dims().to_vec(), format!("\"{}\"", m.activation().name())),
    };
    let dims: Vec<String> = dims.iter().map(ToString::to_string).collect();
    let params: Vec<String> = model.params().iter().map(|v| format_f64(*v)).collect();
    format!(
        "{{\"format_version\":{FORMAT_VERSION},\"kind\":\"{kind}\",\"dims\":[{}],\"activation\":{activation},\"params\":[{}]}}\n",
        dims.join(","),
        params.join(",")
    )
}

pub fn deserialize_model(document: &str) -> Result<Model> {
    let raw: RawDocument = serde_json::from_str(document).map_err(|e| Error::Document(e.to_string()))?;
    if raw.format_version != FORMAT_VERSION {
        return Err(Error::Document(format!(
            "unsupported format_version {} (expected {FORMAT_VERSION})",
            raw.format_version
        )));
    }
    let doc_err = |e: Error| Error::Document(e.to_string());
    match raw.kind.as_str() {
        "linear" => {
            let [p] = raw.dims[..] else {
                return Err(Error::Document(format!("linear model needs dims [p], got {:?}", raw.dims)));
            };
            if raw.params.len() != p + 1 {
                return Err(Error::Document(format!("expected {} params, got {}", p + 1, raw.params.len())));
            }
            let mut w = raw.params;
            let b = w.pop().expect("length checked");
            Ok(Model::Linear(LinearClassifier::new(w, b).map_err(doc_err)?))
        }
        "mlp" => {
            let act = raw.activation.ok_or_else(|| Error::Document("mlp document needs an activation".into()))?;
            Ok(Model::Mlp(MlpClassifier::new(raw.dims, act, raw.params).map_err(doc_err)?))
        }
        other => Err(Error::Document(format!("unknown model kind `{other}`"))),
    }
}
