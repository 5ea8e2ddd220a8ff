//! The two-dimensional variance-asymmetric scene: samples, natural and
//! adversarially trained logistic and MLP classifiers, their decision
//! boundaries and Monte-Carlo class-wise errors.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::contour::{marching_squares, Polyline};
use crate::analytic::{linear_classwise_errors, natural_intercept, robust_intercept, LinearErrors};
use crate::attacks::AttackConfig;
use crate::distributions::{format_f64, sample_binary_mixture, MixtureSpec};
use crate::error::{Error, Result};
use crate::evaluation::{mc_classwise_errors_multi, ClasswiseReport};
use crate::models::{serialize_model, Activation, Model, ModelSpec};
use crate::rng;
use crate::training::{train_natural, train_pgd_at, Batch, Method, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneOptions {
    pub n_per_class: usize,
    pub eps: f64,
    /// Lattice points per axis for boundary extraction.
    pub grid: usize,
    /// Boundaries are traced on `[-extent, extent]^2`.
    pub extent: f64,
    pub mlp_hidden: usize,
    pub mlp_activation: Activation,
    pub logistic_epochs: usize,
    pub logistic_lr: f64,
    pub mlp_epochs: usize,
    pub mlp_lr: f64,
    pub mlp_batch: usize,
    pub mlp_momentum: f64,
    /// PGD steps when adversarially training the MLP.
    pub mlp_attack_steps: usize,
    pub mc_samples: usize,
}

impl Default for SceneOptions {
    fn default() -> Self {
        Self {
            n_per_class: 5000,
            eps: 0.5,
            grid: 400,
            extent: 6.0,
            mlp_hidden: 32,
            mlp_activation: Activation::Tanh,
            logistic_epochs: 1000,
            logistic_lr: 0.5,
            mlp_epochs: 15,
            mlp_lr: 0.05,
            mlp_batch: 100,
            mlp_momentum: 0.9,
            mlp_attack_steps: 10,
            mc_samples: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneModel {
    /// `logistic_natural`, `logistic_adversarial`, `mlp_natural` or `mlp_adversarial`.
    pub name: String,
    pub intercept: Option<f64>,
    /// Intercept divided by the mean weight, comparable with the optimal
    /// intercept of the all-ones classifier.
    pub normalized_intercept: Option<f64>,
    pub weights: Option<Vec<f64>>,
    /// Monte-Carlo class-wise errors at radius `eps` on fresh samples.
    pub mc: ClasswiseReport,
    /// Exact errors of the same linear classifier, for logistic models.
    pub exact: Option<LinearErrors>,
    pub boundary_polylines: usize,
    #[serde(skip)]
    pub model: Option<Model>,
    #[serde(skip)]
    pub boundary: Vec<Polyline>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSummary {
    pub seed: u64,
    pub spec: MixtureSpec,
    pub eps: f64,
    pub options: SceneOptions,
    pub optimal_b_nat: f64,
    pub optimal_b_rob: f64,
    pub models: Vec<SceneModel>,
}

impl SceneSummary {
    pub fn model(&self, name: &str) -> Option<&SceneModel> {
        self.models.iter().find(|m| m.name == name)
    }
}

fn boundary(model: &Model, opts: &SceneOptions) -> Vec<Polyline> {
    let n = opts.grid;
    let e = opts.extent;
    let coord = |k: usize| -e + 2.0 * e * k as f64 / (n - 1) as f64;
    let values: Vec<f64> = (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let z = model.logits(&[coord(idx % n), coord(idx / n)]);
            z[1] - z[0]
        })
        .collect();
    marching_squares(&values, n, n, [-e, e], [-e, e])
}

fn write_polylines(path: &Path, lines: &[Polyline]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "polyline,x,y")?;
    for (k, l) in lines.iter().enumerate() {
        for p in &l.points {
            writeln!(f, "{k},{},{}", format_f64(p[0]), format_f64(p[1]))?;
        }
    }
    f.flush()?;
    Ok(())
}

/// Builds the scene for `seed`; when `out_dir` is given writes
/// `samples.csv`, `boundary_<model>.csv`, `model_<model>.json` and
/// `errors.json` there.
pub fn fig2_scene(seed: u64, opts: &SceneOptions, out_dir: Option<&Path>) -> Result<SceneSummary> {
    if opts.grid < 2 || opts.n_per_class == 0 || !(opts.extent > 0.0) {
        return Err(Error::Parameter("scene needs grid >= 2, n_per_class >= 1 and extent > 0".into()));
    }
    let spec = MixtureSpec::fig2();
    let data = sample_binary_mixture(&spec, 2 * opts.n_per_class, rng::derive_seed(seed, "fig2/data"))?;
    let attack = AttackConfig::pgd20_linf(opts.eps);
    let mlp_attack = AttackConfig::linf_steps(opts.eps, opts.mlp_attack_steps);

    let logistic = ModelSpec::Linear { input_dim: 2 };
    let mlp = ModelSpec::mlp(2, opts.mlp_hidden, 2, opts.mlp_activation);
    let lcfg = |method, name: &str| TrainConfig::new(method, opts.logistic_epochs, opts.logistic_lr, Batch::Full, rng::derive_seed(seed, name));
    let mcfg = |method, name: &str| TrainConfig {
        momentum: opts.mlp_momentum,
        ..TrainConfig::new(method, opts.mlp_epochs, opts.mlp_lr, Batch::Size(opts.mlp_batch), rng::derive_seed(seed, name))
    };

    let trained: Vec<(&str, Model)> = vec![
        ("logistic_natural", train_natural(&data, &logistic, &lcfg(Method::Natural, "fig2/logistic_natural"))?),
        ("logistic_adversarial", train_pgd_at(&data, &logistic, &lcfg(Method::PgdAt, "fig2/logistic_adversarial"), &attack)?),
        ("mlp_natural", train_natural(&data, &mlp, &mcfg(Method::Natural, "fig2/mlp_natural"))?),
        ("mlp_adversarial", train_pgd_at(&data, &mlp, &mcfg(Method::PgdAt, "fig2/mlp_adversarial"), &mlp_attack)?),
    ];

    let entries: Vec<(&Model, f64)> = trained.iter().map(|(_, m)| (m, opts.eps)).collect();
    let reports = mc_classwise_errors_multi(&spec, &entries, opts.mc_samples, rng::derive_seed(seed, "fig2/mc"))?;

    let mut models = Vec::new();
    for ((name, model), mc) in trained.into_iter().zip(reports) {
        let lines = boundary(&model, opts);
        let (intercept, normalized_intercept, weights, exact) = match model.as_linear() {
            Some(l) => (
                Some(l.intercept),
                Some(l.normalized_intercept()),
                Some(l.weights.clone()),
                Some(linear_classwise_errors(&spec, &l.weights, l.intercept, opts.eps)?),
            ),
            None => (None, None, None, None),
        };
        models.push(SceneModel {
            name: name.to_string(),
            intercept,
            normalized_intercept,
            weights,
            mc,
            exact,
            boundary_polylines: lines.len(),
            model: Some(model),
            boundary: lines,
        });
    }
    let summary = SceneSummary {
        seed,
        spec,
        eps: opts.eps,
        options: opts.clone(),
        optimal_b_nat: natural_intercept(&spec)?,
        optimal_b_rob: robust_intercept(&spec, opts.eps)?,
        models,
    };

    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        data.save_csv(&dir.join("samples.csv"))?;
        for m in &summary.models {
            write_polylines(&dir.join(format!("boundary_{}.csv", m.name)), &m.boundary)?;
            if let Some(model) = &m.model {
                fs::write(dir.join(format!("model_{}.json", m.name)), serialize_model(model))?;
            }
        }
        fs::write(dir.join("errors.json"), serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n")?;
    }
    Ok(summary)
}
