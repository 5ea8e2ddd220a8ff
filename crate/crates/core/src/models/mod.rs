//! Trainable classifiers with hand-written forward and backward passes.
//!
//! Parameters are addressed as one flat vector. For the MLP each layer
//! contributes its weight matrix (row-major, `out x in`) followed by its bias.
//! The binary linear classifier stores `w` then `b`, and exposes the logits
//! `[0, w.x + b]` so that softmax cross-entropy reduces to the logistic loss.

mod document;
mod loss;

pub use document::{deserialize_model, serialize_model, FORMAT_VERSION};
pub use loss::{cross_entropy_grad, kl_boundary_grad, log_softmax, softmax, LossGrad};
pub(crate) use loss::{accumulate_ce, accumulate_kl, ce_input_grad, kl_input_grad};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    fn derivative(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }
}

/// `sign(w.x + b)`; label 1 iff the margin is strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl LinearClassifier {
    pub fn new(weights: Vec<f64>, intercept: f64) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Parameter("linear classifier needs at least one weight".into()));
        }
        if weights.iter().chain(std::iter::once(&intercept)).any(|v| !v.is_finite()) {
            return Err(Error::Parameter("non-finite linear parameter".into()));
        }
        Ok(Self { weights, intercept })
    }

    #[inline]
    pub fn margin(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.intercept
    }

    /// Intercept after rescaling so the weights average to one; comparable to
    /// the all-ones closed forms.
    pub fn normalized_intercept(&self) -> f64 {
        let mean = self.weights.iter().sum::<f64>() / self.weights.len() as f64;
        self.intercept / mean
    }
}

/// Fully connected network; tanh or relu on every hidden layer, identity on
/// the output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpClassifier {
    dims: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
}

fn mlp_param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl MlpClassifier {
    pub fn new(dims: Vec<usize>, activation: Activation, params: Vec<f64>) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::Parameter(format!("invalid layer dims {dims:?}")));
        }
        ensure_dim(mlp_param_count(&dims), params.len())?;
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("non-finite MLP parameter".into()));
        }
        Ok(Self { dims, activation, params })
    }

    pub fn zeros(dims: Vec<usize>, activation: Activation) -> Result<Self> {
        let n = mlp_param_count(&dims);
        Self::new(dims, activation, vec![0.0; n])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    fn layer_count(&self) -> usize {
        self.dims.len() - 1
    }

    /// Runs the network and keeps every layer's output (`outs[0]` is the input).
    pub(crate) fn forward_trace(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut outs = Vec::with_capacity(self.dims.len());
        outs.push(x.to_vec());
        let mut offset = 0;
        let last = self.layer_count();
        for l in 0..last {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let w = &self.params[offset..offset + n_in * n_out];
            let b = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let input = &outs[l];
            let mut z: Vec<f64> = w
                .chunks_exact(n_in)
                .zip(b)
                .map(|(row, bias)| row.iter().zip(input).map(|(a, v)| a * v).sum::<f64>() + bias)
                .collect();
            if l + 1 < last {
                for v in &mut z {
                    *v = self.activation.apply(*v);
                }
            }
            outs.push(z);
        }
        outs
    }

    /// Pre-activations of every hidden unit, for kink detection.
    pub fn hidden_preactivations(&self, x: &[f64]) -> Vec<f64> {
        let mut pre = Vec::new();
        let mut input = x.to_vec();
        let mut offset = 0;
        for l in 0..self.layer_count() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let w = &self.params[offset..offset + n_in * n_out];
            let b = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let z: Vec<f64> = w
                .chunks_exact(n_in)
                .zip(b)
                .map(|(row, bias)| row.iter().zip(&input).map(|(a, v)| a * v).sum::<f64>() + bias)
                .collect();
            if l + 1 < self.layer_count() {
                pre.extend_from_slice(&z);
            }
            input = z.into_iter().map(|v| self.activation.apply(v)).collect();
        }
        pre
    }

    /// Backpropagates `dlogits` through a trace, adding the parameter
    /// gradient into `grad` and writing the input gradient, when requested.
    pub(crate) fn backward(
        &self,
        outs: &[Vec<f64>],
        dlogits: &[f64],
        mut grad: Option<&mut [f64]>,
        input_grad: Option<&mut [f64]>,
    ) {
        let last = self.layer_count();
        if last == 0 {
            if let Some(ig) = input_grad {
                ig.copy_from_slice(dlogits);
            }
            return;
        }
        let mut offsets = Vec::with_capacity(last);
        let mut off = 0;
        for l in 0..last {
            offsets.push(off);
            off += self.dims[l] * self.dims[l + 1] + self.dims[l + 1];
        }
        let mut delta = dlogits.to_vec();
        let mut input_grad = input_grad;
        for l in (0..last).rev() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let o = offsets[l];
            let a_in = &outs[l];
            if let Some(grad) = grad.as_deref_mut() {
                let (gw, gb) = grad[o..o + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                for (k, dk) in delta.iter().enumerate() {
                    for (g, a) in gw[k * n_in..(k + 1) * n_in].iter_mut().zip(a_in) {
                        *g += dk * a;
                    }
                    gb[k] += dk;
                }
            }
            if l == 0 && input_grad.is_none() {
                break;
            }
            let w = &self.params[o..o + n_in * n_out];
            let mut back = vec![0.0; n_in];
            for (k, dk) in delta.iter().enumerate() {
                for (b, wv) in back.iter_mut().zip(&w[k * n_in..(k + 1) * n_in]) {
                    *b += dk * wv;
                }
            }
            if l == 0 {
                if let Some(ig) = input_grad.take() {
                    ig.copy_from_slice(&back);
                }
            } else {
                for (b, a) in back.iter_mut().zip(a_in) {
                    *b *= self.activation.derivative(*a);
                }
                delta = back;
            }
        }
    }

    /// Upper bound on the l2 Lipschitz constant of the logits: the product of
    /// layer spectral norms bounded by Frobenius norms (tanh and relu are
    /// 1-Lipschitz).
    pub fn lipschitz_bound(&self) -> f64 {
        let mut off = 0;
        let mut bound = 1.0;
        for l in 0..self.layer_count() {
            let n = self.dims[l] * self.dims[l + 1];
            let fro = self.params[off..off + n].iter().map(|v| v * v).sum::<f64>().sqrt();
            bound *= fro;
            off += n + self.dims[l + 1];
        }
        bound
    }
}

/// Forward state kept between the forward and backward pass.
pub(crate) enum Trace {
    Linear,
    Mlp(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Linear(LinearClassifier),
    Mlp(MlpClassifier),
}

/// What `init_model` should build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSpec {
    /// Binary logistic-linear classifier.
    Linear { input_dim: usize },
    Mlp {
        input_dim: usize,
        #[serde(default = "default_hidden")]
        hidden: Vec<usize>,
        classes: usize,
        #[serde(default = "default_activation")]
        activation: Activation,
    },
}

fn default_hidden() -> Vec<usize> {
    vec![32]
}

fn default_activation() -> Activation {
    Activation::Tanh
}

impl ModelSpec {
    pub fn mlp(input_dim: usize, hidden: usize, classes: usize, activation: Activation) -> Self {
        ModelSpec::Mlp { input_dim, hidden: vec![hidden], classes, activation }
    }
}

/// Deterministic initialisation: every weight and bias is drawn from
/// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn init_model(spec: &ModelSpec, seed: u64) -> Result<Model> {
    let mut stream = rng::stream(seed, 0);
    match spec {
        ModelSpec::Linear { input_dim } => {
            if *input_dim == 0 {
                return Err(Error::Parameter("input_dim must be >= 1".into()));
            }
            let bound = 1.0 / (*input_dim as f64).sqrt();
            let weights = (0..*input_dim).map(|_| stream.random_range(-bound..bound)).collect();
            let intercept = stream.random_range(-bound..bound);
            Ok(Model::Linear(LinearClassifier::new(weights, intercept)?))
        }
        ModelSpec::Mlp { input_dim, hidden, classes, activation } => {
            let mut dims = vec![*input_dim];
            dims.extend_from_slice(hidden);
            dims.push(*classes);
            if dims.contains(&0) || *classes < 2 {
                return Err(Error::Parameter(format!("invalid MLP dims {dims:?}")));
            }
            let mut params = Vec::with_capacity(mlp_param_count(&dims));
            for w in dims.windows(2) {
                let bound = 1.0 / (w[0] as f64).sqrt();
                for _ in 0..w[0] * w[1] + w[1] {
                    params.push(stream.random_range(-bound..bound));
                }
            }
            Ok(Model::Mlp(MlpClassifier::new(dims, *activation, params)?))
        }
    }
}

impl Model {
    pub fn input_dim(&self) -> usize {
        match self {
            Model::Linear(m) => m.weights.len(),
            Model::Mlp(m) => m.dims[0],
        }
    }

    pub fn class_count(&self) -> usize {
        match self {
            Model::Linear(_) => 2,
            Model::Mlp(m) => *m.dims.last().expect("dims non-empty"),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Model::Linear(m) => m.weights.len() + 1,
            Model::Mlp(m) => m.params.len(),
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match self {
            Model::Linear(m) => {
                let mut p = m.weights.clone();
                p.push(m.intercept);
                p
            }
            Model::Mlp(m) => m.params.clone(),
        }
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        ensure_dim(self.param_count(), params.len())?;
        match self {
            Model::Linear(m) => {
                let n = m.weights.len();
                m.weights.copy_from_slice(&params[..n]);
                m.intercept = params[n];
            }
            Model::Mlp(m) => m.params.copy_from_slice(params),
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Model::Linear(m) => m.weights.iter().all(|v| v.is_finite()) && m.intercept.is_finite(),
            Model::Mlp(m) => m.params.iter().all(|v| v.is_finite()),
        }
    }

    pub fn as_linear(&self) -> Option<&LinearClassifier> {
        match self {
            Model::Linear(m) => Some(m),
            Model::Mlp(_) => None,
        }
    }

    /// Logits for `x`; the linear model reports `[0, margin]`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        ensure_dim(self.input_dim(), x.len())?;
        Ok(self.logits(x))
    }

    pub(crate) fn logits(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Model::Linear(m) => vec![0.0, m.margin(x)],
            Model::Mlp(m) => m.forward_trace(x).pop().expect("trace has an output"),
        }
    }

    pub(crate) fn logits_traced(&self, x: &[f64]) -> (Vec<f64>, Trace) {
        match self {
            Model::Linear(m) => (vec![0.0, m.margin(x)], Trace::Linear),
            Model::Mlp(m) => {
                let outs = m.forward_trace(x);
                let logits = outs.last().expect("trace has an output").clone();
                (logits, Trace::Mlp(outs))
            }
        }
    }

    pub(crate) fn backward(
        &self,
        x: &[f64],
        trace: &Trace,
        dlogits: &[f64],
        grad: Option<&mut [f64]>,
        input_grad: Option<&mut [f64]>,
    ) {
        match (self, trace) {
            (Model::Linear(m), Trace::Linear) => {
                let ds = dlogits[1];
                let n = m.weights.len();
                if let Some(grad) = grad {
                    for (g, v) in grad[..n].iter_mut().zip(x) {
                        *g += ds * v;
                    }
                    grad[n] += ds;
                }
                if let Some(ig) = input_grad {
                    for (g, w) in ig.iter_mut().zip(&m.weights) {
                        *g = ds * w;
                    }
                }
            }
            (Model::Mlp(m), Trace::Mlp(outs)) => m.backward(outs, dlogits, grad, input_grad),
            _ => unreachable!("trace kind matches model kind"),
        }
    }

    /// Predicted class; ties go to the lowest index (margin 0 predicts class 0).
    pub fn predict(&self, x: &[f64]) -> usize {
        match self {
            Model::Linear(m) => usize::from(m.margin(x) > 0.0),
            Model::Mlp(_) => argmax(&self.logits(x)),
        }
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// `params <- params - lr * gradient`.
pub fn sgd_step(model: &mut Model, gradient: &[f64], lr: f64) -> Result<()> {
    if !(lr.is_finite() && lr > 0.0) {
        return Err(Error::Parameter(format!("learning rate must be positive, got {lr}")));
    }
    ensure_dim(model.param_count(), gradient.len())?;
    match model {
        Model::Linear(m) => {
            let n = m.weights.len();
            for (w, g) in m.weights.iter_mut().zip(gradient) {
                *w -= lr * g;
            }
            m.intercept -= lr * gradient[n];
        }
        Model::Mlp(m) => {
            for (p, g) in m.params.iter_mut().zip(gradient) {
                *p -= lr * g;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mlp(seed: u64, activation: Activation) -> Model {
        init_model(&ModelSpec::mlp(3, 8, 4, activation), seed).unwrap()
    }

    #[test]
    fn linear_forward_is_margin() {
        let m = Model::Linear(LinearClassifier::new(vec![1.0, 1.0], 0.0).unwrap());
        assert_eq!(m.forward(&[2.0, 2.0]).unwrap(), vec![0.0, 4.0]);
        assert_eq!(m.predict(&[2.0, 2.0]), 1);
        assert_eq!(m.predict(&[0.0, 0.0]), 0);
        assert!(m.forward(&[1.0]).is_err());
    }

    #[test]
    fn zero_mlp_gives_uniform_logits() {
        let m = Model::Mlp(MlpClassifier::zeros(vec![3, 5, 4], Activation::Tanh).unwrap());
        let logits = m.forward(&[0.3, -2.0, 7.0]).unwrap();
        assert!(logits.iter().all(|v| *v == logits[0]));
    }

    #[test]
    fn tanh_net_respects_lipschitz_bound() {
        let model = mlp(3, Activation::Tanh);
        let Model::Mlp(inner) = &model else { unreachable!() };
        let lip = inner.lipschitz_bound();
        let mut stream = rng::stream(99, 0);
        for _ in 0..200 {
            let x: Vec<f64> = (0..3).map(|_| stream.random_range(-3.0..3.0)).collect();
            let delta: Vec<f64> = (0..3).map(|_| stream.random_range(-0.1..0.1)).collect();
            let xd: Vec<f64> = x.iter().zip(&delta).map(|(a, b)| a + b).collect();
            let f0 = model.forward(&x).unwrap();
            let f1 = model.forward(&xd).unwrap();
            let diff = f0.iter().zip(&f1).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let dn = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(diff <= lip * dn + 1e-12);
        }
    }

    #[test]
    fn sgd_arithmetic() {
        let mut m = mlp(1, Activation::Relu);
        let before = m.clone();
        let zero = vec![0.0; m.param_count()];
        sgd_step(&mut m, &zero, 0.5).unwrap();
        assert_eq!(m, before);
        let p = m.params();
        sgd_step(&mut m, &p, 1.0).unwrap();
        assert!(m.params().iter().all(|v| *v == 0.0));
        assert!(sgd_step(&mut m, &p, 0.0).is_err());
        assert!(sgd_step(&mut m, &p[1..], 0.1).is_err());
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        assert_eq!(mlp(5, Activation::Tanh), mlp(5, Activation::Tanh));
        assert_ne!(mlp(5, Activation::Tanh), mlp(6, Activation::Tanh));
        let Model::Mlp(m) = mlp(5, Activation::Tanh) else { unreachable!() };
        let first_layer = &m.params()[..3 * 8 + 8];
        assert!(first_layer.iter().all(|v| v.abs() <= 1.0 / 3f64.sqrt()));
        let lin = init_model(&ModelSpec::Linear { input_dim: 4 }, 2).unwrap();
        assert_eq!(lin.param_count(), 5);
    }

    #[test]
    fn set_params_round_trip() {
        let mut m = mlp(2, Activation::Tanh);
        let mut p = m.params();
        p[0] = 42.0;
        m.set_params(&p).unwrap();
        assert_eq!(m.params(), p);
        assert!(m.set_params(&p[1..]).is_err());
    }
}
