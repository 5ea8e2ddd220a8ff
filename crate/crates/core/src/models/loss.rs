//! Softmax cross-entropy and the clean-vs-adversarial KL term, with exact
//! parameter and input gradients.

use super::Model;
use crate::error::{ensure_dim, Error, Result};

/// Loss value with its flat parameter gradient and, when requested, the
/// gradient with respect to the (adversarial) input.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub gradient: Vec<f64>,
    pub input_gradient: Option<Vec<f64>>,
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

/// `weight * CE(softmax(f(x)), y)`, adding its parameter gradient to `grad`.
pub(crate) fn accumulate_ce(model: &Model, x: &[f64], y: usize, weight: f64, grad: &mut [f64]) -> f64 {
    let (logits, trace) = model.logits_traced(x);
    let logp = log_softmax(&logits);
    let dl = ce_dlogits(&logp, y, weight);
    model.backward(x, &trace, &dl, Some(grad), None);
    -weight * logp[y]
}

fn ce_dlogits(logp: &[f64], y: usize, weight: f64) -> Vec<f64> {
    logp.iter()
        .enumerate()
        .map(|(k, lp)| weight * (lp.exp() - if k == y { 1.0 } else { 0.0 }))
        .collect()
}

/// Unweighted cross-entropy at `x` and its gradient with respect to `x`.
pub(crate) fn ce_input_grad(model: &Model, x: &[f64], y: usize) -> (f64, Vec<f64>) {
    let (logits, trace) = model.logits_traced(x);
    let logp = log_softmax(&logits);
    let dl = ce_dlogits(&logp, y, 1.0);
    let mut ig = vec![0.0; x.len()];
    model.backward(x, &trace, &dl, None, Some(&mut ig));
    (-logp[y], ig)
}

/// `KL(p || q) = sum_k p_k (log p_k - log q_k)`.
pub(crate) fn kl_value(logp: &[f64], logq: &[f64]) -> f64 {
    logp.iter().zip(logq).map(|(lp, lq)| lp.exp() * (lp - lq)).sum::<f64>().max(0.0)
}

/// KL between fixed clean log-probabilities and the model at `x_adv`, with
/// its gradient with respect to `x_adv`.
pub(crate) fn kl_input_grad(model: &Model, clean_logp: &[f64], x_adv: &[f64]) -> (f64, Vec<f64>) {
    let (logits, trace) = model.logits_traced(x_adv);
    let logq = log_softmax(&logits);
    // d KL / d u_j = q_j - p_j
    let dl: Vec<f64> = logq.iter().zip(clean_logp).map(|(lq, lp)| lq.exp() - lp.exp()).collect();
    let mut ig = vec![0.0; x_adv.len()];
    model.backward(x_adv, &trace, &dl, None, Some(&mut ig));
    (kl_value(clean_logp, &logq), ig)
}

/// `weight * KL(softmax(f(x_clean)) || softmax(f(x_adv)))` with both branches
/// differentiated; adds the parameter gradient to `grad` and optionally
/// writes the gradient with respect to `x_adv`.
pub(crate) fn accumulate_kl(
    model: &Model,
    x_clean: &[f64],
    x_adv: &[f64],
    weight: f64,
    grad: &mut [f64],
    input_grad: Option<&mut [f64]>,
) -> f64 {
    let (zc, tc) = model.logits_traced(x_clean);
    let (za, ta) = model.logits_traced(x_adv);
    let logp = log_softmax(&zc);
    let logq = log_softmax(&za);
    // Computed without the clamp so the clean-branch gradient is exact.
    let kl: f64 = logp.iter().zip(&logq).map(|(lp, lq)| lp.exp() * (lp - lq)).sum();
    // d KL / d z_j = p_j (log p_j - log q_j - KL)
    let d_clean: Vec<f64> = logp.iter().zip(&logq).map(|(lp, lq)| weight * lp.exp() * (lp - lq - kl)).collect();
    let d_adv: Vec<f64> = logq.iter().zip(&logp).map(|(lq, lp)| weight * (lq.exp() - lp.exp())).collect();
    model.backward(x_clean, &tc, &d_clean, Some(grad), None);
    model.backward(x_adv, &ta, &d_adv, Some(grad), input_grad);
    weight * kl.max(0.0)
}

fn check_weight(weight: f64) -> Result<()> {
    if weight.is_finite() && weight > 0.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("sample weight must be positive, got {weight}")))
    }
}

pub fn cross_entropy_grad(model: &Model, x: &[f64], y: usize, sample_weight: f64) -> Result<LossGrad> {
    ensure_dim(model.input_dim(), x.len())?;
    check_weight(sample_weight)?;
    if y >= model.class_count() {
        return Err(Error::Parameter(format!("class {y} outside [0, {})", model.class_count())));
    }
    let (logits, trace) = model.logits_traced(x);
    let logp = log_softmax(&logits);
    let dl = ce_dlogits(&logp, y, sample_weight);
    let mut gradient = vec![0.0; model.param_count()];
    let mut ig = vec![0.0; x.len()];
    model.backward(x, &trace, &dl, Some(&mut gradient), Some(&mut ig));
    Ok(LossGrad { loss: -sample_weight * logp[y], gradient, input_gradient: Some(ig) })
}

pub fn kl_boundary_grad(model: &Model, x_clean: &[f64], x_adv: &[f64], sample_weight: f64) -> Result<LossGrad> {
    ensure_dim(model.input_dim(), x_clean.len())?;
    ensure_dim(model.input_dim(), x_adv.len())?;
    check_weight(sample_weight)?;
    let mut gradient = vec![0.0; model.param_count()];
    let mut ig = vec![0.0; x_adv.len()];
    let loss = accumulate_kl(model, x_clean, x_adv, sample_weight, &mut gradient, Some(&mut ig));
    Ok(LossGrad { loss, gradient, input_gradient: Some(ig) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{init_model, Activation, LinearClassifier, MlpClassifier, ModelSpec};

    #[test]
    fn uniform_logits_give_log_two() {
        let m = Model::Mlp(MlpClassifier::zeros(vec![2, 4, 2], Activation::Tanh).unwrap());
        let lg = cross_entropy_grad(&m, &[0.5, -1.0], 1, 3.0).unwrap();
        assert!((lg.loss - 3.0 * std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn weight_scales_exactly() {
        let m = init_model(&ModelSpec::mlp(3, 6, 3, Activation::Tanh), 4).unwrap();
        let x = [0.3, -0.7, 1.1];
        let a = cross_entropy_grad(&m, &x, 2, 1.0).unwrap();
        let b = cross_entropy_grad(&m, &x, 2, 2.0).unwrap();
        assert_eq!(b.loss, 2.0 * a.loss);
        for (u, v) in a.gradient.iter().zip(&b.gradient) {
            assert_eq!(*v, 2.0 * u);
        }
        let xa = [0.4, -0.5, 1.0];
        let a = kl_boundary_grad(&m, &x, &xa, 1.0).unwrap();
        let b = kl_boundary_grad(&m, &x, &xa, 2.0).unwrap();
        assert_eq!(b.loss, 2.0 * a.loss);
        for (u, v) in a.gradient.iter().zip(&b.gradient) {
            assert_eq!(*v, 2.0 * u);
        }
    }

    #[test]
    fn kl_vanishes_on_identical_inputs() {
        let m = init_model(&ModelSpec::mlp(2, 5, 3, Activation::Relu), 1).unwrap();
        let x = [0.2, 0.9];
        let lg = kl_boundary_grad(&m, &x, &x, 1.0).unwrap();
        assert_eq!(lg.loss, 0.0);
        assert!(lg.gradient.iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn linear_gradient_is_the_logistic_one() {
        let m = Model::Linear(LinearClassifier::new(vec![0.5, -1.0], 0.3).unwrap());
        let x = [1.2, 0.4];
        let s = 0.5 * 1.2 - 0.4 + 0.3;
        let sig = 1.0 / (1.0 + f64::exp(-s));
        let lg = cross_entropy_grad(&m, &x, 1, 1.0).unwrap();
        assert!((lg.loss - (1.0 + f64::exp(-s)).ln()).abs() < 1e-14);
        let want = [-(1.0 - sig) * 1.2, -(1.0 - sig) * 0.4, -(1.0 - sig)];
        for (g, w) in lg.gradient.iter().zip(want) {
            assert!((g - w).abs() < 1e-14, "{g} vs {w}");
        }
        let ig = lg.input_gradient.unwrap();
        assert!((ig[1] - (1.0 - sig)).abs() < 1e-14);
    }

    #[test]
    fn invalid_inputs() {
        let m = Model::Linear(LinearClassifier::new(vec![1.0, 1.0], 0.0).unwrap());
        assert!(cross_entropy_grad(&m, &[1.0, 1.0], 2, 1.0).is_err());
        assert!(cross_entropy_grad(&m, &[1.0], 0, 1.0).is_err());
        assert!(cross_entropy_grad(&m, &[1.0, 1.0], 0, 0.0).is_err());
        assert!(kl_boundary_grad(&m, &[1.0, 1.0], &[1.0], 1.0).is_err());
    }

    #[test]
    fn linear_ce_is_logistic_loss() {
        let m = Model::Linear(LinearClassifier::new(vec![0.5, -1.0], 0.25).unwrap());
        let x = [1.0, 2.0];
        let s = m.as_linear().unwrap().margin(&x);
        let lg = cross_entropy_grad(&m, &x, 1, 1.0).unwrap();
        assert!((lg.loss - (1.0 + (-s).exp()).ln()).abs() < 1e-14);
        let lg0 = cross_entropy_grad(&m, &x, 0, 1.0).unwrap();
        assert!((lg0.loss - (1.0 + s.exp()).ln()).abs() < 1e-14);
    }
}
