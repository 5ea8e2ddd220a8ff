//! Closed-form optimal linear classifiers on the binary mixture and their
//! class-wise errors.
//!
//! With weights fixed to all-ones the only free parameter is the intercept.
//! Writing `S = sum_i x_i`, class 0 has `S ~ N(-d eta, d sigma^2)` and class 1
//! has `S ~ N(d eta, d K^2 sigma^2)`; setting the derivative of the average
//! error to zero gives the intercept `g(eta)` below. Under an l-inf budget
//! `eps` every sample moves `d eps` towards the boundary, so the robust optimum
//! is the natural one evaluated at `eta - eps`.

use serde::{Deserialize, Serialize};
use libm::erfc;

use crate::distributions::MixtureSpec;
use crate::error::{Error, Result};

/// Standard normal CDF via the complementary error function.
pub fn std_normal_cdf(z: f64) -> Result<f64> {
    if !z.is_finite() {
        return Err(Error::Domain(format!("normal CDF of non-finite value {z}")));
    }
    Ok(phi(z))
}

#[inline]
pub(crate) fn phi(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// `q(K) = 2 ln K / (K^2 - 1)`.
pub fn q_factor(k_ratio: f64) -> Result<f64> {
    if !(k_ratio.is_finite() && k_ratio > 1.0) {
        return Err(Error::Domain(format!("q(K) requires K > 1, got {k_ratio}")));
    }
    // ln_1p keeps precision as K approaches 1.
    let u = k_ratio - 1.0;
    Ok(2.0 * u.ln_1p() / (u * (k_ratio + 1.0)))
}

/// Misclassification probabilities of the two classes (class "-1" is label 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClasswiseErrorPair {
    pub err_minus: f64,
    pub err_plus: f64,
}

impl ClasswiseErrorPair {
    pub fn average(&self) -> f64 {
        0.5 * (self.err_minus + self.err_plus)
    }

    pub fn get(&self, label: usize) -> f64 {
        if label == 1 {
            self.err_plus
        } else {
            self.err_minus
        }
    }
}

/// Intermediate quantities shared by the natural and robust closed forms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormTerms {
    pub a_term: f64,
    pub b_term: f64,
    pub q_k: f64,
    pub b_nat: f64,
    pub b_rob: f64,
}

/// `g(eta)` for an all-ones classifier over `d` coordinates.
pub fn intercept_g(d: f64, eta: f64, sigma: f64, k_ratio: f64, q_k: f64) -> f64 {
    let k2 = k_ratio * k_ratio;
    let c = 2.0 / (k2 - 1.0);
    (k2 + 1.0) / (k2 - 1.0) * d * eta - k_ratio * ((c * d * eta).powi(2) + d * sigma * sigma * q_k).sqrt()
}

/// Scaled separation `2 sqrt(d) eta / ((K^2 - 1) sigma)`.
fn scaled_separation(d: f64, eta: f64, sigma: f64, k_ratio: f64) -> f64 {
    2.0 / (k_ratio * k_ratio - 1.0) * d.sqrt() * eta / sigma
}

/// Class-wise errors `(Phi(A - K sqrt(A^2+q) - s_minus), Phi(-K A + sqrt(A^2+q) - s_plus))`.
fn pair_from_separation(a: f64, k_ratio: f64, q_k: f64, shift_minus: f64, shift_plus: f64) -> ClasswiseErrorPair {
    let root = (a * a + q_k).sqrt();
    ClasswiseErrorPair {
        err_minus: phi(a - k_ratio * root - shift_minus),
        err_plus: phi(-k_ratio * a + root - shift_plus),
    }
}

fn require_closed_form(spec: &MixtureSpec) -> Result<()> {
    spec.validate()?;
    if spec.m > 0 {
        return Err(Error::Domain("closed forms for m > 0 live in theorem3_errors".into()));
    }
    if spec.k_ratio <= 1.0 {
        return Err(Error::Domain("closed forms are singular at K = 1; use linear_classwise_errors".into()));
    }
    Ok(())
}

fn require_margin(spec: &MixtureSpec, eps: f64, allow_zero: bool) -> Result<()> {
    let lower_ok = if allow_zero { eps >= 0.0 } else { eps > 0.0 };
    if !(eps.is_finite() && lower_ok) {
        return Err(Error::Domain(format!("margin {eps} must be {} 0", if allow_zero { ">=" } else { ">" })));
    }
    if eps >= spec.eta {
        return Err(Error::Domain(format!("margin {eps} must be below the mean scale {}", spec.eta)));
    }
    Ok(())
}

/// All closed-form terms with an explicit `q(K)`; used by the verification
/// harness to test that a perturbed constant is detected.
pub fn closed_form_terms_with_q(spec: &MixtureSpec, eps: f64, q_k: f64) -> Result<ClosedFormTerms> {
    require_closed_form(spec)?;
    require_margin(spec, eps, true)?;
    let d = spec.d as f64;
    Ok(ClosedFormTerms {
        a_term: scaled_separation(d, spec.eta, spec.sigma, spec.k_ratio),
        b_term: scaled_separation(d, spec.eta - eps, spec.sigma, spec.k_ratio),
        q_k,
        b_nat: intercept_g(d, spec.eta, spec.sigma, spec.k_ratio, q_k),
        b_rob: intercept_g(d, spec.eta - eps, spec.sigma, spec.k_ratio, q_k),
    })
}

pub fn closed_form_terms(spec: &MixtureSpec, eps: f64) -> Result<ClosedFormTerms> {
    let q = q_factor(spec.k_ratio)?;
    closed_form_terms_with_q(spec, eps, q)
}

impl ClosedFormTerms {
    pub fn natural_std(&self, k_ratio: f64) -> ClasswiseErrorPair {
        pair_from_separation(self.a_term, k_ratio, self.q_k, 0.0, 0.0)
    }

    pub fn robust_std(&self, spec: &MixtureSpec, eps: f64) -> ClasswiseErrorPair {
        let scale = (spec.d as f64).sqrt() / spec.sigma * eps;
        pair_from_separation(self.b_term, spec.k_ratio, self.q_k, scale, scale / spec.k_ratio)
    }

    pub fn robust_rob(&self, k_ratio: f64) -> ClasswiseErrorPair {
        pair_from_separation(self.b_term, k_ratio, self.q_k, 0.0, 0.0)
    }
}

/// Optimal intercept of the all-ones classifier under the natural objective.
pub fn natural_intercept(spec: &MixtureSpec) -> Result<f64> {
    Ok(closed_form_terms(spec, 0.0)?.b_nat)
}

/// Optimal intercept under the l-inf robust objective, `g(eta - eps)`.
pub fn robust_intercept(spec: &MixtureSpec, eps: f64) -> Result<f64> {
    Ok(closed_form_terms(spec, eps)?.b_rob)
}

/// Class-wise standard errors of the optimal natural linear classifier.
pub fn classwise_std_error_natural(spec: &MixtureSpec) -> Result<ClasswiseErrorPair> {
    let terms = closed_form_terms(spec, 0.0)?;
    Ok(terms.natural_std(spec.k_ratio))
}

/// Class-wise standard errors of the optimal robust linear classifier.
pub fn classwise_std_error_robust(spec: &MixtureSpec, eps: f64) -> Result<ClasswiseErrorPair> {
    require_closed_form(spec)?;
    require_margin(spec, eps, false)?;
    Ok(closed_form_terms(spec, eps)?.robust_std(spec, eps))
}

/// Class-wise robust errors of the optimal robust linear classifier. These
/// coincide with the natural standard errors at mean scale `eta - eps`.
pub fn classwise_rob_error_robust(spec: &MixtureSpec, eps: f64) -> Result<ClasswiseErrorPair> {
    require_closed_form(spec)?;
    require_margin(spec, eps, false)?;
    classwise_std_error_natural(&spec.with_eta(spec.eta - eps))
}

/// Exact class-wise standard and l-inf robust errors of an arbitrary linear
/// classifier `sign(w.x + b)` on the mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearErrors {
    pub standard: ClasswiseErrorPair,
    pub robust: ClasswiseErrorPair,
}

pub fn linear_classwise_errors(spec: &MixtureSpec, w: &[f64], b: f64, eps: f64) -> Result<LinearErrors> {
    spec.validate()?;
    crate::error::ensure_dim(spec.dim(), w.len())?;
    if !(eps.is_finite() && eps >= 0.0) {
        return Err(Error::Domain(format!("margin {eps} must be >= 0")));
    }
    let l2 = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    if l2 == 0.0 {
        return Err(Error::Domain("weight vector is zero".into()));
    }
    let l1: f64 = w.iter().map(|v| v.abs()).sum();
    let proj: f64 = w.iter().zip(spec.theta()).map(|(a, t)| a * t).sum();
    let s_minus = spec.sigma * l2;
    let s_plus = spec.k_ratio * spec.sigma * l2;
    let shift = eps * l1;
    let minus = |b: f64| phi((b - proj) / s_minus);
    let plus = |b: f64| phi((-b - proj) / s_plus);
    Ok(LinearErrors {
        standard: ClasswiseErrorPair { err_minus: minus(b), err_plus: plus(b) },
        robust: ClasswiseErrorPair { err_minus: minus(b + shift), err_plus: plus(b - shift) },
    })
}

/// Natural vs robust class-wise errors on the mixture with non-robust features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theorem3Result {
    /// Natural model (uses every feature) standard errors.
    pub natural_std: ClasswiseErrorPair,
    /// Robust model (robust features only) standard errors.
    pub robust_std: ClasswiseErrorPair,
    /// Robust model robust errors.
    pub robust_rob: ClasswiseErrorPair,
    pub rise_plus: f64,
    pub rise_minus: f64,
    /// Whether class "+1" loses more standard accuracy than class "-1".
    pub gap_holds: bool,
    /// Intercept of the natural model along the unit direction `theta / |theta|`.
    pub b_nat_projected: f64,
    /// Intercept of the all-ones robust-feature classifier.
    pub b_rob: f64,
}

pub fn theorem3_errors(spec: &MixtureSpec, eps: f64) -> Result<Theorem3Result> {
    spec.validate()?;
    if spec.m == 0 {
        return Err(Error::Domain("theorem3_errors needs non-robust features (m > 0)".into()));
    }
    let q_k = q_factor(spec.k_ratio)?;
    if !(spec.gamma < eps && eps < spec.eta) {
        return Err(Error::Domain(format!(
            "requires gamma < eps < eta, got gamma = {}, eps = {eps}, eta = {}",
            spec.gamma, spec.eta
        )));
    }
    let (d, m) = (spec.d as f64, spec.m as f64);
    let norm_theta = (m * spec.gamma * spec.gamma + d * spec.eta * spec.eta).sqrt();
    // Projecting onto theta / |theta| gives a one-dimensional problem with mean |theta|.
    let a_prime = scaled_separation(1.0, norm_theta, spec.sigma, spec.k_ratio);
    let b_prime = scaled_separation(d, spec.eta - eps, spec.sigma, spec.k_ratio);
    let natural_std = pair_from_separation(a_prime, spec.k_ratio, q_k, 0.0, 0.0);
    let shift = d.sqrt() / spec.sigma * eps;
    let robust_std = pair_from_separation(b_prime, spec.k_ratio, q_k, shift, shift / spec.k_ratio);
    let robust_rob = pair_from_separation(b_prime, spec.k_ratio, q_k, 0.0, 0.0);
    let rise_plus = robust_std.err_plus - natural_std.err_plus;
    let rise_minus = robust_std.err_minus - natural_std.err_minus;
    Ok(Theorem3Result {
        natural_std,
        robust_std,
        robust_rob,
        rise_plus,
        rise_minus,
        gap_holds: rise_plus > rise_minus,
        b_nat_projected: intercept_g(1.0, norm_theta, spec.sigma, spec.k_ratio, q_k),
        b_rob: intercept_g(d, spec.eta - eps, spec.sigma, spec.k_ratio, q_k),
    })
}
