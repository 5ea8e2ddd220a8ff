//! Norm-bounded inner maximisation: PGD under l-inf and l2, the closed-form
//! worst case for linear models, and the outcome bookkeeping that feeds the
//! standard / boundary error split.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::models::{ce_input_grad, kl_input_grad, log_softmax, LinearClassifier, Model};
use crate::rng::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    Linf,
    L2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub norm: Norm,
    pub epsilon: f64,
    pub steps: usize,
    pub step_size: f64,
    pub random_init: bool,
    pub restarts: usize,
    /// Optional box the adversarial input is clipped to (CSV data only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip: Option<[f64; 2]>,
}

impl AttackConfig {
    /// Evaluation default: 20 l-inf steps of size `2.5 eps / 20` from a random start.
    pub fn pgd20_linf(epsilon: f64) -> Self {
        Self { norm: Norm::Linf, epsilon, steps: 20, step_size: 2.5 * epsilon / 20.0, random_init: true, restarts: 1, clip: None }
    }

    /// 20 l2 steps of size 0.1.
    pub fn pgd20_l2(epsilon: f64) -> Self {
        Self { norm: Norm::L2, epsilon, steps: 20, step_size: 0.1, random_init: true, restarts: 1, clip: None }
    }

    /// Training-time attack with `steps` steps of size `2.5 eps / steps`.
    pub fn linf_steps(epsilon: f64, steps: usize) -> Self {
        Self { steps, step_size: 2.5 * epsilon / steps as f64, ..Self::pgd20_linf(epsilon) }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::Parameter(format!("attack epsilon must be >= 0, got {}", self.epsilon)));
        }
        if self.steps < 1 || self.restarts < 1 {
            return Err(Error::Parameter("attack steps and restarts must be >= 1".into()));
        }
        if !(self.step_size.is_finite() && self.step_size >= 0.0) {
            return Err(Error::Parameter("attack step_size must be >= 0".into()));
        }
        if let Some([lo, hi]) = self.clip {
            if !(lo < hi) {
                return Err(Error::Parameter("clip range must satisfy lo < hi".into()));
            }
        }
        Ok(())
    }

    /// Same attack at another radius, with the step size scaled along.
    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        if epsilon == self.epsilon {
            return self.clone();
        }
        let step_size = if self.norm == Norm::Linf && self.epsilon > 0.0 {
            self.step_size * epsilon / self.epsilon
        } else {
            self.step_size
        };
        Self { epsilon, step_size, ..self.clone() }
    }
}

/// Projects `x_adv` onto the `epsilon`-ball around `x` (and the clip box).
fn project(x: &[f64], x_adv: &mut [f64], cfg: &AttackConfig) {
    let eps = cfg.epsilon;
    match cfg.norm {
        Norm::Linf => {
            for (a, c) in x_adv.iter_mut().zip(x) {
                *a = c + (*a - c).clamp(-eps, eps);
            }
        }
        Norm::L2 => {
            let norm = x_adv.iter().zip(x).map(|(a, c)| (a - c).powi(2)).sum::<f64>().sqrt();
            if norm > eps {
                let s = eps / norm;
                for (a, c) in x_adv.iter_mut().zip(x) {
                    *a = c + (*a - c) * s;
                }
            }
        }
    }
    if let Some([lo, hi]) = cfg.clip {
        for a in x_adv.iter_mut() {
            *a = a.clamp(lo, hi);
        }
    }
}

fn random_start(x: &[f64], cfg: &AttackConfig, rng: &mut Stream) -> Vec<f64> {
    let eps = cfg.epsilon;
    match cfg.norm {
        Norm::Linf => x.iter().map(|c| c + rng.random_range(-eps..=eps)).collect(),
        Norm::L2 => {
            let dir: Vec<f64> = x.iter().map(|_| rng.sample(StandardNormal)).collect();
            let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            let u: f64 = rng.random();
            let r = eps * u.powf(1.0 / x.len() as f64);
            x.iter().zip(&dir).map(|(c, d)| c + r * d / n).collect()
        }
    }
}

enum Objective<'a> {
    CrossEntropy(usize),
    Kl(&'a [f64]),
}

impl Objective<'_> {
    fn loss_and_grad(&self, model: &Model, x: &[f64]) -> (f64, Vec<f64>) {
        match self {
            Objective::CrossEntropy(y) => ce_input_grad(model, x, *y),
            Objective::Kl(clean) => kl_input_grad(model, clean, x),
        }
    }
}

fn ascend(model: &Model, x: &[f64], objective: &Objective<'_>, cfg: &AttackConfig, rng: &mut Stream, kl_start: bool) -> Vec<f64> {
    if cfg.epsilon == 0.0 {
        return x.to_vec();
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..cfg.restarts {
        let mut cur = if kl_start {
            // The KL objective is flat at the clean point, so start just off it.
            x.iter().map(|c| c + 0.001 * rng.sample::<f64, _>(StandardNormal)).collect()
        } else if cfg.random_init {
            random_start(x, cfg, rng)
        } else {
            x.to_vec()
        };
        project(x, &mut cur, cfg);
        for _ in 0..cfg.steps {
            let (_, g) = objective.loss_and_grad(model, &cur);
            match cfg.norm {
                Norm::Linf => {
                    for (c, gi) in cur.iter_mut().zip(&g) {
                        if *gi > 0.0 {
                            *c += cfg.step_size;
                        } else if *gi < 0.0 {
                            *c -= cfg.step_size;
                        }
                    }
                }
                Norm::L2 => {
                    let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if n > 0.0 {
                        for (c, gi) in cur.iter_mut().zip(&g) {
                            *c += cfg.step_size * gi / n;
                        }
                    }
                }
            }
            project(x, &mut cur, cfg);
        }
        let (loss, _) = objective.loss_and_grad(model, &cur);
        if best.as_ref().is_none_or(|(b, _)| loss > *b) {
            best = Some((loss, cur));
        }
    }
    best.expect("restarts >= 1").1
}

/// Cross-entropy-maximising PGD; returns the restart with the largest loss.
pub fn pgd_attack(model: &Model, x: &[f64], y: usize, cfg: &AttackConfig, rng: &mut Stream) -> Result<Vec<f64>> {
    ensure_dim(model.input_dim(), x.len())?;
    cfg.validate()?;
    if y >= model.class_count() {
        return Err(Error::Parameter(format!("class {y} outside [0, {})", model.class_count())));
    }
    Ok(ascend(model, x, &Objective::CrossEntropy(y), cfg, rng, false))
}

/// PGD maximising `KL(f(x) || f(x_adv))`, started from a tiny Gaussian
/// perturbation of `x`.
pub fn pgd_attack_kl(model: &Model, x: &[f64], cfg: &AttackConfig, rng: &mut Stream) -> Result<Vec<f64>> {
    ensure_dim(model.input_dim(), x.len())?;
    cfg.validate()?;
    let clean = log_softmax(&model.logits(x));
    Ok(ascend(model, x, &Objective::Kl(&clean), cfg, rng, true))
}

/// Cross-entropy at `x` for label `y`; the quantity PGD maximises.
pub fn attack_loss(model: &Model, x: &[f64], y: usize) -> f64 {
    ce_input_grad(model, x, y).0
}

/// Closed-form maximiser of the logistic loss of a linear model:
/// `x - eps * y_signed * sign(w)` (l-inf) or `x - eps * y_signed * w / |w|` (l2).
pub fn exact_linear_attack(model: &LinearClassifier, x: &[f64], y_signed: f64, epsilon: f64, norm: Norm) -> Result<Vec<f64>> {
    ensure_dim(model.weights.len(), x.len())?;
    if model.weights.iter().all(|w| *w == 0.0) {
        return Err(Error::Parameter("exact attack needs a non-zero weight vector".into()));
    }
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(Error::Parameter(format!("epsilon must be >= 0, got {epsilon}")));
    }
    Ok(match norm {
        Norm::Linf => x
            .iter()
            .zip(&model.weights)
            .map(|(v, w)| {
                let s = if *w > 0.0 {
                    1.0
                } else if *w < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                v - epsilon * y_signed * s
            })
            .collect(),
        Norm::L2 => {
            let n = model.weights.iter().map(|w| w * w).sum::<f64>().sqrt();
            x.iter().zip(&model.weights).map(|(v, w)| v - epsilon * y_signed * w / n).collect()
        }
    })
}

/// Adversarial input used by training and evaluation: the exact maximiser for
/// linear models, PGD otherwise.
pub fn worst_case_input(model: &Model, x: &[f64], y: usize, cfg: &AttackConfig, rng: &mut Stream) -> Result<Vec<f64>> {
    match model {
        Model::Linear(m) if m.weights.iter().any(|w| *w != 0.0) => {
            let mut adv = exact_linear_attack(m, x, 2.0 * y as f64 - 1.0, cfg.epsilon, cfg.norm)?;
            if let Some([lo, hi]) = cfg.clip {
                for a in &mut adv {
                    *a = a.clamp(lo, hi);
                }
            }
            Ok(adv)
        }
        _ => pgd_attack(model, x, y, cfg, rng),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub clean_correct: bool,
    pub adv_correct: bool,
    /// The adversarial prediction differs from the clean prediction.
    pub flipped: bool,
}

pub fn classify_outcome(model: &Model, x: &[f64], x_adv: &[f64], y: usize) -> AttackOutcome {
    let clean = model.predict(x);
    let adv = model.predict(x_adv);
    AttackOutcome { clean_correct: clean == y, adv_correct: adv == y, flipped: clean != adv }
}
