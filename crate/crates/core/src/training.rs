//! Outer minimisation: natural training, PGD adversarial training, TRADES,
//! the upweight-the-worst-class baseline, and Fair Robust Learning with its
//! Reweight / Remargin variants.
//!
//! Gradients are averaged over fixed-size chunks of samples that are reduced
//! in index order, so results do not depend on the number of worker threads.

use std::fmt;
use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::attacks::{pgd_attack, pgd_attack_kl, worst_case_input, AttackConfig};
use crate::distributions::{format_f64, Dataset};
use crate::error::{ensure_dim, Error, Result};
use crate::evaluation::{eval_classwise, fairness_violations, ClasswiseReport, Metric};
use crate::models::{accumulate_ce, accumulate_kl, init_model, sgd_step, Model, ModelSpec};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Natural,
    PgdAt,
    Trades,
    BaselineReweight,
    Frl,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrlVariant {
    Reweight,
    Remargin,
    #[default]
    Both,
}

/// Inner maximiser used to build `x_adv` for the KL boundary term.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryAttack {
    #[default]
    Kl,
    Ce,
}

/// Samples per gradient step: the whole set or a fixed mini-batch size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Batch {
    Full,
    Size(usize),
}

impl Serialize for Batch {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Batch::Full => s.serialize_str("full"),
            Batch::Size(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for Batch {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Size(usize),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Size(0) => Err(serde::de::Error::custom("batch size must be >= 1")),
            Raw::Size(n) => Ok(Batch::Size(n)),
            Raw::Word(w) if w == "full" => Ok(Batch::Full),
            Raw::Word(w) => Err(serde::de::Error::custom(format!("batch must be \"full\" or a size, got \"{w}\""))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrDecay {
    pub factor: f64,
    pub every_n_epochs: usize,
}

/// Every field may be omitted; absent fields take the values of
/// [`TrainConfig::default`], the reference four-class benchmark schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub method: Method,
    pub frl_variant: FrlVariant,
    pub epochs: usize,
    pub lr: f64,
    pub lr_decay: Option<LrDecay>,
    pub momentum: f64,
    /// `1 / lambda`: weight of the KL boundary term.
    pub trades_inv_lambda: f64,
    pub batch: Batch,
    pub seed: u64,
    pub boundary_attack: BoundaryAttack,
    /// Weight multiplier of the worst class in the baseline reweighting.
    pub reweight_factor: f64,
    /// PGD-AT epochs for the robust starting model of FRL and the baseline
    /// (when no starting model is supplied).
    pub pretrain_epochs: usize,
    /// Learning rate of the pre-training phase; `lr` when absent.
    pub pretrain_lr: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            momentum: 0.9,
            pretrain_epochs: 10,
            pretrain_lr: Some(0.05),
            ..Self::new(Method::Frl, 10, 0.01, Batch::Size(128), 0)
        }
    }
}

impl TrainConfig {
    pub fn new(method: Method, epochs: usize, lr: f64, batch: Batch, seed: u64) -> Self {
        Self {
            method,
            frl_variant: FrlVariant::Both,
            epochs,
            lr,
            lr_decay: None,
            momentum: 0.0,
            trades_inv_lambda: 1.0,
            batch,
            seed,
            boundary_attack: BoundaryAttack::Kl,
            reweight_factor: 2.0,
            pretrain_epochs: 0,
            pretrain_lr: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Parameter(format!("lr must be > 0, got {}", self.lr)));
        }
        if let Some(d) = &self.lr_decay {
            if !(d.factor > 0.0 && d.factor <= 1.0) || d.every_n_epochs == 0 {
                return Err(Error::Parameter("lr_decay needs factor in (0, 1] and every_n_epochs >= 1".into()));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Parameter("momentum must lie in [0, 1)".into()));
        }
        if !(self.trades_inv_lambda.is_finite() && self.trades_inv_lambda > 0.0) {
            return Err(Error::Parameter("trades_inv_lambda must be > 0".into()));
        }
        if !(self.reweight_factor.is_finite() && self.reweight_factor > 0.0) {
            return Err(Error::Parameter("reweight_factor must be > 0".into()));
        }
        if let Some(lr) = self.pretrain_lr {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::Parameter("pretrain_lr must be > 0".into()));
            }
        }
        Ok(())
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_decay {
            Some(d) => self.lr * d.factor.powi((epoch / d.every_n_epochs) as i32),
            None => self.lr,
        }
    }

    fn pretrain_config(&self) -> Self {
        Self {
            method: Method::PgdAt,
            epochs: self.pretrain_epochs,
            lr: self.pretrain_lr.unwrap_or(self.lr),
            ..self.clone()
        }
    }
}

/// Per-sample objective of one training epoch.
#[derive(Debug, Clone)]
enum Objective<'a> {
    /// `w[y] * CE(f(x), y)`
    Natural { weights: &'a [f64] },
    /// `w[y] * CE(f(x_adv), y)`, `x_adv` from the CE attack at `eps[y]`.
    Adversarial { weights: &'a [f64], attack: &'a AttackConfig, eps: &'a [f64] },
    /// `nat[y] * CE(f(x), y) + inv_lambda * bndy[y] * KL(f(x) || f(x_adv))`.
    Boundary {
        nat: &'a [f64],
        bndy: &'a [f64],
        inv_lambda: f64,
        attack: &'a AttackConfig,
        eps: &'a [f64],
        kind: BoundaryAttack,
    },
}

impl Objective<'_> {
    fn stream_name(&self) -> &'static str {
        match self {
            Objective::Natural { .. } => "train/natural",
            Objective::Adversarial { .. } => "train/adversarial",
            Objective::Boundary { .. } => "train/boundary",
        }
    }

    fn sample(&self, model: &Model, x: &[f64], y: usize, rng: &mut Stream, grad: &mut [f64]) -> Result<f64> {
        match self {
            Objective::Natural { weights } => Ok(accumulate_ce(model, x, y, weights[y], grad)),
            Objective::Adversarial { weights, attack, eps } => {
                let adv = worst_case_input(model, x, y, &attack.with_epsilon(eps[y]), rng)?;
                Ok(accumulate_ce(model, &adv, y, weights[y], grad))
            }
            Objective::Boundary { nat, bndy, inv_lambda, attack, eps, kind } => {
                let cfg = attack.with_epsilon(eps[y]);
                let adv = match (model, kind) {
                    (Model::Linear(_), _) => worst_case_input(model, x, y, &cfg, rng)?,
                    (_, BoundaryAttack::Kl) => pgd_attack_kl(model, x, &cfg, rng)?,
                    (_, BoundaryAttack::Ce) => pgd_attack(model, x, y, &cfg, rng)?,
                };
                let mut loss = 0.0;
                if nat[y] > 0.0 {
                    loss += accumulate_ce(model, x, y, nat[y], grad);
                }
                let w = inv_lambda * bndy[y];
                if w > 0.0 {
                    loss += accumulate_kl(model, x, &adv, w, grad, None);
                }
                Ok(loss)
            }
        }
    }
}

const CHUNK: usize = 16;

/// Plain (momentum) SGD over a dataset with a persistent epoch counter.
struct Trainer<'a> {
    model: Model,
    velocity: Vec<f64>,
    cfg: &'a TrainConfig,
    data: &'a Dataset,
    epoch: usize,
}

impl<'a> Trainer<'a> {
    fn new(model: Model, cfg: &'a TrainConfig, data: &'a Dataset) -> Result<Self> {
        cfg.validate()?;
        ensure_dim(model.input_dim(), data.dim())?;
        if data.class_count() > model.class_count() {
            return Err(Error::Parameter(format!(
                "data has {} classes but the model predicts {}",
                data.class_count(),
                model.class_count()
            )));
        }
        if data.is_empty() {
            return Err(Error::Parameter("empty training set".into()));
        }
        let velocity = vec![0.0; model.param_count()];
        Ok(Self { model, velocity, cfg, data, epoch: 0 })
    }

    /// Runs one epoch and returns the mean training loss.
    fn epoch(&mut self, objective: &Objective<'_>) -> Result<f64> {
        let n = self.data.len();
        let mut order: Vec<usize> = (0..n).collect();
        let batch = match self.cfg.batch {
            Batch::Full => n,
            Batch::Size(b) => {
                let mut s = rng::stream(rng::derive_seed(self.cfg.seed, "train/shuffle"), self.epoch as u64);
                order.shuffle(&mut s);
                b.min(n)
            }
        };
        let base = rng::derive_seed_index(rng::derive_seed(self.cfg.seed, objective.stream_name()), self.epoch as u64);
        let lr = self.cfg.lr_at(self.epoch);
        let p = self.model.param_count();
        let mut total = 0.0;
        for idx in order.chunks(batch) {
            let model = &self.model;
            let data = self.data;
            let parts = idx
                .par_chunks(CHUNK)
                .map(|chunk| {
                    let mut g = vec![0.0; p];
                    let mut l = 0.0;
                    for &i in chunk {
                        let mut s = rng::stream(base, i as u64);
                        l += objective.sample(model, data.row(i), data.label(i), &mut s, &mut g)?;
                    }
                    Ok((l, g))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut loss = 0.0;
            let mut grad = vec![0.0; p];
            for (l, g) in parts {
                loss += l;
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += b;
                }
            }
            let scale = 1.0 / idx.len() as f64;
            for g in &mut grad {
                *g *= scale;
            }
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { epoch: self.epoch, message: format!("non-finite loss {loss}") });
            }
            let step = if self.cfg.momentum > 0.0 {
                for (v, g) in self.velocity.iter_mut().zip(&grad) {
                    *v = self.cfg.momentum * *v + g;
                }
                &self.velocity
            } else {
                &grad
            };
            sgd_step(&mut self.model, step, lr)?;
            if !self.model.is_finite() {
                return Err(Error::Divergence { epoch: self.epoch, message: "non-finite parameters".into() });
            }
            total += loss;
        }
        self.epoch += 1;
        Ok(total / n as f64)
    }

    fn run(mut self, objective: &Objective<'_>) -> Result<(Model, f64)> {
        let mut last = f64::NAN;
        for _ in 0..self.cfg.epochs {
            last = self.epoch(objective)?;
        }
        Ok((self.model, last))
    }
}

fn unit(c: usize) -> Vec<f64> {
    vec![1.0; c]
}

fn initial_model(spec: &ModelSpec, cfg: &TrainConfig) -> Result<Model> {
    init_model(spec, rng::derive_seed(cfg.seed, "model/init"))
}

pub fn train_natural(train: &Dataset, model_spec: &ModelSpec, cfg: &TrainConfig) -> Result<Model> {
    continue_natural(initial_model(model_spec, cfg)?, train, cfg)
}

pub fn continue_natural(start: Model, train: &Dataset, cfg: &TrainConfig) -> Result<Model> {
    let w = unit(start.class_count());
    Ok(Trainer::new(start, cfg, train)?.run(&Objective::Natural { weights: &w })?.0)
}

pub fn train_pgd_at(train: &Dataset, model_spec: &ModelSpec, cfg: &TrainConfig, attack: &AttackConfig) -> Result<Model> {
    continue_pgd_at(initial_model(model_spec, cfg)?, train, cfg, attack)
}

/// PGD adversarial training from a given model.
pub fn continue_pgd_at(start: Model, train: &Dataset, cfg: &TrainConfig, attack: &AttackConfig) -> Result<Model> {
    let w = unit(start.class_count());
    train_weighted_adversarial(start, train, cfg, attack, &w)
}

fn train_weighted_adversarial(start: Model, train: &Dataset, cfg: &TrainConfig, attack: &AttackConfig, weights: &[f64]) -> Result<Model> {
    attack.validate()?;
    let eps = vec![attack.epsilon; start.class_count()];
    Ok(Trainer::new(start, cfg, train)?.run(&Objective::Adversarial { weights, attack, eps: &eps })?.0)
}

pub fn train_trades(train: &Dataset, model_spec: &ModelSpec, cfg: &TrainConfig, attack: &AttackConfig) -> Result<Model> {
    continue_trades(initial_model(model_spec, cfg)?, train, cfg, attack)
}

pub fn continue_trades(start: Model, train: &Dataset, cfg: &TrainConfig, attack: &AttackConfig) -> Result<Model> {
    let c = start.class_count();
    train_boundary_weighted(start, train, cfg, attack, &unit(c), &unit(c), &vec![attack.epsilon; c])
}

/// `cfg.epochs` epochs of the weighted TRADES-style objective
/// `nat[y] CE(f(x), y) + (1/lambda) bndy[y] KL(f(x) || f(x_adv))` with
/// `x_adv` at radius `eps[y]`.
pub fn train_boundary_weighted(
    start: Model,
    train: &Dataset,
    cfg: &TrainConfig,
    attack: &AttackConfig,
    nat: &[f64],
    bndy: &[f64],
    eps: &[f64],
) -> Result<Model> {
    attack.validate()?;
    let c = start.class_count();
    for v in [nat, bndy, eps] {
        ensure_dim(c, v.len())?;
    }
    let objective = Objective::Boundary {
        nat,
        bndy,
        inv_lambda: cfg.trades_inv_lambda,
        attack,
        eps,
        kind: cfg.boundary_attack,
    };
    Ok(Trainer::new(start, cfg, train)?.run(&objective)?.0)
}

/// Robust starting model: `cfg.pretrain_epochs` of PGD-AT from the seeded
/// initialisation.
pub fn pretrain_robust(train: &Dataset, model_spec: &ModelSpec, cfg: &TrainConfig, attack: &AttackConfig) -> Result<Model> {
    train_pgd_at(train, model_spec, &cfg.pretrain_config(), attack)
}

/// Finds the class with the highest robust error of `start` on the training
/// data (lowest index on ties), multiplies its weight by
/// `cfg.reweight_factor` and continues with PGD-AT.
pub fn train_baseline_reweight(start: Model, train: &Dataset, cfg: &TrainConfig, attack: &AttackConfig) -> Result<(Model, usize)> {
    let report = eval_classwise(&start, train, attack, rng::derive_seed(cfg.seed, "baseline/eval"))?;
    let worst = report.robust.worst_class;
    let mut w = unit(start.class_count());
    w[worst] *= cfg.reweight_factor;
    Ok((train_weighted_adversarial(start, train, cfg, attack, &w)?, worst))
}

/// Dual and margin state of Fair Robust Learning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrlState {
    pub phi_nat: Vec<f64>,
    pub phi_bndy: Vec<f64>,
    pub eps_class: Vec<f64>,
    pub tau1: f64,
    pub tau2: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha2_star: f64,
    pub eps_max: f64,
}

impl FrlState {
    /// Zero multipliers and every class margin at `eps`.
    pub fn new(classes: usize, eps: f64, params: &FrlParams) -> Result<Self> {
        let s = Self {
            phi_nat: vec![0.0; classes],
            phi_bndy: vec![0.0; classes],
            eps_class: vec![eps; classes],
            tau1: params.tau1,
            tau2: params.tau2,
            alpha1: params.alpha1,
            alpha2: params.alpha2,
            alpha2_star: params.alpha2_star,
            eps_max: params.eps_max.unwrap_or(2.0 * eps),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.phi_nat.len();
        ensure_dim(c, self.phi_bndy.len())?;
        ensure_dim(c, self.eps_class.len())?;
        if self.phi_nat.iter().chain(&self.phi_bndy).any(|v| !(*v >= 0.0)) {
            return Err(Error::Parameter("multipliers must be >= 0".into()));
        }
        if !(self.tau1 >= 0.0 && self.tau2 >= 0.0) {
            return Err(Error::Parameter("tau1 and tau2 must be >= 0".into()));
        }
        if ![self.alpha1, self.alpha2, self.alpha2_star, self.eps_max].iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(Error::Parameter("alpha1, alpha2, alpha2_star and eps_max must be > 0".into()));
        }
        if self.eps_class.iter().any(|e| !(*e > 0.0 && *e <= self.eps_max)) {
            return Err(Error::Parameter(format!("class margins must lie in (0, {}]", self.eps_max)));
        }
        Ok(())
    }
}

fn default_alpha() -> f64 {
    0.05
}

/// Run-config block of FRL hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrlParams {
    #[serde(default = "default_alpha")]
    pub tau1: f64,
    #[serde(default = "default_alpha")]
    pub tau2: f64,
    #[serde(default = "default_alpha")]
    pub alpha1: f64,
    #[serde(default = "default_alpha")]
    pub alpha2: f64,
    #[serde(default = "default_alpha")]
    pub alpha2_star: f64,
    /// Margin cap; twice the training radius when absent.
    #[serde(default)]
    pub eps_max: Option<f64>,
    #[serde(default)]
    pub variant: FrlVariant,
    /// Margin update without subtracting the class-average boundary error.
    #[serde(default)]
    pub literal_eq10: bool,
    /// Stop as soon as every fairness constraint holds on validation.
    #[serde(default = "default_true")]
    pub stop_when_satisfied: bool,
}

fn default_true() -> bool {
    true
}

impl Default for FrlParams {
    fn default() -> Self {
        Self {
            tau1: 0.05,
            tau2: 0.05,
            alpha1: 0.05,
            alpha2: 0.05,
            alpha2_star: 0.05,
            eps_max: None,
            variant: FrlVariant::Both,
            literal_eq10: false,
            stop_when_satisfied: true,
        }
    }
}

fn check_classes(state: &FrlState, report: &ClasswiseReport) -> Result<()> {
    ensure_dim(state.phi_nat.len(), report.class_count())
}

/// `phi_i <- max(0, phi_i + alpha (R_i - R_avg - tau))` for the standard
/// (`alpha1`, `tau1`) and boundary (`alpha2`, `tau2`) errors.
pub fn frl_update_multipliers(state: &FrlState, report: &ClasswiseReport) -> Result<FrlState> {
    frl_update_phi_bndy(&frl_update_phi_nat(state, report)?, report)
}

pub fn frl_update_phi_nat(state: &FrlState, report: &ClasswiseReport) -> Result<FrlState> {
    check_classes(state, report)?;
    let v = fairness_violations(report, state.tau1, state.tau2);
    let mut s = state.clone();
    for (p, slack) in s.phi_nat.iter_mut().zip(&v.standard_slack) {
        *p = (*p + state.alpha1 * slack).max(0.0);
    }
    Ok(s)
}

pub fn frl_update_phi_bndy(state: &FrlState, report: &ClasswiseReport) -> Result<FrlState> {
    check_classes(state, report)?;
    let v = fairness_violations(report, state.tau1, state.tau2);
    let mut s = state.clone();
    for (p, slack) in s.phi_bndy.iter_mut().zip(&v.boundary_slack) {
        *p = (*p + state.alpha2 * slack).max(0.0);
    }
    Ok(s)
}

/// `eps_i <- min(eps_max, eps_i exp(alpha2* (R_bndy,i - R_bndy - tau2)))`;
/// with `literal` the class average is not subtracted.
pub fn frl_update_margins(state: &FrlState, report: &ClasswiseReport, literal: bool) -> Result<FrlState> {
    check_classes(state, report)?;
    let avg = if literal { 0.0 } else { report.boundary.average };
    let mut s = state.clone();
    for (e, c) in s.eps_class.iter_mut().zip(&report.classes) {
        let violation = c.rate(Metric::Boundary) - avg - state.tau2;
        *e = (*e * (state.alpha2_star * violation).exp()).min(state.eps_max);
    }
    Ok(s)
}

/// Lagrangian class weights: `1/C + phi_i - sum(phi)/C`, floored at 0 and
/// rescaled to mean 1, for the natural and boundary terms.
pub fn class_weights_from_multipliers(state: &FrlState) -> (Vec<f64>, Vec<f64>) {
    fn weights(phi: &[f64]) -> Vec<f64> {
        // Scaled by C, which the renormalisation cancels.
        let c = phi.len() as f64;
        let total = phi.iter().sum::<f64>();
        let raw: Vec<f64> = phi.iter().map(|p| (1.0 + c * p - total).max(0.0)).collect();
        let mean = raw.iter().sum::<f64>() / c;
        raw.iter().map(|r| r / mean).collect()
    }
    (weights(&state.phi_nat), weights(&state.phi_bndy))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    /// Outer iteration; the model was trained for this many FRL epochs.
    pub epoch: usize,
    /// Validation report of the current model.
    pub report: ClasswiseReport,
    /// State after this iteration's updates (used for the next epoch).
    pub state: FrlState,
    /// Mean loss of the epoch trained with `state`; absent on the last row.
    pub train_loss: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<HistoryRecord>,
}

impl TrainHistory {
    pub fn push(&mut self, record: HistoryRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.epoch <= last.epoch {
                return Err(Error::Parameter("history epochs must increase".into()));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let Some(first) = self.records.first() else {
            writeln!(w, "epoch,train_loss")?;
            return Ok(());
        };
        let c = first.report.class_count();
        let mut header = vec!["epoch".to_string(), "train_loss".to_string()];
        for prefix in ["phi_nat", "phi_bndy", "eps", "std", "bndy", "rob"] {
            header.extend((0..c).map(|i| format!("{prefix}_{i}")));
        }
        header.extend(["std_avg", "bndy_avg", "rob_avg"].map(String::from));
        writeln!(w, "{}", header.join(","))?;
        for r in &self.records {
            let mut row = vec![r.epoch.to_string(), r.train_loss.map(format_f64).unwrap_or_default()];
            for v in [&r.state.phi_nat, &r.state.phi_bndy, &r.state.eps_class] {
                row.extend(v.iter().map(|x| format_f64(*x)));
            }
            for m in [Metric::Standard, Metric::Boundary, Metric::Robust] {
                row.extend(r.report.rates(m).into_iter().map(format_f64));
            }
            for m in [Metric::Standard, Metric::Boundary, Metric::Robust] {
                row.push(format_f64(r.report.summary(m).average));
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

impl fmt::Display for FrlVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FrlVariant::Reweight => "reweight",
            FrlVariant::Remargin => "remargin",
            FrlVariant::Both => "both",
        })
    }
}

/// Fair Robust Learning from `start`: each outer iteration evaluates on
/// `val`, updates the multipliers and/or margins according to the variant,
/// then trains one epoch of the weighted boundary objective. Stops early
/// when every constraint holds (if enabled) and after `cfg.epochs`
/// iterations otherwise.
#[allow(clippy::too_many_arguments)]
pub fn frl_train(
    start: Model,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    attack_train: &AttackConfig,
    attack_eval: &AttackConfig,
    state0: FrlState,
    params: &FrlParams,
) -> Result<(Model, TrainHistory)> {
    let mut history = TrainHistory::default();
    let model = frl_train_into(start, train, val, cfg, attack_train, attack_eval, state0, params, &mut history)?;
    Ok((model, history))
}

/// As [`frl_train`], appending to `history` as it goes so that a caller
/// keeps the audit trail when training diverges.
#[allow(clippy::too_many_arguments)]
pub fn frl_train_into(
    start: Model,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    attack_train: &AttackConfig,
    attack_eval: &AttackConfig,
    state0: FrlState,
    params: &FrlParams,
    history: &mut TrainHistory,
) -> Result<Model> {
    state0.validate()?;
    attack_train.validate()?;
    ensure_dim(start.class_count(), state0.phi_nat.len())?;
    if val.class_count() != start.class_count() {
        return Err(Error::Parameter("validation set must cover every class".into()));
    }
    let eval_seed = rng::derive_seed(cfg.seed, "frl/eval");
    let mut trainer = Trainer::new(start, cfg, train)?;
    let mut state = state0;
    for it in 0..=cfg.epochs {
        let report = eval_classwise(&trainer.model, val, attack_eval, eval_seed)?;
        let satisfied = fairness_violations(&report, state.tau1, state.tau2).all_satisfied();
        if it == cfg.epochs || (params.stop_when_satisfied && satisfied) {
            history.push(HistoryRecord { epoch: it, report, state: state.clone(), train_loss: None })?;
            break;
        }
        state = match params.variant {
            FrlVariant::Reweight => frl_update_multipliers(&state, &report)?,
            FrlVariant::Remargin => frl_update_margins(&frl_update_phi_nat(&state, &report)?, &report, params.literal_eq10)?,
            FrlVariant::Both => frl_update_margins(&frl_update_multipliers(&state, &report)?, &report, params.literal_eq10)?,
        };
        let (nat, bndy) = class_weights_from_multipliers(&state);
        let objective = Objective::Boundary {
            nat: &nat,
            bndy: &bndy,
            inv_lambda: cfg.trades_inv_lambda,
            attack: attack_train,
            eps: &state.eps_class,
            kind: cfg.boundary_attack,
        };
        history.push(HistoryRecord { epoch: it, report, state: state.clone(), train_loss: None })?;
        let loss = trainer.epoch(&objective)?;
        history.records.last_mut().expect("just pushed").train_loss = Some(loss);
    }
    Ok(trainer.model)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationMode {
    /// Scale the target class's boundary-term weight.
    Weight,
    /// Scale the target class's training margin.
    Margin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationPoint {
    pub ratio: f64,
    pub target_standard: f64,
    pub target_boundary: f64,
    pub report: ClasswiseReport,
}

/// For each ratio, trains `cfg.epochs` epochs of the boundary objective from
/// `start` with only `target_class`'s boundary weight or margin scaled, and
/// evaluates on `val`.
#[allow(clippy::too_many_arguments)]
pub fn ablation_sweep(
    start: &Model,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    attack_train: &AttackConfig,
    attack_eval: &AttackConfig,
    target_class: usize,
    mode: AblationMode,
    ratios: &[f64],
) -> Result<Vec<AblationPoint>> {
    let c = start.class_count();
    if ratios.is_empty() || ratios.iter().any(|r| !(r.is_finite() && *r >= 1.0)) {
        return Err(Error::Parameter("ratios must be non-empty and each >= 1".into()));
    }
    if target_class >= c {
        return Err(Error::Parameter(format!("target class {target_class} outside [0, {c})")));
    }
    let eval_seed = rng::derive_seed(cfg.seed, "ablation/eval");
    ratios
        .iter()
        .map(|&ratio| {
            let mut bndy = unit(c);
            let mut eps = vec![attack_train.epsilon; c];
            match mode {
                AblationMode::Weight => bndy[target_class] *= ratio,
                AblationMode::Margin => eps[target_class] *= ratio,
            }
            let model = train_boundary_weighted(start.clone(), train, cfg, attack_train, &unit(c), &bndy, &eps)?;
            let report = eval_classwise(&model, val, attack_eval, eval_seed)?;
            Ok(AblationPoint {
                ratio,
                target_standard: report.classes[target_class].standard_rate,
                target_boundary: report.classes[target_class].boundary_rate,
                report,
            })
        })
        .collect()
}

pub fn write_ablation_csv<W: Write>(points: &[AblationPoint], target_class: usize, mut w: W) -> Result<()> {
    writeln!(w, "ratio,target_class,target_standard,target_boundary,target_robust,avg_standard,avg_boundary,avg_robust")?;
    for p in points {
        writeln!(
            w,
            "{},{target_class},{},{},{},{},{},{}",
            format_f64(p.ratio),
            format_f64(p.target_standard),
            format_f64(p.target_boundary),
            format_f64(p.report.classes[target_class].robust_rate),
            format_f64(p.report.standard.average),
            format_f64(p.report.boundary.average),
            format_f64(p.report.robust.average)
        )?;
    }
    Ok(())
}
