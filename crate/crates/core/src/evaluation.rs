//! Class-wise error reports (standard / boundary / robust), fairness
//! violations, Monte-Carlo oracles for the binary mixture, the exact
//! intercept grid search and finite-difference gradient checks.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::linear_classwise_errors;
use crate::attacks::{classify_outcome, worst_case_input, AttackConfig, AttackOutcome, Norm};
use crate::distributions::{binary_label, draw_binary, format_f64, Dataset, MixtureSpec};
use crate::error::{ensure_dim, Error, Result};
use crate::models::{cross_entropy_grad, kl_boundary_grad, Model};
use crate::rng;

/// How the boundary count is formed from attack outcomes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryDefinition {
    /// Clean-correct samples whose adversarial prediction is wrong.
    #[default]
    Exact,
    /// Every sample whose prediction flips; robust is then the literal sum
    /// standard + boundary and can exceed the true robust error.
    Flip,
}

/// Which inner maximiser produced the robust counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// No attack (epsilon = 0).
    Clean,
    ExactLinear,
    Pgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Standard,
    Boundary,
    Robust,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub class: usize,
    pub sample_count: usize,
    pub standard_count: usize,
    pub boundary_count: usize,
    pub robust_count: usize,
    pub standard_rate: f64,
    pub boundary_rate: f64,
    pub robust_rate: f64,
}

impl ClassStats {
    pub fn count(&self, metric: Metric) -> usize {
        match metric {
            Metric::Standard => self.standard_count,
            Metric::Boundary => self.boundary_count,
            Metric::Robust => self.robust_count,
        }
    }

    pub fn rate(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Standard => self.standard_rate,
            Metric::Boundary => self.boundary_rate,
            Metric::Robust => self.robust_rate,
        }
    }

    /// Binomial standard error of `rate(metric)`, with the variance floored
    /// at `1 / N` of a Bernoulli trial so empty or full classes keep a band.
    pub fn standard_error(&self, metric: Metric) -> f64 {
        binomial_se(self.rate(metric), self.sample_count)
    }
}

pub fn binomial_se(p: f64, n: usize) -> f64 {
    let n = n as f64;
    ((p * (1.0 - p)).max(1.0 / n) / n).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    /// Sample-weighted mean of the class rates.
    pub average: f64,
    pub worst_class: usize,
    pub worst_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClasswiseReport {
    pub classes: Vec<ClassStats>,
    pub standard: MetricSummary,
    pub boundary: MetricSummary,
    pub robust: MetricSummary,
    pub epsilon: f64,
    pub estimator: Estimator,
    pub boundary_definition: BoundaryDefinition,
}

impl ClasswiseReport {
    /// Builds a report from per-class counts; fails unless
    /// `robust = standard + boundary` holds for every class.
    pub fn from_counts(
        sample_counts: &[usize],
        standard_counts: &[usize],
        boundary_counts: &[usize],
        robust_counts: &[usize],
        epsilon: f64,
        estimator: Estimator,
        boundary_definition: BoundaryDefinition,
    ) -> Result<Self> {
        let c = sample_counts.len();
        if c == 0 {
            return Err(Error::Report("report needs at least one class".into()));
        }
        for v in [standard_counts, boundary_counts, robust_counts] {
            ensure_dim(c, v.len())?;
        }
        let mut classes = Vec::with_capacity(c);
        for i in 0..c {
            let n = sample_counts[i];
            let (s, b, r) = (standard_counts[i], boundary_counts[i], robust_counts[i]);
            if n == 0 {
                return Err(Error::Report(format!("class {i} has no samples")));
            }
            if r != s + b {
                return Err(Error::Report(format!("class {i}: robust {r} != standard {s} + boundary {b}")));
            }
            if r > n && boundary_definition == BoundaryDefinition::Exact {
                return Err(Error::Report(format!("class {i}: {r} errors out of {n} samples")));
            }
            let nf = n as f64;
            classes.push(ClassStats {
                class: i,
                sample_count: n,
                standard_count: s,
                boundary_count: b,
                robust_count: r,
                standard_rate: s as f64 / nf,
                boundary_rate: b as f64 / nf,
                robust_rate: r as f64 / nf,
            });
        }
        let summary = |metric: Metric| {
            let total: usize = classes.iter().map(|c| c.sample_count).sum();
            let errors: usize = classes.iter().map(|c| c.count(metric)).sum();
            let mut worst = 0;
            for (i, c) in classes.iter().enumerate() {
                if c.rate(metric) > classes[worst].rate(metric) {
                    worst = i;
                }
            }
            MetricSummary { average: errors as f64 / total as f64, worst_class: worst, worst_rate: classes[worst].rate(metric) }
        };
        Ok(Self {
            standard: summary(Metric::Standard),
            boundary: summary(Metric::Boundary),
            robust: summary(Metric::Robust),
            classes,
            epsilon,
            estimator,
            boundary_definition,
        })
    }

    fn from_outcomes(
        class_count: usize,
        labels: impl Iterator<Item = usize>,
        outcomes: &[AttackOutcome],
        epsilon: f64,
        estimator: Estimator,
        def: BoundaryDefinition,
    ) -> Result<Self> {
        let mut n = vec![0; class_count];
        let mut s = vec![0; class_count];
        let mut b = vec![0; class_count];
        for (y, o) in labels.zip(outcomes) {
            n[y] += 1;
            if !o.clean_correct {
                s[y] += 1;
            }
            let boundary = match def {
                BoundaryDefinition::Exact => o.clean_correct && !o.adv_correct,
                BoundaryDefinition::Flip => o.flipped,
            };
            if boundary {
                b[y] += 1;
            }
        }
        let r: Vec<usize> = s.iter().zip(&b).map(|(s, b)| s + b).collect();
        Self::from_counts(&n, &s, &b, &r, epsilon, estimator, def)
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn summary(&self, metric: Metric) -> &MetricSummary {
        match metric {
            Metric::Standard => &self.standard,
            Metric::Boundary => &self.boundary,
            Metric::Robust => &self.robust,
        }
    }

    pub fn rates(&self, metric: Metric) -> Vec<f64> {
        self.classes.iter().map(|c| c.rate(metric)).collect()
    }

    /// Worst-class minus average rate.
    pub fn gap(&self, metric: Metric) -> f64 {
        let s = self.summary(metric);
        s.worst_rate - s.average
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(doc: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(doc).map_err(|e| Error::Report(e.to_string()))?;
        let col = |f: fn(&ClassStats) -> usize| r.classes.iter().map(f).collect::<Vec<_>>();
        Self::from_counts(
            &col(|c| c.sample_count),
            &col(|c| c.standard_count),
            &col(|c| c.boundary_count),
            &col(|c| c.robust_count),
            r.epsilon,
            r.estimator,
            r.boundary_definition,
        )
    }

    /// One row per class plus an `avg` row; `*_se` columns are binomial
    /// standard errors.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "class,sample_count,standard_count,boundary_count,robust_count,standard_rate,boundary_rate,robust_rate,standard_se,boundary_se,robust_se"
        )?;
        let metrics = [Metric::Standard, Metric::Boundary, Metric::Robust];
        for c in &self.classes {
            let rates: Vec<String> = metrics.iter().map(|m| format_f64(c.rate(*m))).collect();
            let ses: Vec<String> = metrics.iter().map(|m| format_f64(c.standard_error(*m))).collect();
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                c.class,
                c.sample_count,
                c.standard_count,
                c.boundary_count,
                c.robust_count,
                rates.join(","),
                ses.join(",")
            )?;
        }
        let total: usize = self.classes.iter().map(|c| c.sample_count).sum();
        let sums: Vec<String> = metrics
            .iter()
            .map(|m| self.classes.iter().map(|c| c.count(*m)).sum::<usize>().to_string())
            .collect();
        let avgs: Vec<String> = metrics.iter().map(|m| format_f64(self.summary(*m).average)).collect();
        let ses: Vec<String> = metrics.iter().map(|m| format_f64(binomial_se(self.summary(*m).average, total))).collect();
        writeln!(w, "avg,{total},{},{},{}", sums.join(","), avgs.join(","), ses.join(","))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub tau1: f64,
    pub tau2: f64,
    /// `rate_i - average - tau1` for the standard error.
    pub standard_slack: Vec<f64>,
    pub standard_violated: Vec<bool>,
    /// `rate_i - average - tau2` for the boundary error.
    pub boundary_slack: Vec<f64>,
    pub boundary_violated: Vec<bool>,
}

impl ViolationReport {
    pub fn all_satisfied(&self) -> bool {
        !self.standard_violated.iter().chain(&self.boundary_violated).any(|v| *v)
    }
}

pub fn fairness_violations(report: &ClasswiseReport, tau1: f64, tau2: f64) -> ViolationReport {
    let slack = |m: Metric, tau: f64| -> Vec<f64> {
        let avg = report.summary(m).average;
        report.classes.iter().map(|c| c.rate(m) - avg - tau).collect()
    };
    let standard_slack = slack(Metric::Standard, tau1);
    let boundary_slack = slack(Metric::Boundary, tau2);
    ViolationReport {
        tau1,
        tau2,
        standard_violated: standard_slack.iter().map(|s| *s > 0.0).collect(),
        boundary_violated: boundary_slack.iter().map(|s| *s > 0.0).collect(),
        standard_slack,
        boundary_slack,
    }
}

fn estimator_for(model: &Model, epsilon: f64) -> Estimator {
    if epsilon == 0.0 {
        Estimator::Clean
    } else if matches!(model, Model::Linear(_)) {
        Estimator::ExactLinear
    } else {
        Estimator::Pgd
    }
}

/// Attacks every sample of `data` (stream `(seed, i)` for sample `i`) and
/// tallies outcomes per class. Parallel, but independent of scheduling.
pub fn eval_classwise(model: &Model, data: &Dataset, attack: &AttackConfig, seed: u64) -> Result<ClasswiseReport> {
    eval_classwise_with(model, data, attack, seed, BoundaryDefinition::Exact)
}

pub fn eval_classwise_with(
    model: &Model,
    data: &Dataset,
    attack: &AttackConfig,
    seed: u64,
    def: BoundaryDefinition,
) -> Result<ClasswiseReport> {
    ensure_dim(model.input_dim(), data.dim())?;
    attack.validate()?;
    if data.class_count() > model.class_count() {
        return Err(Error::Parameter(format!(
            "data has {} classes but the model predicts {}",
            data.class_count(),
            model.class_count()
        )));
    }
    let outcomes = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let (x, y) = (data.row(i), data.label(i));
            let adv = worst_case_input(model, x, y, attack, &mut rng::stream(seed, i as u64))?;
            Ok(classify_outcome(model, x, &adv, y))
        })
        .collect::<Result<Vec<_>>>()?;
    ClasswiseReport::from_outcomes(
        data.class_count(),
        data.labels().iter().copied(),
        &outcomes,
        attack.epsilon,
        estimator_for(model, attack.epsilon),
        def,
    )
}

const MC_BLOCK: usize = 1 << 14;

/// Monte-Carlo class-wise errors of several classifiers on one shared fresh
/// draw of `n_samples` points from the binary mixture. Each entry pairs a
/// classifier with the l-inf radius used for its robust error: linear models
/// use the exact worst-case shift, MLPs PGD-20.
pub fn mc_classwise_errors_multi(spec: &MixtureSpec, entries: &[(&Model, f64)], n_samples: usize, seed: u64) -> Result<Vec<ClasswiseReport>> {
    spec.validate()?;
    if n_samples < 10_000 {
        return Err(Error::Parameter(format!("Monte-Carlo oracle needs n_samples >= 1e4, got {n_samples}")));
    }
    for (m, eps) in entries {
        ensure_dim(spec.dim(), m.input_dim())?;
        if m.class_count() != 2 {
            return Err(Error::Parameter("binary mixture needs a two-class model".into()));
        }
        AttackConfig::pgd20_linf(*eps).validate()?;
    }
    let data_seed = rng::derive_seed(seed, "mc/data");
    let attack_seed = rng::derive_seed(seed, "mc/attack");
    let p = spec.dim();
    let k = entries.len();
    let blocks = n_samples.div_ceil(MC_BLOCK);
    let tallies: Vec<Vec<[usize; 4]>> = (0..blocks)
        .into_par_iter()
        .map(|blk| {
            // per entry, per class: [samples, standard, boundary, unused]
            let mut t = vec![[0usize; 4]; 2 * k];
            let mut x = vec![0.0; p];
            for i in blk * MC_BLOCK..((blk + 1) * MC_BLOCK).min(n_samples) {
                let y = binary_label(i, n_samples);
                draw_binary(spec, data_seed, i as u64, y, &mut x);
                let ys = 2.0 * y as f64 - 1.0;
                for (e, (model, eps)) in entries.iter().enumerate() {
                    let (clean_ok, adv_ok) = match model {
                        Model::Linear(lin) => {
                            let s = lin.margin(&x);
                            let l1: f64 = lin.weights.iter().map(|w| w.abs()).sum();
                            let adv = s - eps * ys * l1;
                            ((s > 0.0) == (y == 1), (adv > 0.0) == (y == 1))
                        }
                        Model::Mlp(_) => {
                            let cfg = AttackConfig::pgd20_linf(*eps);
                            let mut st = rng::stream(attack_seed, i as u64);
                            let adv = worst_case_input(model, &x, y, &cfg, &mut st).expect("validated");
                            let o = classify_outcome(model, &x, &adv, y);
                            (o.clean_correct, o.adv_correct)
                        }
                    };
                    let cell = &mut t[2 * e + y];
                    cell[0] += 1;
                    if !clean_ok {
                        cell[1] += 1;
                    } else if !adv_ok {
                        cell[2] += 1;
                    }
                }
            }
            t
        })
        .collect();
    let mut total = vec![[0usize; 4]; 2 * k];
    for t in &tallies {
        for (a, b) in total.iter_mut().zip(t) {
            for j in 0..4 {
                a[j] += b[j];
            }
        }
    }
    entries
        .iter()
        .enumerate()
        .map(|(e, (model, eps))| {
            let cells = [total[2 * e], total[2 * e + 1]];
            let n: Vec<usize> = cells.iter().map(|c| c[0]).collect();
            let s: Vec<usize> = cells.iter().map(|c| c[1]).collect();
            let b: Vec<usize> = cells.iter().map(|c| c[2]).collect();
            let r: Vec<usize> = cells.iter().map(|c| c[1] + c[2]).collect();
            ClasswiseReport::from_counts(&n, &s, &b, &r, *eps, estimator_for(model, *eps), BoundaryDefinition::Exact)
        })
        .collect()
}

pub fn mc_classwise_errors(spec: &MixtureSpec, classifier: &Model, eps: f64, n_samples: usize, seed: u64) -> Result<ClasswiseReport> {
    Ok(mc_classwise_errors_multi(spec, &[(classifier, eps)], n_samples, seed)?.remove(0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterceptObjective {
    Standard,
    Robust,
}

/// Grid point in `[b_lo, b_hi]` minimising the exact average error of the
/// all-ones linear classifier (first minimiser on ties).
pub fn grid_search_intercept(
    spec: &MixtureSpec,
    eps: f64,
    objective: InterceptObjective,
    b_lo: f64,
    b_hi: f64,
    grid_points: usize,
) -> Result<f64> {
    if !(b_lo < b_hi) || grid_points < 100 {
        return Err(Error::Parameter("grid search needs b_lo < b_hi and at least 100 points".into()));
    }
    let w = vec![1.0; spec.dim()];
    let step = (b_hi - b_lo) / (grid_points - 1) as f64;
    let mut best = (f64::INFINITY, b_lo);
    for k in 0..grid_points {
        let b = b_lo + step * k as f64;
        let errs = linear_classwise_errors(spec, &w, b, eps)?;
        let v = match objective {
            InterceptObjective::Standard => errs.standard.average(),
            InterceptObjective::Robust => errs.robust.average(),
        };
        if v < best.0 {
            best = (v, b);
        }
    }
    Ok(best.1)
}

/// Loss whose gradients are checked.
#[derive(Debug, Clone, PartialEq)]
pub enum LossKind {
    CrossEntropy,
    /// `KL(f(x) || f(x_adv))`; the input gradient is taken at `x_adv`.
    Kl { x_adv: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    pub max_param_error: f64,
    pub max_input_error: f64,
}

impl GradientCheck {
    pub fn max_error(&self) -> f64 {
        self.max_param_error.max(self.max_input_error)
    }
}

/// Relative discrepancies below this absolute scale are measured against it.
const FD_FLOOR: f64 = 1e-6;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FD_FLOOR)
}

/// Central-difference check of the analytic parameter and input gradients.
/// Returns `None` for relu networks with a pre-activation within `10 * step`
/// of the kink at any evaluated input.
pub fn finite_difference_check(model: &Model, loss: &LossKind, x: &[f64], y: usize, step: f64) -> Result<Option<GradientCheck>> {
    if !(step > 0.0) {
        return Err(Error::Parameter("finite-difference step must be > 0".into()));
    }
    if let Model::Mlp(m) = model {
        if m.activation() == crate::models::Activation::Relu {
            let mut pts = vec![x];
            if let LossKind::Kl { x_adv } = loss {
                pts.push(x_adv);
            }
            for p in pts {
                ensure_dim(model.input_dim(), p.len())?;
                if m.hidden_preactivations(p).iter().any(|z| z.abs() < 10.0 * step) {
                    return Ok(None);
                }
            }
        }
    }
    let eval = |m: &Model, x: &[f64]| -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let lg = match loss {
            LossKind::CrossEntropy => cross_entropy_grad(m, x, y, 1.0)?,
            LossKind::Kl { x_adv } => kl_boundary_grad(m, x, x_adv, 1.0)?,
        };
        Ok((lg.loss, lg.gradient, lg.input_gradient.unwrap_or_default()))
    };
    let (_, pg, ig) = eval(model, x)?;
    let params = model.params();
    let mut max_param_error: f64 = 0.0;
    let mut probe = model.clone();
    let mut p = params.clone();
    for j in 0..params.len() {
        p[j] = params[j] + step;
        probe.set_params(&p)?;
        let up = eval(&probe, x)?.0;
        p[j] = params[j] - step;
        probe.set_params(&p)?;
        let down = eval(&probe, x)?.0;
        p[j] = params[j];
        max_param_error = max_param_error.max(rel_err(pg[j], (up - down) / (2.0 * step)));
    }
    let mut max_input_error: f64 = 0.0;
    match loss {
        LossKind::CrossEntropy => {
            let mut xp = x.to_vec();
            for j in 0..x.len() {
                xp[j] = x[j] + step;
                let up = cross_entropy_grad(model, &xp, y, 1.0)?.loss;
                xp[j] = x[j] - step;
                let down = cross_entropy_grad(model, &xp, y, 1.0)?.loss;
                xp[j] = x[j];
                max_input_error = max_input_error.max(rel_err(ig[j], (up - down) / (2.0 * step)));
            }
        }
        LossKind::Kl { x_adv } => {
            let mut xp = x_adv.clone();
            for j in 0..x_adv.len() {
                xp[j] = x_adv[j] + step;
                let up = kl_boundary_grad(model, x, &xp, 1.0)?.loss;
                xp[j] = x_adv[j] - step;
                let down = kl_boundary_grad(model, x, &xp, 1.0)?.loss;
                xp[j] = x_adv[j];
                max_input_error = max_input_error.max(rel_err(ig[j], (up - down) / (2.0 * step)));
            }
        }
    }
    Ok(Some(GradientCheck { max_param_error, max_input_error }))
}

/// l-inf attack used for evaluation when only a radius is given.
pub fn default_attack(epsilon: f64, norm: Norm) -> AttackConfig {
    match norm {
        Norm::Linf => AttackConfig::pgd20_linf(epsilon),
        Norm::L2 => AttackConfig::pgd20_l2(epsilon),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{classwise_std_error_natural, natural_intercept};
    use crate::distributions::{sample_multiclass_mixture, MulticlassMixtureSpec};
    use crate::models::{init_model, Activation, LinearClassifier, MlpClassifier, ModelSpec};
    use rand::Rng;

    fn ones(d: usize, b: f64) -> Model {
        Model::Linear(LinearClassifier::new(vec![1.0; d], b).unwrap())
    }

    #[test]
    fn count_identity_enforced() {
        assert!(ClasswiseReport::from_counts(&[10], &[2], &[3], &[6], 0.1, Estimator::Pgd, BoundaryDefinition::Exact).is_err());
        assert!(ClasswiseReport::from_counts(&[0], &[0], &[0], &[0], 0.1, Estimator::Pgd, BoundaryDefinition::Exact).is_err());
        let r = ClasswiseReport::from_counts(&[10, 30], &[2, 3], &[3, 0], &[5, 3], 0.1, Estimator::Pgd, BoundaryDefinition::Exact).unwrap();
        assert_eq!(r.standard.average, 5.0 / 40.0);
        assert_eq!(r.robust.worst_class, 0);
        assert_eq!(r.boundary.worst_rate, 0.3);
    }

    #[test]
    fn worst_class_ties_go_low() {
        let r = ClasswiseReport::from_counts(&[10, 10, 10], &[1, 3, 3], &[0, 0, 0], &[1, 3, 3], 0.0, Estimator::Clean, BoundaryDefinition::Exact).unwrap();
        assert_eq!(r.standard.worst_class, 1);
        assert_eq!(r.boundary.worst_class, 0);
    }

    #[test]
    fn violation_arithmetic() {
        // rates 0.3 and 0.1, average 0.2
        let r = ClasswiseReport::from_counts(&[100, 100], &[30, 10], &[0, 0], &[30, 10], 0.0, Estimator::Clean, BoundaryDefinition::Exact).unwrap();
        let v = fairness_violations(&r, 0.05, 0.0);
        assert!((v.standard_slack[0] - 0.05).abs() < 1e-15);
        assert!(v.standard_violated[0] && !v.standard_violated[1]);
        assert!(fairness_violations(&r, 1.0, 1.0).all_satisfied());
        let u = ClasswiseReport::from_counts(&[50, 50], &[5, 5], &[2, 2], &[7, 7], 0.0, Estimator::Clean, BoundaryDefinition::Exact).unwrap();
        assert!(fairness_violations(&u, 0.0, 0.0).all_satisfied());
    }

    #[test]
    fn perfect_model_has_no_errors() {
        let data = Dataset::new(vec![-1.0, -2.0, 1.0, 3.0], 1, vec![0, 0, 1, 1], 2).unwrap();
        let r = eval_classwise(&ones(1, 0.0), &data, &AttackConfig::pgd20_linf(0.0), 0).unwrap();
        assert_eq!(r.robust.average, 0.0);
        assert_eq!(r.estimator, Estimator::Clean);
    }

    #[test]
    fn empty_class_rejected() {
        let data = Dataset::new(vec![-1.0, -2.0], 1, vec![0, 0], 2).unwrap();
        assert!(eval_classwise(&ones(1, 0.0), &data, &AttackConfig::pgd20_linf(0.1), 0).is_err());
    }

    #[test]
    fn chance_level_on_four_classes() {
        let spec = MulticlassMixtureSpec::four_class_benchmark();
        let data = sample_multiclass_mixture(&spec, 2000, 3).unwrap();
        // Constant logits predict class 0 always; a random-weight net is a
        // better stand-in for guessing, so scramble labels instead.
        let model = Model::Mlp(MlpClassifier::zeros(vec![4, 3, 4], Activation::Tanh).unwrap());
        let r = eval_classwise(&model, &data, &AttackConfig::pgd20_linf(0.0), 0).unwrap();
        assert!((r.standard.average - 0.75).abs() < 1e-12);
        let mut s = rng::stream(9, 0);
        let labels: Vec<usize> = (0..data.len()).map(|_| s.random_range(0..4)).collect();
        let shuffled = Dataset::new(data.features().to_vec(), 4, labels, 4).unwrap();
        let m = init_model(&ModelSpec::mlp(4, 8, 4, Activation::Tanh), 1).unwrap();
        let r = eval_classwise(&m, &shuffled, &AttackConfig::pgd20_linf(0.0), 0).unwrap();
        let se = binomial_se(0.75, data.len());
        assert!((r.standard.average - 0.75).abs() < 4.0 * se, "{}", r.standard.average);
    }

    #[test]
    fn flip_definition_sums_literally() {
        let m = ones(1, 0.0);
        // clean-wrong sample that the attack pushes further: no flip; a
        // clean-correct sample near the boundary: flip.
        let data = Dataset::new(vec![0.5, 0.05, -0.5, 0.5], 1, vec![0, 1, 0, 1], 2).unwrap();
        let cfg = AttackConfig::pgd20_linf(0.1);
        let e = eval_classwise_with(&m, &data, &cfg, 0, BoundaryDefinition::Exact).unwrap();
        let f = eval_classwise_with(&m, &data, &cfg, 0, BoundaryDefinition::Flip).unwrap();
        for r in [&e, &f] {
            for c in &r.classes {
                assert_eq!(c.robust_count, c.standard_count + c.boundary_count);
            }
        }
        assert_eq!(e.classes[1].boundary_count, 1);
        assert_eq!(f.classes[0].boundary_count, 0);
    }

    #[test]
    fn trivial_classifier_oracle() {
        let spec = MixtureSpec::robust_only(3, 0.5, 1.0, 2.0).unwrap();
        let m = Model::Linear(LinearClassifier::new(vec![1.0, 0.0, 0.0], -1e9).unwrap());
        let r = mc_classwise_errors(&spec, &m, 0.0, 10_000, 1).unwrap();
        assert_eq!(r.classes[0].standard_rate, 0.0);
        assert_eq!(r.classes[1].standard_rate, 1.0);
        assert!(mc_classwise_errors(&spec, &m, 0.0, 9_999, 1).is_err());
    }

    #[test]
    fn mc_matches_closed_form_small() {
        let spec = MixtureSpec::robust_only(10, 0.5, 1.0, 2.0).unwrap();
        let m = ones(10, natural_intercept(&spec).unwrap());
        let r = mc_classwise_errors(&spec, &m, 0.0, 200_000, 5).unwrap();
        let exact = classwise_std_error_natural(&spec).unwrap();
        for (c, e) in r.classes.iter().zip([exact.err_minus, exact.err_plus]) {
            assert!((c.standard_rate - e).abs() < 4.0 * c.standard_error(Metric::Standard));
        }
    }

    #[test]
    fn band_scales_with_root_n() {
        let (a, b) = (binomial_se(0.2, 10_000), binomial_se(0.2, 20_000));
        assert!((a / b - 2f64.sqrt()).abs() < 0.1 * 2f64.sqrt());
        assert!(binomial_se(0.0, 100) > 0.0);
    }

    #[test]
    fn mc_is_deterministic_and_shares_samples() {
        let spec = MixtureSpec::fig2();
        let a = ones(2, 0.5);
        let b = ones(2, 0.3);
        let both = mc_classwise_errors_multi(&spec, &[(&a, 0.5), (&b, 0.5)], 20_000, 7).unwrap();
        assert_eq!(both[0], mc_classwise_errors(&spec, &a, 0.5, 20_000, 7).unwrap());
        assert_eq!(both[1], mc_classwise_errors(&spec, &b, 0.5, 20_000, 7).unwrap());
    }

    #[test]
    fn intercept_grid() {
        let spec = MixtureSpec::fig2();
        let d_eta = spec.d as f64 * spec.eta;
        let std = grid_search_intercept(&spec, 0.0, InterceptObjective::Standard, -d_eta, d_eta, 10_000).unwrap();
        let rob0 = grid_search_intercept(&spec, 0.0, InterceptObjective::Robust, -d_eta, d_eta, 10_000).unwrap();
        assert_eq!(std, rob0);
        let step = 2.0 * d_eta / 9_999.0;
        assert!((std - natural_intercept(&spec).unwrap()).abs() <= 2.0 * step);
        let rob = grid_search_intercept(&spec, 0.5, InterceptObjective::Robust, -d_eta, d_eta, 10_000).unwrap();
        assert!(rob < std);
        assert!(grid_search_intercept(&spec, 0.0, InterceptObjective::Standard, 1.0, 0.0, 200).is_err());
    }

    #[test]
    fn gradient_check_smooth_and_degenerate() {
        let m = init_model(&ModelSpec::mlp(3, 5, 3, Activation::Tanh), 2).unwrap();
        let x = [0.3, -0.2, 0.9];
        let c = finite_difference_check(&m, &LossKind::CrossEntropy, &x, 1, 1e-5).unwrap().unwrap();
        assert!(c.max_error() <= 1e-4, "{c:?}");
        let k = finite_difference_check(&m, &LossKind::Kl { x_adv: vec![0.5, -0.1, 0.7] }, &x, 1, 1e-5).unwrap().unwrap();
        assert!(k.max_error() <= 1e-4, "{k:?}");
        let z = Model::Mlp(MlpClassifier::zeros(vec![2], Activation::Tanh).unwrap());
        let c = finite_difference_check(&z, &LossKind::CrossEntropy, &[0.1, 0.2], 0, 1e-5).unwrap().unwrap();
        assert_eq!(c.max_param_error, 0.0);
    }

    #[test]
    fn relu_kink_excluded() {
        let m = Model::Mlp(MlpClassifier::new(vec![1, 1, 2], Activation::Relu, vec![1.0, 0.0, 1.0, -1.0, 0.0, 0.0]).unwrap());
        assert!(finite_difference_check(&m, &LossKind::CrossEntropy, &[1e-6], 0, 1e-5).unwrap().is_none());
        assert!(finite_difference_check(&m, &LossKind::CrossEntropy, &[0.5], 0, 1e-5).unwrap().is_some());
    }

    #[test]
    fn report_round_trips() {
        let r = ClasswiseReport::from_counts(&[10, 12], &[1, 2], &[3, 0], &[4, 2], 0.4, Estimator::Pgd, BoundaryDefinition::Exact).unwrap();
        assert_eq!(ClasswiseReport::from_json(&r.to_json()).unwrap(), r);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().last().unwrap().starts_with("avg,22,3,3,6,"));
    }
}
