//! Oracle checks: closed forms against Monte-Carlo, closed-form intercepts
//! against an exhaustive grid search.

use fairrobust::rng::derive_seed;
use fairrobust::{
    closed_form_terms_with_q, grid_search_intercept, mc_classwise_errors_multi, q_factor, ClasswiseErrorPair, InterceptObjective,
    LinearClassifier, Metric, MixtureSpec, Model,
};
use serde::{Deserialize, Serialize};

use crate::config::VerifyConfig;
use crate::error::{CliError, CliResult};

pub const SUITE_MC: &str = "mc";
pub const SUITE_INTERCEPT: &str = "intercept";
pub const MC_SEED: &str = "verify/mc";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub suite: String,
    pub name: String,
    pub passed: bool,
    /// Largest deviation, in standard errors (mc) or grid steps (intercept).
    pub deviation: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckResult {
    pub fn line(&self) -> String {
        format!(
            "{} {}/{}: deviation {:.3} (tolerance {}) {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.suite,
            self.name,
            self.deviation,
            self.tolerance,
            self.detail
        )
    }
}

pub fn parse_suites(list: Option<&str>) -> CliResult<Vec<String>> {
    let Some(list) = list else {
        return Ok(vec![SUITE_MC.into(), SUITE_INTERCEPT.into()]);
    };
    let mut out = Vec::new();
    for s in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match s {
            SUITE_MC | SUITE_INTERCEPT => out.push(s.to_string()),
            other => return Err(CliError::Config(format!("--checks: unknown suite `{other}` (expected mc, intercept)"))),
        }
    }
    if out.is_empty() {
        return Err(CliError::Config("--checks: no suite selected".into()));
    }
    Ok(out)
}

fn q_under_test(spec: &MixtureSpec, cfg: &VerifyConfig) -> CliResult<f64> {
    Ok(q_factor(spec.k_ratio)? * (1.0 + cfg.q_perturbation))
}

/// For each radius, the optimal robust all-ones classifier (natural at zero)
/// is sampled on fresh data; its class-wise standard and robust errors must
/// sit within the band around the closed forms.
pub fn mc_checks(cfg: &VerifyConfig, seed: u64) -> CliResult<Vec<CheckResult>> {
    let spec = &cfg.mc_spec;
    let q = q_under_test(spec, cfg)?;
    let mut models = Vec::new();
    let mut expected: Vec<(ClasswiseErrorPair, ClasswiseErrorPair)> = Vec::new();
    for &eps in &cfg.mc_eps {
        let terms = closed_form_terms_with_q(spec, eps, q)?;
        let (b, std, rob) = if eps == 0.0 {
            let n = terms.natural_std(spec.k_ratio);
            (terms.b_nat, n, n)
        } else {
            (terms.b_rob, terms.robust_std(spec, eps), terms.robust_rob(spec.k_ratio))
        };
        models.push(Model::Linear(LinearClassifier::new(vec![1.0; spec.dim()], b)?));
        expected.push((std, rob));
    }
    let entries: Vec<(&Model, f64)> = models.iter().zip(&cfg.mc_eps).map(|(m, e)| (m, *e)).collect();
    let reports = mc_classwise_errors_multi(spec, &entries, cfg.mc_samples, derive_seed(seed, MC_SEED))?;
    let mut out = Vec::new();
    for ((eps, report), (std, rob)) in cfg.mc_eps.iter().zip(&reports).zip(&expected) {
        for (metric, pair, tag) in [(Metric::Standard, std, "standard"), (Metric::Robust, rob, "robust")] {
            let mut worst = 0.0f64;
            let mut detail = Vec::new();
            for (class, want) in [(0, pair.err_minus), (1, pair.err_plus)] {
                let c = &report.classes[class];
                let z = (c.rate(metric) - want).abs() / c.standard_error(metric);
                worst = worst.max(z);
                detail.push(format!("class {}: mc {:.5} vs {:.5}", if class == 0 { "-1" } else { "+1" }, c.rate(metric), want));
            }
            out.push(CheckResult {
                suite: SUITE_MC.into(),
                name: format!("eps={eps}/{tag}"),
                passed: worst <= cfg.band_sigmas,
                deviation: worst,
                tolerance: cfg.band_sigmas,
                detail: detail.join("; "),
            });
        }
    }
    Ok(out)
}

pub fn intercept_checks(cfg: &VerifyConfig) -> CliResult<Vec<CheckResult>> {
    let mut out = Vec::new();
    for case in &cfg.intercept_cases {
        let spec = &case.spec;
        let q = q_under_test(spec, cfg)?;
        let terms = closed_form_terms_with_q(spec, case.eps, q)?;
        let half = spec.d as f64 * spec.eta;
        let step = 2.0 * half / (cfg.grid_points - 1) as f64;
        for (objective, eps, closed, tag) in
            [(InterceptObjective::Standard, 0.0, terms.b_nat, "b_nat"), (InterceptObjective::Robust, case.eps, terms.b_rob, "b_rob")]
        {
            let found = grid_search_intercept(spec, eps, objective, -half, half, cfg.grid_points)?;
            let steps = (found - closed).abs() / step;
            out.push(CheckResult {
                suite: SUITE_INTERCEPT.into(),
                name: format!("d={},K={},eta={},eps={}/{tag}", spec.d, spec.k_ratio, spec.eta, case.eps),
                passed: steps <= cfg.grid_tolerance_steps,
                deviation: steps,
                tolerance: cfg.grid_tolerance_steps,
                detail: format!("grid {found:.6} vs closed form {closed:.6}"),
            });
        }
    }
    Ok(out)
}

pub fn run_checks(cfg: &VerifyConfig, suites: &[String], seed: u64) -> CliResult<Vec<CheckResult>> {
    if cfg.mc_samples < 10_000 || cfg.grid_points < 100 || !(cfg.band_sigmas > 0.0) {
        return Err(CliError::Config("verify: need mc_samples >= 10000, grid_points >= 100 and band_sigmas > 0".into()));
    }
    let mut out = Vec::new();
    for s in suites {
        match s.as_str() {
            SUITE_MC => out.extend(mc_checks(cfg, seed)?),
            SUITE_INTERCEPT => out.extend(intercept_checks(cfg)?),
            other => return Err(CliError::Config(format!("unknown suite `{other}`"))),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_parse() {
        assert_eq!(parse_suites(None).unwrap().len(), 2);
        assert_eq!(parse_suites(Some("intercept")).unwrap(), ["intercept"]);
        assert!(parse_suites(Some("nope")).is_err());
        assert!(parse_suites(Some(",")).is_err());
    }

    #[test]
    fn intercepts_pass_and_corruption_is_caught() {
        let cfg = VerifyConfig::default();
        for c in intercept_checks(&cfg).unwrap() {
            assert!(c.passed, "{}", c.line());
        }
        let bad = VerifyConfig { q_perturbation: 0.01, ..cfg };
        assert!(intercept_checks(&bad).unwrap().iter().any(|c| !c.passed));
    }

    #[test]
    fn small_mc_run_agrees() {
        let cfg = VerifyConfig { mc_samples: 200_000, ..VerifyConfig::default() };
        for c in mc_checks(&cfg, 5).unwrap() {
            assert!(c.passed, "{}", c.line());
        }
    }
}
