//! Run configuration: one JSON document, every field optional, resolved into
//! a fully explicit form before anything runs.

use std::fs;
use std::path::{Path, PathBuf};

use fairrobust::rng::derive_seed;
use fairrobust::{
    load_csv_dataset, sample_binary_mixture, sample_multiclass_mixture, Activation, AblationMode, AttackConfig, Dataset, FrlParams, FrlVariant,
    MixtureSpec, ModelSpec, MulticlassMixtureSpec, SceneOptions, TheoryGrid, TrainConfig,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const TRAIN_DATA: &str = "train/data";
pub const VAL_DATA: &str = "frl/val";

fn n_train() -> usize {
    2500
}
fn n_val() -> usize {
    300
}
fn n_train_binary() -> usize {
    5000
}
fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistributionConfig {
    /// Four orthogonal centers at distance 4 with stds (1, 1, 2, 2).
    FourClassBenchmark {
        #[serde(default = "n_train")]
        n_train_per_class: usize,
        #[serde(default = "n_val")]
        n_val_per_class: usize,
    },
    Multiclass {
        centers: Vec<Vec<f64>>,
        sigmas: Vec<f64>,
        #[serde(default = "n_train")]
        n_train_per_class: usize,
        #[serde(default = "n_val")]
        n_val_per_class: usize,
    },
    /// Binary mixture; class 0 is the compact class "-1".
    Binary {
        d: usize,
        #[serde(default)]
        m: usize,
        eta: f64,
        #[serde(default)]
        gamma: f64,
        #[serde(default = "one")]
        sigma: f64,
        k_ratio: f64,
        #[serde(default = "n_train_binary")]
        n_train_per_class: usize,
        #[serde(default = "n_val")]
        n_val_per_class: usize,
    },
}

impl Default for DistributionConfig {
    fn default() -> Self {
        DistributionConfig::FourClassBenchmark { n_train_per_class: n_train(), n_val_per_class: n_val() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub train: PathBuf,
    /// Without a validation file, FRL and ablations cannot run.
    #[serde(default)]
    pub val: Option<PathBuf>,
    #[serde(default = "label")]
    pub label_column: String,
}

fn label() -> String {
    "label".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackBlock {
    /// Inner maximiser during training.
    pub train: AttackConfig,
    /// Attack used for every reported robust error.
    pub eval: AttackConfig,
}

impl Default for AttackBlock {
    fn default() -> Self {
        Self { train: AttackConfig::linf_steps(0.4, 10), eval: AttackConfig::pgd20_linf(0.4) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterceptCase {
    pub spec: MixtureSpec,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub mc_spec: MixtureSpec,
    pub mc_eps: Vec<f64>,
    pub mc_samples: usize,
    /// Width of the agreement band in binomial standard errors.
    pub band_sigmas: f64,
    pub intercept_cases: Vec<InterceptCase>,
    pub grid_points: usize,
    /// Allowed distance of the grid minimiser from the closed form, in grid steps.
    pub grid_tolerance_steps: f64,
    /// Relative perturbation applied to q(K) in every closed form under test;
    /// zero for a genuine run.
    pub q_perturbation: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        let mut intercept_cases = vec![InterceptCase { spec: MixtureSpec::fig2(), eps: 0.5 }];
        for d in [2, 10] {
            for k in [1.5, 2.0, 3.0] {
                intercept_cases.push(InterceptCase { spec: MixtureSpec::robust_only(d, 1.0, 1.0, k).expect("valid"), eps: 0.2 });
            }
        }
        Self {
            mc_spec: MixtureSpec::robust_only(10, 0.5, 1.0, 2.0).expect("valid"),
            mc_eps: vec![0.0, 0.1, 0.2],
            mc_samples: 2_000_000,
            band_sigmas: 3.0,
            intercept_cases,
            grid_points: 10_000,
            grid_tolerance_steps: 2.0,
            q_perturbation: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub mode: AblationMode,
    /// Worst robust class of the starting model on validation when absent.
    pub target_class: Option<usize>,
    /// `1, 2, 3, 4.5` for weights and `1, 1.5, 2, 2.5` for margins when absent.
    pub ratios: Option<Vec<f64>>,
    /// Per-class size of a fresh evaluation set; the validation set when absent.
    pub n_eval_per_class: Option<usize>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { mode: AblationMode::Weight, target_class: None, ratios: None, n_eval_per_class: None }
    }
}

pub fn default_ratios(mode: AblationMode) -> Vec<f64> {
    match mode {
        AblationMode::Weight => vec![1.0, 2.0, 3.0, 4.5],
        AblationMode::Margin => vec![1.0, 1.5, 2.0, 2.5],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub distribution: Option<DistributionConfig>,
    pub dataset_csv: Option<CsvSource>,
    /// MLP-32 (relu) for multiclass data, logistic for binary data when absent.
    pub model: Option<ModelSpec>,
    /// Model document to start from instead of PGD-AT pre-training.
    pub start_model: Option<PathBuf>,
    pub attack: AttackBlock,
    pub train: TrainConfig,
    pub frl: FrlParams,
    pub seed: u64,
    #[serde(default = "TheoryGrid::reference")]
    pub theory_grid: TheoryGrid,
    pub verify: VerifyConfig,
    pub scene: SceneOptions,
    pub ablation: AblationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            distribution: None,
            dataset_csv: None,
            model: None,
            start_model: None,
            attack: AttackBlock::default(),
            train: TrainConfig::default(),
            frl: FrlParams::default(),
            seed: 0,
            theory_grid: TheoryGrid::reference(),
            verify: VerifyConfig::default(),
            scene: SceneOptions::default(),
            ablation: AblationConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads `path`, or the all-default configuration when `None`.
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
                Self::from_json(&text).map_err(|e| match e {
                    CliError::Config(m) => CliError::Config(format!("{}: {m}", p.display())),
                    other => other,
                })
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Fills every implicit default and checks cross-field consistency.
    pub fn resolve(mut self) -> CliResult<Self> {
        match (&self.distribution, &self.dataset_csv) {
            (Some(_), Some(_)) => return Err(CliError::Config("give either `distribution` or `dataset_csv`, not both".into())),
            (None, None) => self.distribution = Some(DistributionConfig::default()),
            _ => {}
        }
        if let Some(d) = &self.distribution {
            let (n_train, n_val) = match d {
                DistributionConfig::FourClassBenchmark { n_train_per_class, n_val_per_class }
                | DistributionConfig::Multiclass { n_train_per_class, n_val_per_class, .. }
                | DistributionConfig::Binary { n_train_per_class, n_val_per_class, .. } => (*n_train_per_class, *n_val_per_class),
            };
            if n_train == 0 || n_val == 0 {
                return Err(CliError::Config("distribution: per-class sample counts must be >= 1".into()));
            }
        }
        self.train.seed = self.seed;
        match (self.train.frl_variant, self.frl.variant) {
            (a, b) if a == b => {}
            (a, FrlVariant::Both) => self.frl.variant = a,
            (FrlVariant::Both, b) => self.train.frl_variant = b,
            (a, b) => return Err(CliError::Config(format!("train.frl_variant `{a}` contradicts frl.variant `{b}`"))),
        }
        self.train.validate().map_err(|e| CliError::Config(format!("train: {e}")))?;
        self.attack.train.validate().map_err(|e| CliError::Config(format!("attack.train: {e}")))?;
        self.attack.eval.validate().map_err(|e| CliError::Config(format!("attack.eval: {e}")))?;
        if let Some(r) = &self.ablation.ratios {
            if r.is_empty() || r.iter().any(|v| !(v.is_finite() && *v >= 1.0)) {
                return Err(CliError::Config("ablation.ratios: need at least one ratio, each >= 1".into()));
            }
        }
        if self.model.is_none() {
            self.model = Some(match &self.distribution {
                Some(DistributionConfig::Binary { d, m, .. }) => ModelSpec::Linear { input_dim: d + m },
                Some(DistributionConfig::FourClassBenchmark { .. }) => ModelSpec::mlp(4, 32, 4, Activation::Relu),
                Some(DistributionConfig::Multiclass { centers, .. }) => {
                    let dim = centers.first().map_or(0, Vec::len);
                    ModelSpec::mlp(dim, 32, centers.len(), Activation::Relu)
                }
                None => return Err(CliError::Config("`model` is required with `dataset_csv`".into())),
            });
        }
        Ok(self)
    }

    pub fn model_spec(&self) -> &ModelSpec {
        self.model.as_ref().expect("resolved config carries a model")
    }

    /// Training and (when available) validation data.
    pub fn datasets(&self) -> CliResult<(Dataset, Option<Dataset>)> {
        if let Some(src) = &self.dataset_csv {
            let train = load_csv_dataset(&src.train, &src.label_column)?;
            let val = src.val.as_ref().map(|p| load_csv_dataset(p, &src.label_column)).transpose()?;
            return Ok((train, val));
        }
        let d = self.distribution.as_ref().ok_or_else(|| CliError::Config("unresolved configuration".into()))?;
        let (a, b) = (derive_seed(self.seed, TRAIN_DATA), derive_seed(self.seed, VAL_DATA));
        let (train, val) = match d {
            DistributionConfig::Binary { d, m, eta, gamma, sigma, k_ratio, n_train_per_class, n_val_per_class } => {
                let spec = MixtureSpec::new(*d, *m, *eta, *gamma, *sigma, *k_ratio)?;
                (sample_binary_mixture(&spec, 2 * n_train_per_class, a)?, sample_binary_mixture(&spec, 2 * n_val_per_class, b)?)
            }
            _ => {
                let spec = self.multiclass_spec().expect("multiclass distribution")?;
                let (nt, nv) = match d {
                    DistributionConfig::FourClassBenchmark { n_train_per_class, n_val_per_class }
                    | DistributionConfig::Multiclass { n_train_per_class, n_val_per_class, .. } => (*n_train_per_class, *n_val_per_class),
                    DistributionConfig::Binary { .. } => unreachable!(),
                };
                (sample_multiclass_mixture(&spec, nt, a)?, sample_multiclass_mixture(&spec, nv, b)?)
            }
        };
        Ok((train, Some(val)))
    }

    /// Fresh held-out draw from a synthetic distribution, `None` for CSV data.
    pub fn fresh_sample(&self, n_per_class: usize, name: &str) -> CliResult<Option<Dataset>> {
        let seed = derive_seed(self.seed, name);
        Ok(match &self.distribution {
            None => None,
            Some(DistributionConfig::Binary { d, m, eta, gamma, sigma, k_ratio, .. }) => {
                let spec = MixtureSpec::new(*d, *m, *eta, *gamma, *sigma, *k_ratio)?;
                Some(sample_binary_mixture(&spec, 2 * n_per_class, seed)?)
            }
            Some(_) => Some(sample_multiclass_mixture(&self.multiclass_spec().expect("multiclass distribution")?, n_per_class, seed)?),
        })
    }

    fn multiclass_spec(&self) -> Option<CliResult<MulticlassMixtureSpec>> {
        match self.distribution.as_ref()? {
            DistributionConfig::FourClassBenchmark { .. } => Some(Ok(MulticlassMixtureSpec::four_class_benchmark())),
            DistributionConfig::Multiclass { centers, sigmas, .. } => {
                Some(MulticlassMixtureSpec::new(centers.clone(), sigmas.clone()).map_err(CliError::from))
            }
            DistributionConfig::Binary { .. } => None,
        }
    }
}

/// Applies `key=v1,v2;key=v3` overrides to a theory grid.
pub fn apply_grid_override(grid: &mut TheoryGrid, text: &str) -> CliResult<()> {
    for part in text.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, values) = part.split_once('=').ok_or_else(|| CliError::Config(format!("--grid: expected key=values, got `{part}`")))?;
        let key = key.trim();
        let floats = || -> CliResult<Vec<f64>> {
            values
                .split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|_| CliError::Config(format!("--grid {key}: bad number `{v}`"))))
                .collect()
        };
        let ints = || -> CliResult<Vec<usize>> {
            values
                .split(',')
                .map(|v| v.trim().parse::<usize>().map_err(|_| CliError::Config(format!("--grid {key}: bad integer `{v}`"))))
                .collect()
        };
        match key {
            "d" => grid.d = ints()?,
            "m" => grid.m = ints()?,
            "eta" => grid.eta = floats()?,
            "gamma" => grid.gamma = floats()?,
            "sigma" => grid.sigma = floats()?,
            "k_ratio" | "k" => grid.k_ratio = floats()?,
            "eps_over_eta" => grid.eps_over_eta = floats()?,
            other => return Err(CliError::Config(format!("--grid: unknown key `{other}`"))),
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_resolves_to_the_benchmark() {
        let c = RunConfig::from_json("{}").unwrap().resolve().unwrap();
        assert_eq!(c.distribution, Some(DistributionConfig::default()));
        assert_eq!(c.model, Some(ModelSpec::mlp(4, 32, 4, Activation::Relu)));
        let again = RunConfig::from_json(&c.to_json()).unwrap().resolve().unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn unknown_fields_are_named() {
        let e = RunConfig::from_json(r#"{"train": {"epochz": 3}}"#).unwrap_err();
        assert!(e.to_string().contains("epochz"), "{e}");
        let e = RunConfig::from_json(r#"{"distribution": {"kind": "binary", "d": 2, "eta": 1, "k_ratio": 2, "x": 1}}"#).unwrap_err();
        assert!(e.to_string().contains('x'), "{e}");
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn partial_train_block_keeps_other_defaults() {
        let c = RunConfig::from_json(r#"{"train": {"method": "pgd_at", "epochs": 3}, "seed": 7}"#).unwrap().resolve().unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.lr, TrainConfig::default().lr);
        assert_eq!(c.train.seed, 7);
    }

    #[test]
    fn variant_is_reconciled() {
        let c = RunConfig::from_json(r#"{"frl": {"variant": "reweight"}}"#).unwrap().resolve().unwrap();
        assert_eq!(c.train.frl_variant, FrlVariant::Reweight);
        let doc = r#"{"frl": {"variant": "reweight"}, "train": {"frl_variant": "remargin"}}"#;
        assert!(RunConfig::from_json(doc).unwrap().resolve().is_err());
    }

    #[test]
    fn conflicting_sources_rejected() {
        let doc = r#"{"distribution": {"kind": "four_class_benchmark"}, "dataset_csv": {"train": "a.csv"}}"#;
        assert!(matches!(RunConfig::from_json(doc).unwrap().resolve(), Err(CliError::Config(_))));
        assert!(matches!(RunConfig::from_json(r#"{"train": {"lr": -1}}"#).unwrap().resolve(), Err(CliError::Config(_))));
    }

    #[test]
    fn binary_defaults_to_logistic() {
        let c = RunConfig::from_json(r#"{"distribution": {"kind": "binary", "d": 2, "eta": 2, "k_ratio": 1.4142135623730951}}"#)
            .unwrap()
            .resolve()
            .unwrap();
        assert_eq!(c.model, Some(ModelSpec::Linear { input_dim: 2 }));
        let (train, val) = c.datasets().unwrap();
        assert_eq!(train.class_sizes(), vec![5000, 5000]);
        assert_eq!(val.unwrap().class_sizes(), vec![300, 300]);
    }

    #[test]
    fn grid_override() {
        let mut g = TheoryGrid::reference();
        apply_grid_override(&mut g, "d=2; k_ratio=2,3 ;eps_over_eta=0.5").unwrap();
        assert_eq!(g.points().len(), 2);
        assert!(apply_grid_override(&mut g, "q=1").is_err());
        assert!(apply_grid_override(&mut g, "d=two").is_err());
    }
}
