use std::fs;
use std::path::{Path, PathBuf};

use fairrobust::rng::derive_seed;
use fairrobust::{
    ablation_sweep, continue_natural, continue_pgd_at, continue_trades, deserialize_model, eval_classwise, fig2_scene, frl_train_into,
    init_model, pretrain_robust, serialize_model, theory_table, train_baseline_reweight, write_ablation_csv, write_theory_csv,
    AblationMode, AblationPoint, ClasswiseReport, Dataset, FrlState, Method, Model, SceneSummary, TheoryRow, TrainHistory,
};
use serde::Serialize;

use crate::config::{default_ratios, RunConfig};
use crate::error::{CliError, CliResult};
use crate::manifest::ManifestWriter;
use crate::verify::{run_checks, CheckResult, MC_SEED};

pub const MODEL_INIT: &str = "model/init";
pub const REPORT_EVAL: &str = "report/eval";

/// Runs `f` on a dedicated pool of `threads` workers (the global pool when
/// `None`). Results never depend on the worker count.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(CliError::Config("--threads must be >= 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(|e| CliError::Config(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("value serializes") + "\n"
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> fairrobust::Result<()>) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn write_report(w: &mut ManifestWriter, stem: &str, report: &ClasswiseReport) -> CliResult<()> {
    w.write(&format!("{stem}.json"), report.to_json() + "\n")?;
    let csv = csv_bytes(|b| report.write_csv(b))?;
    w.write(&format!("{stem}.csv"), csv)?;
    Ok(())
}

pub fn cmd_analytic(config: &RunConfig, out: &Path) -> CliResult<Vec<TheoryRow>> {
    let mut w = ManifestWriter::new(out, "analytic", config)?;
    let rows = theory_table(&config.theory_grid.points());
    let csv = csv_bytes(|b| write_theory_csv(&rows, b))?;
    w.write("theory.csv", csv)?;
    w.write("theory.json", json(&rows))?;
    w.finish("ok")?;
    Ok(rows)
}

/// Names of the failed checks as an error, `Ok` when all passed.
pub fn verify_status(checks: &[CheckResult]) -> CliResult<()> {
    let failed: Vec<String> = checks.iter().filter(|c| !c.passed).map(|c| format!("{}/{}", c.suite, c.name)).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verify(failed))
    }
}

/// Runs the selected suites; the summary is saved when `out` is given.
/// Failed checks are reported through [`verify_status`], not as an error here.
pub fn cmd_verify(config: &RunConfig, suites: &[String], out: Option<&Path>) -> CliResult<Vec<CheckResult>> {
    let mut w = out.map(|d| ManifestWriter::new(d, "verify", config)).transpose()?;
    let checks = run_checks(&config.verify, suites, config.seed)?;
    let ok = verify_status(&checks).is_ok();
    if let Some(w) = w.as_mut() {
        w.derivation(MC_SEED);
        let text: String = checks.iter().map(|c| c.line() + "\n").collect();
        w.write("verify.txt", text)?;
        w.write("verify.json", json(&checks))?;
    }
    if let Some(w) = w {
        w.finish(if ok { "ok" } else { "failed" })?;
    }
    Ok(checks)
}

pub fn cmd_fig2(config: &RunConfig, out: &Path) -> CliResult<SceneSummary> {
    let mut w = ManifestWriter::new(out, "fig2", config)?;
    for d in ["fig2/data", "fig2/logistic_natural", "fig2/logistic_adversarial", "fig2/mlp_natural", "fig2/mlp_adversarial", "fig2/mc"] {
        w.derivation(d);
    }
    let summary = fig2_scene(config.seed, &config.scene, Some(out))?;
    w.track("samples.csv");
    w.track("errors.json");
    for m in &summary.models {
        w.track(&format!("boundary_{}.csv", m.name));
        w.track(&format!("model_{}.json", m.name));
    }
    w.finish("ok")?;
    Ok(summary)
}

/// Everything `cmd_train` produces.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    /// The robust starting model for methods that fine-tune one.
    pub start: Option<Model>,
    /// Outer-iteration audit trail of FRL.
    pub history: Option<TrainHistory>,
    /// Final model on the validation set (training set when there is none).
    pub report: ClasswiseReport,
    /// Class upweighted by the baseline reweighting.
    pub baseline_class: Option<usize>,
}

/// Partial results kept when training diverges.
#[derive(Debug, Default)]
pub struct Partial {
    pub start: Option<Model>,
    pub history: TrainHistory,
}

fn load_start_model(path: &Path) -> CliResult<Model> {
    let doc = fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(deserialize_model(&doc)?)
}

/// The robust model FRL, the baseline and the ablation start from: the
/// configured document, or PGD-AT pre-training on the same seed.
pub fn starting_model(config: &RunConfig, train: &Dataset) -> CliResult<Model> {
    match &config.start_model {
        Some(p) => load_start_model(p),
        None => Ok(pretrain_robust(train, config.model_spec(), &config.train, &config.attack.train)?),
    }
}

fn plain_start(config: &RunConfig, train: &Dataset) -> CliResult<Model> {
    if config.start_model.is_some() || config.train.pretrain_epochs > 0 {
        starting_model(config, train)
    } else {
        Ok(init_model(config.model_spec(), derive_seed(config.seed, MODEL_INIT))?)
    }
}

fn require_val(val: Option<&Dataset>, what: &str) -> CliResult<()> {
    if val.is_none() {
        return Err(CliError::Config(format!("{what} needs a validation set (dataset_csv.val)")));
    }
    Ok(())
}

/// Trains according to `config.train.method` on the given data. Methods
/// other than `natural` start from the PGD-AT pre-trained model when
/// `pretrain_epochs > 0` (or from `start_model`), and then run
/// `train.epochs` further epochs.
pub fn run_training(config: &RunConfig, train: &Dataset, val: Option<&Dataset>, partial: &mut Partial) -> CliResult<TrainOutcome> {
    let cfg = &config.train;
    let attack = &config.attack.train;
    let mut history = None;
    let mut baseline_class = None;
    let mut start = None;
    let model = match cfg.method {
        Method::Natural => {
            let s = match &config.start_model {
                Some(p) => load_start_model(p)?,
                None => init_model(config.model_spec(), derive_seed(config.seed, MODEL_INIT))?,
            };
            continue_natural(s, train, cfg)?
        }
        Method::PgdAt | Method::Trades => {
            let s = plain_start(config, train)?;
            if config.start_model.is_some() || cfg.pretrain_epochs > 0 {
                start = Some(s.clone());
                partial.start = start.clone();
            }
            if cfg.method == Method::PgdAt {
                continue_pgd_at(s, train, cfg, attack)?
            } else {
                continue_trades(s, train, cfg, attack)?
            }
        }
        Method::BaselineReweight => {
            let s = starting_model(config, train)?;
            start = Some(s.clone());
            partial.start = start.clone();
            let (m, worst) = train_baseline_reweight(s, train, cfg, attack)?;
            baseline_class = Some(worst);
            m
        }
        Method::Frl => {
            require_val(val, "frl")?;
            let val = val.expect("checked");
            let s = starting_model(config, train)?;
            start = Some(s.clone());
            partial.start = start.clone();
            let state = FrlState::new(s.class_count(), attack.epsilon, &config.frl)?;
            let params = fairrobust::FrlParams { variant: cfg.frl_variant, ..config.frl.clone() };
            let m = frl_train_into(s, train, val, cfg, attack, &config.attack.eval, state, &params, &mut partial.history)?;
            history = Some(partial.history.clone());
            m
        }
    };
    let report = eval_classwise(&model, val.unwrap_or(train), &config.attack.eval, derive_seed(config.seed, REPORT_EVAL))?;
    Ok(TrainOutcome { model, start, history, report, baseline_class })
}

fn train_derivations(config: &RunConfig, w: &mut ManifestWriter) {
    if config.dataset_csv.is_none() {
        w.derivation(crate::config::TRAIN_DATA);
        w.derivation(crate::config::VAL_DATA);
    }
    for d in [MODEL_INIT, "train/shuffle", "train/natural", "train/adversarial", "train/boundary"] {
        w.derivation(d);
    }
    match config.train.method {
        Method::Frl => w.derivation("frl/eval"),
        Method::BaselineReweight => w.derivation("baseline/eval"),
        _ => {}
    }
    w.derivation(REPORT_EVAL);
}

/// Writes `model.json`, `report.{json,csv}`, `history.csv` (FRL),
/// `start_model.json` (when a robust start was used) and the manifest. On
/// divergence the partial history and start model are still written.
pub fn cmd_train(config: &RunConfig, out: &Path) -> CliResult<TrainOutcome> {
    let mut w = ManifestWriter::new(out, "train", config)?;
    train_derivations(config, &mut w);
    let (train, val) = config.datasets()?;
    let mut partial = Partial::default();
    match run_training(config, &train, val.as_ref(), &mut partial) {
        Ok(outcome) => {
            w.write("model.json", serialize_model(&outcome.model))?;
            if let Some(s) = &outcome.start {
                w.write("start_model.json", serialize_model(s))?;
            }
            if let Some(h) = &outcome.history {
                w.write("history.csv", csv_bytes(|b| h.write_csv(b))?)?;
            }
            if let Some(c) = outcome.baseline_class {
                w.write("baseline.json", format!("{{\n  \"upweighted_class\": {c}\n}}\n"))?;
            }
            write_report(&mut w, "report", &outcome.report)?;
            w.finish("ok")?;
            Ok(outcome)
        }
        Err(CliError::Divergence(msg)) => {
            if let Some(s) = &partial.start {
                w.write("start_model.json", serialize_model(s))?;
            }
            if !partial.history.is_empty() {
                w.write("history.csv", csv_bytes(|b| partial.history.write_csv(b))?)?;
            }
            w.finish("diverged")?;
            Err(CliError::Divergence(msg))
        }
        Err(e) => Err(e),
    }
}

/// Which data `cmd_report` evaluates on.
#[derive(Debug, Clone, PartialEq)]
pub enum ReportData {
    Validation,
    Train,
    Csv(PathBuf),
}

/// Evaluates a saved model with `attack.eval` and the train-time report seed,
/// so the validation report of `cmd_train` is reproduced exactly.
pub fn cmd_report(config: &RunConfig, model_path: &Path, data: &ReportData, out: &Path) -> CliResult<ClasswiseReport> {
    let mut w = ManifestWriter::new(out, "report", config)?;
    let model = load_start_model(model_path)?;
    let dataset = match data {
        ReportData::Csv(p) => {
            let label = config.dataset_csv.as_ref().map_or("label", |s| s.label_column.as_str());
            fairrobust::load_csv_dataset(p, label)?
        }
        ReportData::Train | ReportData::Validation => {
            let (train, val) = config.datasets()?;
            if *data == ReportData::Train {
                train
            } else {
                val.unwrap_or(train)
            }
        }
    };
    w.derivation(REPORT_EVAL);
    let report = eval_classwise(&model, &dataset, &config.attack.eval, derive_seed(config.seed, REPORT_EVAL))?;
    write_report(&mut w, "report", &report)?;
    w.finish("ok")?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationOutcome {
    pub mode: AblationMode,
    pub target_class: usize,
    pub points: Vec<AblationPoint>,
}

pub const ABLATION_EVAL: &str = "ablate/eval";

/// Sweeps the target class's boundary weight or margin from the robust
/// starting model, `train.epochs` epochs per ratio.
pub fn run_ablation(config: &RunConfig, train: &Dataset, val: Option<&Dataset>) -> CliResult<AblationOutcome> {
    let ab = &config.ablation;
    let fresh = match ab.n_eval_per_class {
        Some(n) => Some(config.fresh_sample(n, ABLATION_EVAL)?.ok_or_else(|| {
            CliError::Config("ablation.n_eval_per_class needs a synthetic distribution".into())
        })?),
        None => None,
    };
    let eval = match (&fresh, val) {
        (Some(f), _) => f,
        (None, Some(v)) => v,
        (None, None) => return Err(CliError::Config("ablation needs a validation set".into())),
    };
    let start = starting_model(config, train)?;
    let target = match ab.target_class {
        Some(c) => c,
        None => eval_classwise(&start, eval, &config.attack.eval, derive_seed(config.seed, REPORT_EVAL))?.robust.worst_class,
    };
    let ratios = ab.ratios.clone().unwrap_or_else(|| default_ratios(ab.mode));
    let points = ablation_sweep(&start, train, eval, &config.train, &config.attack.train, &config.attack.eval, target, ab.mode, &ratios)?;
    Ok(AblationOutcome { mode: ab.mode, target_class: target, points })
}

pub fn cmd_ablate(config: &RunConfig, out: &Path) -> CliResult<AblationOutcome> {
    let mut w = ManifestWriter::new(out, "ablate", config)?;
    train_derivations(config, &mut w);
    w.derivation("ablation/eval");
    if config.ablation.n_eval_per_class.is_some() {
        w.derivation(ABLATION_EVAL);
    }
    let (train, val) = config.datasets()?;
    let outcome = run_ablation(config, &train, val.as_ref())?;
    w.write("ablation.csv", csv_bytes(|b| write_ablation_csv(&outcome.points, outcome.target_class, b))?)?;
    w.write("ablation.json", json(&outcome))?;
    w.finish("ok")?;
    Ok(outcome)
}
