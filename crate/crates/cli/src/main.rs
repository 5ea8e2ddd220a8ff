use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fairrobust::{AblationMode, Metric};
use fairrobust_cli::{
    apply_grid_override, cmd_ablate, cmd_analytic, cmd_fig2, cmd_report, cmd_train, cmd_verify, parse_suites, verify_status, with_threads, CliError,
    CliResult, ReportData, RunConfig,
};

#[derive(Parser, Debug)]
#[command(name = "fairrobust", version, about = "Robust-fairness theory on Gaussian mixtures and fair robust training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Run configuration (JSON); every field has a default.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configuration's top-level seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for evaluation and training.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Closed-form theory table over a parameter grid.
    Analytic {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Grid override, e.g. "d=2,10;k_ratio=2;eps_over_eta=0.1,0.5".
        #[arg(long)]
        grid: Option<String>,
    },
    /// Checks the closed forms against Monte-Carlo and grid-search oracles.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated suites: mc, intercept.
        #[arg(long)]
        checks: Option<String>,
    },
    /// Two-dimensional scene: samples, boundaries and class-wise errors.
    Fig2 {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trains a model with the configured method.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Class-wise report of a saved model.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// "val", "train" or a CSV path.
        #[arg(long, default_value = "val")]
        data: String,
    },
    /// Boundary-weight or margin sweep on one class.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[arg(long = "class")]
        class: Option<usize>,
        /// Comma-separated ratios, each >= 1.
        #[arg(long)]
        ratios: Option<String>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Mode {
    Weight,
    Margin,
}

fn load(common: &Common) -> CliResult<RunConfig> {
    let mut config = RunConfig::load(common.config.as_deref())?;
    if let Some(s) = common.seed {
        config.seed = s;
    }
    Ok(config)
}

fn parse_ratios(text: &str) -> CliResult<Vec<f64>> {
    text.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| CliError::Config(format!("--ratios: bad number `{v}`"))))
        .collect()
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Analytic { common, out, grid } => {
            let mut config = load(&common)?;
            if let Some(g) = grid {
                apply_grid_override(&mut config.theory_grid, &g)?;
            }
            let config = config.resolve()?;
            let rows = with_threads(common.threads, || cmd_analytic(&config, &out))??;
            let skipped = rows.iter().filter(|r| r.skip_reason.is_some()).count();
            println!("{} rows ({} skipped) written to {}", rows.len(), skipped, out.join("theory.csv").display());
        }
        Command::Verify { common, out, checks } => {
            let config = load(&common)?.resolve()?;
            let suites = parse_suites(checks.as_deref())?;
            let checks = with_threads(common.threads, || cmd_verify(&config, &suites, out.as_deref()))??;
            for c in &checks {
                println!("{}", c.line());
            }
            verify_status(&checks)?;
            println!("all {} checks passed", checks.len());
        }
        Command::Fig2 { common, out } => {
            let config = load(&common)?.resolve()?;
            let s = with_threads(common.threads, || cmd_fig2(&config, &out))??;
            for m in &s.models {
                let c = &m.mc.classes;
                println!(
                    "{:<22} std(-1) {:.4} std(+1) {:.4} rob(-1) {:.4} rob(+1) {:.4}{}",
                    m.name,
                    c[0].standard_rate,
                    c[1].standard_rate,
                    c[0].robust_rate,
                    c[1].robust_rate,
                    m.normalized_intercept.map(|b| format!(" b/w {b:.4}")).unwrap_or_default()
                );
            }
        }
        Command::Train { common, out } => {
            let config = load(&common)?.resolve()?;
            let o = with_threads(common.threads, || cmd_train(&config, &out))??;
            let r = &o.report;
            println!(
                "robust avg {:.4} worst {:.4} (class {}) | standard avg {:.4} worst {:.4} (class {})",
                r.robust.average, r.robust.worst_rate, r.robust.worst_class, r.standard.average, r.standard.worst_rate, r.standard.worst_class
            );
            if let Some(h) = &o.history {
                println!("{} FRL iterations recorded", h.len());
            }
        }
        Command::Report { common, model, out, data } => {
            let config = load(&common)?.resolve()?;
            let data = match data.as_str() {
                "val" => ReportData::Validation,
                "train" => ReportData::Train,
                path => ReportData::Csv(PathBuf::from(path)),
            };
            let r = with_threads(common.threads, || cmd_report(&config, &model, &data, &out))??;
            for c in &r.classes {
                println!("class {}: standard {:.4} boundary {:.4} robust {:.4}", c.class, c.standard_rate, c.boundary_rate, c.robust_rate);
            }
            println!("gap (worst - avg) robust {:.4}", r.gap(Metric::Robust));
        }
        Command::Ablate { common, out, mode, class, ratios } => {
            let mut config = load(&common)?;
            if let Some(m) = mode {
                config.ablation.mode = match m {
                    Mode::Weight => AblationMode::Weight,
                    Mode::Margin => AblationMode::Margin,
                };
            }
            if class.is_some() {
                config.ablation.target_class = class;
            }
            if let Some(r) = ratios {
                config.ablation.ratios = Some(parse_ratios(&r)?);
            }
            let config = config.resolve()?;
            let o = with_threads(common.threads, || cmd_ablate(&config, &out))??;
            for p in &o.points {
                println!(
                    "ratio {:<4} class {} standard {:.4} boundary {:.4}",
                    p.ratio, o.target_class, p.target_standard, p.target_boundary
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
