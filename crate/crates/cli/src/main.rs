//! `dru`: command-line front end for the experiments.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dru_core::config::{parse_strategies, ExperimentConfig, ExperimentKind, RadiusChoice};
use dru_core::experiment::run_experiment;
use dru_core::Error;

#[derive(Parser)]
#[command(name = "dru", version, about = "Distributionally robust learning with unlabeled data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the robust model with unlabeled-data constraints.
    TrainDru(Overrides),
    /// Train the plain Wasserstein-ball baseline.
    TrainBaseline(Overrides),
    /// Likelihood bound and median confidence per labeled-set size.
    Bound(Overrides),
    /// Minimal feasible radius.
    MinRadius(Overrides),
    /// Transport distances from the labeled sample.
    Wasserstein(Overrides),
    /// Bound and confidence over a radius grid.
    RadiusSweep(Overrides),
    /// Baseline worst-case likelihood at radius eps + delta.
    RobustnessSweep(Overrides),
    /// Active-learning curves and AULC summary.
    Active(Overrides),
    /// Primal LP versus dual solver on random small instances.
    OracleCheck(Overrides),
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "n-labeled")]
    n_labeled: Option<usize>,
    /// Strategy name, comma-separated list, or `all`.
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    output: Option<PathBuf>,
}

const EXIT_USAGE: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn exit_code(e: &Error) -> u8 {
    match e {
        _ if e.is_infeasible() => EXIT_INFEASIBLE,
        Error::Divergence(_) | Error::NonConvergence(_) => EXIT_NUMERICAL,
        _ => EXIT_USAGE,
    }
}

fn build_config(kind: ExperimentKind, o: &Overrides) -> dru_core::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_file(&o.config)?;
    let keep = matches!(
        (kind, cfg.kind),
        (ExperimentKind::Bound, ExperimentKind::BoundVsNl | ExperimentKind::ConfVsNl)
    );
    if !keep {
        cfg.kind = kind;
    }
    if let Some(eps) = o.eps {
        cfg.radius = RadiusChoice::Fixed(eps);
    }
    if let Some(seed) = o.seed {
        cfg.seed = seed;
    }
    if let Some(n) = o.n_labeled {
        cfg.n_labeled = n;
        cfg.n_labeled_grid = vec![n];
    }
    if let Some(s) = &o.strategy {
        cfg.strategies = parse_strategies(s)?;
    }
    if let Some(out) = &o.output {
        cfg.output = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let (kind, o) = match &cli.command {
        Command::TrainDru(o) => (ExperimentKind::TrainDru, o),
        Command::TrainBaseline(o) => (ExperimentKind::TrainBaseline, o),
        Command::Bound(o) => (ExperimentKind::Bound, o),
        Command::MinRadius(o) => (ExperimentKind::MinRadius, o),
        Command::Wasserstein(o) => (ExperimentKind::Wasserstein, o),
        Command::RadiusSweep(o) => (ExperimentKind::RadiusSweep, o),
        Command::RobustnessSweep(o) => (ExperimentKind::RobustnessSweep, o),
        Command::Active(o) => (ExperimentKind::Active, o),
        Command::OracleCheck(o) => (ExperimentKind::OracleCheck, o),
    };
    let cfg = match build_config(kind, o) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("dru: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match run_experiment(&cfg) {
        Ok(report) => {
            for path in &report.outputs {
                println!("{}", path.display());
            }
            match report.failures.first() {
                None => ExitCode::SUCCESS,
                Some(f) => {
                    for f in &report.failures {
                        eprintln!("dru: trial seed {} failed: {}", f.seed, f.error);
                    }
                    ExitCode::from(exit_code(&f.error))
                }
            }
        }
        Err(e) => {
            eprintln!("dru: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
