//! Experiment orchestration: one CSV table per run plus a metadata sidecar.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::active::{
    aulc, curve_records, run_active_loop, ActivePriors, ActiveState, StrategyConfig, StrategyKind, AULC_HEADER,
    CURVE_HEADER,
};
use crate::baseline::{baseline_train, robustness_sweep, SWEEP_HEADER};
use crate::config::{DataSource, ExperimentConfig, ExperimentKind, PriorChoice, RadiusChoice};
use crate::data::{load_csv, sample_split, standardize, two_gaussians, RawTable};
use crate::dual::{sgd_solve, DualState, LabelPrior, SolverConfig};
use crate::error::{Error, Result};
use crate::guarantees::{
    fmt_f64, make_prior, median, median_confidence, median_interval, min_radius_plus_delta, performance_bound,
    select_radius, write_csv_to, BoundRow, PriorMode, RadiusContext, RadiusSelection, BOUND_HEADER,
};
use crate::model::{FeatureVector, Label, LabeledDataset, LabeledSample, Theta, TransportCostSpec, UnlabeledDataset};
use crate::oracle::{discrete_wasserstein, duality_gap_check, min_feasible_radius, DiscreteDistribution};
use crate::rng::SplitMix64;

/// Relative duality-gap tolerance reported by oracle checks.
pub const GAP_TOLERANCE: f64 = 1e-3;

#[derive(Debug)]
pub struct TrialFailure {
    pub seed: u64,
    pub error: Error,
}

#[derive(Debug)]
pub struct ExperimentReport {
    /// Result tables, main table first.
    pub outputs: Vec<PathBuf>,
    pub metadata: PathBuf,
    pub failures: Vec<TrialFailure>,
}

/// Seed of trial `t` is `seed + t`, so a single trial reruns from its own seed.
pub fn trial_seeds(config: &ExperimentConfig) -> Vec<u64> {
    (0..config.trials as u64).map(|t| config.seed.wrapping_add(t)).collect()
}

/// Loads (or generates) the dataset and standardizes it on all rows.
pub fn load_table(config: &ExperimentConfig) -> Result<RawTable> {
    let raw = match &config.data {
        DataSource::Csv { path, label_column, positive_class } => load_csv(path, label_column, positive_class)?,
        DataSource::Synthetic(spec) => two_gaussians(spec)?,
    };
    Ok(standardize(&raw)?.0)
}

/// Path of the metadata sidecar for a result table.
pub fn metadata_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

/// Path of a secondary table next to `output`, e.g. `out.csv` → `out.aulc.csv`.
pub fn companion_path(output: &Path, tag: &str) -> PathBuf {
    let stem = output.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    output.with_file_name(format!("{stem}.{tag}.csv"))
}

struct Shared<'a> {
    config: &'a ExperimentConfig,
    table: &'a RawTable,
    full: &'a LabeledDataset,
    cost: TransportCostSpec,
}

struct Trial {
    labeled: LabeledDataset,
    unlabeled: UnlabeledDataset,
    prior: LabelPrior,
}

impl Shared<'_> {
    fn solver(&self, seed: u64, eps: f64) -> SolverConfig {
        SolverConfig { seed, radius_eps: eps, update_theta: !self.config.theta_zero, trace_path: None, ..self.config.solver.clone() }
    }

    fn trial(&self, seed: u64, n_labeled: usize) -> Result<Trial> {
        let split = sample_split(self.table, n_labeled, seed, self.config.unlabeled_source)?;
        let unlabeled = split.unlabeled.ok_or(Error::Empty("unlabeled set"))?;
        let mode = match self.config.prior {
            PriorChoice::Strong => PriorMode::Strong(self.table.label_probabilities()),
            PriorChoice::Weak(level) => PriorMode::Weak(level),
        };
        let prior = make_prior(&split.labeled, &mode)?;
        Ok(Trial { labeled: split.labeled, unlabeled, prior })
    }

    fn eps(&self, t: &Trial, seed: u64) -> Result<f64> {
        match &self.config.radius {
            RadiusChoice::Fixed(eps) => Ok(*eps),
            RadiusChoice::Select(selection) => {
                let solver = self.solver(seed, 0.0);
                let ctx = RadiusContext {
                    data: &t.labeled,
                    unlabeled: &t.unlabeled,
                    prior: &t.prior,
                    cost: &self.cost,
                    solver: &solver,
                    full: Some(self.full),
                };
                Ok(select_radius(selection, &ctx)?.eps)
            }
        }
    }

    fn solve(&self, t: &Trial, seed: u64, eps: f64) -> Result<DualState> {
        let theta0 = Theta::zeros(t.labeled.dim());
        Ok(sgd_solve(&t.labeled, &t.unlabeled, &t.prior, &self.cost, &self.solver(seed, eps), theta0)?.state)
    }

    fn bound_row(&self, t: &Trial, seed: u64, eps: f64) -> Result<Vec<String>> {
        let state = self.solve(t, seed, eps)?;
        let bound = performance_bound(&state, &t.labeled, &t.unlabeled, &t.prior, eps, &self.cost, self.config.z_score)?;
        let row = BoundRow {
            seed,
            n_labeled: t.labeled.len(),
            eps,
            bound,
            median_confidence: median_confidence(&state.theta, &t.unlabeled)?,
        };
        Ok(row.record())
    }
}

fn theta_columns(dim: usize) -> Vec<String> {
    (0..dim).map(|k| format!("theta_{k}")).collect()
}

fn push_theta(row: &mut Vec<String>, theta: &Theta) {
    row.extend(theta.weights().iter().map(|w| fmt_f64(*w)));
}

fn header_for(kind: ExperimentKind, dim: usize) -> Vec<String> {
    let owned = |h: &[&str]| h.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    match kind {
        ExperimentKind::TrainDru => {
            let mut h = owned(&[
                "seed",
                "n_labeled",
                "eps",
                "objective",
                "alpha",
                "theta_norm",
                "steps",
                "converged",
                "median_confidence",
            ]);
            h.extend(theta_columns(dim));
            h
        }
        ExperimentKind::TrainBaseline => {
            let mut h = owned(&[
                "seed",
                "n_labeled",
                "eps",
                "worst_case_value",
                "worst_case_likelihood",
                "alpha",
                "steps",
                "median_confidence",
            ]);
            h.extend(theta_columns(dim));
            h
        }
        ExperimentKind::Bound | ExperimentKind::BoundVsNl | ExperimentKind::ConfVsNl | ExperimentKind::RadiusSweep => {
            owned(&BOUND_HEADER)
        }
        ExperimentKind::MinRadius => owned(&["seed", "n_labeled", "positive_mass_lower", "positive_mass_upper", "min_radius"]),
        ExperimentKind::Wasserstein => {
            owned(&["seed", "n_labeled", "labeled_to_full", "labeled_features_to_unlabeled"])
        }
        ExperimentKind::RobustnessSweep => owned(&SWEEP_HEADER),
        ExperimentKind::Active => owned(&CURVE_HEADER),
        ExperimentKind::OracleCheck => owned(&[
            "seed",
            "instance",
            "n_labeled",
            "n_support",
            "eps",
            "min_radius",
            "primal",
            "dual",
            "gap",
            "within_tolerance",
        ]),
    }
}

/// Rows of one trial; active runs also return `(strategy, aulc)` pairs.
type TrialRows = (Vec<Vec<String>>, Vec<(StrategyKind, f64)>);

fn run_trial(sh: &Shared<'_>, seed: u64) -> Result<TrialRows> {
    let cfg = sh.config;
    let mut rows = Vec::new();
    let mut aulcs = Vec::new();
    match cfg.kind {
        ExperimentKind::TrainDru => {
            let t = sh.trial(seed, cfg.n_labeled)?;
            let eps = sh.eps(&t, seed)?;
            let out = sgd_solve(&t.labeled, &t.unlabeled, &t.prior, &sh.cost, &sh.solver(seed, eps), Theta::zeros(t.labeled.dim()))?;
            let mut row = vec![
                seed.to_string(),
                t.labeled.len().to_string(),
                fmt_f64(eps),
                fmt_f64(out.objective),
                fmt_f64(out.state.alpha),
                fmt_f64(out.state.theta.norm()),
                out.steps.to_string(),
                out.converged.to_string(),
                fmt_f64(median_confidence(&out.state.theta, &t.unlabeled)?),
            ];
            push_theta(&mut row, &out.state.theta);
            rows.push(row);
        }
        ExperimentKind::TrainBaseline => {
            let t = sh.trial(seed, cfg.n_labeled)?;
            let eps = sh.eps(&t, seed)?;
            let b = baseline_train(&t.labeled, eps, &sh.cost, &sh.solver(seed, eps))?;
            let mut row = vec![
                seed.to_string(),
                t.labeled.len().to_string(),
                fmt_f64(eps),
                fmt_f64(b.worst_case_value),
                fmt_f64((-b.worst_case_value).exp()),
                fmt_f64(b.alpha),
                b.steps.to_string(),
                fmt_f64(median_confidence(&b.theta, &t.unlabeled)?),
            ];
            push_theta(&mut row, &b.theta);
            rows.push(row);
        }
        ExperimentKind::Bound | ExperimentKind::BoundVsNl | ExperimentKind::ConfVsNl => {
            for n in cfg.labeled_sizes() {
                let t = sh.trial(seed, n)?;
                let eps = sh.eps(&t, seed)?;
                rows.push(sh.bound_row(&t, seed, eps)?);
            }
        }
        ExperimentKind::RadiusSweep => {
            let t = sh.trial(seed, cfg.n_labeled)?;
            let selection = match &cfg.radius {
                RadiusChoice::Select(s) => s.clone(),
                RadiusChoice::Fixed(_) => RadiusSelection::default(),
            };
            let eps0 = min_radius_plus_delta(&t.labeled, &t.unlabeled, &t.prior, &sh.cost, 0.0)?;
            for eps in selection.grid(eps0) {
                rows.push(sh.bound_row(&t, seed, eps)?);
            }
        }
        ExperimentKind::MinRadius => {
            let t = sh.trial(seed, cfg.n_labeled)?;
            let (lo, hi) = t.prior.positive_mass_range();
            let eps0 = min_feasible_radius(&t.labeled, t.unlabeled.points(), &t.prior, &sh.cost)?;
            rows.push(vec![seed.to_string(), t.labeled.len().to_string(), fmt_f64(lo), fmt_f64(hi), fmt_f64(eps0)]);
        }
        ExperimentKind::Wasserstein => {
            let t = sh.trial(seed, cfg.n_labeled)?;
            let (w_full, _) = discrete_wasserstein(
                &DiscreteDistribution::empirical(&t.labeled),
                &DiscreteDistribution::empirical(sh.full),
                &sh.cost,
            )?;
            let w_feat =
                min_feasible_radius(&t.labeled, t.unlabeled.points(), &LabelPrior::uninformative(), &sh.cost)?;
            rows.push(vec![seed.to_string(), t.labeled.len().to_string(), fmt_f64(w_full), fmt_f64(w_feat)]);
        }
        ExperimentKind::RobustnessSweep => {
            let t = sh.trial(seed, cfg.n_labeled)?;
            let trained = cfg
                .sweep_eps
                .par_iter()
                .map(|&eps| Ok((eps, baseline_train(&t.labeled, eps, &sh.cost, &sh.solver(seed, eps))?.theta)))
                .collect::<Result<Vec<_>>>()?;
            let cells = robustness_sweep(&trained, &t.labeled, &cfg.sweep_eps, &cfg.sweep_delta, &sh.cost)?;
            rows.extend(cells.iter().map(|c| c.record(seed)));
        }
        ExperimentKind::Active => {
            let truth = PriorMode::Strong(sh.table.label_probabilities());
            for &kind in &cfg.strategies {
                let initial = ActiveState::sample(sh.full, cfg.n_labeled, seed)?;
                let level = match cfg.prior {
                    PriorChoice::Weak(level) => level,
                    PriorChoice::Strong => 0.95,
                };
                let priors = ActivePriors::build(Some(&truth), &initial.labeled, level)?;
                let strategy = StrategyConfig {
                    kind,
                    candidate_subsample: cfg.candidate_subsample,
                    ridge_gamma: cfg.ridge_gamma,
                    delta_margin: cfg.dr_delta,
                    seed,
                    mc_include_norm: cfg.mc_include_norm,
                    weak_level: level,
                    cost: sh.cost,
                    solver: SolverConfig { trace_path: None, ..crate::active::dr_solver_defaults() },
                };
                let curve = run_active_loop(initial, &strategy, &priors, sh.full, cfg.active_stop_at)?;
                aulcs.push((kind, aulc(&curve)?));
                rows.extend(curve_records(kind, seed, &curve));
            }
        }
        ExperimentKind::OracleCheck => {
            for i in 0..cfg.oracle_instances {
                let inst = random_oracle_instance(SplitMix64::derive(seed, i as u64).next_u64(), i % 2 == 1)?;
                let eps0 = min_feasible_radius(&inst.data, inst.support.points(), &inst.prior, &sh.cost)?;
                let eps = eps0 + cfg.oracle_delta;
                let solver = SolverConfig { seed: SplitMix64::derive(seed, i as u64).next_u64(), ..sh.solver(seed, eps) };
                let r = duality_gap_check(&inst.theta, &inst.data, &inst.support, &inst.prior, eps, &sh.cost, &solver)?;
                rows.push(vec![
                    seed.to_string(),
                    i.to_string(),
                    inst.data.len().to_string(),
                    inst.support.len().to_string(),
                    fmt_f64(eps),
                    fmt_f64(r.min_radius),
                    fmt_f64(r.primal),
                    fmt_f64(r.dual),
                    fmt_f64(r.gap),
                    (r.gap.abs() <= GAP_TOLERANCE * (1.0 + r.primal.abs())).to_string(),
                ]);
            }
        }
    }
    Ok((rows, aulcs))
}

/// Small random instance for primal/dual cross-checks: feature dimension
/// 1–2 plus bias, 1–5 support points, 1–3 labeled points, and a strong or
/// interval prior.
#[derive(Debug, Clone)]
pub struct OracleInstance {
    pub data: LabeledDataset,
    pub support: UnlabeledDataset,
    pub prior: LabelPrior,
    pub theta: Theta,
}

pub fn random_oracle_instance(seed: u64, weak_prior: bool) -> Result<OracleInstance> {
    let mut rng = SplitMix64::new(seed);
    let q = 1 + rng.index(2);
    let n_u = 1 + rng.index(5);
    let n_l = 1 + rng.index(3);
    let point = |r: &mut SplitMix64| FeatureVector::with_bias((0..q).map(|_| r.normal()).collect());
    let support = (0..n_u).map(|_| point(&mut rng)).collect::<Result<Vec<_>>>()?;
    let mut samples = Vec::with_capacity(n_l);
    for _ in 0..n_l {
        let x = point(&mut rng)?;
        samples.push(LabeledSample::new(x, Label::from_bool(rng.next_f64() < 0.5)));
    }
    let p = rng.next_f64();
    let prior = if weak_prior {
        let w = 0.2 * rng.next_f64();
        LabelPrior::new(
            vec![(1.0 - p - w).max(0.0), (p - w).max(0.0)],
            vec![(1.0 - p + w).min(1.0), (p + w).min(1.0)],
        )?
    } else {
        LabelPrior::strong(vec![1.0 - p, p])?
    };
    let theta = Theta((0..=q).map(|_| rng.normal()).collect());
    Ok(OracleInstance { data: LabeledDataset::new(samples)?, support: UnlabeledDataset::new(support)?, prior, theta })
}

fn write_table(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let refs: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv_to(BufWriter::new(File::create(path)?), &refs, rows)
}

fn aulc_rows(seed: u64, strategies: &[StrategyKind], per_trial: &[Vec<(StrategyKind, f64)>]) -> Vec<Vec<String>> {
    strategies
        .iter()
        .map(|&kind| {
            let values: Vec<f64> =
                per_trial.iter().flat_map(|t| t.iter().filter(|(k, _)| *k == kind).map(|(_, v)| *v)).collect();
            let fmt_opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_else(|| "NaN".into());
            let (lo, hi) = match median_interval(&values, 0.95) {
                Some((lo, hi)) => (Some(lo), Some(hi)),
                None => (None, None),
            };
            vec![
                seed.to_string(),
                kind.name().to_string(),
                fmt_opt(median(&values)),
                fmt_opt(lo),
                fmt_opt(hi),
                values.len().to_string(),
            ]
        })
        .collect()
}

/// Runs every trial, writes the result table(s) and the metadata sidecar.
/// A failing trial contributes no rows; its error is recorded and the
/// remaining trials still run.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let table = load_table(config)?;
    let full = table.to_dataset()?;
    let shared = Shared { config, table: &table, full: &full, cost: TransportCostSpec::new(config.kappa)? };
    let seeds = trial_seeds(config);
    let results: Vec<Result<TrialRows>> = seeds.par_iter().map(|&s| run_trial(&shared, s)).collect();

    let mut rows = Vec::new();
    let mut per_trial_aulc = Vec::new();
    let mut failures = Vec::new();
    let mut status = Vec::new();
    for (&seed, result) in seeds.iter().zip(results) {
        match result {
            Ok((r, a)) => {
                rows.extend(r);
                per_trial_aulc.push(a);
                status.push((seed, "ok".to_string()));
            }
            Err(error) => {
                status.push((seed, format!("error: {error}")));
                failures.push(TrialFailure { seed, error });
            }
        }
    }

    let mut outputs = vec![config.output.clone()];
    write_table(&config.output, &header_for(config.kind, full.dim()), &rows)?;
    if config.kind == ExperimentKind::Active {
        let path = companion_path(&config.output, "aulc");
        let mut header = vec!["seed".to_string()];
        header.extend(AULC_HEADER.iter().map(|s| s.to_string()));
        write_table(&path, &header, &aulc_rows(config.seed, &config.strategies, &per_trial_aulc))?;
        outputs.push(path);
    }

    let metadata = metadata_path(&config.output);
    let mut w = BufWriter::new(File::create(&metadata)?);
    writeln!(w, "version={}", env!("CARGO_PKG_VERSION"))?;
    for (k, v) in config.describe() {
        writeln!(w, "config.{k}={v}")?;
    }
    writeln!(w, "rows={}", rows.len())?;
    writeln!(w, "n_features={}", table.n_features())?;
    writeln!(w, "n_rows={}", table.len())?;
    for o in &outputs {
        writeln!(w, "output={}", o.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default())?;
    }
    for (t, (seed, s)) in status.iter().enumerate() {
        writeln!(w, "trial.{t}.seed={seed}")?;
        writeln!(w, "trial.{t}.status={s}")?;
    }
    w.flush()?;
    Ok(ExperimentReport { outputs, metadata, failures })
}
