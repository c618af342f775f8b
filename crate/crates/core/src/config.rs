//! Flat `key = value` experiment configuration with typed keys.
//!
//! Blank lines and text after `#` are ignored. Unknown and repeated keys are
//! errors. Relative paths resolve against the config file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::active::StrategyKind;
use crate::data::{SyntheticSpec, UnlabeledSource};
use crate::dual::{Optimizer, SolverConfig};
use crate::error::{Error, Result};
use crate::guarantees::{RadiusPolicy, RadiusSelection};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    TrainDru,
    TrainBaseline,
    Bound,
    BoundVsNl,
    ConfVsNl,
    MinRadius,
    Wasserstein,
    RadiusSweep,
    RobustnessSweep,
    Active,
    OracleCheck,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 11] = [
        Self::TrainDru,
        Self::TrainBaseline,
        Self::Bound,
        Self::BoundVsNl,
        Self::ConfVsNl,
        Self::MinRadius,
        Self::Wasserstein,
        Self::RadiusSweep,
        Self::RobustnessSweep,
        Self::Active,
        Self::OracleCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::TrainDru => "train-dru",
            Self::TrainBaseline => "train-baseline",
            Self::Bound => "bound",
            Self::BoundVsNl => "bound-vs-nl",
            Self::ConfVsNl => "conf-vs-nl",
            Self::MinRadius => "min-radius",
            Self::Wasserstein => "wasserstein",
            Self::RadiusSweep => "radius-sweep",
            Self::RobustnessSweep => "robustness-sweep",
            Self::Active => "active",
            Self::OracleCheck => "oracle-check",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown experiment kind '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Csv { path: PathBuf, label_column: String, positive_class: String },
    Synthetic(SyntheticSpec),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PriorChoice {
    /// Label proportions of the full dataset.
    Strong,
    /// Clopper–Pearson intervals at this level from the labeled sample.
    Weak(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum RadiusChoice {
    Fixed(f64),
    Select(RadiusSelection),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub data: DataSource,
    pub seed: u64,
    pub n_labeled: usize,
    /// Labeled-set sizes for the bound and confidence curves.
    pub n_labeled_grid: Vec<usize>,
    pub unlabeled_source: UnlabeledSource,
    pub prior: PriorChoice,
    pub radius: RadiusChoice,
    pub solver: SolverConfig,
    pub kappa: f64,
    pub z_score: f64,
    pub trials: usize,
    pub output: PathBuf,
    /// Keep θ at zero and optimize only the dual variables.
    pub theta_zero: bool,
    pub sweep_eps: Vec<f64>,
    pub sweep_delta: Vec<f64>,
    pub strategies: Vec<StrategyKind>,
    pub active_stop_at: usize,
    pub candidate_subsample: usize,
    pub ridge_gamma: f64,
    pub mc_include_norm: bool,
    pub dr_delta: f64,
    pub oracle_instances: usize,
    pub oracle_delta: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::Bound,
            data: DataSource::Synthetic(SyntheticSpec::default()),
            seed: 0,
            n_labeled: 20,
            n_labeled_grid: Vec::new(),
            unlabeled_source: UnlabeledSource::Full,
            prior: PriorChoice::Strong,
            radius: RadiusChoice::Select(RadiusSelection::default()),
            solver: SolverConfig::default(),
            kappa: 1.0,
            z_score: 0.0,
            trials: 1,
            output: PathBuf::from("out.csv"),
            theta_zero: false,
            sweep_eps: vec![1e-3, 1e-2, 1e-1, 1.0],
            sweep_delta: vec![0.0, 1e-3, 1e-2, 1e-1, 1.0],
            strategies: vec![StrategyKind::Random],
            active_stop_at: 40,
            candidate_subsample: 100,
            ridge_gamma: 1e-3,
            mc_include_norm: false,
            dr_delta: 1e-3,
            oracle_instances: 5,
            oracle_delta: 0.1,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse '{v}'")))
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|s| parse_num(key, s.trim())).collect()
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::InvalidConfig(format!("{key}: expected true or false, found '{v}'"))),
    }
}

impl ExperimentConfig {
    /// Reads a config file. `kind` may be omitted when the caller sets it.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse_str(&text, base)
    }

    pub fn parse_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key = value", n + 1)))?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if entries.insert(k.clone(), v).is_some() {
                return Err(Error::InvalidConfig(format!("line {}: repeated key '{k}'", n + 1)));
            }
        }
        let mut cfg = Self::default();
        let mut synthetic = SyntheticSpec::default();
        let mut csv_path = None;
        let mut label_column = "label".to_string();
        let mut positive_class = "1".to_string();
        let mut policy = "min-radius-plus-delta".to_string();
        let mut selection = RadiusSelection::default();
        let mut fixed_eps = None;
        let mut fraction = 1.0;
        let mut prior_level = 0.95;
        let mut prior_mode = "strong".to_string();
        let resolve = |v: &str| {
            let p = PathBuf::from(v);
            if p.is_absolute() { p } else { base_dir.join(p) }
        };
        for (k, v) in &entries {
            let v = v.as_str();
            match k.as_str() {
                "kind" => cfg.kind = ExperimentKind::parse(v)?,
                "dataset" => csv_path = Some(resolve(v)),
                "label_column" => label_column = v.to_string(),
                "positive_class" => positive_class = v.to_string(),
                "synthetic_n" => synthetic.n = parse_num(k, v)?,
                "synthetic_dim" => synthetic.dim = parse_num(k, v)?,
                "synthetic_separation" => synthetic.separation = parse_num(k, v)?,
                "synthetic_positive_fraction" => synthetic.positive_fraction = parse_num(k, v)?,
                "synthetic_seed" => synthetic.seed = parse_num(k, v)?,
                "seed" => cfg.seed = parse_num(k, v)?,
                "n_labeled" => cfg.n_labeled = parse_num(k, v)?,
                "n_labeled_grid" => cfg.n_labeled_grid = parse_list(k, v)?,
                "unlabeled_source" => {
                    cfg.unlabeled_source = match v {
                        "full" => UnlabeledSource::Full,
                        "remainder" => UnlabeledSource::Remainder,
                        _ => return Err(Error::InvalidConfig(format!("{k}: expected full or remainder"))),
                    }
                }
                "prior" => prior_mode = v.to_string(),
                "prior_level" => prior_level = parse_num(k, v)?,
                "eps_policy" => policy = v.to_string(),
                "eps" => fixed_eps = Some(parse_num(k, v)?),
                "eps_fraction" => fraction = parse_num(k, v)?,
                "delta" => selection.delta_margin = parse_num(k, v)?,
                "confidence_threshold" => selection.confidence_threshold = parse_num(k, v)?,
                "grid_points" => selection.grid_points = parse_num(k, v)?,
                "grid_span" => selection.grid_span = parse_num(k, v)?,
                "step_size" => cfg.solver.step_size = parse_num(k, v)?,
                "batch_size" => cfg.solver.batch_size = parse_num(k, v)?,
                "optimizer" => {
                    cfg.solver.optimizer = match v {
                        "adam" => Optimizer::Adam,
                        "sgd" => Optimizer::Sgd,
                        _ => return Err(Error::InvalidConfig(format!("{k}: expected adam or sgd"))),
                    }
                }
                "lr_decay_factor" => cfg.solver.lr_decay_factor = parse_num(k, v)?,
                "lr_decay_every" => cfg.solver.lr_decay_every = parse_num(k, v)?,
                "max_steps" => cfg.solver.max_steps = parse_num(k, v)?,
                "convergence_tol" => cfg.solver.convergence_tol = parse_num(k, v)?,
                "convergence_window" => cfg.solver.convergence_window = parse_num(k, v)?,
                "kappa" => cfg.kappa = parse_num(k, v)?,
                "z_score" => cfg.z_score = parse_num(k, v)?,
                "trials" => cfg.trials = parse_num(k, v)?,
                "output" => cfg.output = resolve(v),
                "theta_zero" => cfg.theta_zero = parse_bool(k, v)?,
                "sweep_eps" => cfg.sweep_eps = parse_list(k, v)?,
                "sweep_delta" => cfg.sweep_delta = parse_list(k, v)?,
                "strategy" => cfg.strategies = parse_strategies(v)?,
                "active_stop_at" => cfg.active_stop_at = parse_num(k, v)?,
                "candidate_subsample" => cfg.candidate_subsample = parse_num(k, v)?,
                "ridge_gamma" => cfg.ridge_gamma = parse_num(k, v)?,
                "mc_include_norm" => cfg.mc_include_norm = parse_bool(k, v)?,
                "dr_delta" => cfg.dr_delta = parse_num(k, v)?,
                "oracle_instances" => cfg.oracle_instances = parse_num(k, v)?,
                "oracle_delta" => cfg.oracle_delta = parse_num(k, v)?,
                _ => return Err(Error::InvalidConfig(format!("unknown key '{k}'"))),
            }
        }
        cfg.data = match csv_path {
            Some(path) => DataSource::Csv { path, label_column, positive_class },
            None => DataSource::Synthetic(synthetic),
        };
        cfg.prior = match prior_mode.as_str() {
            "strong" => PriorChoice::Strong,
            "weak" => PriorChoice::Weak(prior_level),
            other => return Err(Error::InvalidConfig(format!("prior: expected strong or weak, found '{other}'"))),
        };
        cfg.radius = match (policy.as_str(), fixed_eps) {
            ("fixed", Some(eps)) => RadiusChoice::Fixed(eps),
            ("fixed", None) => return Err(Error::InvalidConfig("eps_policy = fixed needs eps".into())),
            (_, Some(_)) => return Err(Error::InvalidConfig("eps is only read with eps_policy = fixed".into())),
            ("min-radius-plus-delta", None) => {
                RadiusChoice::Select(RadiusSelection { policy: RadiusPolicy::MinRadiusPlusDelta, ..selection })
            }
            ("as-robust-as-possible", None) => {
                RadiusChoice::Select(RadiusSelection { policy: RadiusPolicy::AsRobustAsPossible, ..selection })
            }
            ("true-distance-fraction", None) => RadiusChoice::Select(RadiusSelection {
                policy: RadiusPolicy::FractionOfTrueDistance(fraction),
                ..selection
            }),
            (other, None) => return Err(Error::InvalidConfig(format!("unknown eps_policy '{other}'"))),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be ≥ 1".into()));
        }
        if self.n_labeled == 0 || self.n_labeled_grid.contains(&0) {
            return Err(Error::InvalidConfig("labeled-set sizes must be ≥ 1".into()));
        }
        if !(self.kappa > 0.0) || !(self.z_score >= 0.0) {
            return Err(Error::InvalidConfig("need kappa > 0 and z_score ≥ 0".into()));
        }
        if let RadiusChoice::Fixed(eps) = self.radius {
            if !(eps >= 0.0) {
                return Err(Error::InvalidConfig(format!("eps = {eps}")));
            }
        }
        if let PriorChoice::Weak(level) = self.prior {
            if !(level > 0.0 && level < 1.0) {
                return Err(Error::InvalidConfig(format!("prior_level = {level}")));
            }
        }
        if self.strategies.is_empty() {
            return Err(Error::InvalidConfig("strategy list is empty".into()));
        }
        self.solver.validate()
    }

    /// Labeled-set sizes swept by bound-style experiments.
    pub fn labeled_sizes(&self) -> Vec<usize> {
        if self.n_labeled_grid.is_empty() { vec![self.n_labeled] } else { self.n_labeled_grid.clone() }
    }

    /// Resolved settings as sorted `key=value` lines, for the metadata sidecar.
    pub fn describe(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("kind".to_string(), self.kind.name().to_string()),
            ("seed".into(), self.seed.to_string()),
            ("n_labeled".into(), self.n_labeled.to_string()),
            ("n_labeled_grid".into(), join(&self.labeled_sizes())),
            ("unlabeled_source".into(), format!("{:?}", self.unlabeled_source).to_lowercase()),
            ("prior".into(), format!("{:?}", self.prior)),
            ("radius".into(), format!("{:?}", self.radius)),
            ("kappa".into(), self.kappa.to_string()),
            ("z_score".into(), self.z_score.to_string()),
            ("trials".into(), self.trials.to_string()),
            ("theta_zero".into(), self.theta_zero.to_string()),
            ("sweep_eps".into(), join(&self.sweep_eps)),
            ("sweep_delta".into(), join(&self.sweep_delta)),
            ("strategy".into(), self.strategies.iter().map(|s| s.name()).collect::<Vec<_>>().join(",")),
            ("active_stop_at".into(), self.active_stop_at.to_string()),
            ("candidate_subsample".into(), self.candidate_subsample.to_string()),
            ("ridge_gamma".into(), self.ridge_gamma.to_string()),
            ("mc_include_norm".into(), self.mc_include_norm.to_string()),
            ("dr_delta".into(), self.dr_delta.to_string()),
            ("oracle_instances".into(), self.oracle_instances.to_string()),
            ("oracle_delta".into(), self.oracle_delta.to_string()),
            ("solver".into(), describe_solver(&self.solver)),
        ];
        match &self.data {
            DataSource::Csv { path, label_column, positive_class } => {
                out.push(("dataset".into(), path.display().to_string()));
                out.push(("label_column".into(), label_column.clone()));
                out.push(("positive_class".into(), positive_class.clone()));
            }
            DataSource::Synthetic(s) => out.push(("dataset".into(), format!("synthetic {s:?}"))),
        }
        out.sort();
        out
    }
}

fn describe_solver(s: &SolverConfig) -> String {
    format!(
        "step_size={} batch_size={} optimizer={:?} lr_decay_factor={} lr_decay_every={} max_steps={} convergence_tol={} convergence_window={}",
        s.step_size,
        s.batch_size,
        s.optimizer,
        s.lr_decay_factor,
        s.lr_decay_every,
        s.max_steps,
        s.convergence_tol,
        s.convergence_window
    )
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Comma-separated strategy names, or `all`.
pub fn parse_strategies(v: &str) -> Result<Vec<StrategyKind>> {
    if v == "all" {
        return Ok(StrategyKind::ALL.to_vec());
    }
    v.split(',').map(|s| StrategyKind::parse(s.trim())).collect()
}
