//! Performance guarantees, label-proportion priors and radius selection.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use statrs::function::beta::beta_reg;

use crate::dual::{phi_max, train_dru, DualState, LabelPrior, SolverConfig};
use crate::error::{Error, Result};
use crate::model::{confidence, Label, LabeledDataset, Theta, TransportCostSpec, UnlabeledDataset};
use crate::oracle::{discrete_wasserstein, min_feasible_radius, DiscreteDistribution};

/// Likelihood bounds at or below this guarantee nothing beyond a coin flip.
pub const VACUOUS_LIKELIHOOD: f64 = 0.5;
/// Absorbs the rounding of `exp(−ln 2)` so the θ = 0 bound counts as vacuous.
pub const VACUOUS_TOLERANCE: f64 = 1e-12;

/// Dual-value guarantee on the expected negative log-likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceBound {
    /// Dual objective with the unlabeled-mean estimate of `E[Φ]`, without
    /// the finite-sample correction.
    pub neg_log_bound: f64,
    /// `exp(−neg_log_bound − correction)`, clamped to `(0, 1]`.
    pub likelihood_bound: f64,
    pub correction: f64,
    pub n_unlabeled: usize,
}

impl PerformanceBound {
    pub fn is_vacuous(&self) -> bool {
        self.likelihood_bound <= VACUOUS_LIKELIHOOD + VACUOUS_TOLERANCE
    }
}

/// Converts a negative log-likelihood bound to likelihood space.
pub fn likelihood_from_neg_log(neg_log: f64) -> f64 {
    (-neg_log).exp().clamp(f64::MIN_POSITIVE, 1.0)
}

pub fn performance_bound(
    state: &DualState,
    data: &LabeledDataset,
    unlabeled: &UnlabeledDataset,
    prior: &LabelPrior,
    eps: f64,
    cost: &TransportCostSpec,
    z_score: f64,
) -> Result<PerformanceBound> {
    if unlabeled.is_empty() {
        return Err(Error::Empty("unlabeled set"));
    }
    state.validate(data.len())?;
    let phi: Vec<f64> = unlabeled
        .points()
        .iter()
        .map(|x| phi_max(x, state, data, cost).map(|(v, _)| v))
        .collect::<Result<_>>()?;
    let mean = phi.iter().sum::<f64>() / phi.len() as f64;
    let neg_log_bound = state.linear_term(prior, eps) + mean;
    let correction = berry_esseen_correction(&phi, z_score)?;
    Ok(PerformanceBound {
        neg_log_bound,
        likelihood_bound: likelihood_from_neg_log(neg_log_bound + correction),
        correction,
        n_unlabeled: phi.len(),
    })
}

/// Plug-in finite-sample term `z · s / √N` with `s` the sample standard
/// deviation of the Φ values.
pub fn berry_esseen_correction(phi_values: &[f64], z_score: f64) -> Result<f64> {
    if !(z_score >= 0.0) {
        return Err(Error::InvalidArgument(format!("z_score = {z_score}")));
    }
    if z_score == 0.0 {
        return Ok(0.0);
    }
    let n = phi_values.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "correction needs at least 2 values, got {n}"
        )));
    }
    let mean = phi_values.iter().sum::<f64>() / n as f64;
    let var = phi_values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    Ok(z_score * var.sqrt() / (n as f64).sqrt())
}

/// Solves `I_x(a, b) = target` for `x` by bisection (the regularized
/// incomplete beta is increasing in `x`).
fn beta_quantile(a: f64, b: f64, target: f64) -> f64 {
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if beta_reg(a, b, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Exact binomial confidence interval for a success probability.
pub fn clopper_pearson(successes: u64, n: u64, level: f64) -> Result<(f64, f64)> {
    if n == 0 || successes > n {
        return Err(Error::InvalidArgument(format!("{successes} successes of {n}")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("level = {level}")));
    }
    let tail = (1.0 - level) / 2.0;
    let (k, n) = (successes as f64, n as f64);
    let lower = if successes == 0 { 0.0 } else { beta_quantile(k, n - k + 1.0, tail) };
    let upper = if successes as f64 == n { 1.0 } else { beta_quantile(k + 1.0, n - k, 1.0 - tail) };
    Ok((lower, upper))
}

#[derive(Debug, Clone, PartialEq)]
pub enum PriorMode {
    /// Known label probabilities, ordered (negative, positive).
    Strong(Vec<f64>),
    /// Per-class Clopper–Pearson intervals at this level.
    Weak(f64),
}

pub fn make_prior(data: &LabeledDataset, mode: &PriorMode) -> Result<LabelPrior> {
    match mode {
        PriorMode::Strong(p) => LabelPrior::strong(p.clone()),
        PriorMode::Weak(level) => {
            let counts = data.label_counts();
            let n = data.len() as u64;
            let mut lower = Vec::with_capacity(Label::COUNT);
            let mut upper = Vec::with_capacity(Label::COUNT);
            for c in counts {
                let (lo, hi) = clopper_pearson(c as u64, n, *level)?;
                lower.push(lo);
                upper.push(hi);
            }
            LabelPrior::new(lower, upper)
        }
    }
}

/// Strong priors at the two ends of the admissible positive-class mass.
pub fn endpoint_priors(prior: &LabelPrior) -> Result<(LabelPrior, LabelPrior)> {
    let (lo, hi) = prior.positive_mass_range();
    Ok((LabelPrior::strong(vec![1.0 - lo, lo])?, LabelPrior::strong(vec![1.0 - hi, hi])?))
}

/// Radius used when a margin above the minimal feasible radius is wanted:
/// `ε₀ + Δ` for a degenerate prior, and `max(ε_lo, ε_hi) + Δ` over the two
/// endpoint-instantiated priors otherwise.
pub fn min_radius_plus_delta(
    data: &LabeledDataset,
    unlabeled: &UnlabeledDataset,
    prior: &LabelPrior,
    cost: &TransportCostSpec,
    delta: f64,
) -> Result<f64> {
    let support = unlabeled.points();
    let eps0 = if prior.is_degenerate() {
        min_feasible_radius(data, support, prior, cost)?
    } else {
        let (low, high) = endpoint_priors(prior)?;
        min_feasible_radius(data, support, &low, cost)?.max(min_feasible_radius(data, support, &high, cost)?)
    };
    Ok(eps0 + delta)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Distribution-free order-statistic interval for the median at `level`.
pub fn median_interval(values: &[f64], level: f64) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let tail = (1.0 - level) / 2.0;
    // Largest j with P(Bin(n, 1/2) ≤ j − 1) ≤ tail; the interval is
    // [x_(j), x_(n+1−j)] in 1-based order statistics.
    let mut cdf = 0.0;
    let mut pmf = 0.5_f64.powi(n as i32);
    let mut j = 0;
    for i in 0..n {
        if cdf + pmf > tail {
            break;
        }
        cdf += pmf;
        pmf *= (n - i) as f64 / (i + 1) as f64;
        j = i + 1;
    }
    if j == 0 {
        return Some((v[0], v[n - 1]));
    }
    Some((v[j - 1], v[n - j]))
}

pub fn median_confidence(theta: &Theta, points: &UnlabeledDataset) -> Result<f64> {
    let c: Vec<f64> = points.points().iter().map(|x| confidence(theta, x)).collect::<Result<_>>()?;
    median(&c).ok_or(Error::Empty("points"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RadiusPolicy {
    /// Largest grid radius whose trained model keeps the median unlabeled
    /// confidence at or above the threshold.
    AsRobustAsPossible,
    MinRadiusPlusDelta,
    /// This fraction of the distance from the labeled sample to the full data.
    FractionOfTrueDistance(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadiusSelection {
    pub policy: RadiusPolicy,
    pub confidence_threshold: f64,
    pub delta_margin: f64,
    pub grid_points: usize,
    /// Upper end of the grid as excess over `ε₀`.
    pub grid_span: f64,
}

impl Default for RadiusSelection {
    fn default() -> Self {
        Self {
            policy: RadiusPolicy::MinRadiusPlusDelta,
            confidence_threshold: 0.7,
            delta_margin: 1e-3,
            grid_points: 20,
            grid_span: 10.0,
        }
    }
}

impl RadiusSelection {
    fn validate(&self) -> Result<()> {
        if !(self.delta_margin > 0.0) || !(self.grid_span > self.delta_margin) || self.grid_points == 0 {
            return Err(Error::InvalidConfig("radius grid needs 0 < delta < span and ≥ 1 point".into()));
        }
        if let RadiusPolicy::FractionOfTrueDistance(f) = self.policy {
            if !(f >= 0.0) {
                return Err(Error::InvalidConfig(format!("fraction = {f}")));
            }
        }
        Ok(())
    }

    /// `ε₀ + Δ·(span/Δ)^{g/(G−1)}` for `g = 0..G`.
    pub fn grid(&self, eps0: f64) -> Vec<f64> {
        let g = self.grid_points;
        if g == 1 {
            return vec![eps0 + self.delta_margin];
        }
        let ratio = self.grid_span / self.delta_margin;
        (0..g)
            .map(|i| eps0 + self.delta_margin * ratio.powf(i as f64 / (g - 1) as f64))
            .collect()
    }
}

pub struct RadiusContext<'a> {
    pub data: &'a LabeledDataset,
    pub unlabeled: &'a UnlabeledDataset,
    pub prior: &'a LabelPrior,
    pub cost: &'a TransportCostSpec,
    pub solver: &'a SolverConfig,
    /// Full labeled data standing in for the true distribution.
    pub full: Option<&'a LabeledDataset>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectedRadius {
    pub eps: f64,
    /// Set when no grid radius met the confidence threshold.
    pub warning: bool,
    /// `(eps, median unlabeled confidence)` for every grid point trained.
    pub sweep: Vec<(f64, f64)>,
}

/// Trains at every grid radius and records the median unlabeled confidence.
pub fn confidence_sweep(grid: &[f64], ctx: &RadiusContext<'_>) -> Result<Vec<(f64, f64)>> {
    grid.par_iter()
        .map(|&eps| {
            let cfg = SolverConfig { radius_eps: eps, ..ctx.solver.clone() };
            let theta = train_dru(ctx.data, ctx.unlabeled, ctx.prior, ctx.cost, &cfg)?;
            Ok((eps, median_confidence(&theta, ctx.unlabeled)?))
        })
        .collect()
}

/// Largest swept radius meeting the threshold, or the smallest with a warning.
pub fn pick_from_sweep(sweep: &[(f64, f64)], threshold: f64) -> (f64, bool) {
    match sweep.iter().filter(|(_, c)| *c >= threshold).map(|(e, _)| *e).reduce(f64::max) {
        Some(eps) => (eps, false),
        None => (sweep.iter().map(|(e, _)| *e).fold(f64::INFINITY, f64::min), true),
    }
}

pub fn select_radius(selection: &RadiusSelection, ctx: &RadiusContext<'_>) -> Result<SelectedRadius> {
    selection.validate()?;
    match selection.policy {
        RadiusPolicy::MinRadiusPlusDelta => Ok(SelectedRadius {
            eps: min_radius_plus_delta(ctx.data, ctx.unlabeled, ctx.prior, ctx.cost, selection.delta_margin)?,
            warning: false,
            sweep: Vec::new(),
        }),
        RadiusPolicy::FractionOfTrueDistance(fraction) => {
            let full = ctx.full.ok_or_else(|| {
                Error::InvalidArgument("fraction-of-true-distance needs the full dataset".into())
            })?;
            let (w, _) = discrete_wasserstein(
                &DiscreteDistribution::empirical(ctx.data),
                &DiscreteDistribution::empirical(full),
                ctx.cost,
            )?;
            Ok(SelectedRadius { eps: fraction * w, warning: false, sweep: Vec::new() })
        }
        RadiusPolicy::AsRobustAsPossible => {
            let eps0 = min_feasible_radius(ctx.data, ctx.unlabeled.points(), ctx.prior, ctx.cost)?;
            let sweep = confidence_sweep(&selection.grid(eps0), ctx)?;
            let (eps, warning) = pick_from_sweep(&sweep, selection.confidence_threshold);
            Ok(SelectedRadius { eps, warning, sweep })
        }
    }
}

/// One row of a bound report.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundRow {
    pub seed: u64,
    pub n_labeled: usize,
    pub eps: f64,
    pub bound: PerformanceBound,
    pub median_confidence: f64,
}

pub const BOUND_HEADER: [&str; 9] = [
    "seed",
    "n_labeled",
    "eps",
    "neg_log_bound",
    "correction",
    "likelihood_bound",
    "median_confidence",
    "vacuous",
    "n_unlabeled",
];

impl BoundRow {
    pub fn record(&self) -> Vec<String> {
        vec![
            self.seed.to_string(),
            self.n_labeled.to_string(),
            fmt_f64(self.eps),
            fmt_f64(self.bound.neg_log_bound),
            fmt_f64(self.bound.correction),
            fmt_f64(self.bound.likelihood_bound),
            fmt_f64(self.median_confidence),
            (self.bound.is_vacuous() as u8).to_string(),
            self.bound.n_unlabeled.to_string(),
        ]
    }
}

/// Fixed-width round-trip formatting used in every CSV output.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.17e}")
}

pub fn write_bound_csv(path: &Path, rows: &[BoundRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(BOUND_HEADER)?;
    for r in rows {
        w.write_record(r.record())?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `header` and `rows` as CSV to any sink.
pub fn write_csv_to<W: Write>(sink: W, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}
