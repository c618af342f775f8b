//! Model-change active learning: Random, expected model change (EMC),
//! min/max model change, and the distributionally robust impact scores.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dual::{solve_with_payoff, LabelPrior, Payoff, SolverConfig};
use crate::error::{Error, Result};
use crate::guarantees::{clopper_pearson, fmt_f64, min_radius_plus_delta, PriorMode};
use crate::model::{
    loss_from_score, sigmoid, FeatureVector, Label, LabeledDataset, LabeledSample, Theta,
    TransportCostSpec, UnlabeledDataset,
};
use crate::oracle::{min_feasible_radius, EPS_TOL};
use crate::rng::SplitMix64;

const NEWTON_MAX_ITERS: usize = 200;
const NEWTON_GRAD_TOL: f64 = 1e-6;

/// `mean ℓ(θ; x_i, y_i) + γ‖θ‖²`, bias included in the penalty.
pub fn erm_objective(theta: &Theta, data: &LabeledDataset, ridge_gamma: f64) -> Result<f64> {
    let mut total = 0.0;
    for z in data.iter() {
        total += loss_from_score(theta.dot(&z.x)?, z.y);
    }
    Ok(total / data.len() as f64 + ridge_gamma * theta.norm().powi(2))
}

fn erm_gradient(theta: &[f64], data: &LabeledDataset, ridge_gamma: f64) -> (DVector<f64>, DMatrix<f64>) {
    let d = theta.len();
    let n = data.len() as f64;
    let mut g = DVector::from_iterator(d, theta.iter().map(|t| 2.0 * ridge_gamma * t));
    let mut h = DMatrix::identity(d, d) * (2.0 * ridge_gamma);
    for z in data.iter() {
        let x = z.x.coords();
        let p = sigmoid(crate::model::dot(theta, x));
        let r = (p - z.y.loss_view()) / n;
        let w = p * (1.0 - p) / n;
        for a in 0..d {
            g[a] += r * x[a];
            for b in 0..d {
                h[(a, b)] += w * x[a] * x[b];
            }
        }
    }
    (g, h)
}

/// Ridge-regularized logistic regression by damped Newton steps with
/// backtracking, to gradient norm ≤ 1e-6.
pub fn erm_train_l2(data: &LabeledDataset, ridge_gamma: f64) -> Result<Theta> {
    if !(ridge_gamma >= 0.0) {
        return Err(Error::InvalidArgument(format!("ridge_gamma = {ridge_gamma}")));
    }
    let d = data.dim();
    let mut theta = Theta::zeros(d);
    let mut f = erm_objective(&theta, data, ridge_gamma)?;
    for _ in 0..NEWTON_MAX_ITERS {
        let (g, h) = erm_gradient(theta.weights(), data, ridge_gamma);
        let gnorm = g.norm();
        if gnorm <= NEWTON_GRAD_TOL {
            return Ok(theta);
        }
        let mut damping = 0.0;
        let dir = loop {
            let m = &h + DMatrix::identity(d, d) * damping;
            if let Some(chol) = m.cholesky() {
                break -chol.solve(&g);
            }
            damping = if damping == 0.0 { 1e-10 } else { damping * 10.0 };
            if damping > 1e10 {
                break -g.clone();
            }
        };
        let slope = g.dot(&dir);
        let mut step = 1.0;
        let next = loop {
            let cand = Theta(theta.weights().iter().zip(dir.iter()).map(|(t, s)| t + step * s).collect());
            let fc = erm_objective(&cand, data, ridge_gamma)?;
            if fc <= f + 1e-4 * step * slope || step < 1e-12 {
                break (cand, fc);
            }
            step *= 0.5;
        };
        theta = next.0;
        f = next.1;
    }
    let (g, _) = erm_gradient(theta.weights(), data, ridge_gamma);
    if g.norm() <= NEWTON_GRAD_TOL {
        Ok(theta)
    } else {
        Err(Error::NonConvergence(format!(
            "ridge logistic regression: gradient norm {:.3e} after {NEWTON_MAX_ITERS} Newton steps",
            g.norm()
        )))
    }
}

/// `‖∇_θ ℓ(θ; x, y)‖ = ‖x‖·|σ(⟨θ,x⟩) − y|`.
pub fn impact_gradient_norm(theta: &Theta, x: &FeatureVector, y: Label) -> Result<f64> {
    Ok(x.norm() * (sigmoid(theta.dot(x)?) - y.loss_view()).abs())
}

/// Expected model change `2‖x‖ / ((1 + e^{−s})(1 + e^{s}))`.
pub fn score_emc(theta: &Theta, x: &FeatureVector) -> Result<f64> {
    let s = theta.dot(x)?;
    Ok(2.0 * x.norm() * sigmoid(s) * sigmoid(-s))
}

fn mc_scale(x: &FeatureVector, include_norm: bool) -> f64 {
    if include_norm {
        x.norm()
    } else {
        1.0
    }
}

/// `min{σ(s), σ(−s)}`, optionally scaled by `‖x‖`.
pub fn score_min_mc(theta: &Theta, x: &FeatureVector, include_norm: bool) -> Result<f64> {
    let s = theta.dot(x)?;
    Ok(sigmoid(s).min(sigmoid(-s)) * mc_scale(x, include_norm))
}

/// `max{σ(s), σ(−s)}`, optionally scaled by `‖x‖`.
pub fn score_max_mc(theta: &Theta, x: &FeatureVector, include_norm: bool) -> Result<f64> {
    let s = theta.dot(x)?;
    Ok(sigmoid(s).max(sigmoid(-s)) * mc_scale(x, include_norm))
}

/// Distributionally robust impact problem: the labeled set, the unlabeled
/// points standing in for `P_X`, the label prior and a radius checked
/// against the minimal feasible radius once.
pub struct DrInstance<'a> {
    pub data: &'a LabeledDataset,
    pub unlabeled: &'a UnlabeledDataset,
    pub prior: &'a LabelPrior,
    pub cost: &'a TransportCostSpec,
    pub eps: f64,
    min_radius: f64,
}

impl<'a> DrInstance<'a> {
    pub fn new(
        data: &'a LabeledDataset,
        unlabeled: &'a UnlabeledDataset,
        prior: &'a LabelPrior,
        cost: &'a TransportCostSpec,
        eps: f64,
    ) -> Result<Self> {
        let min_radius = min_feasible_radius(data, unlabeled.points(), prior, cost)?;
        if eps < min_radius - EPS_TOL {
            return Err(Error::Infeasible { eps, min_radius });
        }
        Ok(Self { data, unlabeled, prior, cost, eps, min_radius })
    }

    pub fn min_radius(&self) -> f64 {
        self.min_radius
    }
}

/// Conservative impact of labeling unlabeled point `x_star`: the negated
/// dual value of the problem whose payoff is `−f(x, y)/φ̂(x)` at that point
/// and zero elsewhere, with `φ̂ = 1/N_u` and `θ` fixed.
pub fn score_dr(x_star: usize, inst: &DrInstance<'_>, theta: &Theta, solver: &SolverConfig) -> Result<f64> {
    let x = inst.unlabeled.get(x_star)?;
    let n_u = inst.unlabeled.len() as f64;
    let mut values = [0.0; Label::COUNT];
    for (k, y) in Label::ALL.iter().enumerate() {
        values[k] = -n_u * impact_gradient_norm(theta, x, *y)?;
    }
    let cfg = SolverConfig { radius_eps: inst.eps, update_theta: false, ..solver.clone() };
    let out = solve_with_payoff(
        inst.data,
        inst.unlabeled,
        inst.prior,
        inst.cost,
        &cfg,
        theta.clone(),
        Payoff::Spike { target: x_star, values },
        Some(inst.min_radius),
    )?;
    Ok(-out.objective)
}

/// Solver settings for the impact problems: Adam with the step size divided
/// by 10 every 5000 steps.
pub fn dr_solver_defaults() -> SolverConfig {
    SolverConfig { lr_decay_factor: 10.0, lr_decay_every: 5_000, ..SolverConfig::default() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrategyKind {
    Random,
    Emc,
    MinMc,
    MaxMc,
    DrStrong,
    DrWeak,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 6] = [Self::Random, Self::Emc, Self::MinMc, Self::MaxMc, Self::DrStrong, Self::DrWeak];

    pub fn name(self) -> &'static str {
        match self {
            Self::Random => "random",
            Self::Emc => "emc",
            Self::MinMc => "min_mc",
            Self::MaxMc => "max_mc",
            Self::DrStrong => "dr_strong",
            Self::DrWeak => "dr_weak",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown strategy '{s}'")))
    }

    fn is_dr(self) -> bool {
        matches!(self, Self::DrStrong | Self::DrWeak)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    pub candidate_subsample: usize,
    pub ridge_gamma: f64,
    pub delta_margin: f64,
    pub seed: u64,
    /// Multiply the min/max model-change scores by `‖x‖`.
    pub mc_include_norm: bool,
    /// Confidence level of the weak prior.
    pub weak_level: f64,
    pub cost: TransportCostSpec,
    pub solver: SolverConfig,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            kind: StrategyKind::Random,
            candidate_subsample: 100,
            ridge_gamma: 0.001,
            delta_margin: 1e-3,
            seed: 0,
            mc_include_norm: false,
            weak_level: 0.95,
            cost: TransportCostSpec::default(),
            solver: dr_solver_defaults(),
        }
    }
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.candidate_subsample == 0 {
            return Err(Error::InvalidConfig("candidate_subsample must be ≥ 1".into()));
        }
        if !(self.ridge_gamma >= 0.0) || !(self.delta_margin > 0.0) {
            return Err(Error::InvalidConfig("ridge_gamma ≥ 0 and delta_margin > 0 required".into()));
        }
        self.solver.validate()
    }
}

/// Labeled set, hidden-label pool, current model and learning curve.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveState {
    pub labeled: LabeledDataset,
    pool: Vec<LabeledSample>,
    pub theta: Theta,
    pub history: Vec<(usize, f64)>,
}

impl ActiveState {
    pub fn new(labeled: LabeledDataset, pool: Vec<LabeledSample>) -> Result<Self> {
        for z in &pool {
            Error::check_dim(labeled.dim(), z.x.dim())?;
        }
        let theta = Theta::zeros(labeled.dim());
        Ok(Self { labeled, pool, theta, history: Vec::new() })
    }

    /// `n_initial` rows of `full` drawn uniformly without replacement with
    /// `seed`; the rest form the pool in their original order.
    pub fn sample(full: &LabeledDataset, n_initial: usize, seed: u64) -> Result<Self> {
        if n_initial == 0 || n_initial > full.len() {
            return Err(Error::InvalidArgument(format!("n_initial = {n_initial} of {}", full.len())));
        }
        let mut rng = SplitMix64::new(seed);
        let picked = rng.sample_without_replacement(full.len(), n_initial);
        let mut chosen = vec![false; full.len()];
        for &i in &picked {
            chosen[i] = true;
        }
        let labeled = LabeledDataset::new(picked.iter().map(|&i| full.samples()[i].clone()).collect())?;
        let pool = full.iter().zip(&chosen).filter(|(_, c)| !**c).map(|(z, _)| z.clone()).collect();
        Self::new(labeled, pool)
    }

    pub fn pool_len(&self) -> usize {
        self.pool.len()
    }

    pub fn pool_points(&self) -> Vec<FeatureVector> {
        self.pool.iter().map(|z| z.x.clone()).collect()
    }

    /// Reveals the hidden label of pool entry `index` and moves it to the
    /// labeled set.
    pub fn acquire(&mut self, index: usize) -> Result<()> {
        if index >= self.pool.len() {
            return Err(Error::IndexOutOfRange { index, len: self.pool.len() });
        }
        let z = self.pool.remove(index);
        self.labeled.push(z)
    }
}

/// Priors available to the DR strategies.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ActivePriors {
    /// Exact label probabilities (for `DrStrong`).
    pub strong: Option<LabelPrior>,
    /// Clopper–Pearson intervals from the initial labeled set (for `DrWeak`).
    pub weak: Option<LabelPrior>,
}

impl ActivePriors {
    /// Strong prior from known probabilities; weak prior from the labeled
    /// counts of `initial` at `level`.
    pub fn build(true_probs: Option<&PriorMode>, initial: &LabeledDataset, level: f64) -> Result<Self> {
        let strong = match true_probs {
            Some(mode) => Some(crate::guarantees::make_prior(initial, mode)?),
            None => None,
        };
        let counts = initial.label_counts();
        let n = initial.len() as u64;
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        for c in counts {
            let (lo, hi) = clopper_pearson(c as u64, n, level)?;
            lower.push(lo);
            upper.push(hi);
        }
        Ok(Self { strong, weak: Some(LabelPrior::new(lower, upper)?) })
    }
}

fn first_argmax(scores: &[(usize, f64)]) -> usize {
    let mut best = scores[0];
    for &s in &scores[1..] {
        if s.1 > best.1 {
            best = s;
        }
    }
    best.0
}

/// Chooses the next pool index to label.
pub fn select_next(state: &ActiveState, strategy: &StrategyConfig, priors: &ActivePriors) -> Result<usize> {
    let n_pool = state.pool_len();
    if n_pool == 0 {
        return Err(Error::Empty("pool"));
    }
    let step_seed = SplitMix64::derive(strategy.seed, state.labeled.len() as u64).next_u64();
    let theta = &state.theta;
    let simple = |f: &dyn Fn(&FeatureVector) -> Result<f64>| -> Result<usize> {
        let scores: Vec<(usize, f64)> =
            state.pool.iter().enumerate().map(|(i, z)| Ok((i, f(&z.x)?))).collect::<Result<_>>()?;
        Ok(first_argmax(&scores))
    };
    match strategy.kind {
        StrategyKind::Random => Ok(SplitMix64::new(step_seed).index(n_pool)),
        StrategyKind::Emc => simple(&|x| score_emc(theta, x)),
        StrategyKind::MinMc => simple(&|x| score_min_mc(theta, x, strategy.mc_include_norm)),
        StrategyKind::MaxMc => simple(&|x| score_max_mc(theta, x, strategy.mc_include_norm)),
        kind => {
            debug_assert!(kind.is_dr());
            let prior = match kind {
                StrategyKind::DrStrong => priors.strong.as_ref(),
                _ => priors.weak.as_ref(),
            }
            .ok_or_else(|| Error::InvalidConfig(format!("strategy {} needs its prior", kind.name())))?;
            let unlabeled = UnlabeledDataset::new(state.pool_points())?;
            let eps = min_radius_plus_delta(&state.labeled, &unlabeled, prior, &strategy.cost, strategy.delta_margin)?;
            select_dr(state, &unlabeled, prior, eps, strategy, step_seed)
        }
    }
}

fn select_dr(
    state: &ActiveState,
    unlabeled: &UnlabeledDataset,
    prior: &LabelPrior,
    eps: f64,
    strategy: &StrategyConfig,
    step_seed: u64,
) -> Result<usize> {
    let inst = DrInstance::new(&state.labeled, unlabeled, prior, &strategy.cost, eps)?;
    let n_pool = unlabeled.len();
    let k = strategy.candidate_subsample.min(n_pool);
    let mut candidates = SplitMix64::new(step_seed).sample_without_replacement(n_pool, k);
    candidates.sort_unstable();
    let scores: Vec<(usize, f64)> = candidates
        .par_iter()
        .map(|&j| {
            let solver = SolverConfig {
                seed: SplitMix64::derive(step_seed, j as u64).next_u64(),
                trace_path: None,
                ..strategy.solver.clone()
            };
            Ok((j, score_dr(j, &inst, &state.theta, &solver)?))
        })
        .collect::<Result<_>>()?;
    Ok(first_argmax(&scores))
}

/// Geometric-mean per-sample likelihood, `exp(−mean loss)`.
pub fn eval_likelihood(theta: &Theta, eval: &LabeledDataset) -> Result<f64> {
    let mut total = 0.0;
    for z in eval.iter() {
        total += loss_from_score(theta.dot(&z.x)?, z.y);
    }
    Ok((-total / eval.len() as f64).exp())
}

/// Train, record, acquire until `stop_at` labels; returns the
/// `(n_labeled, likelihood)` curve.
pub fn run_active_loop(
    initial: ActiveState,
    strategy: &StrategyConfig,
    priors: &ActivePriors,
    eval: &LabeledDataset,
    stop_at: usize,
) -> Result<Vec<(usize, f64)>> {
    strategy.validate()?;
    let start = initial.labeled.len();
    if stop_at <= start {
        return Err(Error::InvalidArgument(format!("stop_at {stop_at} ≤ initial size {start}")));
    }
    if initial.pool_len() < stop_at - start {
        return Err(Error::InvalidArgument(format!(
            "pool of {} exhausted before reaching {stop_at} labels",
            initial.pool_len()
        )));
    }
    let mut state = initial;
    loop {
        state.theta = erm_train_l2(&state.labeled, strategy.ridge_gamma)?;
        let n = state.labeled.len();
        state.history.push((n, eval_likelihood(&state.theta, eval)?));
        if n == stop_at {
            break;
        }
        let next = select_next(&state, strategy, priors)?;
        state.acquire(next)?;
    }
    Ok(state.history)
}

/// `100 ×` trapezoidal area under the curve divided by the `n` range.
pub fn aulc(curve: &[(usize, f64)]) -> Result<f64> {
    if curve.len() < 2 {
        return Err(Error::InvalidArgument("AULC needs at least 2 points".into()));
    }
    if curve.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::InvalidArgument("AULC needs strictly increasing n".into()));
    }
    let area: f64 = curve
        .windows(2)
        .map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0) as f64)
        .sum();
    let span = (curve[curve.len() - 1].0 - curve[0].0) as f64;
    Ok(100.0 * area / span)
}

pub const CURVE_HEADER: [&str; 4] = ["strategy", "trial", "n_labeled", "likelihood"];
pub const AULC_HEADER: [&str; 5] = ["strategy", "median_aulc", "median_lo", "median_hi", "n_trials"];

pub fn curve_records(kind: StrategyKind, trial_seed: u64, curve: &[(usize, f64)]) -> Vec<Vec<String>> {
    curve
        .iter()
        .map(|(n, l)| vec![kind.name().to_string(), trial_seed.to_string(), n.to_string(), fmt_f64(*l)])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(c: &[f64]) -> FeatureVector {
        FeatureVector::with_bias(c.to_vec()).unwrap()
    }

    fn sample(c: &[f64], y: bool) -> LabeledSample {
        LabeledSample::new(fv(c), Label::from_bool(y))
    }

    #[test]
    fn impact_examples() {
        let x = FeatureVector::new(vec![2.0, 0.0]).unwrap();
        assert_eq!(impact_gradient_norm(&Theta::zeros(2), &x, Label::Positive).unwrap(), 1.0);
        let sat = Theta(vec![50.0, 0.0]);
        assert!(impact_gradient_norm(&sat, &x, Label::Positive).unwrap() < 1e-40);
    }

    #[test]
    fn model_change_examples() {
        let x = FeatureVector::new(vec![3.0, 0.0]).unwrap();
        assert_eq!(score_emc(&Theta::zeros(2), &x).unwrap(), 1.5);
        assert_eq!(score_min_mc(&Theta::zeros(2), &x, false).unwrap(), 0.5);
        assert_eq!(score_max_mc(&Theta::zeros(2), &x, false).unwrap(), 0.5);
        assert_eq!(score_max_mc(&Theta::zeros(2), &x, true).unwrap(), 1.5);
    }

    #[test]
    fn erm_single_sample_stays_finite() {
        let data = LabeledDataset::new(vec![sample(&[1.0], true)]).unwrap();
        let theta = erm_train_l2(&data, 0.001).unwrap();
        let p = crate::model::logistic_predict(&theta, &data.samples()[0].x).unwrap();
        assert!(theta.is_finite() && p < 1.0 && p > 0.5);
    }

    #[test]
    fn erm_symmetric_data() {
        let data = LabeledDataset::new(vec![
            sample(&[1.0, 2.0], true),
            sample(&[-1.0, -2.0], false),
            sample(&[0.5, -1.0], true),
            sample(&[-0.5, 1.0], false),
        ])
        .unwrap();
        let theta = erm_train_l2(&data, 0.001).unwrap();
        let (g, _) = erm_gradient(theta.weights(), &data, 0.001);
        assert!(g.norm() <= 1e-6);
        assert!(theta.weights()[2].abs() < 1e-9);
    }

    #[test]
    fn aulc_examples() {
        let constant: Vec<(usize, f64)> = (20..=100).map(|n| (n, 0.954)).collect();
        assert!((aulc(&constant).unwrap() - 95.4).abs() < 1e-9);
        let half: Vec<(usize, f64)> = (20..=100).map(|n| (n, 0.5)).collect();
        assert!((aulc(&half).unwrap() - 50.0).abs() < 1e-12);
        let ramp: Vec<(usize, f64)> = (0..=10).map(|n| (n, n as f64 / 10.0)).collect();
        assert!((aulc(&ramp).unwrap() - 50.0).abs() < 1e-12);
        assert!(aulc(&[(1, 0.5)]).is_err());
        assert!(aulc(&[(2, 0.5), (2, 0.6)]).is_err());
    }

    #[test]
    fn select_next_rules() {
        let labeled = LabeledDataset::new(vec![sample(&[0.0], true)]).unwrap();
        let pool = vec![sample(&[1.0], true), sample(&[-3.0], false), sample(&[3.0], true), sample(&[2.0], false)];
        let state = ActiveState::new(labeled.clone(), pool).unwrap();
        let emc = StrategyConfig { kind: StrategyKind::Emc, ..Default::default() };
        // θ = 0: EMC ∝ ‖x‖; entries 1 and 2 tie at the largest norm.
        assert_eq!(select_next(&state, &emc, &ActivePriors::default()).unwrap(), 1);
        let single = ActiveState::new(labeled, vec![sample(&[1.0], true)]).unwrap();
        for kind in [StrategyKind::Random, StrategyKind::Emc, StrategyKind::MinMc, StrategyKind::MaxMc] {
            let s = StrategyConfig { kind, ..Default::default() };
            assert_eq!(select_next(&single, &s, &ActivePriors::default()).unwrap(), 0);
        }
    }

    #[test]
    fn dr_strategy_requires_prior() {
        let labeled = LabeledDataset::new(vec![sample(&[0.0], true)]).unwrap();
        let state = ActiveState::new(labeled, vec![sample(&[1.0], true)]).unwrap();
        let s = StrategyConfig { kind: StrategyKind::DrStrong, ..Default::default() };
        assert!(matches!(select_next(&state, &s, &ActivePriors::default()), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn strategy_names_round_trip() {
        for k in StrategyKind::ALL {
            assert_eq!(StrategyKind::parse(k.name()).unwrap(), k);
        }
        assert!(StrategyKind::parse("bogus").is_err());
    }

    #[test]
    fn acquire_moves_point() {
        let labeled = LabeledDataset::new(vec![sample(&[0.0], true)]).unwrap();
        let mut state = ActiveState::new(labeled, vec![sample(&[1.0], false), sample(&[2.0], true)]).unwrap();
        state.acquire(1).unwrap();
        assert_eq!(state.labeled.len(), 2);
        assert_eq!(state.labeled.samples()[1].y, Label::Positive);
        assert_eq!(state.pool_len(), 1);
        assert!(state.acquire(5).is_err());
    }
}
