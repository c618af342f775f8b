//! Exact small-scale ground truth for the dual solver.
//!
//! With the feature marginal replaced by the uniform measure on a finite
//! support, the worst-case risk is a finite linear program over couplings
//! `π((x_j, y_k), z_i)`:
//!
//! ```text
//! max  Σ π_jki ℓ(θ; x_j, y_k)
//! s.t. Σ π_jki c((x_j, y_k), z_i) ≤ ε
//!      Σ_{j,k} π_jki = 1/N_l          for every labeled atom i
//!      Σ_{k,i} π_jki = 1/N_u          for every support point j
//!      p_lo_k ≤ Σ_{j,i} π_jki ≤ p_hi_k  for every label k
//!      π ≥ 0
//! ```
//!
//! Every LP here is solved with the deterministic dense simplex in
//! [`simplex`]; pure transportation problems go through the min-cost-flow
//! solver in [`transport`].

pub mod simplex;
pub mod transport;

use crate::dual::{sgd_solve, LabelPrior, SolverConfig};
use crate::error::{Error, Result};
use crate::model::{
    logistic_loss, FeatureVector, Label, LabeledDataset, LabeledSample, Theta, TransportCostSpec,
    UnlabeledDataset,
};
use simplex::{LinearProgram, LpOutcome, Relation, Sense};

/// Absolute slack on radius comparisons and on the transport-budget row.
pub const EPS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    atoms: Vec<LabeledSample>,
    weights: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(atoms: Vec<LabeledSample>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Empty("distribution atoms"));
        }
        Error::check_dim(atoms.len(), weights.len())?;
        let dim = atoms[0].x.dim();
        for a in &atoms {
            Error::check_dim(dim, a.x.dim())?;
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidArgument("negative weight".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("weights sum to {total}")));
        }
        Ok(Self { atoms, weights })
    }

    pub fn uniform(atoms: Vec<LabeledSample>) -> Result<Self> {
        let n = atoms.len();
        Self::new(atoms, vec![1.0 / n.max(1) as f64; n])
    }

    pub fn empirical(data: &LabeledDataset) -> Self {
        let n = data.len() as f64;
        Self { atoms: data.samples().to_vec(), weights: vec![1.0 / n; data.len()] }
    }

    pub fn atoms(&self) -> &[LabeledSample] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn expectation(&self, mut f: impl FnMut(&LabeledSample) -> Result<f64>) -> Result<f64> {
        let mut total = 0.0;
        for (a, w) in self.atoms.iter().zip(&self.weights) {
            total += w * f(a)?;
        }
        Ok(total)
    }
}

/// Discrete transport plan with its row and column marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingPlan {
    matrix: Vec<Vec<f64>>,
    rows: Vec<f64>,
    cols: Vec<f64>,
}

impl CouplingPlan {
    pub fn from_matrix(matrix: Vec<Vec<f64>>) -> Self {
        let n_cols = matrix.first().map_or(0, |r| r.len());
        let rows = matrix.iter().map(|r| r.iter().sum()).collect();
        let cols = (0..n_cols).map(|j| matrix.iter().map(|r| r[j]).sum()).collect();
        Self { matrix, rows, cols }
    }

    pub fn matrix(&self) -> &[Vec<f64>] {
        &self.matrix
    }

    pub fn row_marginal(&self) -> &[f64] {
        &self.rows
    }

    pub fn col_marginal(&self) -> &[f64] {
        &self.cols
    }

    pub fn total_cost(&self, cost: &[Vec<f64>]) -> f64 {
        self.matrix
            .iter()
            .zip(cost)
            .map(|(r, c)| r.iter().zip(c).map(|(p, q)| p * q).sum::<f64>())
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Worst-case LP outcome. The plan rows are `(support point j, label k)`
/// flattened as `2 j + k`; columns are labeled atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct WorstCaseLpResult {
    pub status: LpStatus,
    pub value: Option<f64>,
    pub plan: Option<CouplingPlan>,
}

impl WorstCaseLpResult {
    pub fn is_feasible(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    /// Worst-case distribution on `support × labels` (the plan's row marginal).
    pub fn worst_case_distribution(&self, support: &[FeatureVector]) -> Option<DiscreteDistribution> {
        let plan = self.plan.as_ref()?;
        let mut atoms = Vec::new();
        let mut weights = Vec::new();
        for (r, w) in plan.row_marginal().iter().enumerate() {
            atoms.push(LabeledSample::new(support[r / Label::COUNT].clone(), Label::ALL[r % Label::COUNT]));
            weights.push(w.max(0.0));
        }
        let total: f64 = weights.iter().sum();
        for w in weights.iter_mut() {
            *w /= total;
        }
        DiscreteDistribution::new(atoms, weights).ok()
    }
}

/// Exact Wasserstein distance between two discrete distributions.
pub fn discrete_wasserstein(
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
    cost: &TransportCostSpec,
) -> Result<(f64, CouplingPlan)> {
    let c = cost_matrix(mu.atoms(), nu.atoms(), cost)?;
    let sol = transport::solve_transport(mu.weights(), nu.weights(), &c);
    Ok((sol.cost, CouplingPlan::from_matrix(sol.plan)))
}

/// `c(a_r, b_s)` for all pairs.
pub fn cost_matrix(
    a: &[LabeledSample],
    b: &[LabeledSample],
    cost: &TransportCostSpec,
) -> Result<Vec<Vec<f64>>> {
    a.iter()
        .map(|za| b.iter().map(|zb| cost.cost(za, zb)).collect())
        .collect()
}

/// Which constraint families a coupling LP carries.
struct CouplingLp<'a> {
    support: &'a [FeatureVector],
    data: &'a LabeledDataset,
    cost: &'a TransportCostSpec,
    x_marginal: bool,
    prior: Option<&'a LabelPrior>,
}

impl CouplingLp<'_> {
    fn n_vars(&self) -> usize {
        self.support.len() * Label::COUNT * self.data.len()
    }

    fn var(&self, j: usize, k: usize, i: usize) -> usize {
        (j * Label::COUNT + k) * self.data.len() + i
    }

    fn costs(&self) -> Result<Vec<f64>> {
        let mut c = vec![0.0; self.n_vars()];
        for (j, x) in self.support.iter().enumerate() {
            for (i, z) in self.data.iter().enumerate() {
                let d = x.distance(&z.x)?;
                for (k, y) in Label::ALL.iter().enumerate() {
                    c[self.var(j, k, i)] = d + self.cost.label_cost(*y, z.y);
                }
            }
        }
        Ok(c)
    }

    fn build(&self, sense: Sense, objective: Vec<f64>) -> LinearProgram {
        let n = self.n_vars();
        let n_l = self.data.len();
        let mut lp = LinearProgram::new(sense, objective);
        for i in 0..n_l {
            let mut row = vec![0.0; n];
            for j in 0..self.support.len() {
                for k in 0..Label::COUNT {
                    row[self.var(j, k, i)] = 1.0;
                }
            }
            lp.add(row, Relation::Eq, 1.0 / n_l as f64);
        }
        if self.x_marginal {
            let n_u = self.support.len() as f64;
            for j in 0..self.support.len() {
                let mut row = vec![0.0; n];
                for k in 0..Label::COUNT {
                    for i in 0..n_l {
                        row[self.var(j, k, i)] = 1.0;
                    }
                }
                lp.add(row, Relation::Eq, 1.0 / n_u);
            }
        }
        if let Some(prior) = self.prior {
            for k in 0..Label::COUNT {
                let mut row = vec![0.0; n];
                for j in 0..self.support.len() {
                    for i in 0..n_l {
                        row[self.var(j, k, i)] = 1.0;
                    }
                }
                lp.add(row.clone(), Relation::Le, prior.upper()[k]);
                lp.add(row, Relation::Ge, prior.lower()[k]);
            }
        }
        lp
    }

    fn plan(&self, x: &[f64]) -> CouplingPlan {
        let n_l = self.data.len();
        let matrix = (0..self.support.len() * Label::COUNT)
            .map(|r| x[r * n_l..(r + 1) * n_l].to_vec())
            .collect();
        CouplingPlan::from_matrix(matrix)
    }

    fn losses(&self, theta: &Theta) -> Result<Vec<f64>> {
        let mut obj = vec![0.0; self.n_vars()];
        for (j, x) in self.support.iter().enumerate() {
            for (k, y) in Label::ALL.iter().enumerate() {
                let l = logistic_loss(theta, x, *y)?;
                for i in 0..self.data.len() {
                    obj[self.var(j, k, i)] = l;
                }
            }
        }
        Ok(obj)
    }

    fn maximize_with_budget(&self, objective: Vec<f64>, eps: f64) -> Result<WorstCaseLpResult> {
        if self.support.is_empty() {
            return Err(Error::Empty("support"));
        }
        let costs = self.costs()?;
        let mut lp = self.build(Sense::Maximize, objective);
        lp.add(costs, Relation::Le, eps + EPS_TOL);
        Ok(match lp.solve() {
            LpOutcome::Optimal { x, value } => WorstCaseLpResult {
                status: LpStatus::Optimal,
                value: Some(value),
                plan: Some(self.plan(&x)),
            },
            LpOutcome::Infeasible => WorstCaseLpResult { status: LpStatus::Infeasible, value: None, plan: None },
            LpOutcome::Unbounded => WorstCaseLpResult { status: LpStatus::Unbounded, value: None, plan: None },
        })
    }
}

/// Exact worst-case expected loss over `B_ε(P̂_l) ∩ U(P_X, p_lo, p_hi)` with
/// `P_X` uniform on `support`.
pub fn solve_worst_case_lp(
    theta: &Theta,
    support: &[FeatureVector],
    data: &LabeledDataset,
    prior: &LabelPrior,
    eps: f64,
    cost: &TransportCostSpec,
) -> Result<WorstCaseLpResult> {
    let lp = CouplingLp { support, data, cost, x_marginal: true, prior: Some(prior) };
    lp.maximize_with_budget(lp.losses(theta)?, eps)
}

/// Same LP with an arbitrary per-`(support point, label)` objective `r[j][k]`.
pub fn solve_worst_case_lp_with_payoff(
    payoff: &[[f64; Label::COUNT]],
    support: &[FeatureVector],
    data: &LabeledDataset,
    prior: &LabelPrior,
    eps: f64,
    cost: &TransportCostSpec,
) -> Result<WorstCaseLpResult> {
    Error::check_dim(support.len(), payoff.len())?;
    let lp = CouplingLp { support, data, cost, x_marginal: true, prior: Some(prior) };
    let mut obj = vec![0.0; lp.n_vars()];
    for (j, row) in payoff.iter().enumerate() {
        for (k, v) in row.iter().enumerate() {
            for i in 0..data.len() {
                obj[lp.var(j, k, i)] = *v;
            }
        }
    }
    lp.maximize_with_budget(obj, eps)
}

/// Worst case over the plain ball `B_ε(P̂_l)` restricted to distributions on
/// `support × labels` (no feature-marginal or label constraints).
pub fn solve_ball_lp(
    theta: &Theta,
    support: &[FeatureVector],
    data: &LabeledDataset,
    eps: f64,
    cost: &TransportCostSpec,
) -> Result<WorstCaseLpResult> {
    let lp = CouplingLp { support, data, cost, x_marginal: false, prior: None };
    lp.maximize_with_budget(lp.losses(theta)?, eps)
}

/// Smallest radius for which `B_ε(P̂_l) ∩ U(P_X, p_lo, p_hi)` is nonempty,
/// with `P_X` uniform on `support`.
///
/// The cost splits into a feature part and a label part, and any feasible
/// coupling factors into a feature coupling and a per-atom label assignment,
/// so the minimal-cost coupling LP separates exactly into
///
/// ```text
/// ε₀ = W_{‖·‖}(P̂_l features, P_X) + κ · dist(m₊, [p₊_lo, p₊_hi])
/// ```
///
/// where `m₊` is the labeled positive fraction and the interval is the
/// admissible positive mass. [`min_feasible_radius_lp`] solves the joint LP
/// directly and agrees to solver precision.
pub fn min_feasible_radius(
    data: &LabeledDataset,
    support: &[FeatureVector],
    prior: &LabelPrior,
    cost: &TransportCostSpec,
) -> Result<f64> {
    if support.is_empty() {
        return Err(Error::Empty("support"));
    }
    let (lo, hi) = prior.positive_mass_range();
    if lo > hi + 1e-12 {
        return Err(Error::InvalidPrior(format!("empty positive-mass range [{lo}, {hi}]")));
    }
    let n_l = data.len();
    let n_u = support.len();
    let dist: Vec<Vec<f64>> = data
        .iter()
        .map(|z| support.iter().map(|x| z.x.distance(x)).collect())
        .collect::<Result<_>>()?;
    let feature_part = transport::solve_transport(&vec![1.0 / n_l as f64; n_l], &vec![1.0 / n_u as f64; n_u], &dist).cost;
    let m_pos = data.label_counts()[Label::Positive.index()] as f64 / n_l as f64;
    let flip = if m_pos < lo {
        lo - m_pos
    } else if m_pos > hi {
        m_pos - hi
    } else {
        0.0
    };
    Ok(feature_part + cost.kappa() * flip)
}

/// Minimal feasible radius from the joint coupling LP (no decomposition).
pub fn min_feasible_radius_lp(
    data: &LabeledDataset,
    support: &[FeatureVector],
    prior: &LabelPrior,
    cost: &TransportCostSpec,
) -> Result<f64> {
    if support.is_empty() {
        return Err(Error::Empty("support"));
    }
    let lp = CouplingLp { support, data, cost, x_marginal: true, prior: Some(prior) };
    match lp.build(Sense::Minimize, lp.costs()?).solve() {
        LpOutcome::Optimal { value, .. } => Ok(value),
        _ => Err(Error::InvalidPrior("marginal constraints are mutually unsatisfiable".into())),
    }
}

/// Bisection for the smallest `ε ∈ [lo, hi]` with `feasible(ε)`, assuming
/// feasibility is monotone in `ε` and `feasible(hi)` holds.
pub fn bisect_min_radius(
    mut lo: f64,
    mut hi: f64,
    tol: f64,
    mut feasible: impl FnMut(f64) -> Result<bool>,
) -> Result<f64> {
    if !feasible(hi)? {
        return Err(Error::InvalidArgument(format!("upper bracket {hi} is not feasible")));
    }
    if feasible(lo)? {
        return Ok(lo);
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if feasible(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Minimal radius located by bisection on the sign of the stochastic dual
/// value at θ = 0: with a constant loss the dual equals `log 2` on feasible
/// radii and is unbounded below otherwise. Precision is limited by the
/// solver budget in `config`.
pub fn min_feasible_radius_dual_bisection(
    data: &LabeledDataset,
    unlabeled: &UnlabeledDataset,
    prior: &LabelPrior,
    cost: &TransportCostSpec,
    config: &SolverConfig,
    hi: f64,
    tol: f64,
) -> Result<f64> {
    bisect_min_radius(0.0, hi, tol, |eps| {
        let cfg = SolverConfig {
            radius_eps: eps,
            update_theta: false,
            check_feasibility: false,
            ..config.clone()
        };
        match sgd_solve(data, unlabeled, prior, cost, &cfg, Theta::zeros(data.dim())) {
            Ok(out) => Ok(out.objective >= 0.0),
            Err(e) if e.is_infeasible() => Ok(false),
            Err(e) => Err(e),
        }
    })
}

/// Primal LP value, converged dual value and their gap at a fixed θ.
#[derive(Debug, Clone, PartialEq)]
pub struct GapReport {
    pub primal: f64,
    pub dual: f64,
    /// `dual − primal`; nonnegative up to solver tolerance by weak duality.
    pub gap: f64,
    pub min_radius: f64,
    /// Set when `eps` sits on the minimal radius, where the interior
    /// condition for dual attainment fails and the gap is only observed.
    pub relint_violated: bool,
}

pub fn duality_gap_check(
    theta: &Theta,
    data: &LabeledDataset,
    support: &UnlabeledDataset,
    prior: &LabelPrior,
    eps: f64,
    cost: &TransportCostSpec,
    solver_config: &SolverConfig,
) -> Result<GapReport> {
    let eps0 = min_feasible_radius(data, support.points(), prior, cost)?;
    if eps < eps0 - EPS_TOL {
        return Err(Error::Infeasible { eps, min_radius: eps0 });
    }
    let primal = solve_worst_case_lp(theta, support.points(), data, prior, eps, cost)?;
    let primal = primal.value.ok_or(Error::Infeasible { eps, min_radius: eps0 })?;
    let cfg = SolverConfig { radius_eps: eps, update_theta: false, ..solver_config.clone() };
    let out = crate::dual::solve_with_payoff(
        data,
        support,
        prior,
        cost,
        &cfg,
        theta.clone(),
        crate::dual::Payoff::Loss,
        Some(eps0),
    )?;
    Ok(GapReport {
        primal,
        dual: out.objective,
        gap: out.objective - primal,
        min_radius: eps0,
        relint_violated: eps <= eps0 + EPS_TOL,
    })
}
