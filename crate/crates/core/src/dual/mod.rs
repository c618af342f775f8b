//! Finite-dimensional dual of the worst-case risk over
//! `B_ε(P̂_l) ∩ U(P_X, p_lo, p_hi)`.
//!
//! For a feature point `x`, labeled atom `i` and label `k`, the cell function is
//!
//! ```text
//! Φ^{ik}(x) = ℓ(θ; x, y_k) − (α c((x, y_k), z_i) + β_i) − (λ_hi_k − λ_lo_k)
//! ```
//!
//! `Φ(x)` is its maximum over all `(i, k)`, and the dual objective is
//!
//! ```text
//! g = α ε + mean_i β_i + Σ_k (λ_hi_k p_hi_k − λ_lo_k p_lo_k) + E_{P_X}[Φ(X)]
//! ```
//!
//! minimized over `α, λ_hi, λ_lo ≥ 0` and free `β`. Maximizing cells are
//! chosen by first occurrence in `(i, k)` lexicographic order, which is a
//! valid subgradient selection on cell boundaries.

mod solver;

pub use solver::{sgd_solve, train_dru, Optimizer, SolveOutcome, SolverConfig, TraceRow};
pub(crate) use solver::{solve_with_payoff, Payoff};

use crate::error::{Error, Result};
use crate::model::{
    loss_from_score, loss_grad_theta, FeatureVector, Label, LabeledDataset, Theta,
    TransportCostSpec, UnlabeledDataset,
};

/// Per-label probability intervals `[lower_k, upper_k]`, indexed by [`Label::index`].
#[derive(Debug, Clone, PartialEq)]
pub struct LabelPrior {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl LabelPrior {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != Label::COUNT || upper.len() != Label::COUNT {
            return Err(Error::InvalidPrior(format!(
                "expected {} intervals, got {} lower / {} upper",
                Label::COUNT,
                lower.len(),
                upper.len()
            )));
        }
        for k in 0..Label::COUNT {
            let (lo, hi) = (lower[k], upper[k]);
            if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
                return Err(Error::InvalidPrior(format!("interval {k} is [{lo}, {hi}]")));
            }
        }
        let sum_lo: f64 = lower.iter().sum();
        let sum_hi: f64 = upper.iter().sum();
        if sum_lo > 1.0 + 1e-12 || sum_hi < 1.0 - 1e-12 {
            return Err(Error::InvalidPrior(format!(
                "no probability vector fits: sum lower = {sum_lo}, sum upper = {sum_hi}"
            )));
        }
        Ok(Self { lower, upper })
    }

    /// Degenerate intervals at known label probabilities.
    pub fn strong(probs: Vec<f64>) -> Result<Self> {
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidPrior(format!("probabilities sum to {total}")));
        }
        Self::new(probs.clone(), probs)
    }

    /// `[0, 1]` for every label: no label information.
    pub fn uninformative() -> Self {
        Self { lower: vec![0.0; Label::COUNT], upper: vec![1.0; Label::COUNT] }
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Range of admissible positive-class mass, after intersecting with the
    /// complementary negative-class interval.
    pub fn positive_mass_range(&self) -> (f64, f64) {
        let p = Label::Positive.index();
        let n = Label::Negative.index();
        let lo = self.lower[p].max(1.0 - self.upper[n]);
        let hi = self.upper[p].min(1.0 - self.lower[n]);
        (lo, hi)
    }

    /// True when exactly one label distribution satisfies the intervals.
    pub fn is_degenerate(&self) -> bool {
        let (lo, hi) = self.positive_mass_range();
        hi - lo <= 1e-12
    }
}

/// Dual variables `(θ, α, β, λ_hi, λ_lo)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    pub theta: Theta,
    pub alpha: f64,
    pub beta: Vec<f64>,
    pub lambda_upper: Vec<f64>,
    pub lambda_lower: Vec<f64>,
}

impl DualState {
    /// All dual variables at zero, as the solver starts.
    pub fn zeros(theta: Theta, n_labeled: usize) -> Self {
        Self {
            theta,
            alpha: 0.0,
            beta: vec![0.0; n_labeled],
            lambda_upper: vec![0.0; Label::COUNT],
            lambda_lower: vec![0.0; Label::COUNT],
        }
    }

    pub fn validate(&self, n_labeled: usize) -> Result<()> {
        Error::check_dim(n_labeled, self.beta.len())?;
        Error::check_dim(Label::COUNT, self.lambda_upper.len())?;
        Error::check_dim(Label::COUNT, self.lambda_lower.len())?;
        if !(self.alpha >= 0.0) {
            return Err(Error::InvalidArgument(format!("alpha = {} < 0", self.alpha)));
        }
        if self.lambda_upper.iter().chain(&self.lambda_lower).any(|l| !(*l >= 0.0)) {
            return Err(Error::InvalidArgument("negative label multiplier".into()));
        }
        Ok(())
    }

    /// Linear part of the dual objective (everything but the expectation).
    pub fn linear_term(&self, prior: &LabelPrior, eps: f64) -> f64 {
        let n = self.beta.len() as f64;
        let mut v = self.alpha * eps + self.beta.iter().sum::<f64>() / n;
        for k in 0..Label::COUNT {
            v += self.lambda_upper[k] * prior.upper[k] - self.lambda_lower[k] * prior.lower[k];
        }
        v
    }
}

/// Cell `(i, k)`: labeled atom `i` (0-based) and label index `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArgmaxCell {
    pub i: usize,
    pub k: usize,
}

/// Subgradient of `Φ(x)` with respect to each dual block.
#[derive(Debug, Clone, PartialEq)]
pub struct DualGradient {
    pub theta: Vec<f64>,
    pub alpha: f64,
    pub beta: Vec<f64>,
    pub lambda_upper: Vec<f64>,
    pub lambda_lower: Vec<f64>,
}

fn check_cell(cell: ArgmaxCell, data: &LabeledDataset) -> Result<()> {
    if cell.i >= data.len() {
        return Err(Error::IndexOutOfRange { index: cell.i, len: data.len() });
    }
    if cell.k >= Label::COUNT {
        return Err(Error::IndexOutOfRange { index: cell.k, len: Label::COUNT });
    }
    Ok(())
}

/// Cell value from precomputed pieces.
#[inline]
pub(crate) fn cell_value(
    payoff: f64,
    feature_dist: f64,
    label_cost: f64,
    alpha: f64,
    beta_i: f64,
    lambda_gap_k: f64,
) -> f64 {
    payoff - (alpha * (feature_dist + label_cost) + beta_i) - lambda_gap_k
}

pub fn phi_ik(
    x: &FeatureVector,
    cell: ArgmaxCell,
    state: &DualState,
    data: &LabeledDataset,
    cost: &TransportCostSpec,
) -> Result<f64> {
    check_cell(cell, data)?;
    state.validate(data.len())?;
    let y = Label::from_index(cell.k)?;
    let z = data.get(cell.i)?;
    let score = state.theta.dot(x)?;
    Ok(cell_value(
        loss_from_score(score, y),
        x.distance(&z.x)?,
        cost.label_cost(y, z.y),
        state.alpha,
        state.beta[cell.i],
        state.lambda_upper[cell.k] - state.lambda_lower[cell.k],
    ))
}

/// Scan over all cells for precomputed per-label payoffs and per-atom
/// feature distances; first maximizer in `(i, k)` order wins.
pub(crate) fn argmax_cells(
    payoffs: &[f64; Label::COUNT],
    dists: impl Iterator<Item = f64>,
    data: &LabeledDataset,
    cost: &TransportCostSpec,
    state: &DualState,
) -> (f64, ArgmaxCell) {
    let mut best = f64::NEG_INFINITY;
    let mut arg = ArgmaxCell { i: 0, k: 0 };
    let gaps = [
        state.lambda_upper[0] - state.lambda_lower[0],
        state.lambda_upper[1] - state.lambda_lower[1],
    ];
    for (i, (d, z)) in dists.zip(data.iter()).enumerate() {
        for (k, y) in Label::ALL.iter().enumerate() {
            let v = cell_value(payoffs[k], d, cost.label_cost(*y, z.y), state.alpha, state.beta[i], gaps[k]);
            if v > best {
                best = v;
                arg = ArgmaxCell { i, k };
            }
        }
    }
    (best, arg)
}

fn loss_payoffs(theta: &Theta, x: &FeatureVector) -> Result<[f64; Label::COUNT]> {
    let score = theta.dot(x)?;
    Ok([loss_from_score(score, Label::ALL[0]), loss_from_score(score, Label::ALL[1])])
}

/// `Φ(x)` and its first maximizing cell.
pub fn phi_max(
    x: &FeatureVector,
    state: &DualState,
    data: &LabeledDataset,
    cost: &TransportCostSpec,
) -> Result<(f64, ArgmaxCell)> {
    state.validate(data.len())?;
    let payoffs = loss_payoffs(&state.theta, x)?;
    let dists: Vec<f64> = data.iter().map(|z| x.distance(&z.x)).collect::<Result<_>>()?;
    Ok(argmax_cells(&payoffs, dists.into_iter(), data, cost, state))
}

/// Subgradient of `Φ(x)` at the selected maximizing cell.
pub fn phi_subgradients(
    x: &FeatureVector,
    state: &DualState,
    data: &LabeledDataset,
    cost: &TransportCostSpec,
) -> Result<DualGradient> {
    let (_, cell) = phi_max(x, state, data, cost)?;
    let y = Label::ALL[cell.k];
    let z = data.get(cell.i)?;
    let mut beta = vec![0.0; data.len()];
    beta[cell.i] = -1.0;
    let mut lambda_upper = vec![0.0; Label::COUNT];
    let mut lambda_lower = vec![0.0; Label::COUNT];
    lambda_upper[cell.k] = -1.0;
    lambda_lower[cell.k] = 1.0;
    Ok(DualGradient {
        theta: loss_grad_theta(&state.theta, x, y)?,
        alpha: -(x.distance(&z.x)? + cost.label_cost(y, z.y)),
        beta,
        lambda_upper,
        lambda_lower,
    })
}

/// Full-sample dual objective with `E_{P_X}` replaced by the unlabeled mean.
pub fn dual_objective(
    state: &DualState,
    data: &LabeledDataset,
    unlabeled: &UnlabeledDataset,
    prior: &LabelPrior,
    eps: f64,
    cost: &TransportCostSpec,
) -> Result<f64> {
    state.validate(data.len())?;
    let mut total = 0.0;
    for x in unlabeled.points() {
        total += phi_max(x, state, data, cost)?.0;
    }
    Ok(state.linear_term(prior, eps) + total / unlabeled.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{logistic_loss, LabeledSample};

    const LN2: f64 = std::f64::consts::LN_2;

    fn fv(c: &[f64]) -> FeatureVector {
        FeatureVector::new(c.to_vec()).unwrap()
    }

    fn one_atom(x: &[f64], y: Label) -> LabeledDataset {
        LabeledDataset::new(vec![LabeledSample::new(fv(x), y)]).unwrap()
    }

    #[test]
    fn prior_validation() {
        assert!(LabelPrior::new(vec![0.6, 0.6], vec![0.7, 0.7]).is_err());
        assert!(LabelPrior::new(vec![0.1, 0.1], vec![0.2, 0.2]).is_err());
        assert!(LabelPrior::new(vec![0.5, 0.2], vec![0.4, 0.9]).is_err());
        assert!(LabelPrior::new(vec![0.0], vec![1.0]).is_err());
        assert!(LabelPrior::strong(vec![0.3, 0.6]).is_err());
        let p = LabelPrior::new(vec![0.2, 0.1], vec![0.5, 0.9]).unwrap();
        assert_eq!(p.positive_mass_range(), (0.5, 0.8));
    }

    #[test]
    fn phi_ik_reduces_to_loss_at_zero_duals() {
        let data = one_atom(&[3.0, 4.0, 1.0], Label::Positive);
        let theta = Theta(vec![0.3, -0.2, 0.1]);
        let state = DualState::zeros(theta.clone(), 1);
        let x = fv(&[1.0, 2.0, 1.0]);
        for (k, y) in Label::ALL.iter().enumerate() {
            let v = phi_ik(&x, ArgmaxCell { i: 0, k }, &state, &data, &TransportCostSpec::default()).unwrap();
            assert_eq!(v, logistic_loss(&theta, &x, *y).unwrap());
        }
    }

    #[test]
    fn phi_ik_examples() {
        let data = one_atom(&[3.0, 4.0, 1.0], Label::Positive);
        let x = fv(&[0.0, 0.0, 1.0]);
        let cost = TransportCostSpec::default();
        let mut state = DualState::zeros(Theta::zeros(3), 1);
        state.alpha = 1.0;
        let pos = ArgmaxCell { i: 0, k: Label::Positive.index() };
        let v = phi_ik(&x, pos, &state, &data, &cost).unwrap();
        assert!((v - (LN2 - 5.0)).abs() < 1e-15);
        assert!((v + 4.306853).abs() < 1e-6);

        let mut state = DualState::zeros(Theta::zeros(3), 1);
        state.beta[0] = 10.0;
        assert_eq!(phi_ik(&x, pos, &state, &data, &cost).unwrap(), LN2 - 10.0);
    }

    #[test]
    fn phi_ik_rejects_bad_cells() {
        let data = one_atom(&[0.0, 1.0], Label::Positive);
        let state = DualState::zeros(Theta::zeros(2), 1);
        let x = fv(&[0.0, 1.0]);
        let cost = TransportCostSpec::default();
        assert!(phi_ik(&x, ArgmaxCell { i: 1, k: 0 }, &state, &data, &cost).is_err());
        assert!(phi_ik(&x, ArgmaxCell { i: 0, k: 2 }, &state, &data, &cost).is_err());
    }

    #[test]
    fn phi_max_ties_pick_first_cell() {
        let data = LabeledDataset::new(vec![
            LabeledSample::new(fv(&[0.0, 1.0]), Label::Positive),
            LabeledSample::new(fv(&[0.0, 1.0]), Label::Negative),
        ])
        .unwrap();
        let state = DualState::zeros(Theta::zeros(2), 2);
        let (v, cell) = phi_max(&fv(&[5.0, 1.0]), &state, &data, &TransportCostSpec::default()).unwrap();
        assert_eq!(v, LN2);
        assert_eq!(cell, ArgmaxCell { i: 0, k: 0 });
    }

    #[test]
    fn phi_max_dominance() {
        let z = LabeledSample::new(fv(&[1.0, 1.0]), Label::Positive);
        let data = LabeledDataset::new(vec![z.clone(), z]).unwrap();
        let mut state = DualState::zeros(Theta(vec![0.5, 0.0]), 2);
        state.beta[0] = -100.0;
        let (_, cell) = phi_max(&fv(&[1.0, 1.0]), &state, &data, &TransportCostSpec::default()).unwrap();
        assert_eq!(cell.i, 0);
        state.beta[0] = 100.0;
        let (_, cell) = phi_max(&fv(&[1.0, 1.0]), &state, &data, &TransportCostSpec::default()).unwrap();
        assert_eq!(cell.i, 1);
    }

    #[test]
    fn subgradient_example() {
        let data = one_atom(&[3.0, 4.0, 1.0], Label::Positive);
        let mut state = DualState::zeros(Theta(vec![1.0, 1.0, 0.0]), 1);
        state.alpha = 0.1;
        // Negative label is far more expensive to reach: unique argmax at (0, Positive).
        state.lambda_upper[0] = 5.0;
        let g = phi_subgradients(&fv(&[0.0, 0.0, 1.0]), &state, &data, &TransportCostSpec::default()).unwrap();
        assert_eq!(g.alpha, -5.0);
        assert_eq!(g.beta, vec![-1.0]);
        assert_eq!(g.lambda_upper, vec![0.0, -1.0]);
        for k in 0..2 {
            assert_eq!(g.lambda_lower[k], -g.lambda_upper[k]);
        }
    }

    #[test]
    fn dual_objective_examples() {
        let x0 = fv(&[0.5, -1.0, 1.0]);
        let data = one_atom(x0.coords(), Label::Positive);
        let unlabeled = UnlabeledDataset::new(vec![x0.clone()]).unwrap();
        let theta = Theta(vec![0.7, 0.2, -0.1]);
        let prior = LabelPrior::strong(vec![0.0, 1.0]).unwrap();
        let state = DualState::zeros(theta.clone(), 1);
        let g = dual_objective(&state, &data, &unlabeled, &prior, 0.0, &TransportCostSpec::default()).unwrap();
        let expected = logistic_loss(&theta, &x0, Label::Positive)
            .unwrap()
            .max(logistic_loss(&theta, &x0, Label::Negative).unwrap());
        assert_eq!(g, expected);
    }

    #[test]
    fn beta_shift_invariance() {
        let data = LabeledDataset::new(vec![
            LabeledSample::new(fv(&[0.0, 1.0]), Label::Positive),
            LabeledSample::new(fv(&[1.0, 1.0]), Label::Negative),
        ])
        .unwrap();
        let unlabeled = UnlabeledDataset::new(vec![fv(&[0.25, 1.0]), fv(&[0.5, 1.0])]).unwrap();
        let prior = LabelPrior::new(vec![0.25, 0.25], vec![0.75, 0.75]).unwrap();
        let cost = TransportCostSpec::default();
        let mut state = DualState::zeros(Theta(vec![1.0, -0.5]), 2);
        state.alpha = 0.3;
        state.beta = vec![0.5, -0.25];
        state.lambda_upper = vec![0.5, 0.0];
        let g0 = dual_objective(&state, &data, &unlabeled, &prior, 0.2, &cost).unwrap();
        for b in state.beta.iter_mut() {
            *b += 3.0;
        }
        let g1 = dual_objective(&state, &data, &unlabeled, &prior, 0.2, &cost).unwrap();
        assert!((g0 - g1).abs() < 1e-14);
    }

    #[test]
    fn invalid_states_are_rejected() {
        let data = one_atom(&[0.0, 1.0], Label::Positive);
        let mut state = DualState::zeros(Theta::zeros(2), 1);
        state.alpha = -1.0;
        assert!(phi_max(&fv(&[0.0, 1.0]), &state, &data, &TransportCostSpec::default()).is_err());
        let state = DualState::zeros(Theta::zeros(2), 3);
        assert!(phi_max(&fv(&[0.0, 1.0]), &state, &data, &TransportCostSpec::default()).is_err());
    }
}
