use std::path::{Path, PathBuf};

use super::{argmax_cells, DualState, LabelPrior};
use crate::error::{Error, Result};
use crate::model::{
    loss_from_score, sigmoid, Label, LabeledDataset, Theta, TransportCostSpec, UnlabeledDataset,
};
use crate::oracle;
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    /// Projected Adam.
    Adam,
    /// Plain projected stochastic subgradient steps.
    Sgd,
}

/// Stochastic dual solver settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub radius_eps: f64,
    pub step_size: f64,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// The learning rate is divided by this every `lr_decay_every` steps.
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub max_steps: usize,
    pub seed: u64,
    /// Stop once a whole learning-rate stage lowers the best checkpoint
    /// objective by less than this.
    pub convergence_tol: f64,
    /// Steps between full-sample checkpoint evaluations.
    pub convergence_window: usize,
    /// When false, θ stays at its initial value (pure dual evaluation).
    pub update_theta: bool,
    /// A batch objective estimate below this means unbounded below.
    pub objective_floor: f64,
    /// `α` beyond this also means unbounded below.
    pub alpha_ceiling: f64,
    /// Reject radii below the exact minimal feasible radius before iterating.
    pub check_feasibility: bool,
    pub trace_every: usize,
    pub trace_path: Option<PathBuf>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            radius_eps: 0.0,
            step_size: 0.05,
            batch_size: 100,
            optimizer: Optimizer::Adam,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            lr_decay_factor: 8.0,
            lr_decay_every: 10_000,
            max_steps: 200_000,
            seed: 0,
            convergence_tol: 1e-4,
            convergence_window: 1_000,
            update_theta: true,
            objective_floor: -1e6,
            alpha_ceiling: 1e6,
            check_feasibility: true,
            trace_every: 100,
            trace_path: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.radius_eps >= 0.0) || !self.radius_eps.is_finite() {
            return bad(format!("radius_eps = {}", self.radius_eps));
        }
        if !(self.step_size > 0.0) {
            return bad(format!("step_size = {}", self.step_size));
        }
        if self.batch_size == 0 || self.lr_decay_every == 0 || self.max_steps == 0 {
            return bad("batch_size, lr_decay_every and max_steps must be positive".into());
        }
        if self.convergence_window == 0 || self.trace_every == 0 {
            return bad("convergence_window and trace_every must be positive".into());
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("{name} = {b} not in (0, 1)"));
            }
        }
        if !(self.lr_decay_factor >= 1.0) {
            return bad(format!("lr_decay_factor = {}", self.lr_decay_factor));
        }
        Ok(())
    }

    pub fn learning_rate(&self, step: usize) -> f64 {
        self.step_size / self.lr_decay_factor.powi((step / self.lr_decay_every) as i32)
    }
}

/// One row of the iteration log.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub lr: f64,
    pub objective_estimate: f64,
    pub alpha: f64,
    pub theta_norm: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    /// Best full-sample checkpoint (every dual state upper-bounds the primal,
    /// so the lowest one is the tightest).
    pub state: DualState,
    /// Full-sample dual objective at the returned state.
    pub objective: f64,
    pub trace: Vec<TraceRow>,
    pub steps: usize,
    pub converged: bool,
}

/// What the adversary collects at each `(point, label)`.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Payoff {
    /// The logistic loss of the current θ.
    Loss,
    /// Fixed per-label values at one unlabeled index and zero elsewhere.
    Spike { target: usize, values: [f64; Label::COUNT] },
}

/// Dual instance with the feature distances to labeled atoms precomputed.
struct Problem<'a> {
    data: &'a LabeledDataset,
    unlabeled: &'a UnlabeledDataset,
    prior: &'a LabelPrior,
    cost: &'a TransportCostSpec,
    eps: f64,
    payoff: Payoff,
    dists: Vec<f64>,
}

struct PointEval {
    value: f64,
    i: usize,
    k: usize,
    score: f64,
}

impl<'a> Problem<'a> {
    fn new(
        data: &'a LabeledDataset,
        unlabeled: &'a UnlabeledDataset,
        prior: &'a LabelPrior,
        cost: &'a TransportCostSpec,
        eps: f64,
        payoff: Payoff,
    ) -> Result<Self> {
        Error::check_dim(data.dim(), unlabeled.dim())?;
        let n_l = data.len();
        let mut dists = Vec::with_capacity(unlabeled.len() * n_l);
        for x in unlabeled.points() {
            for z in data.iter() {
                dists.push(x.distance(&z.x)?);
            }
        }
        Ok(Self { data, unlabeled, prior, cost, eps, payoff, dists })
    }

    fn eval(&self, j: usize, state: &DualState) -> PointEval {
        let x = &self.unlabeled.points()[j];
        let (payoffs, score) = match self.payoff {
            Payoff::Loss => {
                let s = crate::model::dot(state.theta.weights(), x.coords());
                ([loss_from_score(s, Label::ALL[0]), loss_from_score(s, Label::ALL[1])], s)
            }
            Payoff::Spike { target, values } => {
                if j == target {
                    (values, 0.0)
                } else {
                    ([0.0; Label::COUNT], 0.0)
                }
            }
        };
        let n_l = self.data.len();
        let row = &self.dists[j * n_l..(j + 1) * n_l];
        let (value, cell) = argmax_cells(&payoffs, row.iter().copied(), self.data, self.cost, state);
        PointEval { value, i: cell.i, k: cell.k, score }
    }

    fn objective(&self, state: &DualState) -> f64 {
        let total: f64 = (0..self.unlabeled.len()).map(|j| self.eval(j, state).value).sum();
        state.linear_term(self.prior, self.eps) + total / self.unlabeled.len() as f64
    }
}

/// Flat parameter layout: θ | α | β | λ_hi | λ_lo.
fn pack(state: &DualState) -> Vec<f64> {
    let mut p = state.theta.weights().to_vec();
    p.push(state.alpha);
    p.extend(&state.beta);
    p.extend(&state.lambda_upper);
    p.extend(&state.lambda_lower);
    p
}

fn unpack(p: &[f64], state: &mut DualState) {
    let d = state.theta.dim();
    let n = state.beta.len();
    state.theta.0.copy_from_slice(&p[..d]);
    state.alpha = p[d];
    state.beta.copy_from_slice(&p[d + 1..d + 1 + n]);
    state.lambda_upper.copy_from_slice(&p[d + 1 + n..d + 1 + n + Label::COUNT]);
    state.lambda_lower.copy_from_slice(&p[d + 1 + n + Label::COUNT..]);
}

pub(crate) fn solve_with_payoff(
    data: &LabeledDataset,
    unlabeled: &UnlabeledDataset,
    prior: &LabelPrior,
    cost: &TransportCostSpec,
    config: &SolverConfig,
    theta0: Theta,
    payoff: Payoff,
    known_min_radius: Option<f64>,
) -> Result<SolveOutcome> {
    config.validate()?;
    Error::check_dim(data.dim(), theta0.dim())?;
    let eps = config.radius_eps;
    if config.check_feasibility {
        let eps0 = match known_min_radius {
            Some(r) => r,
            None => oracle::min_feasible_radius(data, unlabeled.points(), prior, cost)?,
        };
        if eps < eps0 - oracle::EPS_TOL {
            return Err(Error::Infeasible { eps, min_radius: eps0 });
        }
    }
    let problem = Problem::new(data, unlabeled, prior, cost, eps, payoff)?;
    let update_theta = config.update_theta && matches!(payoff, Payoff::Loss);

    let n_l = data.len();
    let d = theta0.dim();
    let mut state = DualState::zeros(theta0, n_l);
    let mut params = pack(&state);
    let n_params = params.len();
    let mut m1 = vec![0.0; n_params];
    let mut m2 = vec![0.0; n_params];
    let mut grad = vec![0.0; n_params];
    let mut rng = SplitMix64::new(config.seed);
    let mut trace = Vec::new();

    let alpha_at = d;
    let beta_at = d + 1;
    let lu_at = beta_at + n_l;
    let ll_at = lu_at + Label::COUNT;

    let window = config.convergence_window;
    let mut best_state = state.clone();
    let mut best_objective = problem.objective(&state);
    let mut stage_start_best = best_objective;
    let mut converged = false;
    let mut steps = 0;
    let inv_b = 1.0 / config.batch_size as f64;

    for step in 0..config.max_steps {
        let lr = config.learning_rate(step);
        grad.fill(0.0);
        let mut phi_sum = 0.0;
        for _ in 0..config.batch_size {
            let j = rng.index(unlabeled.len());
            let e = problem.eval(j, &state);
            phi_sum += e.value;
            if update_theta {
                let r = sigmoid(e.score) - Label::ALL[e.k].loss_view();
                for (g, xi) in grad[..d].iter_mut().zip(unlabeled.points()[j].coords()) {
                    *g += r * xi;
                }
            }
            let c = problem.dists[j * n_l + e.i] + cost.label_cost(Label::ALL[e.k], data.samples()[e.i].y);
            grad[alpha_at] -= c;
            grad[beta_at + e.i] -= 1.0;
            grad[lu_at + e.k] -= 1.0;
            grad[ll_at + e.k] += 1.0;
        }
        for g in grad.iter_mut() {
            *g *= inv_b;
        }
        // Deterministic linear-term gradient.
        grad[alpha_at] += eps;
        for g in &mut grad[beta_at..lu_at] {
            *g += 1.0 / n_l as f64;
        }
        for k in 0..Label::COUNT {
            grad[lu_at + k] += prior.upper()[k];
            grad[ll_at + k] -= prior.lower()[k];
        }

        let estimate = state.linear_term(prior, eps) + phi_sum * inv_b;

        match config.optimizer {
            Optimizer::Adam => {
                let t = (step + 1) as i32;
                let c1 = 1.0 - config.adam_beta1.powi(t);
                let c2 = 1.0 - config.adam_beta2.powi(t);
                for q in 0..n_params {
                    let g = grad[q];
                    m1[q] = config.adam_beta1 * m1[q] + (1.0 - config.adam_beta1) * g;
                    m2[q] = config.adam_beta2 * m2[q] + (1.0 - config.adam_beta2) * g * g;
                    params[q] -= lr * (m1[q] / c1) / ((m2[q] / c2).sqrt() + config.adam_epsilon);
                }
            }
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(&grad) {
                    *p -= lr * g;
                }
            }
        }
        if !update_theta {
            params[..d].copy_from_slice(state.theta.weights());
        }
        // Projection: α, λ ≥ 0; θ is unconstrained.
        params[alpha_at] = params[alpha_at].max(0.0);
        for p in &mut params[lu_at..] {
            *p = p.max(0.0);
        }
        unpack(&params, &mut state);
        steps = step + 1;

        let feasible = estimate >= config.objective_floor && state.alpha <= config.alpha_ceiling;
        if step % config.trace_every == 0 || !feasible {
            trace.push(TraceRow {
                step,
                lr,
                objective_estimate: estimate,
                alpha: state.alpha,
                theta_norm: state.theta.norm(),
                feasible,
            });
        }
        if !feasible {
            write_trace_if_configured(config, &trace)?;
            return Err(Error::Unbounded(format!(
                "objective estimate {estimate:.3e} / alpha {:.3e} at step {step}",
                state.alpha
            )));
        }
        if !state.theta.is_finite() {
            return Err(Error::Divergence(format!("non-finite theta at step {step}")));
        }

        if steps % window == 0 {
            let f = problem.objective(&state);
            if f < best_objective {
                best_objective = f;
                best_state = state.clone();
            }
        }
        if steps % config.lr_decay_every == 0 {
            // A full learning-rate stage that no longer moves the best
            // checkpoint means the step-size-limited error is below tolerance.
            if steps > config.lr_decay_every && stage_start_best - best_objective < config.convergence_tol {
                converged = true;
                break;
            }
            stage_start_best = best_objective;
        }
    }

    let f = problem.objective(&state);
    if f < best_objective {
        best_objective = f;
        best_state = state;
    }
    let (state, objective) = (best_state, best_objective);
    trace.push(TraceRow {
        step: steps,
        lr: config.learning_rate(steps.saturating_sub(1)),
        objective_estimate: objective,
        alpha: state.alpha,
        theta_norm: state.theta.norm(),
        feasible: true,
    });
    write_trace_if_configured(config, &trace)?;
    Ok(SolveOutcome { state, objective, trace, steps, converged })
}

/// Minibatch stochastic subgradient solver for the dual, starting from all
/// dual variables at zero and θ at `theta0`.
///
/// Returns [`Error::Infeasible`] when the radius is below the exact minimal
/// feasible radius and [`Error::Unbounded`] when the running estimate falls
/// through `objective_floor` or `α` passes `alpha_ceiling`.
pub fn sgd_solve(
    data: &LabeledDataset,
    unlabeled: &UnlabeledDataset,
    prior: &LabelPrior,
    cost: &TransportCostSpec,
    config: &SolverConfig,
    theta0: Theta,
) -> Result<SolveOutcome> {
    solve_with_payoff(data, unlabeled, prior, cost, config, theta0, Payoff::Loss, None)
}

/// Joint minimization over θ and the dual variables, starting from θ = 0.
pub fn train_dru(
    data: &LabeledDataset,
    unlabeled: &UnlabeledDataset,
    prior: &LabelPrior,
    cost: &TransportCostSpec,
    config: &SolverConfig,
) -> Result<Theta> {
    let config = SolverConfig { update_theta: true, ..config.clone() };
    let out = sgd_solve(data, unlabeled, prior, cost, &config, Theta::zeros(data.dim()))?;
    Ok(out.state.theta)
}

fn write_trace_if_configured(config: &SolverConfig, trace: &[TraceRow]) -> Result<()> {
    match &config.trace_path {
        Some(path) => write_trace_csv(path, trace),
        None => Ok(()),
    }
}

/// Writes `step,lr,objective_estimate,alpha,theta_norm,feasible` rows.
pub fn write_trace_csv(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "lr", "objective_estimate", "alpha", "theta_norm", "feasible"])?;
    for r in trace {
        w.write_record([
            r.step.to_string(),
            format!("{:e}", r.lr),
            format!("{:.17e}", r.objective_estimate),
            format!("{:.17e}", r.alpha),
            format!("{:.17e}", r.theta_norm),
            (r.feasible as u8).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual::dual_objective;
    use crate::model::{logistic_loss, FeatureVector, LabeledSample};

    fn fv(c: &[f64]) -> FeatureVector {
        FeatureVector::new(c.to_vec()).unwrap()
    }

    fn singleton() -> (LabeledDataset, UnlabeledDataset, LabelPrior, FeatureVector) {
        let x0 = fv(&[0.4, -0.3, 1.0]);
        let data = LabeledDataset::new(vec![LabeledSample::new(x0.clone(), Label::Positive)]).unwrap();
        let unlabeled = UnlabeledDataset::new(vec![x0.clone()]).unwrap();
        (data, unlabeled, LabelPrior::strong(vec![0.0, 1.0]).unwrap(), x0)
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let bad = SolverConfig { batch_size: 0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SolverConfig { adam_beta1: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SolverConfig { radius_eps: -0.1, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn learning_rate_schedule() {
        let c = SolverConfig { step_size: 0.8, lr_decay_factor: 8.0, lr_decay_every: 10, ..Default::default() };
        assert_eq!(c.learning_rate(0), 0.8);
        assert_eq!(c.learning_rate(9), 0.8);
        assert_eq!(c.learning_rate(10), 0.1);
        assert_eq!(c.learning_rate(25), 0.0125);
    }

    #[test]
    fn singleton_instance_converges_to_point_loss() {
        let (data, unlabeled, prior, x0) = singleton();
        let theta = Theta(vec![0.8, 1.5, -0.2]);
        let config = SolverConfig {
            update_theta: false,
            max_steps: 40_000,
            lr_decay_every: 5_000,
            ..Default::default()
        };
        let out = sgd_solve(&data, &unlabeled, &prior, &TransportCostSpec::default(), &config, theta.clone()).unwrap();
        let target = logistic_loss(&theta, &x0, Label::Positive).unwrap();
        assert!((out.objective - target).abs() < 1e-3, "{} vs {}", out.objective, target);
        assert_eq!(out.state.theta, theta);
        let check = dual_objective(&out.state, &data, &unlabeled, &prior, 0.0, &TransportCostSpec::default()).unwrap();
        assert!((check - out.objective).abs() < 1e-12);
    }

    #[test]
    fn forced_flip_below_kappa_is_infeasible() {
        let (data, unlabeled, _, _) = singleton();
        let prior = LabelPrior::strong(vec![1.0, 0.0]).unwrap();
        let config = SolverConfig { radius_eps: 0.5, max_steps: 100, ..Default::default() };
        let err = sgd_solve(&data, &unlabeled, &prior, &TransportCostSpec::default(), &config, Theta::zeros(3))
            .unwrap_err();
        assert!(matches!(err, Error::Infeasible { .. }));
        assert!(err.is_infeasible());
    }

    #[test]
    fn divergence_detector_fires_without_precheck() {
        let (data, unlabeled, _, _) = singleton();
        let prior = LabelPrior::strong(vec![1.0, 0.0]).unwrap();
        let config = SolverConfig {
            radius_eps: 0.0,
            check_feasibility: false,
            optimizer: Optimizer::Sgd,
            step_size: 1e4,
            lr_decay_factor: 1.0,
            max_steps: 1_000,
            ..Default::default()
        };
        let err = sgd_solve(&data, &unlabeled, &prior, &TransportCostSpec::default(), &config, Theta::zeros(3))
            .unwrap_err();
        assert!(matches!(err, Error::Unbounded(_)), "{err:?}");
    }

    #[test]
    fn identical_seeds_give_identical_traces() {
        let data = LabeledDataset::new(vec![
            LabeledSample::new(fv(&[0.0, 1.0]), Label::Positive),
            LabeledSample::new(fv(&[1.0, 1.0]), Label::Negative),
        ])
        .unwrap();
        let unlabeled = UnlabeledDataset::new(vec![fv(&[0.1, 1.0]), fv(&[0.9, 1.0]), fv(&[0.5, 1.0])]).unwrap();
        let prior = LabelPrior::new(vec![0.2, 0.2], vec![0.8, 0.8]).unwrap();
        let config = SolverConfig { radius_eps: 0.3, max_steps: 3_000, seed: 9, trace_every: 7, ..Default::default() };
        let a = sgd_solve(&data, &unlabeled, &prior, &TransportCostSpec::default(), &config, Theta::zeros(2)).unwrap();
        let b = sgd_solve(&data, &unlabeled, &prior, &TransportCostSpec::default(), &config, Theta::zeros(2)).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.state, b.state);
        assert_eq!(a.objective.to_bits(), b.objective.to_bits());
    }

    #[test]
    fn trace_csv_is_written() {
        let (data, unlabeled, prior, _) = singleton();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let config = SolverConfig { max_steps: 250, trace_path: Some(path.clone()), ..Default::default() };
        sgd_solve(&data, &unlabeled, &prior, &TransportCostSpec::default(), &config, Theta::zeros(3)).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "step,lr,objective_estimate,alpha,theta_norm,feasible");
        assert_eq!(lines.count(), 4);
    }
}
