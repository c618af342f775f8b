//! Wasserstein distributionally robust logistic regression over the plain
//! ball `B_ε(P̂_l)`, with no unlabeled-data constraints.
//!
//! For the logistic loss and the cost `‖x − x′‖ + κ·[y ≠ y′]` the worst case
//! has the closed form
//!
//! ```text
//! min_{α ≥ L(θ)}  α ε + (1/N) Σ_i max{ ℓ(θ; x_i, y_i), ℓ(θ; x_i, ¬y_i) − α κ }
//! ```
//!
//! with `L(θ)` the norm of the non-bias weights. The objective is convex and
//! piecewise linear in `α`, so its minimum sits at `L(θ)` or at one of the
//! breakpoints `(ℓ_flip − ℓ)/κ` and is found exactly.

use std::path::Path;

use crate::dual::{Optimizer, SolverConfig};
use crate::error::{Error, Result};
use crate::guarantees::{fmt_f64, likelihood_from_neg_log};
use crate::model::{loss_from_score, sigmoid, LabeledDataset, Theta, TransportCostSpec};

/// Trained baseline and the exact worst case at its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineResult {
    pub theta: Theta,
    /// Minimizing `α` of the closed form at `theta`.
    pub alpha: f64,
    pub worst_case_value: f64,
    pub steps: usize,
}

/// Per-sample loss at the observed label and at the flipped label.
fn loss_pairs(theta: &Theta, data: &LabeledDataset) -> Result<Vec<(f64, f64)>> {
    data.iter()
        .map(|z| {
            let s = theta.dot(&z.x)?;
            Ok((loss_from_score(s, z.y), loss_from_score(s, z.y.flipped())))
        })
        .collect()
}

fn closed_form_value(pairs: &[(f64, f64)], alpha: f64, eps: f64, kappa: f64) -> f64 {
    let n = pairs.len() as f64;
    alpha * eps + pairs.iter().map(|(l, f)| l.max(f - alpha * kappa)).sum::<f64>() / n
}

fn closed_form(pairs: &[(f64, f64)], lipschitz: f64, eps: f64, kappa: f64) -> (f64, f64) {
    if kappa == 0.0 {
        return (closed_form_value(pairs, lipschitz, eps, kappa), lipschitz);
    }
    let mut breaks: Vec<f64> = pairs
        .iter()
        .map(|(l, f)| (f - l) / kappa)
        .filter(|b| *b > lipschitz)
        .collect();
    breaks.sort_by(f64::total_cmp);
    let n = pairs.len() as f64;
    // Right slope at α is ε − κ·#{b > α}/N; the minimizer is the first
    // candidate where it turns nonnegative (at the last breakpoint it is ε).
    let candidates = std::iter::once(lipschitz).chain(breaks.iter().copied());
    let mut alpha = lipschitz;
    for c in candidates {
        alpha = c;
        let above = breaks.len() - breaks.partition_point(|b| *b <= c);
        if eps - kappa * above as f64 / n >= 0.0 {
            break;
        }
    }
    (closed_form_value(pairs, alpha, eps, kappa), alpha)
}

/// Worst-case expected logistic loss over `B_ε(P̂_l)`.
pub fn baseline_worst_case(theta: &Theta, data: &LabeledDataset, eps: f64, cost: &TransportCostSpec) -> Result<f64> {
    Ok(baseline_worst_case_with_alpha(theta, data, eps, cost)?.0)
}

/// Worst-case value together with the minimizing `α`.
pub fn baseline_worst_case_with_alpha(
    theta: &Theta,
    data: &LabeledDataset,
    eps: f64,
    cost: &TransportCostSpec,
) -> Result<(f64, f64)> {
    if !(eps >= 0.0) {
        return Err(Error::InvalidArgument(format!("eps = {eps}")));
    }
    let pairs = loss_pairs(theta, data)?;
    Ok(closed_form(&pairs, theta.feature_norm(), eps, cost.kappa()))
}

/// Euclidean projection onto `{(w, α) : ‖w‖ ≤ α}` where `w` is every
/// coordinate but the last (bias) one.
fn project_cone(params: &mut [f64]) {
    let d = params.len() - 1;
    let alpha = params[d];
    let w = &mut params[..d - 1];
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= alpha {
        return;
    }
    if norm <= -alpha {
        w.fill(0.0);
        params[d] = 0.0;
        return;
    }
    let t = 0.5 * (norm + alpha);
    for v in w.iter_mut() {
        *v *= t / norm;
    }
    params[d] = t;
}

/// Minimizes the closed-form worst case jointly over `(θ, α)` by full-batch
/// projected subgradient steps with the optimizer, step schedule and
/// stopping rule of `opt`. The returned `θ` is the best full-objective
/// checkpoint; its `α` and value come from the exact closed form.
pub fn baseline_train(
    data: &LabeledDataset,
    eps: f64,
    cost: &TransportCostSpec,
    opt: &SolverConfig,
) -> Result<BaselineResult> {
    opt.validate()?;
    if !(eps >= 0.0) {
        return Err(Error::InvalidArgument(format!("eps = {eps}")));
    }
    let d = data.dim();
    let kappa = cost.kappa();
    let n = data.len() as f64;
    // Layout: θ (d entries, bias last) | α.
    let mut params = vec![0.0; d + 1];
    let mut m1 = vec![0.0; d + 1];
    let mut m2 = vec![0.0; d + 1];
    let mut grad = vec![0.0; d + 1];
    let mut best_theta = Theta::zeros(d);
    let mut best = baseline_worst_case(&best_theta, data, eps, cost)?;
    let mut stage_start_best = best;
    let mut trace: Vec<(usize, f64, f64)> = Vec::new();
    let mut steps = 0;

    for step in 0..opt.max_steps {
        let lr = opt.learning_rate(step);
        grad.fill(0.0);
        let alpha = params[d];
        for z in data.iter() {
            let s = crate::model::dot(&params[..d], z.x.coords());
            let keep = loss_from_score(s, z.y);
            let flip = loss_from_score(s, z.y.flipped());
            let (y, flipped) = if keep >= flip - alpha * kappa { (z.y, false) } else { (z.y.flipped(), true) };
            let r = sigmoid(s) - y.loss_view();
            for (g, xi) in grad[..d].iter_mut().zip(z.x.coords()) {
                *g += r * xi / n;
            }
            if flipped {
                grad[d] -= kappa / n;
            }
        }
        grad[d] += eps;
        match opt.optimizer {
            Optimizer::Adam => {
                let t = (step + 1) as i32;
                let c1 = 1.0 - opt.adam_beta1.powi(t);
                let c2 = 1.0 - opt.adam_beta2.powi(t);
                for q in 0..=d {
                    m1[q] = opt.adam_beta1 * m1[q] + (1.0 - opt.adam_beta1) * grad[q];
                    m2[q] = opt.adam_beta2 * m2[q] + (1.0 - opt.adam_beta2) * grad[q] * grad[q];
                    params[q] -= lr * (m1[q] / c1) / ((m2[q] / c2).sqrt() + opt.adam_epsilon);
                }
            }
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(&grad) {
                    *p -= lr * g;
                }
            }
        }
        project_cone(&mut params);
        steps = step + 1;

        let theta_norm = crate::model::norm(&params[..d]);
        if step % opt.trace_every == 0 {
            trace.push((step, theta_norm, params[d]));
        }
        if !(theta_norm <= 1e6) {
            trace.push((step, theta_norm, params[d]));
            let tail: Vec<String> = trace
                .iter()
                .rev()
                .take(5)
                .map(|(s, t, a)| format!("step {s}: |theta| {t:.3e}, alpha {a:.3e}"))
                .collect();
            return Err(Error::Divergence(format!("baseline training diverged; last trace: {}", tail.join("; "))));
        }
        if steps % opt.convergence_window == 0 {
            let theta = Theta(params[..d].to_vec());
            let f = baseline_worst_case(&theta, data, eps, cost)?;
            if f < best {
                best = f;
                best_theta = theta;
            }
        }
        if steps % opt.lr_decay_every == 0 {
            if steps > opt.lr_decay_every && stage_start_best - best < opt.convergence_tol {
                break;
            }
            stage_start_best = best;
        }
    }
    let last = Theta(params[..d].to_vec());
    let f = baseline_worst_case(&last, data, eps, cost)?;
    if f < best {
        best_theta = last;
    }
    let (worst_case_value, alpha) = baseline_worst_case_with_alpha(&best_theta, data, eps, cost)?;
    Ok(BaselineResult { theta: best_theta, alpha, worst_case_value, steps })
}

/// One cell of the robustness sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub eps: f64,
    pub delta: f64,
    /// `exp(−worst case at radius eps + delta)` for the model trained at `eps`.
    pub worst_case_likelihood: f64,
}

/// Worst-case likelihood of each `θ̂_ε` at test radius `ε + Δ`.
pub fn robustness_sweep(
    theta_by_eps: &[(f64, Theta)],
    data: &LabeledDataset,
    eps_grid: &[f64],
    delta_grid: &[f64],
    cost: &TransportCostSpec,
) -> Result<Vec<SweepCell>> {
    if eps_grid.is_empty() || delta_grid.is_empty() {
        return Err(Error::Empty("sweep grid"));
    }
    let mut cells = Vec::with_capacity(eps_grid.len() * delta_grid.len());
    for &eps in eps_grid {
        let theta = theta_by_eps
            .iter()
            .find(|(e, _)| *e == eps)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::InvalidArgument(format!("no trained parameters for eps = {eps}")))?;
        let pairs = loss_pairs(theta, data)?;
        for &delta in delta_grid {
            if !(delta >= 0.0) {
                return Err(Error::InvalidArgument(format!("delta = {delta}")));
            }
            let (v, _) = closed_form(&pairs, theta.feature_norm(), eps + delta, cost.kappa());
            cells.push(SweepCell { eps, delta, worst_case_likelihood: likelihood_from_neg_log(v) });
        }
    }
    Ok(cells)
}

pub const SWEEP_HEADER: [&str; 6] = ["seed", "eps", "delta", "worst_case_likelihood", "log10_eps", "log10_delta"];

impl SweepCell {
    pub fn record(&self, seed: u64) -> Vec<String> {
        vec![
            seed.to_string(),
            fmt_f64(self.eps),
            fmt_f64(self.delta),
            fmt_f64(self.worst_case_likelihood),
            fmt_f64(self.eps.log10()),
            fmt_f64(self.delta.log10()),
        ]
    }
}

pub fn write_sweep_csv(path: &Path, seed: u64, cells: &[SweepCell]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SWEEP_HEADER)?;
    for c in cells {
        w.write_record(c.record(seed))?;
    }
    w.flush()?;
    Ok(())
}
