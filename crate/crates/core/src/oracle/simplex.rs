//! Dense two-phase primal simplex with Bland's pivoting rule.
//!
//! Sized for the oracle instances (tens of rows, a few thousand columns).
//! Bland's rule makes the pivot sequence, and therefore the returned vertex,
//! a deterministic function of the input.

const PIVOT_TOL: f64 = 1e-12;
const FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

/// `opt cᵀx  s.t.  A x (≤|=|≥) b,  x ≥ 0`.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub sense: Sense,
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

impl LinearProgram {
    pub fn new(sense: Sense, objective: Vec<f64>) -> Self {
        Self { sense, objective, constraints: Vec::new() }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add(&mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) {
        debug_assert_eq!(coeffs.len(), self.objective.len());
        self.constraints.push(Constraint { coeffs, relation, rhs });
    }

    pub fn solve(&self) -> LpOutcome {
        Tableau::build(self).run(self)
    }
}

struct Tableau {
    // rows × (cols + 1); last column holds the rhs.
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    n_struct: usize,
    n_cols: usize,
    artificial_start: usize,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Self {
        let n = lp.num_vars();
        let m = lp.constraints.len();
        let n_slack = lp
            .constraints
            .iter()
            .filter(|c| c.relation != Relation::Eq)
            .count();
        let artificial_start = n + n_slack;
        let n_cols = artificial_start + m;
        let mut t = vec![vec![0.0; n_cols + 1]; m];
        let mut basis = vec![0; m];
        let mut slack = n;
        for (r, c) in lp.constraints.iter().enumerate() {
            // Normalize to a nonnegative rhs.
            let flip = c.rhs < 0.0;
            let sign = if flip { -1.0 } else { 1.0 };
            for (j, a) in c.coeffs.iter().enumerate() {
                t[r][j] = sign * a;
            }
            t[r][n_cols] = sign * c.rhs;
            let rel = match (c.relation, flip) {
                (Relation::Le, false) | (Relation::Ge, true) => Some(1.0),
                (Relation::Ge, false) | (Relation::Le, true) => Some(-1.0),
                (Relation::Eq, _) => None,
            };
            if let Some(s) = rel {
                t[r][slack] = s;
                slack += 1;
            }
            t[r][artificial_start + r] = 1.0;
            basis[r] = artificial_start + r;
        }
        Self { t, basis, n_struct: n, n_cols, artificial_start }
    }

    fn rows(&self) -> usize {
        self.t.len()
    }

    /// Reduced-cost row for minimizing `cost` over the current basis.
    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let mut d = vec![0.0; self.n_cols + 1];
        d[..self.n_cols].copy_from_slice(&cost[..self.n_cols]);
        for (r, &b) in self.basis.iter().enumerate() {
            let cb = cost[b];
            if cb != 0.0 {
                for (dj, tj) in d.iter_mut().zip(&self.t[r]) {
                    *dj -= cb * tj;
                }
            }
        }
        d
    }

    fn pivot(&mut self, row: usize, col: usize, d: &mut [f64]) {
        let p = self.t[row][col];
        for v in self.t[row].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.t[row].clone();
        for (r, tr) in self.t.iter_mut().enumerate() {
            if r == row {
                continue;
            }
            let f = tr[col];
            if f != 0.0 {
                for (v, pv) in tr.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                tr[col] = 0.0;
            }
        }
        let f = d[col];
        if f != 0.0 {
            for (v, pv) in d.iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
            d[col] = 0.0;
        }
        self.basis[row] = col;
    }

    /// Minimizes over columns `< allowed`. Returns false when unbounded.
    fn optimize(&mut self, cost: &[f64], allowed: usize) -> bool {
        let mut d = self.reduced_costs(cost);
        loop {
            // Bland: lowest-index improving column.
            let Some(col) = (0..allowed).find(|&j| d[j] < -PIVOT_TOL) else {
                return true;
            };
            let rhs = self.n_cols;
            let mut best: Option<(usize, f64)> = None;
            for r in 0..self.rows() {
                let a = self.t[r][col];
                if a > PIVOT_TOL {
                    let ratio = self.t[r][rhs] / a;
                    best = match best {
                        None => Some((r, ratio)),
                        Some((br, bv)) => {
                            if ratio < bv - PIVOT_TOL
                                || (ratio <= bv + PIVOT_TOL && self.basis[r] < self.basis[br])
                            {
                                Some((r, ratio))
                            } else {
                                Some((br, bv))
                            }
                        }
                    };
                }
            }
            match best {
                Some((row, _)) => self.pivot(row, col, &mut d),
                None => return false,
            }
        }
    }

    fn run(mut self, lp: &LinearProgram) -> LpOutcome {
        let rhs = self.n_cols;
        // Phase 1: minimize the sum of artificials.
        let mut phase1 = vec![0.0; self.n_cols];
        for c in phase1.iter_mut().skip(self.artificial_start) {
            *c = 1.0;
        }
        self.optimize(&phase1, self.n_cols);
        let infeas: f64 = self
            .basis
            .iter()
            .enumerate()
            .filter(|(_, &b)| b >= self.artificial_start)
            .map(|(r, _)| self.t[r][rhs])
            .sum();
        if infeas > FEAS_TOL {
            return LpOutcome::Infeasible;
        }
        // Drive zero-level artificials out of the basis, dropping redundant rows.
        let mut r = 0;
        while r < self.rows() {
            if self.basis[r] >= self.artificial_start {
                match (0..self.artificial_start).find(|&j| self.t[r][j].abs() > 1e-9) {
                    Some(col) => {
                        let mut dummy = vec![0.0; self.n_cols + 1];
                        self.pivot(r, col, &mut dummy);
                        r += 1;
                    }
                    None => {
                        self.t.remove(r);
                        self.basis.remove(r);
                    }
                }
            } else {
                r += 1;
            }
        }
        // Phase 2 on structural + slack columns.
        let sign = match lp.sense {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        };
        let mut cost = vec![0.0; self.n_cols];
        for (c, o) in cost.iter_mut().zip(&lp.objective) {
            *c = sign * o;
        }
        if !self.optimize(&cost, self.artificial_start) {
            return LpOutcome::Unbounded;
        }
        let mut x = vec![0.0; self.n_struct];
        for (r, &b) in self.basis.iter().enumerate() {
            if b < self.n_struct {
                x[b] = self.t[r][rhs].max(0.0);
            }
        }
        let value = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
        LpOutcome::Optimal { x, value }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn optimal(o: LpOutcome) -> (Vec<f64>, f64) {
        match o {
            LpOutcome::Optimal { x, value } => (x, value),
            other => panic!("expected optimal, got {other:?}"),
        }
    }

    #[test]
    fn textbook_maximization() {
        // max 3x + 5y s.t. x ≤ 4, 2y ≤ 12, 3x + 2y ≤ 18 → (2, 6), 36.
        let mut lp = LinearProgram::new(Sense::Maximize, vec![3.0, 5.0]);
        lp.add(vec![1.0, 0.0], Relation::Le, 4.0);
        lp.add(vec![0.0, 2.0], Relation::Le, 12.0);
        lp.add(vec![3.0, 2.0], Relation::Le, 18.0);
        let (x, v) = optimal(lp.solve());
        assert!((v - 36.0).abs() < 1e-12);
        assert!((x[0] - 2.0).abs() < 1e-12 && (x[1] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn equality_and_ge_rows() {
        // min x + 2y s.t. x + y = 3, x ≥ 1, y ≥ 0.5 → x=2.5, y=0.5, 3.5.
        let mut lp = LinearProgram::new(Sense::Minimize, vec![1.0, 2.0]);
        lp.add(vec![1.0, 1.0], Relation::Eq, 3.0);
        lp.add(vec![1.0, 0.0], Relation::Ge, 1.0);
        lp.add(vec![0.0, 1.0], Relation::Ge, 0.5);
        let (_, v) = optimal(lp.solve());
        assert!((v - 3.5).abs() < 1e-12);
    }

    #[test]
    fn detects_infeasible_and_unbounded() {
        let mut lp = LinearProgram::new(Sense::Minimize, vec![1.0]);
        lp.add(vec![1.0], Relation::Le, 1.0);
        lp.add(vec![1.0], Relation::Ge, 2.0);
        assert_eq!(lp.solve(), LpOutcome::Infeasible);

        let mut lp = LinearProgram::new(Sense::Maximize, vec![1.0, 0.0]);
        lp.add(vec![1.0, -1.0], Relation::Le, 1.0);
        assert_eq!(lp.solve(), LpOutcome::Unbounded);
    }

    #[test]
    fn redundant_equalities() {
        // 2×2 transportation problem; one marginal row is redundant.
        let mut lp = LinearProgram::new(Sense::Minimize, vec![1.0, 3.0, 2.0, 1.0]);
        lp.add(vec![1.0, 1.0, 0.0, 0.0], Relation::Eq, 0.5);
        lp.add(vec![0.0, 0.0, 1.0, 1.0], Relation::Eq, 0.5);
        lp.add(vec![1.0, 0.0, 1.0, 0.0], Relation::Eq, 0.5);
        lp.add(vec![0.0, 1.0, 0.0, 1.0], Relation::Eq, 0.5);
        let (_, v) = optimal(lp.solve());
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn negative_rhs_is_normalized() {
        // min x s.t. -x ≤ -2 → x = 2.
        let mut lp = LinearProgram::new(Sense::Minimize, vec![1.0]);
        lp.add(vec![-1.0], Relation::Le, -2.0);
        let (x, _) = optimal(lp.solve());
        assert!((x[0] - 2.0).abs() < 1e-12);
    }
}
