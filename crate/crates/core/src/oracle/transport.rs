//! Exact transportation problem by successive shortest paths.
//!
//! Supplies and demands are arbitrary nonnegative reals. Each augmentation
//! either exhausts a source, fills a sink, or empties a reverse residual
//! edge, so the loop terminates; Johnson potentials keep reduced costs
//! nonnegative so every search is a plain dense Dijkstra.

const MASS_TOL: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq)]
pub struct TransportSolution {
    /// `plan[i][j]` is the mass moved from source `i` to sink `j`.
    pub plan: Vec<Vec<f64>>,
    pub cost: f64,
}

/// Minimum-cost coupling of `supply` and `demand` under the dense `cost` matrix.
///
/// The two vectors must have (numerically) equal totals. Costs must be finite.
pub fn solve_transport(supply: &[f64], demand: &[f64], cost: &[Vec<f64>]) -> TransportSolution {
    let n = supply.len();
    let m = demand.len();
    debug_assert_eq!(cost.len(), n);
    let mut plan = vec![vec![0.0; m]; n];
    let mut rem_s = supply.to_vec();
    let mut rem_d = demand.to_vec();

    // Node ids: sources 0..n, sinks n..n+m.
    let mut pot = vec![0.0; n + m];
    for j in 0..m {
        pot[n + j] = (0..n).map(|i| cost[i][j]).fold(f64::INFINITY, f64::min);
    }

    let mut dist = vec![f64::INFINITY; n + m];
    let mut pred = vec![usize::MAX; n + m];
    let mut done = vec![false; n + m];

    loop {
        if rem_s.iter().all(|&s| s <= MASS_TOL) || rem_d.iter().all(|&d| d <= MASS_TOL) {
            break;
        }
        dist.fill(f64::INFINITY);
        pred.fill(usize::MAX);
        done.fill(false);
        for i in 0..n {
            if rem_s[i] > MASS_TOL {
                dist[i] = 0.0;
            }
        }
        loop {
            let mut u = usize::MAX;
            let mut best = f64::INFINITY;
            for v in 0..n + m {
                if !done[v] && dist[v] < best {
                    best = dist[v];
                    u = v;
                }
            }
            if u == usize::MAX {
                break;
            }
            done[u] = true;
            if u < n {
                for j in 0..m {
                    let v = n + j;
                    if done[v] {
                        continue;
                    }
                    let rc = (cost[u][j] + pot[u] - pot[v]).max(0.0);
                    if dist[u] + rc < dist[v] {
                        dist[v] = dist[u] + rc;
                        pred[v] = u;
                    }
                }
            } else {
                let j = u - n;
                for i in 0..n {
                    if done[i] || plan[i][j] <= MASS_TOL {
                        continue;
                    }
                    let rc = (-cost[i][j] + pot[u] - pot[i]).max(0.0);
                    if dist[u] + rc < dist[i] {
                        dist[i] = dist[u] + rc;
                        pred[i] = u;
                    }
                }
            }
        }
        let target = (0..m)
            .filter(|&j| rem_d[j] > MASS_TOL && dist[n + j].is_finite())
            .min_by(|&a, &b| dist[n + a].total_cmp(&dist[n + b]).then(a.cmp(&b)));
        let Some(tj) = target else { break };
        let t = n + tj;
        let dt = dist[t];
        for v in 0..n + m {
            pot[v] += dist[v].min(dt);
        }

        // Walk back to the originating source, collecting the bottleneck.
        let mut delta = rem_d[tj];
        let mut v = t;
        while pred[v] != usize::MAX {
            let u = pred[v];
            if u >= n {
                // Reverse edge sink u → source v cancels flow on (v, u).
                delta = delta.min(plan[v][u - n]);
            }
            v = u;
        }
        let source = v;
        delta = delta.min(rem_s[source]);

        let mut v = t;
        while pred[v] != usize::MAX {
            let u = pred[v];
            if u < n {
                plan[u][v - n] += delta;
            } else {
                let f = &mut plan[v][u - n];
                *f -= delta;
                if *f <= MASS_TOL {
                    *f = 0.0;
                }
            }
            v = u;
        }
        rem_s[source] -= delta;
        if rem_s[source] <= MASS_TOL {
            rem_s[source] = 0.0;
        }
        rem_d[tj] -= delta;
        if rem_d[tj] <= MASS_TOL {
            rem_d[tj] = 0.0;
        }
    }

    let total = plan
        .iter()
        .zip(cost)
        .map(|(row, crow)| row.iter().zip(crow).map(|(p, c)| p * c).sum::<f64>())
        .sum();
    TransportSolution { plan, cost: total }
}
