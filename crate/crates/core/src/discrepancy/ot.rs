//! Exact discrete optimal transport.
//!
//! Two exact solvers back [`discrete_ot`]:
//! - uniform weights with `n == m`: the problem is an assignment problem,
//!   solved with the shortest-augmenting-path Hungarian method;
//! - general weights: successive shortest paths on the bipartite transport
//!   network with Johnson potentials.
//!
//! Both iterate in fixed index order, so identical inputs give identical plans.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

use super::{DiscreteDistribution, TransportPlan};

/// Largest support handled by the general-weight solver.
pub const MAX_GENERAL_SUPPORT: usize = 64;
/// Largest support handled by the assignment path.
pub const MAX_ASSIGNMENT_SUPPORT: usize = 4096;

const MASS_TOL: f64 = 1e-15;

/// Ground cost `‖x − y‖_p^p`.
pub fn ground_cost(x: &[f64], y: &[f64], p: u32) -> f64 {
    match p {
        1 => x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum(),
        2 => x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum(),
        _ => x
            .iter()
            .zip(y)
            .map(|(a, b)| (a - b).abs().powi(p as i32))
            .sum(),
    }
}

pub fn cost_matrix(a: &Matrix, b: &Matrix, p: u32) -> Matrix {
    Matrix::from_fn(a.rows(), b.rows(), |i, j| ground_cost(a.row(i), b.row(j), p))
}

/// Exact Kantorovich plan between two discrete distributions under the
/// ground cost `‖x − y‖_p^p`.
pub fn discrete_ot(
    source: &DiscreteDistribution,
    target: &DiscreteDistribution,
    p: u32,
) -> Result<TransportPlan> {
    if p == 0 {
        return Err(Error::InvalidInput("transport exponent p must be >= 1".into()));
    }
    if source.points.cols() != target.points.cols() {
        return Err(Error::dim(
            "discrete_ot",
            source.points.cols(),
            target.points.cols(),
        ));
    }
    let n = source.len();
    let m = target.len();
    let cost = cost_matrix(&source.points, &target.points, p);

    let plan = if n == m && source.is_uniform() && target.is_uniform() {
        if n > MAX_ASSIGNMENT_SUPPORT {
            return Err(Error::InvalidInput(format!(
                "assignment support {n} exceeds oracle limit {MAX_ASSIGNMENT_SUPPORT}"
            )));
        }
        let assignment = solve_assignment(&cost);
        let mut plan = Matrix::zeros(n, n);
        let w = 1.0 / n as f64;
        for (i, &j) in assignment.iter().enumerate() {
            plan[(i, j)] = w;
        }
        plan
    } else {
        if n > MAX_GENERAL_SUPPORT || m > MAX_GENERAL_SUPPORT {
            return Err(Error::InvalidInput(format!(
                "support sizes {n}x{m} exceed oracle limit {MAX_GENERAL_SUPPORT}"
            )));
        }
        min_cost_transport(&cost, &source.weights, &target.weights)
    };

    let mut value = 0.0;
    for i in 0..n {
        for j in 0..m {
            let pij = plan[(i, j)];
            if pij != 0.0 {
                value += pij * cost[(i, j)];
            }
        }
    }
    Ok(TransportPlan {
        plan,
        value: value.max(0.0),
    })
}

/// Minimum-cost perfect matching on a square cost matrix. Returns, for each
/// row, the assigned column.
///
/// Shortest augmenting paths with dual potentials; potentials are only
/// touched for the rows and columns scanned by each search.
pub fn solve_assignment(cost: &Matrix) -> Vec<usize> {
    let n = cost.rows();
    assert_eq!(n, cost.cols(), "assignment needs a square cost matrix");
    const FREE: usize = usize::MAX;
    let mut u = vec![0.0f64; n];
    let mut v = vec![0.0f64; n];
    let mut col_for_row = vec![FREE; n];
    let mut row_for_col = vec![FREE; n];
    let mut path = vec![FREE; n];
    let mut dist = vec![f64::INFINITY; n];
    let mut remaining: Vec<usize> = Vec::with_capacity(n);
    let mut row_seen = vec![false; n];
    let mut col_seen = vec![false; n];

    for start in 0..n {
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        row_seen.iter_mut().for_each(|x| *x = false);
        col_seen.iter_mut().for_each(|x| *x = false);
        remaining.clear();
        remaining.extend((0..n).rev());

        let mut reach = 0.0;
        let mut i = start;
        let sink = loop {
            row_seen[i] = true;
            let row = cost.row(i);
            let base = reach - u[i];
            let mut best = f64::INFINITY;
            let mut best_at = 0;
            for (k, &j) in remaining.iter().enumerate() {
                let r = base + row[j] - v[j];
                if r < dist[j] {
                    path[j] = i;
                    dist[j] = r;
                }
                let d = dist[j];
                if d < best || (d == best && row_for_col[j] == FREE) {
                    best = d;
                    best_at = k;
                }
            }
            reach = best;
            let j = remaining.swap_remove(best_at);
            col_seen[j] = true;
            if row_for_col[j] == FREE {
                break j;
            }
            i = row_for_col[j];
        };

        u[start] += reach;
        for r in 0..n {
            if row_seen[r] && r != start {
                u[r] += reach - dist[col_for_row[r]];
            }
        }
        for c in 0..n {
            if col_seen[c] {
                v[c] -= reach - dist[c];
            }
        }
        let mut j = sink;
        loop {
            let r = path[j];
            row_for_col[j] = r;
            std::mem::swap(&mut col_for_row[r], &mut j);
            if r == start {
                break;
            }
        }
    }
    col_for_row
}

/// Successive-shortest-path min-cost flow on the complete bipartite network
/// `sources → sinks` with uncapacitated forward arcs.
fn min_cost_transport(cost: &Matrix, supply: &[f64], demand: &[f64]) -> Matrix {
    let n = supply.len();
    let m = demand.len();
    let nodes = n + m;
    let mut flow = Matrix::zeros(n, m);
    let mut supply_left = supply.to_vec();
    let mut demand_left = demand.to_vec();
    let mut potential = vec![0.0f64; nodes];
    let mut dist = vec![0.0f64; nodes];
    let mut prev = vec![usize::MAX; nodes];
    let mut done = vec![false; nodes];

    // arc cost between node `from` and `to` in the residual network, if the arc exists
    let arc = |flow: &Matrix, from: usize, to: usize| -> Option<f64> {
        if from < n && to >= n {
            Some(cost[(from, to - n)])
        } else if from >= n && to < n {
            (flow[(to, from - n)] > MASS_TOL).then(|| -cost[(to, from - n)])
        } else {
            None
        }
    };

    loop {
        let any_supply = supply_left.iter().any(|&s| s > MASS_TOL);
        let any_demand = demand_left.iter().any(|&d| d > MASS_TOL);
        if !any_supply || !any_demand {
            break;
        }

        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        prev.iter_mut().for_each(|p| *p = usize::MAX);
        done.iter_mut().for_each(|d| *d = false);
        for i in 0..n {
            if supply_left[i] > MASS_TOL {
                dist[i] = 0.0;
            }
        }

        // dense Dijkstra on reduced costs
        loop {
            let mut best = usize::MAX;
            let mut best_d = f64::INFINITY;
            for v in 0..nodes {
                if !done[v] && dist[v] < best_d {
                    best_d = dist[v];
                    best = v;
                }
            }
            if best == usize::MAX {
                break;
            }
            done[best] = true;
            let range = if best < n { n..nodes } else { 0..n };
            for w in range {
                if done[w] {
                    continue;
                }
                if let Some(c) = arc(&flow, best, w) {
                    let reduced = (c + potential[best] - potential[w]).max(0.0);
                    let cand = best_d + reduced;
                    if cand < dist[w] {
                        dist[w] = cand;
                        prev[w] = best;
                    }
                }
            }
        }

        let mut sink = usize::MAX;
        let mut sink_d = f64::INFINITY;
        for j in 0..m {
            if demand_left[j] > MASS_TOL && dist[n + j] < sink_d {
                sink_d = dist[n + j];
                sink = n + j;
            }
        }
        if sink == usize::MAX {
            // remaining imbalance below tolerance is unreachable; stop
            break;
        }

        for v in 0..nodes {
            potential[v] += dist[v].min(sink_d);
        }

        // bottleneck along the path
        let mut bottleneck = demand_left[sink - n];
        let mut v = sink;
        while prev[v] != usize::MAX {
            let u = prev[v];
            if u >= n {
                bottleneck = bottleneck.min(flow[(v, u - n)]);
            }
            v = u;
        }
        let origin = v;
        bottleneck = bottleneck.min(supply_left[origin]);

        let mut v = sink;
        while prev[v] != usize::MAX {
            let u = prev[v];
            if u < n {
                flow[(u, v - n)] += bottleneck;
            } else {
                let f = &mut flow[(v, u - n)];
                *f -= bottleneck;
                if *f <= MASS_TOL {
                    *f = 0.0;
                }
            }
            v = u;
        }
        supply_left[origin] -= bottleneck;
        demand_left[sink - n] -= bottleneck;
    }
    flow
}
