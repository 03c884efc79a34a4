//! Exact discrete optimal-transport primitives.
//!
//! Three routes to the same worst-case-expectation problem are kept
//! deliberately independent so they can cross-check each other:
//!
//! - [`w1_ball_inf`] — the production solver: worst-case expectation of a
//!   value table over the 1-Wasserstein ball, solved exactly by a
//!   convex-hull greedy on per-atom (cost, value) frontiers (the LP is a
//!   multiple-choice continuous knapsack; the greedy attains its optimum);
//! - [`w1_ball_inf_enumerated`] — a brute-force vertex enumeration of the
//!   same LP, feasible on supports of up to six atoms;
//! - [`lambda_dual_value`] / [`lambda_dual_supremum`] — the Lagrangian
//!   dual of the ball constraint, concave and piecewise linear in the
//!   multiplier.
//!
//! [`wasserstein_1`] solves the full transportation problem between two
//! probability vectors by successive shortest paths.

use crate::{Error, Result};

/// Atoms below this mass are treated as absent.
const MASS_EPS: f64 = 1e-15;

/// Exact 1-Wasserstein distance between two probability vectors under a
/// ground cost `metric[i][j]` (nonnegative, zero diagonal).
///
/// Solves the transportation LP by successive shortest augmenting paths
/// (Bellman-Ford on the residual bipartite graph); exact at desk scale.
pub fn wasserstein_1(p: &[f64], q: &[f64], metric: &[Vec<f64>]) -> Result<f64> {
    if p.len() != q.len() || metric.len() != p.len() {
        return Err(Error::DimensionMismatch(format!(
            "wasserstein_1: p {} q {} metric {}",
            p.len(),
            q.len(),
            metric.len()
        )));
    }
    let sum_p: f64 = p.iter().sum();
    let sum_q: f64 = q.iter().sum();
    if (sum_p - 1.0).abs() > 1e-6 || (sum_q - 1.0).abs() > 1e-6 {
        return Err(Error::NotStochastic {
            context: "wasserstein_1 marginals".into(),
            sum: if (sum_p - 1.0).abs() > (sum_q - 1.0).abs() {
                sum_p
            } else {
                sum_q
            },
        });
    }

    let sup: Vec<usize> = (0..p.len()).filter(|&i| p[i] > MASS_EPS).collect();
    let dem: Vec<usize> = (0..q.len()).filter(|&j| q[j] > MASS_EPS).collect();
    let (m, n) = (sup.len(), dem.len());
    let mut supply: Vec<f64> = sup.iter().map(|&i| p[i]).collect();
    let mut demand: Vec<f64> = dem.iter().map(|&j| q[j]).collect();
    // Normalize away the (tiny) mass mismatch so the problem balances.
    let total: f64 = supply.iter().sum();
    let dtotal: f64 = demand.iter().sum();
    for d in demand.iter_mut() {
        *d *= total / dtotal;
    }

    let cost = |si: usize, dj: usize| metric[sup[si]][dem[dj]];
    let mut flow = vec![vec![0.0f64; n]; m];
    let mut remaining = total;
    let node = |is_demand: bool, k: usize| if is_demand { m + k } else { k };
    let cap = 4 * (m + n) * (m + n) + 64;
    let mut iters = 0usize;

    while remaining > 1e-12 {
        iters += 1;
        if iters > cap {
            return Err(Error::NoConvergence {
                solver: "wasserstein_1",
                sweeps: cap,
                residual: remaining,
            });
        }
        // Multi-source Bellman-Ford from all supplies with residual mass.
        let n_nodes = m + n;
        let mut dist = vec![f64::INFINITY; n_nodes];
        let mut parent = vec![usize::MAX; n_nodes];
        for (si, &s) in supply.iter().enumerate() {
            if s > MASS_EPS {
                dist[si] = 0.0;
            }
        }
        for _ in 0..n_nodes {
            let mut changed = false;
            for si in 0..m {
                if dist[si].is_finite() {
                    for dj in 0..n {
                        let nd = dist[si] + cost(si, dj);
                        if nd < dist[node(true, dj)] - 1e-15 {
                            dist[node(true, dj)] = nd;
                            parent[node(true, dj)] = si;
                            changed = true;
                        }
                    }
                }
            }
            for dj in 0..n {
                if dist[node(true, dj)].is_finite() {
                    for si in 0..m {
                        if flow[si][dj] > MASS_EPS {
                            let nd = dist[node(true, dj)] - cost(si, dj);
                            if nd < dist[si] - 1e-15 {
                                dist[si] = nd;
                                parent[si] = node(true, dj);
                                changed = true;
                            }
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
        // Cheapest reachable demand with residual capacity.
        let mut best: Option<usize> = None;
        for dj in 0..n {
            if demand[dj] > MASS_EPS
                && dist[node(true, dj)].is_finite()
                && best.is_none_or(|b| dist[node(true, dj)] < dist[node(true, b)])
            {
                best = Some(dj);
            }
        }
        let Some(end) = best else {
            return Err(Error::NoConvergence {
                solver: "wasserstein_1",
                sweeps: iters,
                residual: remaining,
            });
        };
        // Walk parents back to a residual supply (the only nodes seeded
        // with distance 0 and no parent).
        let mut cur = node(true, end);
        let mut path = vec![cur];
        while parent[cur] != usize::MAX {
            cur = parent[cur];
            path.push(cur);
        }
        path.reverse();
        let start = path[0];
        let mut delta = supply[start].min(demand[end]);
        for w in path.windows(2) {
            if w[0] >= m {
                // demand -> supply reverse arc, bounded by the flow on it
                delta = delta.min(flow[w[1]][w[0] - m]);
            }
        }
        if delta <= MASS_EPS {
            return Err(Error::NoConvergence {
                solver: "wasserstein_1",
                sweeps: iters,
                residual: remaining,
            });
        }
        for w in path.windows(2) {
            if w[0] < m {
                flow[w[0]][w[1] - m] += delta;
            } else {
                flow[w[1]][w[0] - m] -= delta;
            }
        }
        supply[start] -= delta;
        demand[end] -= delta;
        remaining -= delta;
    }

    let mut total_cost = 0.0;
    for si in 0..m {
        for dj in 0..n {
            if flow[si][dj] > 0.0 {
                total_cost += flow[si][dj] * cost(si, dj);
            }
        }
    }
    Ok(total_cost)
}

/// Worst-case expectation `min { E_q[v] : W1(q, p) <= eps }`, solved
/// exactly.
///
/// Per source atom the reachable (transport cost, value) pairs form a
/// staircase; only its lower convex hull matters, and mass slides along
/// hull segments in order of value-drop per unit cost. Sorting all
/// segments globally by that ratio and spending the budget greedily is
/// exact for this LP.
pub fn w1_ball_inf(p: &[f64], v: &[f64], metric: &[Vec<f64>], eps: f64) -> Result<f64> {
    if eps < 0.0 {
        return Err(Error::BadParameter(format!("eps {eps} must be >= 0")));
    }
    if p.len() != v.len() || metric.len() != p.len() {
        return Err(Error::DimensionMismatch(format!(
            "w1_ball_inf: p {} v {} metric {}",
            p.len(),
            v.len(),
            metric.len()
        )));
    }

    struct Segment {
        ratio: f64,
        max_budget: f64,
    }
    let mut base_value = 0.0;
    let mut segments: Vec<Segment> = Vec::new();
    for (i, &mass) in p.iter().enumerate() {
        if mass <= MASS_EPS {
            continue;
        }
        let hull = frontier_hull(i, v, metric);
        base_value += mass * hull[0].1;
        for w in hull.windows(2) {
            let (d0, v0) = w[0];
            let (d1, v1) = w[1];
            segments.push(Segment {
                ratio: (v0 - v1) / (d1 - d0),
                max_budget: mass * (d1 - d0),
            });
        }
    }
    segments.sort_by(|a, b| b.ratio.total_cmp(&a.ratio));

    let mut budget = eps;
    let mut value = base_value;
    for seg in &segments {
        if budget <= 0.0 {
            break;
        }
        let use_budget = budget.min(seg.max_budget);
        value -= use_budget * seg.ratio;
        budget -= use_budget;
    }
    Ok(value)
}

/// Lower convex hull of the (distance, value) frontier reachable from
/// source state `i`. The first point has distance 0 (the metric diagonal
/// is zero) and the best value among zero-distance states; values
/// strictly decrease along the hull.
fn frontier_hull(i: usize, v: &[f64], metric: &[Vec<f64>]) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = (0..v.len()).map(|j| (metric[i][j], v[j])).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    // Staircase: strictly increasing distance, strictly decreasing value.
    let mut stair: Vec<(f64, f64)> = Vec::new();
    for (d, val) in pts {
        match stair.last() {
            None => stair.push((d, val)),
            Some(&(_, lv)) if val < lv => stair.push((d, val)),
            _ => {}
        }
    }
    if stair.len() <= 2 {
        return stair;
    }
    // Andrew monotone chain, lower hull.
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(stair.len());
    for pt in stair {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], pt) <= 0.0 {
            hull.pop();
        }
        hull.push(pt);
    }
    hull
}

/// Brute-force oracle for [`w1_ball_inf`] on small supports: enumerates
/// the vertices of the knapsack LP (pure per-atom destination assignments,
/// plus tight-budget assignments with one atom split over two
/// destinations). Exact, and independent of the greedy path.
pub fn w1_ball_inf_enumerated(
    p: &[f64],
    v: &[f64],
    metric: &[Vec<f64>],
    eps: f64,
) -> Result<f64> {
    if eps < 0.0 {
        return Err(Error::BadParameter(format!("eps {eps} must be >= 0")));
    }
    let atoms: Vec<(usize, f64)> = p
        .iter()
        .enumerate()
        .filter(|(_, &m)| m > MASS_EPS)
        .map(|(i, &m)| (i, m))
        .collect();
    let m = atoms.len();
    let n = v.len();
    if m > 6 || n > 8 {
        return Err(Error::BadParameter(format!(
            "enumeration oracle limited to supports <= 6 and <= 8 states, got {m} atoms over {n} states"
        )));
    }

    let mut best = f64::INFINITY;
    let mut assignment = vec![0usize; m];
    // Case (a): every atom ships to a single destination.
    loop {
        let mut cost = 0.0;
        let mut value = 0.0;
        for (k, &(i, mass)) in atoms.iter().enumerate() {
            cost += mass * metric[i][assignment[k]];
            value += mass * v[assignment[k]];
        }
        if cost <= eps + 1e-12 {
            best = best.min(value);
        }
        // Case (b): additionally split atom k between assignment[k] and j2
        // so that the budget is exactly tight.
        for (k, &(i, mass)) in atoms.iter().enumerate() {
            let j1 = assignment[k];
            let cost_rest = cost - mass * metric[i][j1];
            let value_rest = value - mass * v[j1];
            for j2 in 0..n {
                if j2 == j1 {
                    continue;
                }
                let (d1, d2) = (metric[i][j1], metric[i][j2]);
                if (d1 - d2).abs() <= 1e-15 {
                    continue;
                }
                // t*d1 + (mass-t)*d2 = eps - cost_rest
                let t = (eps - cost_rest - mass * d2) / (d1 - d2);
                if t >= -1e-12 && t <= mass + 1e-12 {
                    let t = t.clamp(0.0, mass);
                    best = best.min(value_rest + t * v[j1] + (mass - t) * v[j2]);
                }
            }
        }
        // Advance the mixed-radix counter over assignments.
        let mut k = 0;
        loop {
            if k == m {
                return Ok(best);
            }
            assignment[k] += 1;
            if assignment[k] < n {
                break;
            }
            assignment[k] = 0;
            k += 1;
        }
    }
}

/// Per-sample state-ball value `E_{s' ~ p}[ min_{d(s', sbar) <= eps} v(sbar) ]`.
///
/// The pushforward of each atom stays within the ball, so this always
/// upper-bounds [`w1_ball_inf`] at the same radius.
pub fn per_sample_ball_value(p: &[f64], v: &[f64], metric: &[Vec<f64>], eps: f64) -> Result<f64> {
    if eps < 0.0 {
        return Err(Error::BadParameter(format!("eps {eps} must be >= 0")));
    }
    let mut total = 0.0;
    for (i, &mass) in p.iter().enumerate() {
        if mass <= MASS_EPS {
            continue;
        }
        let mut m = f64::INFINITY;
        for j in 0..v.len() {
            if metric[i][j] <= eps {
                m = m.min(v[j]);
            }
        }
        total += mass * m;
    }
    Ok(total)
}

/// Lagrangian dual of the Wasserstein-ball worst case at multiplier `lam`:
/// `E_{s' ~ p}[ min_sbar ( v(sbar) + lam * d(s', sbar) ) ] - lam * eps`.
pub fn lambda_dual_value(
    p: &[f64],
    v: &[f64],
    metric: &[Vec<f64>],
    eps: f64,
    lam: f64,
) -> Result<f64> {
    if lam < 0.0 {
        return Err(Error::BadParameter(format!("lam {lam} must be >= 0")));
    }
    let mut total = 0.0;
    for (i, &mass) in p.iter().enumerate() {
        if mass <= MASS_EPS {
            continue;
        }
        let mut best = f64::INFINITY;
        for j in 0..v.len() {
            best = best.min(v[j] + lam * metric[i][j]);
        }
        total += mass * best;
    }
    Ok(total - lam * eps)
}

/// Supremum of [`lambda_dual_value`] over the multiplier, located by
/// ternary search on `[0, lam_max]` with
/// `lam_max = (max v - min v) / min positive distance`. The dual is
/// concave piecewise-linear in the multiplier, so the search converges to
/// its plateau. Returns `(lam_star, value)`.
pub fn lambda_dual_supremum(
    p: &[f64],
    v: &[f64],
    metric: &[Vec<f64>],
    eps: f64,
) -> Result<(f64, f64)> {
    let vmax = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let vmin = v.iter().copied().fold(f64::INFINITY, f64::min);
    let mut dmin = f64::INFINITY;
    for row in metric {
        for &d in row {
            if d > 0.0 {
                dmin = dmin.min(d);
            }
        }
    }
    let lam_max = if dmin.is_finite() && vmax > vmin {
        (vmax - vmin) / dmin
    } else {
        0.0
    };
    let eval = |lam: f64| lambda_dual_value(p, v, metric, eps, lam);
    if lam_max == 0.0 {
        return Ok((0.0, eval(0.0)?));
    }
    let (mut lo, mut hi) = (0.0f64, lam_max);
    for _ in 0..300 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        let f1 = eval(m1)?;
        let f2 = eval(m2)?;
        if f1 < f2 {
            lo = m1;
        } else if f2 < f1 {
            hi = m2;
        } else {
            lo = m1;
            hi = m2;
        }
    }
    let lam_star = 0.5 * (lo + hi);
    let mut best = (lam_star, eval(lam_star)?);
    for cand in [0.0, lam_max] {
        let val = eval(cand)?;
        if val > best.1 {
            best = (cand, val);
        }
    }
    Ok(best)
}
