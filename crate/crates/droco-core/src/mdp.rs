//! Finite MDPs, value tables, and exact planning oracles.
//!
//! The [`FiniteMdp`] carries the full six-tuple (state and action counts,
//! transition kernel, reward table, discount, initial distribution) plus a
//! state pseudo-metric used by every robustness construction. All solvers
//! here are exact fixed-point iterations with a sup-norm stopping rule.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Tolerance under which a probability row counts as stochastic.
pub const STOCHASTIC_TOL: f64 = 1e-9;

/// Default sup-norm stopping tolerance for fixed-point solvers.
pub const SOLVER_TOL: f64 = 1e-10;

/// Sweep budget after which a fixed-point solver reports non-convergence.
pub const MAX_SWEEPS: usize = 100_000;

/// A finite Markov decision process with an explicit state pseudo-metric.
///
/// Invariants (enforced by [`FiniteMdp::validate`]):
/// - every `kernel[s][a]` row is a probability vector (sums to 1 within
///   [`STOCHASTIC_TOL`], no negative entries), as is `init_dist`;
/// - `|reward[s][a]| <= r_max`;
/// - `metric` is symmetric with a zero diagonal and nonnegative entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteMdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// `kernel[s][a][s']` — transition probability.
    pub kernel: Vec<Vec<Vec<f64>>>,
    /// `reward[s][a]` — bounded reward.
    pub reward: Vec<Vec<f64>>,
    pub r_max: f64,
    pub gamma: f64,
    /// Initial state distribution.
    pub init_dist: Vec<f64>,
    /// `metric[s1][s2]` — state pseudo-metric `d`.
    pub metric: Vec<Vec<f64>>,
}

impl FiniteMdp {
    /// Check every structural invariant, reporting the first violation.
    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 || self.n_actions == 0 {
            return Err(Error::InvalidMdp("empty state or action space".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidMdp(format!(
                "gamma {} not in (0,1)",
                self.gamma
            )));
        }
        if self.r_max <= 0.0 || self.r_max.is_nan() {
            return Err(Error::InvalidMdp(format!("r_max {} not positive", self.r_max)));
        }
        if self.kernel.len() != self.n_states || self.reward.len() != self.n_states {
            return Err(Error::InvalidMdp("kernel/reward state dimension mismatch".into()));
        }
        for s in 0..self.n_states {
            if self.kernel[s].len() != self.n_actions || self.reward[s].len() != self.n_actions {
                return Err(Error::InvalidMdp(format!(
                    "kernel/reward action dimension mismatch at state {s}"
                )));
            }
            for a in 0..self.n_actions {
                check_prob_row(&self.kernel[s][a], self.n_states, &format!("kernel[{s}][{a}]"))?;
                let r = self.reward[s][a];
                if !r.is_finite() || r.abs() > self.r_max + 1e-12 {
                    return Err(Error::InvalidMdp(format!(
                        "reward[{s}][{a}] = {r} outside [-{0}, {0}]",
                        self.r_max
                    )));
                }
            }
        }
        check_prob_row(&self.init_dist, self.n_states, "init_dist")?;
        if self.metric.len() != self.n_states {
            return Err(Error::InvalidMdp("metric dimension mismatch".into()));
        }
        for i in 0..self.n_states {
            if self.metric[i].len() != self.n_states {
                return Err(Error::InvalidMdp(format!("metric row {i} dimension mismatch")));
            }
            if self.metric[i][i] != 0.0 {
                return Err(Error::InvalidMdp(format!(
                    "metric diagonal nonzero at ({i},{i}): {}",
                    self.metric[i][i]
                )));
            }
            for j in 0..self.n_states {
                let d = self.metric[i][j];
                if !d.is_finite() || d < 0.0 {
                    return Err(Error::InvalidMdp(format!("metric[{i}][{j}] = {d} negative")));
                }
                if (d - self.metric[j][i]).abs() > 1e-12 {
                    return Err(Error::InvalidMdp(format!(
                        "metric not symmetric at ({i},{j}): {d} vs {}",
                        self.metric[j][i]
                    )));
                }
            }
        }
        Ok(())
    }

    /// Largest metric entry.
    pub fn diameter(&self) -> f64 {
        self.metric
            .iter()
            .flat_map(|row| row.iter().copied())
            .fold(0.0, f64::max)
    }

    /// Upper bound `r_max / (1 - gamma)` on any admissible |Q| or |V|.
    pub fn value_bound(&self) -> f64 {
        self.r_max / (1.0 - self.gamma)
    }

    /// Serialize to a JSON document with explicit field names.
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text)?;
        Ok(())
    }

    /// Load from the JSON document written by [`FiniteMdp::save_json`]
    /// and validate it.
    pub fn load_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mdp: FiniteMdp = serde_json::from_str(&text)?;
        mdp.validate()?;
        Ok(mdp)
    }
}

fn check_prob_row(row: &[f64], n: usize, context: &str) -> Result<()> {
    if row.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{context}: length {} expected {n}",
            row.len()
        )));
    }
    let mut sum = 0.0;
    for (i, &p) in row.iter().enumerate() {
        if !p.is_finite() || p < 0.0 {
            return Err(Error::InvalidMdp(format!("{context}[{i}] = {p} negative")));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::NotStochastic {
            context: context.to_string(),
            sum,
        });
    }
    Ok(())
}

/// State-action value table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularQ {
    /// `values[s][a]`.
    pub values: Vec<Vec<f64>>,
}

impl TabularQ {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            values: vec![vec![0.0; n_actions]; n_states],
        }
    }

    pub fn constant(n_states: usize, n_actions: usize, value: f64) -> Self {
        Self {
            values: vec![vec![value; n_actions]; n_states],
        }
    }

    pub fn n_states(&self) -> usize {
        self.values.len()
    }

    pub fn n_actions(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    /// Sup-norm distance to another table of the same shape.
    pub fn sup_distance(&self, other: &TabularQ) -> f64 {
        let mut d: f64 = 0.0;
        for (row_a, row_b) in self.values.iter().zip(&other.values) {
            for (a, b) in row_a.iter().zip(row_b) {
                d = d.max((a - b).abs());
            }
        }
        d
    }

    /// Largest absolute entry.
    pub fn sup_norm(&self) -> f64 {
        self.values
            .iter()
            .flat_map(|r| r.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Export as CSV with columns `state,action,q_value`.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("state,action,q_value\n");
        for (s, row) in self.values.iter().enumerate() {
            for (a, q) in row.iter().enumerate() {
                out.push_str(&format!("{s},{a},{q}\n"));
            }
        }
        fs::write(path, out)?;
        Ok(())
    }
}

/// State value table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularV {
    /// `values[s]`.
    pub values: Vec<f64>,
}

impl TabularV {
    pub fn zeros(n_states: usize) -> Self {
        Self {
            values: vec![0.0; n_states],
        }
    }

    pub fn sup_distance(&self, other: &TabularV) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Stochastic policy table; each row is a distribution over actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    /// `probs[s][a]`.
    pub probs: Vec<Vec<f64>>,
}

impl TabularPolicy {
    /// Uniform policy over all actions.
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            probs: vec![vec![1.0 / n_actions as f64; n_actions]; n_states],
        }
    }

    /// Deterministic policy from an action per state.
    pub fn deterministic(actions: &[usize], n_actions: usize) -> Self {
        let probs = actions
            .iter()
            .map(|&a| {
                let mut row = vec![0.0; n_actions];
                row[a] = 1.0;
                row
            })
            .collect();
        Self { probs }
    }

    /// Check each row is a distribution within [`STOCHASTIC_TOL`].
    pub fn validate(&self, n_states: usize, n_actions: usize) -> Result<()> {
        if self.probs.len() != n_states {
            return Err(Error::DimensionMismatch(format!(
                "policy has {} states, expected {n_states}",
                self.probs.len()
            )));
        }
        for (s, row) in self.probs.iter().enumerate() {
            check_prob_row(row, n_actions, &format!("policy[{s}]"))?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Exact planning oracles
// ---------------------------------------------------------------------------

/// Exact policy evaluation: returns `V` with Bellman residual
/// `||V - T^pi V||_inf <= tol` at every state.
pub fn policy_eval_exact(mdp: &FiniteMdp, pi: &TabularPolicy, tol: f64) -> Result<TabularV> {
    if tol <= 0.0 {
        return Err(Error::BadParameter(format!("tol {tol} must be > 0")));
    }
    pi.validate(mdp.n_states, mdp.n_actions)?;
    let mut v = vec![0.0; mdp.n_states];
    for sweep in 0..MAX_SWEEPS {
        let mut next = vec![0.0; mdp.n_states];
        let mut delta: f64 = 0.0;
        for s in 0..mdp.n_states {
            let mut val = 0.0;
            for a in 0..mdp.n_actions {
                let pa = pi.probs[s][a];
                if pa == 0.0 {
                    continue;
                }
                let mut ev = 0.0;
                for (sp, &p) in mdp.kernel[s][a].iter().enumerate() {
                    if p > 0.0 {
                        ev += p * v[sp];
                    }
                }
                val += pa * (mdp.reward[s][a] + mdp.gamma * ev);
            }
            delta = delta.max((val - v[s]).abs());
            next[s] = val;
        }
        v = next;
        // One extra application shrinks the residual of the returned table
        // below gamma * delta <= tol.
        if delta <= tol {
            return Ok(TabularV { values: v });
        }
        let _ = sweep;
    }
    Err(Error::NoConvergence {
        solver: "policy_eval_exact",
        sweeps: MAX_SWEEPS,
        residual: f64::NAN,
    })
}

/// Expected discounted return from the initial distribution under `pi`.
pub fn policy_return(mdp: &FiniteMdp, pi: &TabularPolicy, tol: f64) -> Result<f64> {
    let v = policy_eval_exact(mdp, pi, tol)?;
    Ok(mdp
        .init_dist
        .iter()
        .zip(&v.values)
        .map(|(p, v)| p * v)
        .sum())
}

/// Fixed point of the support-restricted optimal Bellman backup
/// `Q(s,a) <- r + gamma * E_{s'}[ max_{a' in support(s')} Q(s',a') ]`.
///
/// With full supports this is standard optimal value iteration; with
/// singleton supports it evaluates that deterministic policy.
pub fn optimal_q_in_sample(
    mdp: &FiniteMdp,
    support: &[Vec<usize>],
    tol: f64,
) -> Result<TabularQ> {
    if tol <= 0.0 {
        return Err(Error::BadParameter(format!("tol {tol} must be > 0")));
    }
    if support.len() != mdp.n_states {
        return Err(Error::DimensionMismatch(format!(
            "support has {} states, expected {}",
            support.len(),
            mdp.n_states
        )));
    }
    for (s, acts) in support.iter().enumerate() {
        if acts.is_empty() {
            return Err(Error::EmptySupport { state: s });
        }
        if acts.iter().any(|&a| a >= mdp.n_actions) {
            return Err(Error::BadParameter(format!("support[{s}] holds an action out of range")));
        }
    }
    let mut q = TabularQ::zeros(mdp.n_states, mdp.n_actions);
    for _ in 0..MAX_SWEEPS {
        let vmax: Vec<f64> = (0..mdp.n_states)
            .map(|s| {
                support[s]
                    .iter()
                    .map(|&a| q.values[s][a])
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let mut delta: f64 = 0.0;
        let mut next = TabularQ::zeros(mdp.n_states, mdp.n_actions);
        for s in 0..mdp.n_states {
            for a in 0..mdp.n_actions {
                let mut ev = 0.0;
                for (sp, &p) in mdp.kernel[s][a].iter().enumerate() {
                    if p > 0.0 {
                        ev += p * vmax[sp];
                    }
                }
                let val = mdp.reward[s][a] + mdp.gamma * ev;
                delta = delta.max((val - q.values[s][a]).abs());
                next.values[s][a] = val;
            }
        }
        q = next;
        if delta <= tol {
            return Ok(q);
        }
    }
    Err(Error::NoConvergence {
        solver: "optimal_q_in_sample",
        sweeps: MAX_SWEEPS,
        residual: f64::NAN,
    })
}

/// Standard optimal Q via value iteration (all actions admissible).
pub fn optimal_q(mdp: &FiniteMdp, tol: f64) -> Result<TabularQ> {
    let full: Vec<Vec<usize>> = (0..mdp.n_states)
        .map(|_| (0..mdp.n_actions).collect())
        .collect();
    optimal_q_in_sample(mdp, &full, tol)
}

/// Greedy deterministic policy with lowest-index tie-breaking.
pub fn greedy_policy(q: &TabularQ) -> TabularPolicy {
    let actions: Vec<usize> = q
        .values
        .iter()
        .map(|row| argmax_lowest(row.iter().copied()))
        .collect();
    TabularPolicy::deterministic(&actions, q.n_actions())
}

/// Greedy policy restricted to per-state supports (lowest index wins ties).
pub fn greedy_policy_in_support(q: &TabularQ, support: &[Vec<usize>]) -> TabularPolicy {
    let n_actions = q.n_actions();
    let actions: Vec<usize> = q
        .values
        .iter()
        .zip(support)
        .map(|(row, acts)| {
            let mut best = acts[0];
            for &a in acts {
                if row[a] > row[best] {
                    best = a;
                }
            }
            best
        })
        .collect();
    TabularPolicy::deterministic(&actions, n_actions)
}

/// Index of the maximum, lowest index on ties.
pub fn argmax_lowest(values: impl Iterator<Item = f64>) -> usize {
    let mut best_i = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_v {
            best_v = v;
            best_i = i;
        }
    }
    best_i
}

/// Largest ratio `|Q(s1,a) - Q(s2,a)| / d(s1,s2)` over actions and state
/// pairs with positive distance.
pub fn lipschitz_constant(q: &TabularQ, metric: &[Vec<f64>]) -> Result<f64> {
    let n = q.n_states();
    let mut best: f64 = 0.0;
    let mut any_positive = false;
    for s1 in 0..n {
        for s2 in (s1 + 1)..n {
            let d = metric[s1][s2];
            if d <= 0.0 {
                continue;
            }
            any_positive = true;
            for a in 0..q.n_actions() {
                best = best.max((q.values[s1][a] - q.values[s2][a]).abs() / d);
            }
        }
    }
    if !any_positive {
        return Err(Error::BadParameter(
            "metric has no strictly positive off-diagonal entry".into(),
        ));
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state_mdp() -> FiniteMdp {
        FiniteMdp {
            n_states: 2,
            n_actions: 2,
            kernel: vec![
                vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                vec![vec![0.5, 0.5], vec![0.0, 1.0]],
            ],
            reward: vec![vec![0.0, 0.5], vec![1.0, -1.0]],
            r_max: 1.0,
            gamma: 0.9,
            init_dist: vec![1.0, 0.0],
            metric: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
        }
    }

    #[test]
    fn validate_accepts_well_formed_mdp() {
        two_state_mdp().validate().unwrap();
    }

    #[test]
    fn validate_rejects_non_stochastic_row() {
        let mut mdp = two_state_mdp();
        mdp.kernel[0][0] = vec![0.5, 0.4];
        let err = mdp.validate().unwrap_err();
        assert!(matches!(err, Error::NotStochastic { .. }), "{err}");
    }

    #[test]
    fn validate_rejects_asymmetric_metric() {
        let mut mdp = two_state_mdp();
        mdp.metric[0][1] = 2.0;
        let err = mdp.validate().unwrap_err();
        assert!(err.to_string().contains("not symmetric"), "{err}");
    }

    #[test]
    fn validate_rejects_reward_above_r_max() {
        let mut mdp = two_state_mdp();
        mdp.reward[1][0] = 3.0;
        assert!(mdp.validate().is_err());
    }

    #[test]
    fn single_state_geometric_series() {
        let mdp = FiniteMdp {
            n_states: 1,
            n_actions: 1,
            kernel: vec![vec![vec![1.0]]],
            reward: vec![vec![1.0]],
            r_max: 1.0,
            gamma: 0.9,
            init_dist: vec![1.0],
            metric: vec![vec![0.0]],
        };
        let pi = TabularPolicy::uniform(1, 1);
        let v = policy_eval_exact(&mdp, &pi, 1e-12).unwrap();
        assert!((v.values[0] - 10.0).abs() < 1e-8);
    }

    #[test]
    fn zero_reward_mdp_evaluates_to_zero() {
        let mut mdp = two_state_mdp();
        mdp.reward = vec![vec![0.0; 2]; 2];
        let v = policy_eval_exact(&mdp, &TabularPolicy::uniform(2, 2), 1e-12).unwrap();
        assert!(v.values.iter().all(|x| x.abs() < 1e-12));
    }

    /// Three-state chain, absorbing goal with self-reward 1, gamma 0.5,
    /// deterministic right-moving policy. Expected values frozen from a
    /// hand value-iteration oracle run to convergence:
    /// V(2) = 1/(1-0.5) = 2, V(1) = 0.5*2 = 1, V(0) = 0.5*1 = 0.5.
    #[test]
    fn chain_policy_eval_matches_hand_iteration() {
        let mdp = chain_mdp();
        let pi = TabularPolicy::deterministic(&[1, 1, 1], 2);
        let v = policy_eval_exact(&mdp, &pi, 1e-12).unwrap();
        let oracle = chain_oracle(&mdp, &[1, 1, 1]);
        for s in 0..3 {
            assert!((v.values[s] - oracle[s]).abs() < 1e-9);
        }
        assert!((v.values[0] - 0.5).abs() < 1e-9);
        assert!((v.values[1] - 1.0).abs() < 1e-9);
        assert!((v.values[2] - 2.0).abs() < 1e-9);
    }

    /// Chain with actions {stay=0, right=1}; state 2 absorbing with reward 1.
    fn chain_mdp() -> FiniteMdp {
        let row = |sp: usize| {
            let mut r = vec![0.0; 3];
            r[sp] = 1.0;
            r
        };
        FiniteMdp {
            n_states: 3,
            n_actions: 2,
            kernel: vec![
                vec![row(0), row(1)],
                vec![row(1), row(2)],
                vec![row(2), row(2)],
            ],
            reward: vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![1.0, 1.0]],
            r_max: 1.0,
            gamma: 0.5,
            init_dist: vec![1.0, 0.0, 0.0],
            metric: vec![
                vec![0.0, 1.0, 2.0],
                vec![1.0, 0.0, 1.0],
                vec![2.0, 1.0, 0.0],
            ],
        }
    }

    /// Plain synchronous value iteration for a fixed deterministic policy,
    /// independent of the solver under test.
    fn chain_oracle(mdp: &FiniteMdp, actions: &[usize]) -> Vec<f64> {
        let mut v = vec![0.0; mdp.n_states];
        for _ in 0..10_000 {
            let mut next = vec![0.0; mdp.n_states];
            for s in 0..mdp.n_states {
                let a = actions[s];
                let ev: f64 = mdp.kernel[s][a]
                    .iter()
                    .enumerate()
                    .map(|(sp, p)| p * v[sp])
                    .sum();
                next[s] = mdp.reward[s][a] + mdp.gamma * ev;
            }
            v = next;
        }
        v
    }

    #[test]
    fn bellman_residual_below_tol_everywhere() {
        let mdp = two_state_mdp();
        let pi = TabularPolicy::uniform(2, 2);
        let tol = 1e-8;
        let v = policy_eval_exact(&mdp, &pi, tol).unwrap();
        for s in 0..mdp.n_states {
            let mut backup = 0.0;
            for a in 0..mdp.n_actions {
                let ev: f64 = mdp.kernel[s][a]
                    .iter()
                    .enumerate()
                    .map(|(sp, p)| p * v.values[sp])
                    .sum();
                backup += pi.probs[s][a] * (mdp.reward[s][a] + mdp.gamma * ev);
            }
            assert!((backup - v.values[s]).abs() <= tol);
        }
    }

    #[test]
    fn in_sample_with_full_support_is_standard_optimal() {
        let mdp = two_state_mdp();
        let full: Vec<Vec<usize>> = vec![vec![0, 1]; 2];
        let q_full = optimal_q_in_sample(&mdp, &full, 1e-12).unwrap();
        let q_std = optimal_q(&mdp, 1e-12).unwrap();
        assert!(q_full.sup_distance(&q_std) < 1e-12);
    }

    #[test]
    fn in_sample_with_singleton_support_matches_policy_eval() {
        let mdp = two_state_mdp();
        let support = vec![vec![1], vec![0]];
        let q = optimal_q_in_sample(&mdp, &support, 1e-12).unwrap();
        let pi = TabularPolicy::deterministic(&[1, 0], 2);
        let v = policy_eval_exact(&mdp, &pi, 1e-12).unwrap();
        for s in 0..2 {
            let a = [1usize, 0][s];
            assert!((q.values[s][a] - v.values[s]).abs() < 1e-8);
        }
    }

    /// Four-state line where the support excludes the optimal action at one
    /// state; oracle = brute force over all support-respecting deterministic
    /// policies.
    #[test]
    fn in_sample_matches_brute_force_over_supported_policies() {
        let row = |sp: usize| {
            let mut r = vec![0.0; 4];
            r[sp] = 1.0;
            r
        };
        // Actions: 0 = left, 1 = right; state 3 absorbing with reward 1.
        let mdp = FiniteMdp {
            n_states: 4,
            n_actions: 2,
            kernel: vec![
                vec![row(0), row(1)],
                vec![row(0), row(2)],
                vec![row(1), row(3)],
                vec![row(3), row(3)],
            ],
            reward: vec![
                vec![0.0, 0.0],
                vec![0.0, 0.0],
                vec![0.0, 0.0],
                vec![1.0, 1.0],
            ],
            r_max: 1.0,
            gamma: 0.8,
            init_dist: vec![1.0, 0.0, 0.0, 0.0],
            metric: (0..4)
                .map(|i| (0..4).map(|j| (i as f64 - j as f64).abs()).collect())
                .collect(),
        };
        // State 1 may only move left: the optimal "right" action is excluded.
        let support: Vec<Vec<usize>> = vec![vec![0, 1], vec![0], vec![0, 1], vec![0, 1]];
        let q = optimal_q_in_sample(&mdp, &support, 1e-12).unwrap();

        // Brute force: enumerate supported deterministic policies, evaluate
        // each exactly, take the pointwise max of V, then one backup.
        let mut v_star = [f64::NEG_INFINITY; 4];
        let choices: Vec<Vec<usize>> = support.clone();
        let mut assignment = vec![0usize; 4];
        enumerate_policies(&choices, 0, &mut assignment, &mut |acts| {
            let pi = TabularPolicy::deterministic(acts, 2);
            let v = policy_eval_exact(&mdp, &pi, 1e-13).unwrap();
            for s in 0..4 {
                v_star[s] = v_star[s].max(v.values[s]);
            }
        });
        for s in 0..4 {
            for a in 0..2 {
                let ev: f64 = mdp.kernel[s][a]
                    .iter()
                    .enumerate()
                    .map(|(sp, p)| p * v_star[sp])
                    .sum();
                let expect = mdp.reward[s][a] + mdp.gamma * ev;
                assert!(
                    (q.values[s][a] - expect).abs() < 1e-7,
                    "Q({s},{a}) = {} vs brute force {expect}",
                    q.values[s][a]
                );
            }
        }
    }

    fn enumerate_policies(
        choices: &[Vec<usize>],
        s: usize,
        assignment: &mut Vec<usize>,
        visit: &mut impl FnMut(&[usize]),
    ) {
        if s == choices.len() {
            visit(assignment);
            return;
        }
        for &a in &choices[s] {
            assignment[s] = a;
            enumerate_policies(choices, s + 1, assignment, visit);
        }
    }

    #[test]
    fn empty_support_rejected() {
        let mdp = two_state_mdp();
        let support = vec![vec![0], Vec::new()];
        assert!(matches!(
            optimal_q_in_sample(&mdp, &support, 1e-10),
            Err(Error::EmptySupport { state: 1 })
        ));
    }

    #[test]
    fn lipschitz_constant_examples() {
        let metric: Vec<Vec<f64>> = (0..5)
            .map(|i| (0..5).map(|j| (i as f64 - j as f64).abs()).collect())
            .collect();
        let constant = TabularQ::constant(5, 2, 3.0);
        assert_eq!(lipschitz_constant(&constant, &metric).unwrap(), 0.0);

        let linear = TabularQ {
            values: (0..5).map(|s| vec![s as f64, s as f64]).collect(),
        };
        assert!((lipschitz_constant(&linear, &metric).unwrap() - 1.0).abs() < 1e-12);

        // Exhaustive pair scan is itself the oracle on a random table.
        let q = TabularQ {
            values: vec![
                vec![0.3, -1.2],
                vec![2.0, 0.1],
                vec![-0.7, 0.9],
                vec![1.4, -2.2],
                vec![0.0, 0.5],
            ],
        };
        let k = lipschitz_constant(&q, &metric).unwrap();
        let mut expect: f64 = 0.0;
        for s1 in 0..5 {
            for s2 in 0..5 {
                if s1 == s2 {
                    continue;
                }
                for a in 0..2 {
                    expect = expect
                        .max((q.values[s1][a] - q.values[s2][a]).abs() / metric[s1][s2]);
                }
            }
        }
        assert_eq!(k, expect);
    }

    #[test]
    fn lipschitz_requires_positive_distance() {
        let q = TabularQ::zeros(2, 1);
        let metric = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        assert!(lipschitz_constant(&q, &metric).is_err());
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mdp.json");
        let mdp = two_state_mdp();
        mdp.save_json(&path).unwrap();
        let back = FiniteMdp::load_json(&path).unwrap();
        assert_eq!(mdp, back);
    }

    #[test]
    fn q_table_csv_export() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.csv");
        let q = TabularQ {
            values: vec![vec![1.5, -2.0], vec![0.0, 3.25]],
        };
        q.save_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "state,action,q_value\n0,0,1.5\n0,1,-2\n1,0,0\n1,1,3.25\n");
    }
}
