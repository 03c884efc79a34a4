//! Bellman backups and their fixed points.
//!
//! Five backup families share one shape — `Q'(s,a) = r(s,a) + gamma *
//! (expected continuation)` — and differ in the continuation:
//!
//! - standard: max over all actions at the realized next state;
//! - in-sample: max restricted to the empirical behavior support;
//! - robust exact: worst case of the in-sample value over the
//!   1-Wasserstein ball around the source kernel row;
//! - robust practical: worst case over the per-sample state ball
//!   `U_eps(s') = { sbar : d(s', sbar) <= eps }` around each realized
//!   next state;
//! - ensemble: per-record targets taking the min over ensemble-member
//!   next-state samples (the data-driven form of the practical backup).
//!
//! Every backup is a sup-norm gamma-contraction on Q tables, so the
//! kernel-driven ones admit unique fixed points.

use std::collections::HashSet;

use crate::data::OfflineDataset;
use crate::ensemble::EnsembleDynamics;
use crate::mdp::{FiniteMdp, TabularQ, MAX_SWEEPS};
use crate::seeding::stream_seed;
use crate::transport::w1_ball_inf;
use crate::{Error, Result};

/// Per-state admissible action sets (the empirical behavior support).
#[derive(Debug, Clone, PartialEq)]
pub struct SupportMask {
    sets: Vec<Vec<usize>>,
    member: Vec<Vec<bool>>,
}

impl SupportMask {
    pub fn from_sets(sets: Vec<Vec<usize>>, n_actions: usize) -> Self {
        let member = sets
            .iter()
            .map(|acts| {
                let mut row = vec![false; n_actions];
                for &a in acts {
                    row[a] = true;
                }
                row
            })
            .collect();
        Self { sets, member }
    }

    /// All actions admissible everywhere.
    pub fn full(n_states: usize, n_actions: usize) -> Self {
        Self::from_sets(vec![(0..n_actions).collect(); n_states], n_actions)
    }

    /// Support observed in a dataset; states without visits get empty sets.
    pub fn from_dataset(ds: &OfflineDataset) -> Self {
        Self::from_sets(ds.support_sets(), ds.n_actions)
    }

    /// Support observed in a dataset, with unvisited states falling back
    /// to the full action set (keeps analysis-mode operators total).
    pub fn from_dataset_or_full(ds: &OfflineDataset) -> Self {
        let sets = ds
            .support_sets()
            .into_iter()
            .map(|acts| {
                if acts.is_empty() {
                    (0..ds.n_actions).collect()
                } else {
                    acts
                }
            })
            .collect();
        Self::from_sets(sets, ds.n_actions)
    }

    pub fn actions(&self, s: usize) -> &[usize] {
        &self.sets[s]
    }

    pub fn contains(&self, s: usize, a: usize) -> bool {
        self.member[s][a]
    }

    pub fn is_empty(&self, s: usize) -> bool {
        self.sets[s].is_empty()
    }

    pub fn n_states(&self) -> usize {
        self.sets.len()
    }

    /// In-support maximum of a Q row, `None` where the support is empty.
    pub fn masked_max(&self, q: &TabularQ, s: usize) -> Option<f64> {
        self.sets[s]
            .iter()
            .map(|&a| q.values[s][a])
            .fold(None, |acc, v| Some(acc.map_or(v, |m: f64| m.max(v))))
    }

    /// In-support maximum with the declared fallback: where the support
    /// is empty, fall back to the max over all actions.
    pub fn masked_max_or_all(&self, q: &TabularQ, s: usize) -> f64 {
        self.masked_max(q, s).unwrap_or_else(|| {
            q.values[s]
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max)
        })
    }

    fn vmax_table(&self, q: &TabularQ) -> Vec<Option<f64>> {
        (0..self.n_states()).map(|s| self.masked_max(q, s)).collect()
    }
}

/// Greedy deterministic policy restricted to the support (lowest index
/// wins ties).
pub fn greedy_in_support(q: &TabularQ, support: &SupportMask) -> crate::mdp::TabularPolicy {
    let n_actions = q.n_actions();
    let actions: Vec<usize> = (0..q.n_states())
        .map(|s| {
            let acts = support.actions(s);
            let mut best = acts[0];
            for &a in acts {
                if q.values[s][a] > q.values[s][best] {
                    best = a;
                }
            }
            best
        })
        .collect();
    crate::mdp::TabularPolicy::deterministic(&actions, n_actions)
}

/// Standard optimal backup: max over all actions at the next state.
pub fn standard_backup(q: &TabularQ, mdp: &FiniteMdp) -> TabularQ {
    let full = SupportMask::full(mdp.n_states, mdp.n_actions);
    in_sample_backup(q, mdp, &full).expect("full support cannot be empty")
}

/// In-sample backup:
/// `Q'(s,a) = r + gamma * E_{s'~P}[ max_{a' in support(s')} Q(s',a') ]`.
///
/// Errors if a next state with positive probability has empty support.
pub fn in_sample_backup(q: &TabularQ, mdp: &FiniteMdp, support: &SupportMask) -> Result<TabularQ> {
    let vmax = support.vmax_table(q);
    let mut out = TabularQ::zeros(mdp.n_states, mdp.n_actions);
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let mut ev = 0.0;
            for (sp, &p) in mdp.kernel[s][a].iter().enumerate() {
                if p > 0.0 {
                    let v = vmax[sp].ok_or(Error::EmptySupport { state: sp })?;
                    ev += p * v;
                }
            }
            out.values[s][a] = mdp.reward[s][a] + mdp.gamma * ev;
        }
    }
    Ok(out)
}

/// Exact robust cross-domain backup for source-kernel rows: the
/// continuation is the worst case of the in-support value over the
/// 1-Wasserstein ball of radius `eps` around `P_src(.|s,a)`.
///
/// Requires nonempty support at every state (the worst case may move
/// mass anywhere).
pub fn rcb_exact_backup(
    q: &TabularQ,
    mdp_src: &FiniteMdp,
    support: &SupportMask,
    eps: f64,
) -> Result<TabularQ> {
    if eps < 0.0 {
        return Err(Error::BadParameter(format!("eps {eps} must be >= 0")));
    }
    let vmax = support.vmax_table(q);
    let v: Vec<f64> = vmax
        .iter()
        .enumerate()
        .map(|(s, v)| v.ok_or(Error::EmptySupport { state: s }))
        .collect::<Result<_>>()?;
    let mut out = TabularQ::zeros(mdp_src.n_states, mdp_src.n_actions);
    for s in 0..mdp_src.n_states {
        for a in 0..mdp_src.n_actions {
            let worst = w1_ball_inf(&mdp_src.kernel[s][a], &v, &mdp_src.metric, eps)?;
            out.values[s][a] = mdp_src.reward[s][a] + mdp_src.gamma * worst;
        }
    }
    Ok(out)
}

/// Practical robust backup for source-kernel rows: the continuation at
/// each realized next state `s'` is the minimum in-support value over the
/// state ball `U_eps(s')`, skipping support-empty ball members. If the
/// whole ball is support-empty the backup falls back to `s'` itself (max
/// over all actions there).
pub fn rcb_practical_backup(
    q: &TabularQ,
    mdp_src: &FiniteMdp,
    support: &SupportMask,
    eps: f64,
) -> Result<TabularQ> {
    if eps < 0.0 {
        return Err(Error::BadParameter(format!("eps {eps} must be >= 0")));
    }
    let vmax = support.vmax_table(q);
    let inner: Vec<f64> = (0..mdp_src.n_states)
        .map(|sp| {
            let mut best: Option<f64> = None;
            for sbar in 0..mdp_src.n_states {
                if mdp_src.metric[sp][sbar] <= eps {
                    if let Some(v) = vmax[sbar] {
                        best = Some(best.map_or(v, |b: f64| b.min(v)));
                    }
                }
            }
            best.unwrap_or_else(|| support.masked_max_or_all(q, sp))
        })
        .collect();
    let mut out = TabularQ::zeros(mdp_src.n_states, mdp_src.n_actions);
    for s in 0..mdp_src.n_states {
        for a in 0..mdp_src.n_actions {
            let mut ev = 0.0;
            for (sp, &p) in mdp_src.kernel[s][a].iter().enumerate() {
                if p > 0.0 {
                    ev += p * inner[sp];
                }
            }
            out.values[s][a] = mdp_src.reward[s][a] + mdp_src.gamma * ev;
        }
    }
    Ok(out)
}

/// Per-record TD targets of the ensemble form of the robust backup.
///
/// Source records take `r + gamma * min_i max_{a' in supp(s'_i)} Q(s'_i, a')`
/// over one next-state sample per ensemble member; target records take the
/// in-sample target at the observed next state. Sampling is deterministic
/// given `seed` (record index derives the stream).
pub fn rcb_ensemble_targets(
    q: &TabularQ,
    records: &[crate::data::TransitionRecord],
    ensemble: &EnsembleDynamics,
    support: &SupportMask,
    gamma: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut targets = Vec::with_capacity(records.len());
    for (idx, rec) in records.iter().enumerate() {
        let target = match rec.domain {
            crate::data::Domain::Tar => {
                rec.r + gamma * support.masked_max_or_all(q, rec.sp)
            }
            crate::data::Domain::Src => {
                let samples = ensemble.sample_set(
                    rec.s,
                    rec.a,
                    stream_seed(seed, "ensemble-target", idx as u64),
                )?;
                let worst = samples
                    .iter()
                    .map(|&sp| support.masked_max_or_all(q, sp))
                    .fold(f64::INFINITY, f64::min);
                rec.r + gamma * worst
            }
        };
        targets.push(target);
    }
    Ok(targets)
}

/// A fully parameterized kernel-driven backup.
#[derive(Debug, Clone, Copy)]
pub enum BackupKind {
    Standard,
    InSample,
    RcbExact { eps: f64 },
    RcbPractical { eps: f64 },
}

/// A backup bound to its MDP and support.
#[derive(Clone, Copy)]
pub struct Backup<'a> {
    pub kind: BackupKind,
    pub mdp: &'a FiniteMdp,
    pub support: &'a SupportMask,
}

impl Backup<'_> {
    pub fn apply(&self, q: &TabularQ) -> Result<TabularQ> {
        match self.kind {
            BackupKind::Standard => Ok(standard_backup(q, self.mdp)),
            BackupKind::InSample => in_sample_backup(q, self.mdp, self.support),
            BackupKind::RcbExact { eps } => rcb_exact_backup(q, self.mdp, self.support, eps),
            BackupKind::RcbPractical { eps } => {
                rcb_practical_backup(q, self.mdp, self.support, eps)
            }
        }
    }
}

/// Iterate a backup to its fixed point: stops when the sup-norm change
/// drops to `tol`, errs out at the sweep cap.
pub fn fixed_point(backup: &Backup, init: &TabularQ, tol: f64) -> Result<TabularQ> {
    if tol <= 0.0 {
        return Err(Error::BadParameter(format!("tol {tol} must be > 0")));
    }
    let mut q = init.clone();
    let mut last_delta = f64::INFINITY;
    for _ in 0..MAX_SWEEPS {
        let next = backup.apply(&q)?;
        last_delta = next.sup_distance(&q);
        q = next;
        if last_delta <= tol {
            return Ok(q);
        }
    }
    Err(Error::NoConvergence {
        solver: "fixed_point",
        sweeps: MAX_SWEEPS,
        residual: last_delta,
    })
}

/// Largest test-time perturbation budget `c` such that for every source
/// record `(s,a,s'_src)` and every `s'_tar` in the support of
/// `P_tar(.|s,a)`, the ball `U_c(s'_tar)` stays inside `U_eps(s'_src)`.
///
/// Containment is a step function of `c` that can only change at realized
/// metric values, so the scan walks states in distance order from each
/// `s'_tar`. Returns the metric diameter when every containment holds
/// unconditionally, and `f64::NEG_INFINITY` when containment already
/// fails at radius zero (the train-time support condition is violated).
pub fn compute_c_threshold(
    src_dataset: &OfflineDataset,
    mdp_tar: &FiniteMdp,
    eps: f64,
) -> Result<f64> {
    if eps < 0.0 {
        return Err(Error::BadParameter(format!("eps {eps} must be >= 0")));
    }
    let metric = &mdp_tar.metric;
    let mut pairs: HashSet<(usize, usize)> = HashSet::new();
    for rec in src_dataset
        .records
        .iter()
        .filter(|r| matches!(r.domain, crate::data::Domain::Src))
    {
        for (sp_tar, &p) in mdp_tar.kernel[rec.s][rec.a].iter().enumerate() {
            if p > 0.0 {
                pairs.insert((sp_tar, rec.sp));
            }
        }
    }
    let contained_at = |radius: f64| {
        pairs.iter().all(|&(sp_tar, sp_src)| {
            (0..mdp_tar.n_states)
                .all(|y| metric[sp_tar][y] > radius || metric[sp_src][y] <= eps)
        })
    };
    let mut radii: Vec<f64> = metric
        .iter()
        .flat_map(|row| row.iter().copied())
        .collect();
    radii.sort_by(f64::total_cmp);
    radii.dedup();
    if radii.is_empty() || !contained_at(radii[0]) {
        return Ok(f64::NEG_INFINITY);
    }
    // Containment is monotone in the radius; binary search the largest
    // realized radius that still holds.
    let (mut lo, mut hi) = (0usize, radii.len() - 1);
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        if contained_at(radii[mid]) {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    Ok(radii[lo])
}
