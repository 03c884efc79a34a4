//! Offline datasets: rollout collection, graded behavior policies,
//! subsampling, and JSON-lines persistence.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::mdp::{greedy_policy, optimal_q, FiniteMdp, TabularPolicy};
use crate::seeding::stream_rng;
use crate::{Error, Result};

/// Which domain a transition was logged in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Src,
    Tar,
}

/// One logged transition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionRecord {
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub sp: usize,
    pub domain: Domain,
}

/// A dataset of transitions with visit-count tables kept consistent with
/// the record list. `support(s)` is the set of actions with positive
/// count at `s` — the empirical behavior-policy support.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    pub n_states: usize,
    pub n_actions: usize,
    pub records: Vec<TransitionRecord>,
    /// `counts[s][a]` — visits.
    pub counts: Vec<Vec<u64>>,
    /// `next_counts[s][a][s']` — observed successors.
    pub next_counts: Vec<Vec<Vec<u64>>>,
}

impl OfflineDataset {
    pub fn from_records(
        records: Vec<TransitionRecord>,
        n_states: usize,
        n_actions: usize,
    ) -> Result<Self> {
        let mut counts = vec![vec![0u64; n_actions]; n_states];
        let mut next_counts = vec![vec![vec![0u64; n_states]; n_actions]; n_states];
        for (i, rec) in records.iter().enumerate() {
            if rec.s >= n_states || rec.sp >= n_states || rec.a >= n_actions {
                return Err(Error::BadParameter(format!(
                    "record {i} out of range: ({}, {}, {})",
                    rec.s, rec.a, rec.sp
                )));
            }
            counts[rec.s][rec.a] += 1;
            next_counts[rec.s][rec.a][rec.sp] += 1;
        }
        Ok(Self {
            n_states,
            n_actions,
            records,
            counts,
            next_counts,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Actions with positive visit count per state.
    pub fn support_sets(&self) -> Vec<Vec<usize>> {
        self.counts
            .iter()
            .map(|row| {
                (0..self.n_actions)
                    .filter(|&a| row[a] > 0)
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    /// Empirical behavior policy `counts[s][a] / sum_a counts[s][a]`;
    /// `None` rows mark unvisited states.
    pub fn empirical_behavior(&self) -> Vec<Option<Vec<f64>>> {
        self.counts
            .iter()
            .map(|row| {
                let total: u64 = row.iter().sum();
                if total == 0 {
                    None
                } else {
                    Some(row.iter().map(|&c| c as f64 / total as f64).collect())
                }
            })
            .collect()
    }

    /// Concatenate two datasets over the same spaces.
    pub fn merge(&self, other: &OfflineDataset) -> Result<OfflineDataset> {
        if self.n_states != other.n_states || self.n_actions != other.n_actions {
            return Err(Error::DimensionMismatch("dataset merge".into()));
        }
        let mut records = self.records.clone();
        records.extend_from_slice(&other.records);
        OfflineDataset::from_records(records, self.n_states, self.n_actions)
    }

    /// Validate records against an MDP: index ranges and reward bounds.
    pub fn check_against(&self, mdp: &crate::mdp::FiniteMdp) -> Result<()> {
        if self.n_states != mdp.n_states || self.n_actions != mdp.n_actions {
            return Err(Error::DimensionMismatch("dataset vs MDP".into()));
        }
        for (i, rec) in self.records.iter().enumerate() {
            if !rec.r.is_finite() || rec.r.abs() > mdp.r_max + 1e-12 {
                return Err(Error::BadParameter(format!(
                    "record {i}: reward {} outside [-{rm}, {rm}]",
                    rec.r,
                    rm = mdp.r_max,
                )));
            }
        }
        Ok(())
    }

    /// FNV-1a fingerprint over the record stream.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |x: u64| {
            h ^= x;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for rec in &self.records {
            mix(rec.s as u64);
            mix(rec.a as u64);
            mix(rec.sp as u64);
            mix(rec.r.to_bits());
            mix(matches!(rec.domain, Domain::Src) as u64);
        }
        h
    }

    /// Write one JSON object per line.
    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        for rec in &self.records {
            serde_json::to_writer(&mut w, rec)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read a JSON-lines dataset; parse failures report the line number.
    pub fn load_jsonl(path: &Path, n_states: usize, n_actions: usize) -> Result<Self> {
        let file = fs::File::open(path)?;
        let reader = BufReader::new(file);
        let mut records = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: TransitionRecord =
                serde_json::from_str(&line).map_err(|e| Error::DatasetParse {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            records.push(rec);
        }
        Self::from_records(records, n_states, n_actions)
    }
}

/// Data-quality regimes for behavior policies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quality {
    Medium,
    Expert,
    MediumReplayMix,
    MediumExpertMix,
}

const EXPERT_EPSILON: f64 = 0.05;
const MEDIUM_EPSILON: f64 = 0.35;

/// Epsilon-greedy policy on the exact optimal Q of `mdp`.
///
/// `expert` uses epsilon 0.05 and `medium` 0.35, calibrated so the medium
/// policy lands at roughly half the expert's normalized return on the
/// default grid. Mix qualities have no single policy; build them with
/// [`generate_dataset`].
pub fn behavior_policy(mdp: &FiniteMdp, quality: Quality) -> Result<TabularPolicy> {
    let epsilon = match quality {
        Quality::Expert => EXPERT_EPSILON,
        Quality::Medium => MEDIUM_EPSILON,
        Quality::MediumReplayMix | Quality::MediumExpertMix => {
            return Err(Error::BadParameter(
                "mix qualities are dataset-level; use generate_dataset".into(),
            ))
        }
    };
    let q = optimal_q(mdp, 1e-10)?;
    let greedy = greedy_policy(&q);
    let n_a = mdp.n_actions as f64;
    let probs = greedy
        .probs
        .iter()
        .map(|row| {
            row.iter()
                .map(|&g| epsilon / n_a + (1.0 - epsilon) * g)
                .collect()
        })
        .collect();
    Ok(TabularPolicy { probs })
}

/// Roll out `n` transitions in episodes of length `horizon` under `policy`,
/// tagging each record with `domain`. Deterministic given the seed.
pub fn collect(
    mdp: &FiniteMdp,
    policy: &TabularPolicy,
    n: usize,
    horizon: usize,
    domain: Domain,
    seed: u64,
) -> Result<OfflineDataset> {
    if n == 0 || horizon == 0 {
        return Err(Error::BadParameter("n and horizon must be positive".into()));
    }
    policy.validate(mdp.n_states, mdp.n_actions)?;
    let mut rng = stream_rng(seed, "collect", 0);
    let mut records = Vec::with_capacity(n);
    'outer: loop {
        let mut s = sample_categorical(&mdp.init_dist, &mut rng);
        for _ in 0..horizon {
            let a = sample_categorical(&policy.probs[s], &mut rng);
            let sp = sample_categorical(&mdp.kernel[s][a], &mut rng);
            records.push(TransitionRecord {
                s,
                a,
                r: mdp.reward[s][a],
                sp,
                domain,
            });
            if records.len() == n {
                break 'outer;
            }
            s = sp;
        }
    }
    OfflineDataset::from_records(records, mdp.n_states, mdp.n_actions)
}

/// Generate a dataset of the requested quality.
///
/// Mix qualities concatenate two half-size rollouts 50/50:
/// `medium_expert` mixes medium with expert; `medium_replay` mixes a
/// uniform-random policy with medium (the tabular stand-in for a
/// medium-level agent's replay buffer).
pub fn generate_dataset(
    mdp: &FiniteMdp,
    quality: Quality,
    n: usize,
    horizon: usize,
    domain: Domain,
    seed: u64,
) -> Result<OfflineDataset> {
    match quality {
        Quality::Medium | Quality::Expert => {
            let pi = behavior_policy(mdp, quality)?;
            collect(mdp, &pi, n, horizon, domain, seed)
        }
        Quality::MediumExpertMix => {
            let half = n / 2;
            let med = behavior_policy(mdp, Quality::Medium)?;
            let exp = behavior_policy(mdp, Quality::Expert)?;
            let a = collect(mdp, &med, half, horizon, domain, seed)?;
            let b = collect(mdp, &exp, n - half, horizon, domain, seed.wrapping_add(1))?;
            a.merge(&b)
        }
        Quality::MediumReplayMix => {
            let half = n / 2;
            let uniform = TabularPolicy::uniform(mdp.n_states, mdp.n_actions);
            let med = behavior_policy(mdp, Quality::Medium)?;
            let a = collect(mdp, &uniform, half, horizon, domain, seed)?;
            let b = collect(mdp, &med, n - half, horizon, domain, seed.wrapping_add(1))?;
            a.merge(&b)
        }
    }
}

/// Uniform subsample without replacement; count tables are rebuilt.
pub fn subsample(ds: &OfflineDataset, fraction: f64, seed: u64) -> Result<OfflineDataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::BadParameter(format!(
            "fraction {fraction} not in (0,1]"
        )));
    }
    if ds.is_empty() {
        return Ok(ds.clone());
    }
    let keep = ((ds.len() as f64) * fraction).round() as usize;
    let keep = keep.clamp(1, ds.len());
    let mut rng = stream_rng(seed, "subsample", 0);
    let mut indices: Vec<usize> = (0..ds.len()).collect();
    // Partial Fisher-Yates: the first `keep` entries become the sample.
    for i in 0..keep {
        let j = rng.gen_range(i..indices.len());
        indices.swap(i, j);
    }
    let records: Vec<TransitionRecord> = indices[..keep].iter().map(|&i| ds.records[i]).collect();
    OfflineDataset::from_records(records, ds.n_states, ds.n_actions)
}

/// Draw from a probability vector via inverse CDF.
pub fn sample_categorical(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen::<f64>();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding slack: fall back to the last positive entry.
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(probs.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::mdp::{policy_return, TabularPolicy};

    fn small_grid() -> FiniteMdp {
        let mut spec = GridSpec::default_8x8();
        spec.width = 4;
        spec.height = 4;
        spec.goal_cell = 15;
        spec.slip_prob = 0.2;
        spec.gamma = 0.95;
        spec.build().unwrap()
    }

    #[test]
    fn deterministic_single_transition() {
        // Deterministic MDP (slip 0) and a deterministic policy force the
        // single possible record.
        let mut spec = GridSpec::default_8x8();
        spec.width = 2;
        spec.height = 1;
        spec.goal_cell = 1;
        spec.slip_prob = 0.0;
        let mdp = spec.build().unwrap();
        let pi = TabularPolicy::deterministic(&[3, 3], mdp.n_actions);
        let ds = collect(&mdp, &pi, 1, 5, Domain::Tar, 9).unwrap();
        assert_eq!(ds.len(), 1);
        let rec = ds.records[0];
        assert_eq!((rec.s, rec.a, rec.sp), (0, 3, 1));
        assert_eq!(rec.r, 0.0);
    }

    #[test]
    fn same_seed_identical_datasets() {
        let mdp = small_grid();
        let pi = TabularPolicy::uniform(mdp.n_states, mdp.n_actions);
        let a = collect(&mdp, &pi, 500, 20, Domain::Src, 7).unwrap();
        let b = collect(&mdp, &pi, 500, 20, Domain::Src, 7).unwrap();
        assert_eq!(a, b);
        let c = collect(&mdp, &pi, 500, 20, Domain::Src, 8).unwrap();
        assert_ne!(a, c);
    }

    /// Empirical next-state frequencies approach the kernel rows: total
    /// variation under 0.05 at every (s,a) with at least 200 visits.
    #[test]
    fn empirical_frequencies_converge_to_kernel() {
        let mut spec = GridSpec::default_8x8();
        spec.width = 3;
        spec.height = 3;
        spec.goal_cell = 8;
        spec.slip_prob = 0.2;
        spec.gamma = 0.95;
        let mdp = spec.build().unwrap();
        let pi = TabularPolicy::uniform(mdp.n_states, mdp.n_actions);
        let ds = collect(&mdp, &pi, 50_000, 30, Domain::Tar, 3).unwrap();
        let mut checked = 0;
        for s in 0..mdp.n_states {
            for a in 0..mdp.n_actions {
                let total = ds.counts[s][a];
                if total < 200 {
                    continue;
                }
                let tv: f64 = (0..mdp.n_states)
                    .map(|sp| {
                        let emp = ds.next_counts[s][a][sp] as f64 / total as f64;
                        (emp - mdp.kernel[s][a][sp]).abs()
                    })
                    .sum::<f64>()
                    / 2.0;
                assert!(tv < 0.05, "TV {tv} at ({s},{a}) with {total} visits");
                checked += 1;
            }
        }
        assert!(checked > 20, "only {checked} pairs reached 200 visits");
    }

    /// Single designated entry within three binomial standard errors.
    #[test]
    fn empirical_frequency_spot_check() {
        let mdp = small_grid();
        let pi = TabularPolicy::uniform(mdp.n_states, mdp.n_actions);
        let ds = collect(&mdp, &pi, 10_000, 30, Domain::Tar, 5).unwrap();
        let (s, a) = (5, 0);
        let total = ds.counts[s][a];
        assert!(total > 50);
        let sp = mdp
            .kernel[s][a]
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.total_cmp(y.1))
            .unwrap()
            .0;
        let p = mdp.kernel[s][a][sp];
        let emp = ds.next_counts[s][a][sp] as f64 / total as f64;
        let se = (p * (1.0 - p) / total as f64).sqrt();
        assert!((emp - p).abs() <= 3.0 * se, "emp {emp} vs {p} (se {se})");
    }

    #[test]
    fn expert_return_close_to_optimal() {
        let mdp = small_grid();
        let expert = behavior_policy(&mdp, Quality::Expert).unwrap();
        let q = optimal_q(&mdp, 1e-10).unwrap();
        let optimal = greedy_policy(&q);
        let j_exp = policy_return(&mdp, &expert, 1e-10).unwrap();
        let j_opt = policy_return(&mdp, &optimal, 1e-10).unwrap();
        assert!(j_exp >= 0.9 * j_opt, "expert {j_exp} vs optimal {j_opt}");
    }

    #[test]
    fn medium_return_between_random_and_expert() {
        let mdp = small_grid();
        let medium = behavior_policy(&mdp, Quality::Medium).unwrap();
        let expert = behavior_policy(&mdp, Quality::Expert).unwrap();
        let random = TabularPolicy::uniform(mdp.n_states, mdp.n_actions);
        let j_med = policy_return(&mdp, &medium, 1e-10).unwrap();
        let j_exp = policy_return(&mdp, &expert, 1e-10).unwrap();
        let j_rand = policy_return(&mdp, &random, 1e-10).unwrap();
        assert!(j_rand < j_med && j_med < j_exp, "{j_rand} {j_med} {j_exp}");
    }

    #[test]
    fn mix_dataset_concatenates_halves() {
        let mdp = small_grid();
        let ds = generate_dataset(&mdp, Quality::MediumExpertMix, 999, 20, Domain::Src, 1).unwrap();
        assert_eq!(ds.len(), 999);
        let dsr = generate_dataset(&mdp, Quality::MediumReplayMix, 400, 20, Domain::Src, 1).unwrap();
        assert_eq!(dsr.len(), 400);
    }

    #[test]
    fn subsample_fractions() {
        let mdp = small_grid();
        let pi = TabularPolicy::uniform(mdp.n_states, mdp.n_actions);
        let ds = collect(&mdp, &pi, 10_000, 20, Domain::Tar, 2).unwrap();
        let sub = subsample(&ds, 0.1, 4).unwrap();
        assert_eq!(sub.len(), 1000);
        // Counts dominated elementwise by the original.
        for s in 0..ds.n_states {
            for a in 0..ds.n_actions {
                assert!(sub.counts[s][a] <= ds.counts[s][a]);
            }
        }
        // Full fraction keeps every record (order may differ).
        let full = subsample(&ds, 1.0, 4).unwrap();
        assert_eq!(full.len(), ds.len());
        assert_eq!(full.counts, ds.counts);
        assert!(subsample(&ds, 0.0, 4).is_err());
        assert!(subsample(&ds, 1.5, 4).is_err());
    }

    #[test]
    fn jsonl_round_trip_and_errors() {
        let mdp = small_grid();
        let pi = TabularPolicy::uniform(mdp.n_states, mdp.n_actions);
        let ds = collect(&mdp, &pi, 200, 20, Domain::Src, 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        ds.save_jsonl(&path).unwrap();
        let back = OfflineDataset::load_jsonl(&path, ds.n_states, ds.n_actions).unwrap();
        assert_eq!(ds, back);

        let empty = dir.path().join("empty.jsonl");
        std::fs::write(&empty, "").unwrap();
        let loaded = OfflineDataset::load_jsonl(&empty, 4, 5).unwrap();
        assert!(loaded.is_empty());

        let bad = dir.path().join("bad.jsonl");
        std::fs::write(
            &bad,
            "{\"s\":0,\"a\":0,\"r\":0.0,\"sp\":1,\"domain\":\"src\"}\n{\"s\":0,\"a\":0,\"r\":0.0,\"sp\":1,\"domain\":\"foo\"}\n",
        )
        .unwrap();
        let err = OfflineDataset::load_jsonl(&bad, 4, 5).unwrap_err();
        match err {
            Error::DatasetParse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn counts_consistent_with_records() {
        let mdp = small_grid();
        let pi = TabularPolicy::uniform(mdp.n_states, mdp.n_actions);
        let ds = collect(&mdp, &pi, 3000, 25, Domain::Tar, 13).unwrap();
        let total: u64 = ds.counts.iter().flatten().sum();
        assert_eq!(total as usize, ds.len());
        for s in 0..ds.n_states {
            for a in 0..ds.n_actions {
                let from_next: u64 = ds.next_counts[s][a].iter().sum();
                assert_eq!(from_next, ds.counts[s][a]);
            }
        }
        // support(s) = {a : counts[s][a] > 0}
        let support = ds.support_sets();
        for s in 0..ds.n_states {
            for a in 0..ds.n_actions {
                assert_eq!(support[s].contains(&a), ds.counts[s][a] > 0);
            }
        }
    }
}
