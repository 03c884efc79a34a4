//! Bootstrap-fit categorical dynamics ensembles for the target domain.
//!
//! Each member is an add-alpha-smoothed maximum-likelihood kernel fit on
//! an independent bootstrap resample of the target dataset; members differ
//! only through bootstrap randomness. Smoothing keeps every row strictly
//! positive, so sampling is always well defined and the worst-case model
//! error stays finite.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{sample_categorical, OfflineDataset};
use crate::mdp::FiniteMdp;
use crate::seeding::stream_rng;
use crate::{Error, Result};

/// An ensemble of categorical next-state models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleDynamics {
    pub n_members: usize,
    pub n_states: usize,
    pub n_actions: usize,
    /// `members[i][s][a][s']` — per-member transition estimates.
    pub members: Vec<Vec<Vec<Vec<f64>>>>,
    pub smoothing_alpha: f64,
    /// Fingerprint of the dataset the ensemble was fit on.
    pub trained_on: u64,
    pub rng_seed: u64,
}

impl EnsembleDynamics {
    /// Fit `n_members` models, each on its own bootstrap resample.
    ///
    /// Visited `(s,a)` rows become `(count + alpha) / (total + alpha * |S|)`;
    /// rows never visited in the resample default to uniform.
    pub fn fit(
        dataset_tar: &OfflineDataset,
        n_members: usize,
        smoothing_alpha: f64,
        seed: u64,
    ) -> Result<Self> {
        if dataset_tar.is_empty() {
            return Err(Error::BadParameter("ensemble fit on empty dataset".into()));
        }
        if n_members == 0 {
            return Err(Error::BadParameter("n_members must be >= 1".into()));
        }
        if smoothing_alpha <= 0.0 || smoothing_alpha.is_nan() {
            return Err(Error::BadParameter(format!(
                "smoothing_alpha {smoothing_alpha} must be > 0"
            )));
        }
        let (ns, na) = (dataset_tar.n_states, dataset_tar.n_actions);
        let n = dataset_tar.len();
        let mut members = Vec::with_capacity(n_members);
        for i in 0..n_members {
            let mut rng = stream_rng(seed, "ensemble/bootstrap", i as u64);
            let mut counts = vec![vec![vec![0u64; ns]; na]; ns];
            let mut totals = vec![vec![0u64; na]; ns];
            for _ in 0..n {
                let rec = dataset_tar.records[rng.gen_range(0..n)];
                counts[rec.s][rec.a][rec.sp] += 1;
                totals[rec.s][rec.a] += 1;
            }
            let mut member = vec![vec![vec![0.0f64; ns]; na]; ns];
            for s in 0..ns {
                for a in 0..na {
                    let total = totals[s][a];
                    if total == 0 {
                        for sp in 0..ns {
                            member[s][a][sp] = 1.0 / ns as f64;
                        }
                    } else {
                        let denom = total as f64 + smoothing_alpha * ns as f64;
                        for sp in 0..ns {
                            member[s][a][sp] =
                                (counts[s][a][sp] as f64 + smoothing_alpha) / denom;
                        }
                    }
                }
            }
            members.push(member);
        }
        Ok(Self {
            n_members,
            n_states: ns,
            n_actions: na,
            members,
            smoothing_alpha,
            trained_on: dataset_tar.fingerprint(),
            rng_seed: seed,
        })
    }

    /// One categorical draw per member at `(s, a)`; the list has length
    /// `n_members` and is deterministic given the seed.
    pub fn sample_set(&self, s: usize, a: usize, seed: u64) -> Result<Vec<usize>> {
        if s >= self.n_states || a >= self.n_actions {
            return Err(Error::BadParameter(format!(
                "sample_set out of range: ({s},{a})"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(self
            .members
            .iter()
            .map(|m| sample_categorical(&m[s][a], &mut rng))
            .collect())
    }

    /// Worst model error: max over members and `(s,a)` of the total
    /// variation distance between the member row and the true kernel row.
    pub fn tv_error(&self, mdp_tar: &FiniteMdp) -> Result<f64> {
        if mdp_tar.n_states != self.n_states || mdp_tar.n_actions != self.n_actions {
            return Err(Error::DimensionMismatch("tv_error spaces".into()));
        }
        let mut worst: f64 = 0.0;
        for member in &self.members {
            for s in 0..self.n_states {
                for a in 0..self.n_actions {
                    let tv: f64 = (0..self.n_states)
                        .map(|sp| (member[s][a][sp] - mdp_tar.kernel[s][a][sp]).abs())
                        .sum::<f64>()
                        / 2.0;
                    worst = worst.max(tv);
                }
            }
        }
        Ok(worst)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{collect, Domain, TransitionRecord};
    use crate::grid::GridSpec;
    use crate::mdp::TabularPolicy;

    fn grid_4x4() -> FiniteMdp {
        let mut spec = GridSpec::default_8x8();
        spec.width = 4;
        spec.height = 4;
        spec.goal_cell = 15;
        spec.slip_prob = 0.2;
        spec.gamma = 0.95;
        spec.build().unwrap()
    }

    /// Single record, alpha 0.01, three states: frozen from the
    /// (count + alpha) / (total + alpha * |S|) arithmetic itself:
    /// (0.01/1.03, 1.01/1.03, 0.01/1.03).
    #[test]
    fn single_record_smoothing_arithmetic() {
        let rec = TransitionRecord {
            s: 0,
            a: 0,
            r: 0.0,
            sp: 1,
            domain: Domain::Tar,
        };
        let ds = OfflineDataset::from_records(vec![rec], 3, 1).unwrap();
        let ens = EnsembleDynamics::fit(&ds, 1, 0.01, 0).unwrap();
        let row = &ens.members[0][0][0];
        assert!((row[0] - 0.01 / 1.03).abs() < 1e-12);
        assert!((row[1] - 1.01 / 1.03).abs() < 1e-12);
        assert!((row[2] - 0.01 / 1.03).abs() < 1e-12);
    }

    /// Counts proportional to the kernel and vanishing alpha recover the
    /// kernel row up to bootstrap noise (MLE consistency).
    #[test]
    fn mle_consistency_limit() {
        let mut records = Vec::new();
        for _ in 0..2000 {
            records.push(TransitionRecord { s: 0, a: 0, r: 0.0, sp: 0, domain: Domain::Tar });
        }
        for _ in 0..6000 {
            records.push(TransitionRecord { s: 0, a: 0, r: 0.0, sp: 1, domain: Domain::Tar });
        }
        let ds = OfflineDataset::from_records(records, 2, 1).unwrap();
        let ens = EnsembleDynamics::fit(&ds, 1, 1e-9, 42).unwrap();
        let row = &ens.members[0][0][0];
        assert!((row[0] - 0.25).abs() < 0.03, "row {row:?}");
        assert!((row[1] - 0.75).abs() < 0.03);
    }

    #[test]
    fn same_seed_identical_members() {
        let mdp = grid_4x4();
        let pi = TabularPolicy::uniform(mdp.n_states, mdp.n_actions);
        let ds = collect(&mdp, &pi, 2000, 20, Domain::Tar, 1).unwrap();
        let a = EnsembleDynamics::fit(&ds, 3, 0.1, 5).unwrap();
        let b = EnsembleDynamics::fit(&ds, 3, 0.1, 5).unwrap();
        assert_eq!(a, b);
        let c = EnsembleDynamics::fit(&ds, 3, 0.1, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn smoothed_rows_strictly_positive() {
        let mdp = grid_4x4();
        let pi = TabularPolicy::uniform(mdp.n_states, mdp.n_actions);
        let ds = collect(&mdp, &pi, 300, 20, Domain::Tar, 2).unwrap();
        let ens = EnsembleDynamics::fit(&ds, 4, 0.1, 3).unwrap();
        for member in &ens.members {
            for s in 0..ens.n_states {
                for a in 0..ens.n_actions {
                    let sum: f64 = member[s][a].iter().sum();
                    assert!((sum - 1.0).abs() < 1e-9);
                    assert!(member[s][a].iter().all(|&p| p > 0.0));
                }
            }
        }
    }

    #[test]
    fn sample_set_shapes_and_determinism() {
        let mdp = grid_4x4();
        let pi = TabularPolicy::uniform(mdp.n_states, mdp.n_actions);
        let ds = collect(&mdp, &pi, 2000, 20, Domain::Tar, 4).unwrap();
        let ens = EnsembleDynamics::fit(&ds, 7, 0.1, 9).unwrap();
        let set = ens.sample_set(3, 2, 17).unwrap();
        assert_eq!(set.len(), 7);
        assert_eq!(set, ens.sample_set(3, 2, 17).unwrap());
        assert!(ens.sample_set(99, 0, 0).is_err());
    }

    /// Effectively deterministic members force the sampled states.
    #[test]
    fn deterministic_members_force_samples() {
        let rec = |sp: usize| TransitionRecord { s: 0, a: 0, r: 0.0, sp, domain: Domain::Tar };
        let ds = OfflineDataset::from_records(vec![rec(1); 50], 2, 1).unwrap();
        let ens = EnsembleDynamics::fit(&ds, 5, 1e-12, 0).unwrap();
        assert_eq!(ens.sample_set(0, 0, 3).unwrap(), vec![1; 5]);
    }

    /// Uniform member rows over 2 states: each state appears about half
    /// the time over many resamples.
    #[test]
    fn sample_set_frequency_check() {
        let ens = EnsembleDynamics {
            n_members: 1,
            n_states: 2,
            n_actions: 1,
            members: vec![vec![vec![vec![0.5, 0.5]], vec![vec![0.5, 0.5]]]],
            smoothing_alpha: 0.1,
            trained_on: 0,
            rng_seed: 0,
        };
        let mut ones = 0;
        let n = 10_000;
        for i in 0..n {
            ones += ens.sample_set(0, 0, i as u64).unwrap()[0];
        }
        let freq = ones as f64 / n as f64;
        assert!((freq - 0.5).abs() < 0.02, "freq {freq}");
    }

    #[test]
    fn tv_error_examples() {
        let mdp = grid_4x4();
        // Members equal to the kernel give zero error.
        let exact = EnsembleDynamics {
            n_members: 1,
            n_states: mdp.n_states,
            n_actions: mdp.n_actions,
            members: vec![mdp.kernel.clone()],
            smoothing_alpha: 0.1,
            trained_on: 0,
            rng_seed: 0,
        };
        assert_eq!(exact.tv_error(&mdp).unwrap(), 0.0);

        // Point mass versus a fair coin has TV exactly one half.
        let coin = FiniteMdp {
            n_states: 2,
            n_actions: 1,
            kernel: vec![vec![vec![0.5, 0.5]], vec![vec![0.5, 0.5]]],
            reward: vec![vec![0.0], vec![0.0]],
            r_max: 1.0,
            gamma: 0.9,
            init_dist: vec![1.0, 0.0],
            metric: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
        };
        let point = EnsembleDynamics {
            n_members: 1,
            n_states: 2,
            n_actions: 1,
            members: vec![vec![vec![vec![1.0, 0.0]], vec![vec![0.5, 0.5]]]],
            smoothing_alpha: 0.1,
            trained_on: 0,
            rng_seed: 0,
        };
        assert!((point.tv_error(&coin).unwrap() - 0.5).abs() < 1e-12);
    }

    /// Bootstrap fit on plentiful covering data keeps the worst-case
    /// model error small (every pair visited here).
    #[test]
    fn bootstrap_fit_error_small_on_large_data() {
        let mdp = grid_4x4();
        let pi = TabularPolicy::uniform(mdp.n_states, mdp.n_actions);
        let ds = collect(&mdp, &pi, 50_000, 25, Domain::Tar, 21).unwrap();
        assert!(ds.counts.iter().flatten().all(|&c| c > 0));
        let ens = EnsembleDynamics::fit(&ds, 7, 0.1, 22).unwrap();
        let err = ens.tv_error(&mdp).unwrap();
        assert!(err < 0.1, "tv error {err}");
    }

    /// Model error trends down with dataset size (averaged over seeds).
    #[test]
    fn tv_error_decreases_with_data() {
        let mdp = grid_4x4();
        let pi = TabularPolicy::uniform(mdp.n_states, mdp.n_actions);
        let mean_err = |n: usize| {
            let mut acc = 0.0;
            for seed in 0..5 {
                let ds = collect(&mdp, &pi, n, 25, Domain::Tar, 100 + seed).unwrap();
                let ens = EnsembleDynamics::fit(&ds, 3, 0.1, 200 + seed).unwrap();
                acc += ens.tv_error(&mdp).unwrap();
            }
            acc / 5.0
        };
        let small = mean_err(2_000);
        let large = mean_err(40_000);
        assert!(large < small, "small-data {small} vs large-data {large}");
    }

    #[test]
    fn json_round_trip() {
        let mdp = grid_4x4();
        let pi = TabularPolicy::uniform(mdp.n_states, mdp.n_actions);
        let ds = collect(&mdp, &pi, 500, 20, Domain::Tar, 8).unwrap();
        let ens = EnsembleDynamics::fit(&ds, 2, 0.1, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ens.json");
        ens.save_json(&path).unwrap();
        assert_eq!(EnsembleDynamics::load_json(&path).unwrap(), ens);
    }
}
