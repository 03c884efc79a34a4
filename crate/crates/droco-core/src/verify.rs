//! Executable checkers for every claimed operator property.
//!
//! Each checker runs randomized trials with per-trial derived seeds and
//! reports violations as data (a nonzero count), never as panics, so the
//! whole battery always completes and the summary can be serialized.
//!
//! Tolerances are declared here as named constants, one per assertion.
//!
//! The robustness-bound checkers construct instances satisfying the
//! hypotheses the bounds actually need: state metrics come from 1-D
//! embeddings (so the triangle inequality holds) and the behavior support
//! is the same action set at every state (so the in-support value
//! function inherits the Q table's Lipschitz constant).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{Domain, OfflineDataset, TransitionRecord};
use crate::ensemble::EnsembleDynamics;
use crate::mdp::{lipschitz_constant, policy_eval_exact, FiniteMdp, TabularQ, TabularV};
use crate::operators::{
    compute_c_threshold, fixed_point, greedy_in_support, Backup, BackupKind, SupportMask,
};
use crate::seeding::{stream_rng, stream_seed};
use crate::transport::{
    lambda_dual_supremum, lambda_dual_value, per_sample_ball_value, w1_ball_inf,
    w1_ball_inf_enumerated, wasserstein_1,
};
use crate::{Error, Result};

/// Sup-norm slack allowed on the contraction inequality.
pub const CONTRACTION_TOL: f64 = 1e-9;
/// Slack allowed on `dual <= primal`.
pub const WEAK_DUALITY_TOL: f64 = 1e-7;
/// Slack allowed on `ball inf <= per-sample value`.
pub const BALL_NESTING_TOL: f64 = 1e-9;
/// Agreement required between the greedy ball solver and enumeration.
pub const GREEDY_VS_ENUM_TOL: f64 = 1e-8;
/// Largest admissible gap between the primal and the located dual optimum.
pub const STRONG_DUALITY_GAP_TOL: f64 = 1e-4;
/// Slack on the train-time sandwich bounds.
pub const SANDWICH_TOL: f64 = 1e-6;
/// Slack on the test-time value bound.
pub const TEST_TIME_TOL: f64 = 1e-6;
/// Largest fixed-point difference allowed across initializations.
pub const UNIQUENESS_TOL: f64 = 1e-6;
/// Agreement required between the solver and independent value iteration.
pub const VALUE_ITERATION_TOL: f64 = 1e-8;
/// Stopping tolerance used for all fixed-point solves inside checkers.
pub const SOLVE_TOL: f64 = 1e-10;

/// Per-trial record for replay.
#[derive(Debug, Clone, Serialize)]
pub struct TrialDetail {
    pub trial: usize,
    pub trial_seed: u64,
    /// Worst violation magnitude in this trial (zero when clean).
    pub violation: f64,
}

/// Outcome of one checker.
#[derive(Debug, Clone, Serialize)]
pub struct PropCheckResult {
    pub prop: String,
    pub trials: usize,
    pub violations: usize,
    pub max_violation: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub median_gap: Option<f64>,
    pub seed: u64,
    #[serde(skip)]
    pub details: Vec<TrialDetail>,
}

impl PropCheckResult {
    fn new(prop: &str, seed: u64) -> Self {
        Self {
            prop: prop.to_string(),
            trials: 0,
            violations: 0,
            max_violation: 0.0,
            median_gap: None,
            seed,
            details: Vec::new(),
        }
    }

    fn record(&mut self, trial: usize, trial_seed: u64, violation: f64) {
        self.trials += 1;
        if violation > 0.0 {
            self.violations += 1;
            self.max_violation = self.max_violation.max(violation);
        }
        self.details.push(TrialDetail {
            trial,
            trial_seed,
            violation,
        });
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    /// One line of the human-readable table.
    pub fn table_row(&self) -> String {
        format!(
            "{:<24} trials {:>5}  violations {:>3}  max violation {:>12.3e}{}",
            self.prop,
            self.trials,
            self.violations,
            self.max_violation,
            match self.median_gap {
                Some(g) => format!("  median gap {g:.3e}"),
                None => String::new(),
            }
        )
    }
}

// ---------------------------------------------------------------------------
// Random instance generators
// ---------------------------------------------------------------------------

struct InstanceLimits {
    max_states: usize,
    max_actions: usize,
    gamma_range: (f64, f64),
}

/// Random MDP with a 1-D embedded metric (distinct points, so distances
/// vanish only on the diagonal and the triangle inequality holds).
fn random_embedded_mdp(rng: &mut ChaCha8Rng, limits: &InstanceLimits) -> FiniteMdp {
    let n_states = rng.gen_range(2..=limits.max_states);
    let n_actions = rng.gen_range(1..=limits.max_actions);
    let gamma = rng.gen_range(limits.gamma_range.0..limits.gamma_range.1);
    random_embedded_mdp_sized(rng, n_states, n_actions, gamma)
}

fn random_embedded_mdp_sized(
    rng: &mut ChaCha8Rng,
    n_states: usize,
    n_actions: usize,
    gamma: f64,
) -> FiniteMdp {
    let kernel = (0..n_states)
        .map(|_| (0..n_actions).map(|_| random_sparse_row(rng, n_states)).collect())
        .collect();
    let reward = (0..n_states)
        .map(|_| (0..n_actions).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let mut xs: Vec<f64> = (0..n_states)
        .map(|i| i as f64 + rng.gen_range(0.05..0.95))
        .collect();
    // Shuffle so state index order carries no spatial meaning.
    for i in (1..xs.len()).rev() {
        let j = rng.gen_range(0..=i);
        xs.swap(i, j);
    }
    let metric = (0..n_states)
        .map(|i| (0..n_states).map(|j| (xs[i] - xs[j]).abs()).collect())
        .collect();
    FiniteMdp {
        n_states,
        n_actions,
        kernel,
        reward,
        r_max: 1.0,
        gamma,
        init_dist: vec![1.0 / n_states as f64; n_states],
        metric,
    }
}

/// Probability row with a random support of at least one state.
fn random_sparse_row(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let support = rng.gen_range(1..=n.min(4));
    let mut row = vec![0.0; n];
    let mut total = 0.0;
    for _ in 0..support {
        let idx = rng.gen_range(0..n);
        let w = rng.gen_range(0.1..1.0);
        row[idx] += w;
        total += w;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
    row
}

/// Independent random nonempty action set per state.
fn random_support(rng: &mut ChaCha8Rng, n_states: usize, n_actions: usize) -> SupportMask {
    let sets = (0..n_states)
        .map(|_| {
            let mut acts: Vec<usize> =
                (0..n_actions).filter(|_| rng.gen_bool(0.6)).collect();
            if acts.is_empty() {
                acts.push(rng.gen_range(0..n_actions));
            }
            acts
        })
        .collect();
    SupportMask::from_sets(sets, n_actions)
}

/// One random nonempty action set shared by every state.
fn random_uniform_support(rng: &mut ChaCha8Rng, n_states: usize, n_actions: usize) -> SupportMask {
    let mut acts: Vec<usize> = (0..n_actions).filter(|_| rng.gen_bool(0.6)).collect();
    if acts.is_empty() {
        acts.push(rng.gen_range(0..n_actions));
    }
    SupportMask::from_sets(vec![acts; n_states], n_actions)
}

fn random_q(rng: &mut ChaCha8Rng, n_states: usize, n_actions: usize, bound: f64) -> TabularQ {
    TabularQ {
        values: (0..n_states)
            .map(|_| (0..n_actions).map(|_| rng.gen_range(-bound..bound)).collect())
            .collect(),
    }
}

/// Source-domain dataset that enumerates every kernel-supported triple of
/// the source MDP (so "source-covered" means every state-action pair).
fn kernel_support_dataset(mdp_src: &FiniteMdp) -> OfflineDataset {
    let mut records = Vec::new();
    for s in 0..mdp_src.n_states {
        for a in 0..mdp_src.n_actions {
            for (sp, &p) in mdp_src.kernel[s][a].iter().enumerate() {
                if p > 0.0 {
                    records.push(TransitionRecord {
                        s,
                        a,
                        r: mdp_src.reward[s][a],
                        sp,
                        domain: Domain::Src,
                    });
                }
            }
        }
    }
    OfflineDataset::from_records(records, mdp_src.n_states, mdp_src.n_actions)
        .expect("kernel-driven records are in range")
}

/// Smallest radius covering the support condition: every target-kernel
/// successor lies within `eps` of every source-kernel successor of the
/// same state-action pair.
fn covering_eps(mdp_src: &FiniteMdp, mdp_tar: &FiniteMdp) -> f64 {
    let mut eps: f64 = 0.0;
    for s in 0..mdp_src.n_states {
        for a in 0..mdp_src.n_actions {
            for (sp_src, &p_src) in mdp_src.kernel[s][a].iter().enumerate() {
                if p_src <= 0.0 {
                    continue;
                }
                for (sp_tar, &p_tar) in mdp_tar.kernel[s][a].iter().enumerate() {
                    if p_tar > 0.0 {
                        eps = eps.max(mdp_src.metric[sp_src][sp_tar]);
                    }
                }
            }
        }
    }
    eps
}

/// A (source, target) pair sharing everything but the kernel, plus the
/// covering radius and a state-uniform support.
struct BoundInstance {
    mdp_src: FiniteMdp,
    mdp_tar: FiniteMdp,
    support: SupportMask,
    eps: f64,
}

fn random_bound_instance(rng: &mut ChaCha8Rng) -> BoundInstance {
    let n_states = rng.gen_range(3..=10);
    let n_actions = rng.gen_range(2..=3);
    let gamma = rng.gen_range(0.3..0.85);
    let mdp_tar = random_embedded_mdp_sized(rng, n_states, n_actions, gamma);
    let mut mdp_src = mdp_tar.clone();
    for s in 0..n_states {
        for a in 0..n_actions {
            let fresh = random_sparse_row(rng, n_states);
            let mix = rng.gen_range(0.1..0.9);
            for sp in 0..n_states {
                mdp_src.kernel[s][a][sp] =
                    (1.0 - mix) * mdp_tar.kernel[s][a][sp] + mix * fresh[sp];
            }
        }
    }
    let support = random_uniform_support(rng, n_states, n_actions);
    let eps = covering_eps(&mdp_src, &mdp_tar);
    BoundInstance {
        mdp_src,
        mdp_tar,
        support,
        eps,
    }
}

// ---------------------------------------------------------------------------
// Checkers
// ---------------------------------------------------------------------------

/// Gamma-contraction of every kernel-driven backup on random instances.
pub fn check_contraction(trials: usize, seed: u64) -> Result<PropCheckResult> {
    let mut result = PropCheckResult::new("contraction", seed);
    let limits = InstanceLimits {
        max_states: 20,
        max_actions: 5,
        gamma_range: (0.2, 0.95),
    };
    for trial in 0..trials {
        let trial_seed = stream_seed(seed, "contraction", trial as u64);
        let mut rng = stream_rng(trial_seed, "trial", 0);
        let mdp = random_embedded_mdp(&mut rng, &limits);
        let support = random_support(&mut rng, mdp.n_states, mdp.n_actions);
        let eps = rng.gen_range(0.0..0.5 * mdp.diameter().max(0.1));
        let bound = mdp.value_bound();
        let q1 = random_q(&mut rng, mdp.n_states, mdp.n_actions, bound);
        let q2 = random_q(&mut rng, mdp.n_states, mdp.n_actions, bound);
        let input_dist = q1.sup_distance(&q2);
        let mut worst: f64 = 0.0;
        for kind in [
            BackupKind::RcbExact { eps },
            BackupKind::RcbPractical { eps },
            BackupKind::InSample,
            BackupKind::Standard,
        ] {
            let backup = Backup {
                kind,
                mdp: &mdp,
                support: &support,
            };
            let b1 = backup.apply(&q1)?;
            let b2 = backup.apply(&q2)?;
            let excess = b1.sup_distance(&b2) - mdp.gamma * input_dist - CONTRACTION_TOL;
            worst = worst.max(excess);
        }
        result.record(trial, trial_seed, worst.max(0.0));
    }
    Ok(result)
}

/// Dual reformulation ordering on random transport instances:
/// multiplier dual <= Wasserstein-ball primal <= per-sample ball value,
/// the greedy primal matches vertex enumeration, and the located dual
/// optimum sits within the strong-duality gap tolerance.
pub fn check_dual_ordering(trials: usize, seed: u64) -> Result<PropCheckResult> {
    let mut result = PropCheckResult::new("dual_ordering", seed);
    let mut gaps = Vec::with_capacity(trials);
    for trial in 0..trials {
        let trial_seed = stream_seed(seed, "dual_ordering", trial as u64);
        let mut rng = stream_rng(trial_seed, "trial", 0);
        let n = rng.gen_range(2..=6);
        let mut xs: Vec<f64> = (0..n).map(|i| i as f64 + rng.gen_range(0.05..0.95)).collect();
        for i in (1..xs.len()).rev() {
            let j = rng.gen_range(0..=i);
            xs.swap(i, j);
        }
        let metric: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| (xs[i] - xs[j]).abs()).collect())
            .collect();
        let p = random_sparse_row(&mut rng, n);
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let diam = metric
            .iter()
            .flat_map(|r| r.iter().copied())
            .fold(0.0, f64::max);
        let eps = rng.gen_range(0.0..1.2 * diam);

        let primal = w1_ball_inf(&p, &v, &metric, eps)?;
        let enumerated = w1_ball_inf_enumerated(&p, &v, &metric, eps)?;
        let per_sample = per_sample_ball_value(&p, &v, &metric, eps)?;
        let (_, dual_opt) = lambda_dual_supremum(&p, &v, &metric, eps)?;

        // 64-point multiplier grid, as an independent probe of the dual.
        let vspread = v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            - v.iter().copied().fold(f64::INFINITY, f64::min);
        let dmin = metric
            .iter()
            .flat_map(|r| r.iter().copied())
            .filter(|&d| d > 0.0)
            .fold(f64::INFINITY, f64::min);
        let lam_max = if dmin.is_finite() && vspread > 0.0 {
            vspread / dmin
        } else {
            1.0
        };
        let mut grid_sup = f64::NEG_INFINITY;
        for k in 0..64 {
            let lam = lam_max * k as f64 / 63.0;
            grid_sup = grid_sup.max(lambda_dual_value(&p, &v, &metric, eps, lam)?);
        }

        let mut worst: f64 = 0.0;
        worst = worst.max(grid_sup - primal - WEAK_DUALITY_TOL);
        worst = worst.max(dual_opt - primal - WEAK_DUALITY_TOL);
        worst = worst.max(primal - per_sample - BALL_NESTING_TOL);
        worst = worst.max((primal - enumerated).abs() - GREEDY_VS_ENUM_TOL);
        let gap = (primal - dual_opt).max(0.0);
        worst = worst.max(gap - STRONG_DUALITY_GAP_TOL);
        gaps.push(gap);
        result.record(trial, trial_seed, worst.max(0.0));
    }
    gaps.sort_by(f64::total_cmp);
    result.median_gap = Some(if gaps.is_empty() { 0.0 } else { gaps[gaps.len() / 2] });
    Ok(result)
}

/// Train-time sandwich: on pairs satisfying the covering support
/// condition, the robust fixed point stays within
/// `[Q* - 2 gamma eps K / (1 - gamma), Q*]` of the in-sample optimum.
pub fn check_train_time_bound(trials: usize, seed: u64) -> Result<PropCheckResult> {
    let mut result = PropCheckResult::new("train_time_bound", seed);
    for trial in 0..trials {
        let trial_seed = stream_seed(seed, "train_time", trial as u64);
        let mut rng = stream_rng(trial_seed, "trial", 0);
        let inst = random_bound_instance(&mut rng);
        let init = TabularQ::zeros(inst.mdp_src.n_states, inst.mdp_src.n_actions);
        let q_rcb = fixed_point(
            &Backup {
                kind: BackupKind::RcbPractical { eps: inst.eps },
                mdp: &inst.mdp_src,
                support: &inst.support,
            },
            &init,
            SOLVE_TOL,
        )?;
        let q_star = fixed_point(
            &Backup {
                kind: BackupKind::InSample,
                mdp: &inst.mdp_tar,
                support: &inst.support,
            },
            &init,
            SOLVE_TOL,
        )?;
        let k_q = lipschitz_constant(&q_rcb, &inst.mdp_src.metric)?;
        let slack =
            2.0 * inst.mdp_src.gamma * inst.eps * k_q / (1.0 - inst.mdp_src.gamma);
        let mut worst: f64 = 0.0;
        for s in 0..inst.mdp_src.n_states {
            for a in 0..inst.mdp_src.n_actions {
                let (hat, star) = (q_rcb.values[s][a], q_star.values[s][a]);
                worst = worst.max(hat - star - SANDWICH_TOL);
                worst = worst.max(star - slack - SANDWICH_TOL - hat);
            }
        }
        result.record(trial, trial_seed, worst.max(0.0));
    }
    Ok(result)
}

/// Test-time bound: the value of the robust greedy policy under any
/// kernel within the computed Wasserstein budget of the target dominates
/// the robust value estimate at every source-covered state.
pub fn check_test_time_bound(
    trials: usize,
    n_perturbations: usize,
    seed: u64,
) -> Result<PropCheckResult> {
    let mut result = PropCheckResult::new("test_time_bound", seed);
    for trial in 0..trials {
        let trial_seed = stream_seed(seed, "test_time", trial as u64);
        let mut rng = stream_rng(trial_seed, "trial", 0);
        let inst = random_bound_instance(&mut rng);
        let (ns, na) = (inst.mdp_src.n_states, inst.mdp_src.n_actions);
        let q_rcb = fixed_point(
            &Backup {
                kind: BackupKind::RcbPractical { eps: inst.eps },
                mdp: &inst.mdp_src,
                support: &inst.support,
            },
            &TabularQ::zeros(ns, na),
            SOLVE_TOL,
        )?;
        let policy = greedy_in_support(&q_rcb, &inst.support);
        let v_rcb = TabularV {
            values: (0..ns)
                .map(|s| inst.support.masked_max_or_all(&q_rcb, s))
                .collect(),
        };
        let records = kernel_support_dataset(&inst.mdp_src);
        let c = compute_c_threshold(&records, &inst.mdp_tar, inst.eps)?;
        if c == f64::NEG_INFINITY {
            return Err(Error::BadParameter(format!(
                "support condition unsatisfiable in trial {trial}"
            )));
        }
        let mut worst: f64 = 0.0;
        for pert in 0..n_perturbations {
            let mdp_per = sample_perturbed_kernel(
                &inst.mdp_tar,
                c,
                stream_seed(trial_seed, "perturbation", pert as u64),
            )?;
            let v_per = policy_eval_exact(&mdp_per, &policy, SOLVE_TOL)?;
            for s in 0..ns {
                worst = worst.max(v_rcb.values[s] - v_per.values[s] - TEST_TIME_TOL);
            }
        }
        result.record(trial, trial_seed, worst.max(0.0));
    }
    Ok(result)
}

/// Random kernel within per-(s,a) Wasserstein distance `c` of the target:
/// each row moves random portions of its atoms to states within distance
/// `c`, then the distance is verified post hoc.
fn sample_perturbed_kernel(mdp_tar: &FiniteMdp, c: f64, seed: u64) -> Result<FiniteMdp> {
    let mut rng = stream_rng(seed, "kernel", 0);
    let n = mdp_tar.n_states;
    let mut kernel = mdp_tar.kernel.clone();
    for s in 0..n {
        for a in 0..mdp_tar.n_actions {
            let row = &mut kernel[s][a];
            let atoms: Vec<usize> = (0..n).filter(|&sp| row[sp] > 0.0).collect();
            for &sp in &atoms {
                let near: Vec<usize> =
                    (0..n).filter(|&y| mdp_tar.metric[sp][y] <= c).collect();
                if near.len() <= 1 || !rng.gen_bool(0.7) {
                    continue;
                }
                let dest = near[rng.gen_range(0..near.len())];
                if dest == sp {
                    continue;
                }
                let fraction = rng.gen_range(0.0..=1.0);
                let moved = row[sp] * fraction;
                row[sp] -= moved;
                row[dest] += moved;
            }
            let w = wasserstein_1(&mdp_tar.kernel[s][a], row, &mdp_tar.metric)?;
            if w > c + 1e-12 {
                // By construction every atom moves at most c, so this
                // path flags a solver bug rather than a sampling miss.
                return Err(Error::BadParameter(format!(
                    "perturbation sampler exceeded budget: {w} > {c}"
                )));
            }
        }
    }
    let out = FiniteMdp {
        kernel,
        ..mdp_tar.clone()
    };
    out.validate()?;
    Ok(out)
}

/// Limited overestimation of the ensemble-min target against the
/// analytic slack `(1 - (1 - 2 eps)^N) r_max / (1 - gamma)`.
pub fn check_limited_overestimation(
    trials: usize,
    resamples: usize,
    seed: u64,
) -> Result<PropCheckResult> {
    let mut result = PropCheckResult::new("limited_overestimation", seed);
    for trial in 0..trials {
        let trial_seed = stream_seed(seed, "limited_over", trial as u64);
        let mut rng = stream_rng(trial_seed, "trial", 0);
        let limits = InstanceLimits {
            max_states: 8,
            max_actions: 3,
            gamma_range: (0.3, 0.9),
        };
        let mdp = random_embedded_mdp(&mut rng, &limits);
        // Covering dataset: a fixed budget of draws per state-action pair
        // keeps every row estimated and the model error below one half.
        let draws_per_pair = 80;
        let mut records = Vec::new();
        for s in 0..mdp.n_states {
            for a in 0..mdp.n_actions {
                for _ in 0..draws_per_pair {
                    let sp = crate::data::sample_categorical(&mdp.kernel[s][a], &mut rng);
                    records.push(TransitionRecord {
                        s,
                        a,
                        r: mdp.reward[s][a],
                        sp,
                        domain: Domain::Tar,
                    });
                }
            }
        }
        let ds = OfflineDataset::from_records(records, mdp.n_states, mdp.n_actions)?;
        let n_members = 7;
        let ensemble = EnsembleDynamics::fit(
            &ds,
            n_members,
            0.1,
            stream_seed(trial_seed, "ensemble", 0),
        )?;
        let eps_hat = ensemble.tv_error(&mdp)?;
        if eps_hat >= 0.5 {
            return Err(Error::BadParameter(format!(
                "model error {eps_hat} >= 1/2 in trial {trial}"
            )));
        }
        let support = random_support(&mut rng, mdp.n_states, mdp.n_actions);
        let q = random_q(&mut rng, mdp.n_states, mdp.n_actions, mdp.value_bound());
        let vmax: Vec<f64> = (0..mdp.n_states)
            .map(|s| support.masked_max_or_all(&q, s))
            .collect();
        let s = rng.gen_range(0..mdp.n_states);
        let a = rng.gen_range(0..mdp.n_actions);

        let exact_mean: f64 = mdp.kernel[s][a]
            .iter()
            .enumerate()
            .map(|(sp, &p)| p * vmax[sp])
            .sum();
        let slack =
            (1.0 - (1.0 - 2.0 * eps_hat).powi(n_members as i32)) * mdp.value_bound();
        let bound = exact_mean + slack;

        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for resample in 0..resamples {
            let samples =
                ensemble.sample_set(s, a, stream_seed(trial_seed, "resample", resample as u64))?;
            let worst = samples
                .iter()
                .map(|&sp| vmax[sp])
                .fold(f64::INFINITY, f64::min);
            sum += worst;
            sum_sq += worst * worst;
        }
        let mean = sum / resamples as f64;
        let var = (sum_sq / resamples as f64 - mean * mean).max(0.0);
        let se = (var / resamples as f64).sqrt();
        let violation = mean - (bound + 3.0 * se);
        result.record(trial, trial_seed, violation.max(0.0));
    }
    Ok(result)
}

/// Fixed-point uniqueness across initializations, plus agreement of the
/// standard backup with an independent value iteration.
pub fn check_fixed_point_uniqueness(trials: usize, seed: u64) -> Result<PropCheckResult> {
    let mut result = PropCheckResult::new("fixed_point_uniqueness", seed);
    let limits = InstanceLimits {
        max_states: 12,
        max_actions: 4,
        gamma_range: (0.3, 0.8),
    };
    for trial in 0..trials {
        let trial_seed = stream_seed(seed, "uniqueness", trial as u64);
        let mut rng = stream_rng(trial_seed, "trial", 0);
        let mdp = random_embedded_mdp(&mut rng, &limits);
        let support = random_support(&mut rng, mdp.n_states, mdp.n_actions);
        let eps = rng.gen_range(0.0..0.5 * mdp.diameter());
        let bound = mdp.value_bound();
        let mut worst: f64 = 0.0;
        for kind in [
            BackupKind::Standard,
            BackupKind::InSample,
            BackupKind::RcbExact { eps },
            BackupKind::RcbPractical { eps },
        ] {
            let backup = Backup {
                kind,
                mdp: &mdp,
                support: &support,
            };
            let lo = fixed_point(
                &backup,
                &TabularQ::zeros(mdp.n_states, mdp.n_actions),
                SOLVE_TOL,
            )?;
            let hi = fixed_point(
                &backup,
                &TabularQ::constant(mdp.n_states, mdp.n_actions, bound),
                SOLVE_TOL,
            )?;
            worst = worst.max(lo.sup_distance(&hi) - UNIQUENESS_TOL);
            if matches!(kind, BackupKind::Standard) {
                let vi = independent_value_iteration(&mdp);
                worst = worst.max(lo.sup_distance(&vi) - VALUE_ITERATION_TOL);
            }
        }
        result.record(trial, trial_seed, worst.max(0.0));
    }
    Ok(result)
}

/// Plain synchronous optimal value iteration, written without any of the
/// backup machinery under test.
fn independent_value_iteration(mdp: &FiniteMdp) -> TabularQ {
    let mut v = vec![0.0; mdp.n_states];
    for _ in 0..200_000 {
        let mut next = vec![0.0; mdp.n_states];
        let mut delta: f64 = 0.0;
        for s in 0..mdp.n_states {
            let mut best = f64::NEG_INFINITY;
            for a in 0..mdp.n_actions {
                let mut val = mdp.reward[s][a];
                for (sp, &p) in mdp.kernel[s][a].iter().enumerate() {
                    val += mdp.gamma * p * v[sp];
                }
                best = best.max(val);
            }
            delta = delta.max((best - v[s]).abs());
            next[s] = best;
        }
        v = next;
        if delta <= 1e-12 {
            break;
        }
    }
    let mut q = TabularQ::zeros(mdp.n_states, mdp.n_actions);
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let mut val = mdp.reward[s][a];
            for (sp, &p) in mdp.kernel[s][a].iter().enumerate() {
                val += mdp.gamma * p * v[sp];
            }
            q.values[s][a] = val;
        }
    }
    q
}

/// Default trial counts for the full battery.
pub const DEFAULT_CONTRACTION_TRIALS: usize = 200;
pub const DEFAULT_DUAL_TRIALS: usize = 200;
pub const DEFAULT_TRAIN_BOUND_TRIALS: usize = 50;
pub const DEFAULT_TEST_BOUND_TRIALS: usize = 30;
pub const DEFAULT_TEST_BOUND_PERTURBATIONS: usize = 20;
pub const DEFAULT_OVERESTIMATION_TRIALS: usize = 50;
pub const DEFAULT_OVERESTIMATION_RESAMPLES: usize = 2000;
pub const DEFAULT_UNIQUENESS_TRIALS: usize = 100;

/// Run every checker with its default trial count.
pub fn run_all(seed: u64) -> Result<Vec<PropCheckResult>> {
    Ok(vec![
        check_contraction(DEFAULT_CONTRACTION_TRIALS, seed)?,
        check_fixed_point_uniqueness(DEFAULT_UNIQUENESS_TRIALS, seed)?,
        check_dual_ordering(DEFAULT_DUAL_TRIALS, seed)?,
        check_train_time_bound(DEFAULT_TRAIN_BOUND_TRIALS, seed)?,
        check_test_time_bound(
            DEFAULT_TEST_BOUND_TRIALS,
            DEFAULT_TEST_BOUND_PERTURBATIONS,
            seed,
        )?,
        check_limited_overestimation(
            DEFAULT_OVERESTIMATION_TRIALS,
            DEFAULT_OVERESTIMATION_RESAMPLES,
            seed,
        )?,
    ])
}
