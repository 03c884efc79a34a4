//! Tabular training loop: expectile value regression, Huber Bellman
//! updates with a dynamic value penalty, and advantage-weighted policy
//! extraction; plus the merged-data baseline trained without any of the
//! robustness machinery.
//!
//! Per step the loop samples a source and a target batch, regresses V
//! toward the in-sample maximum of the target Q table through the
//! asymmetric expectile loss, penalizes source TD targets by the gap
//! between the observed next-state value and the worst ensemble-predicted
//! next-state value, applies the Huber loss to source residuals (plain
//! squared loss on target data), and tracks a slow target copy of Q.
//! The policy is extracted at the end as a support-masked softmax over
//! advantages weighted by the empirical behavior policy — the closed-form
//! maximizer of the advantage-weighted regression objective in tabular
//! form.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Domain, OfflineDataset, TransitionRecord};
use crate::ensemble::EnsembleDynamics;
use crate::mdp::{TabularPolicy, TabularQ, TabularV};
use crate::operators::SupportMask;
use crate::seeding::{stream_rng, stream_seed};
use crate::{Error, Result};

/// Hyperparameters of the training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrocoConfig {
    /// Penalty coefficient. 1.0 recovers the ensemble robust target
    /// exactly; smaller values trade pessimism for value.
    pub beta: f64,
    /// Huber transition threshold.
    pub delta: f64,
    /// Expectile for the V regression.
    pub tau: f64,
    /// Inverse temperature of the advantage-weighted extraction.
    pub awr_alpha: f64,
    pub gamma: f64,
    pub n_members: usize,
    pub smoothing_alpha: f64,
    pub q_lr: f64,
    pub v_lr: f64,
    pub batch_src: usize,
    pub batch_tar: usize,
    pub steps: usize,
    /// Target-table update rate (weight of the new Q in the moving average).
    pub mu: f64,
    pub seed: u64,
}

impl Default for DrocoConfig {
    fn default() -> Self {
        DrocoConfig {
            beta: 0.5,
            delta: 30.0,
            tau: 0.7,
            awr_alpha: 3.0,
            gamma: 0.99,
            n_members: 7,
            // Small enough that smoothing mass (alpha * n_states) stays
            // well below per-pair visit counts at desk scale; larger
            // values wash thin rows toward uniform and turn the value
            // penalty into an indiscriminate tax.
            smoothing_alpha: 0.001,
            q_lr: 0.1,
            v_lr: 0.1,
            batch_src: 128,
            batch_tar: 128,
            steps: 50_000,
            mu: 0.005,
            seed: 0,
        }
    }
}

impl DrocoConfig {
    pub fn validate(&self) -> Result<()> {
        let checks: [(bool, &str); 10] = [
            (self.beta >= 0.0, "beta must be >= 0"),
            (self.delta > 0.0, "delta must be > 0"),
            (self.tau > 0.0 && self.tau < 1.0, "tau must be in (0,1)"),
            (self.awr_alpha > 0.0, "awr_alpha must be > 0"),
            (self.gamma > 0.0 && self.gamma < 1.0, "gamma must be in (0,1)"),
            (self.n_members >= 1, "n_members must be >= 1"),
            (self.smoothing_alpha > 0.0, "smoothing_alpha must be > 0"),
            (self.q_lr > 0.0 && self.v_lr > 0.0, "learning rates must be > 0"),
            (self.mu > 0.0 && self.mu <= 1.0, "mu must be in (0,1]"),
            (self.batch_src > 0 && self.batch_tar > 0, "batch sizes must be > 0"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::BadParameter(msg.into()));
            }
        }
        Ok(())
    }
}

/// Asymmetric squared loss `|tau - 1(u<0)| * u^2`.
pub fn expectile_loss(u: f64, tau: f64) -> Result<f64> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::BadParameter(format!("tau {tau} not in (0,1)")));
    }
    let w = if u < 0.0 { 1.0 - tau } else { tau };
    Ok(w * u * u)
}

/// Huber loss: `0.5 a^2` inside the threshold, `delta (|a| - 0.5 delta)`
/// outside.
pub fn huber(a: f64, delta: f64) -> Result<f64> {
    if delta <= 0.0 {
        return Err(Error::BadParameter(format!("delta {delta} must be > 0")));
    }
    Ok(if a.abs() < delta {
        0.5 * a * a
    } else {
        delta * (a.abs() - 0.5 * delta)
    })
}

/// Derivative of [`huber`]: clamps the residual to the threshold.
fn huber_grad(a: f64, delta: f64) -> f64 {
    a.clamp(-delta, delta)
}

/// Dynamic value penalty of a record: zero on target-domain data; on
/// source data, the observed next-state value minus the worst value among
/// one next-state sample per ensemble member.
pub fn value_penalty(
    record: &TransitionRecord,
    v: &TabularV,
    ensemble: &EnsembleDynamics,
    seed: u64,
) -> Result<f64> {
    match record.domain {
        Domain::Tar => Ok(0.0),
        Domain::Src => {
            let samples = ensemble.sample_set(record.s, record.a, seed)?;
            let worst = samples
                .iter()
                .map(|&sp| v.values[sp])
                .fold(f64::INFINITY, f64::min);
            Ok(v.values[record.sp] - worst)
        }
    }
}

/// Penalized TD target `r + gamma * (V(s') - beta * penalty)`.
pub fn td_target(record: &TransitionRecord, v: &TabularV, penalty: f64, beta: f64, gamma: f64) -> f64 {
    record.r + gamma * (v.values[record.sp] - beta * penalty)
}

/// One row of the loss trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTraceRow {
    pub step: usize,
    pub v_loss: f64,
    pub q_loss_src: f64,
    pub q_loss_tar: f64,
    pub mean_penalty: f64,
}

/// Everything a finished (or zero-step) run carries. The ensemble is
/// present for the robust learner and absent for the merged baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub q: TabularQ,
    pub q_target: TabularQ,
    pub v: TabularV,
    pub policy: TabularPolicy,
    pub ensemble: Option<EnsembleDynamics>,
    pub steps_done: usize,
    pub trace: Vec<LossTraceRow>,
}

impl TrainState {
    /// Serialize the value tables and policy to JSON.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Write the loss trace as CSV.
    pub fn save_trace_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("step,v_loss,q_loss_src,q_loss_tar,mean_penalty\n");
        for row in &self.trace {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                row.step, row.v_loss, row.q_loss_src, row.q_loss_tar, row.mean_penalty
            ));
        }
        let mut f = fs::File::create(path)?;
        f.write_all(out.as_bytes())?;
        Ok(())
    }
}

/// How often a trace row is recorded.
const TRACE_EVERY: usize = 100;

/// Train with the robust source-domain machinery (value penalty + Huber).
///
/// `r_max` bounds the admissible rewards and feeds the divergence guard
/// `10 * r_max / (1 - gamma)`. Deterministic given `cfg.seed`; the random
/// streams are laid out so that runs differing only in `beta` or `delta`
/// consume identical randomness.
pub fn train(
    ds_src: &OfflineDataset,
    ds_tar: &OfflineDataset,
    r_max: f64,
    cfg: &DrocoConfig,
) -> Result<TrainState> {
    if ds_tar.is_empty() {
        return Err(Error::BadParameter("target dataset must be nonempty".into()));
    }
    let ensemble = EnsembleDynamics::fit(
        ds_tar,
        cfg.n_members,
        cfg.smoothing_alpha,
        stream_seed(cfg.seed, "train/ensemble", 0),
    )?;
    run_loop(ds_src, ds_tar, r_max, cfg, Some(ensemble))
}

/// Merged-data baseline: the identical loop with beta pinned to zero and
/// the plain squared loss on all records (no ensemble, no Huber).
pub fn train_baseline_merged(
    ds_src: &OfflineDataset,
    ds_tar: &OfflineDataset,
    r_max: f64,
    cfg: &DrocoConfig,
) -> Result<TrainState> {
    run_loop(ds_src, ds_tar, r_max, cfg, None)
}

fn run_loop(
    ds_src: &OfflineDataset,
    ds_tar: &OfflineDataset,
    r_max: f64,
    cfg: &DrocoConfig,
    ensemble: Option<EnsembleDynamics>,
) -> Result<TrainState> {
    cfg.validate()?;
    if ds_src.is_empty() && ds_tar.is_empty() {
        return Err(Error::BadParameter("both datasets are empty".into()));
    }
    if ds_src.n_states != ds_tar.n_states || ds_src.n_actions != ds_tar.n_actions {
        return Err(Error::DimensionMismatch("train datasets".into()));
    }
    let (ns, na) = (ds_src.n_states, ds_src.n_actions);
    let merged = ds_src.merge(ds_tar)?;
    let support = SupportMask::from_dataset_or_full(&merged);
    let behavior = merged.empirical_behavior();

    let mut q = TabularQ::zeros(ns, na);
    let mut q_target = TabularQ::zeros(ns, na);
    let mut v = TabularV::zeros(ns);
    let mut trace = Vec::new();
    let guard = 10.0 * r_max / (1.0 - cfg.gamma);

    let mut rng_src = stream_rng(cfg.seed, "train/batch-src", 0);
    let mut rng_tar = stream_rng(cfg.seed, "train/batch-tar", 0);

    for step in 0..cfg.steps {
        let batch_src: Vec<usize> = if ds_src.is_empty() {
            Vec::new()
        } else {
            (0..cfg.batch_src)
                .map(|_| rng_src.gen_range(0..ds_src.len()))
                .collect()
        };
        let batch_tar: Vec<usize> = if ds_tar.is_empty() {
            Vec::new()
        } else {
            (0..cfg.batch_tar)
                .map(|_| rng_tar.gen_range(0..ds_tar.len()))
                .collect()
        };

        // Expectile regression of V toward the slow Q copy.
        let union_len = (batch_src.len() + batch_tar.len()) as f64;
        let mut grad_v = vec![0.0f64; ns];
        let mut v_loss = 0.0;
        {
            let mut absorb = |rec: &TransitionRecord| {
                let u = q_target.values[rec.s][rec.a] - v.values[rec.s];
                let w = if u < 0.0 { 1.0 - cfg.tau } else { cfg.tau };
                grad_v[rec.s] += -2.0 * w * u / union_len;
                v_loss += w * u * u / union_len;
            };
            for &i in &batch_src {
                absorb(&ds_src.records[i]);
            }
            for &i in &batch_tar {
                absorb(&ds_tar.records[i]);
            }
        }
        for s in 0..ns {
            v.values[s] -= cfg.v_lr * grad_v[s];
        }

        // Q regression: penalized Huber targets on source records when the
        // robust machinery is on, plain squared targets otherwise.
        let mut grad_q = vec![vec![0.0f64; na]; ns];
        let mut q_loss_src = 0.0;
        let mut q_loss_tar = 0.0;
        let mut penalty_sum = 0.0;
        if !batch_src.is_empty() {
            let n_src = batch_src.len() as f64;
            for (pos, &i) in batch_src.iter().enumerate() {
                let rec = &ds_src.records[i];
                let (penalty, grad, loss) = match &ensemble {
                    Some(ens) => {
                        // Fresh member samples every step.
                        let sample_seed = stream_seed(
                            cfg.seed,
                            "train/penalty",
                            (step * cfg.batch_src + pos) as u64,
                        );
                        let pen = value_penalty(rec, &v, ens, sample_seed)?;
                        let y = td_target(rec, &v, pen, cfg.beta, cfg.gamma);
                        let res = q.values[rec.s][rec.a] - y;
                        (pen, huber_grad(res, cfg.delta), huber(res, cfg.delta)?)
                    }
                    None => {
                        let y = td_target(rec, &v, 0.0, 0.0, cfg.gamma);
                        let res = q.values[rec.s][rec.a] - y;
                        (0.0, res, 0.5 * res * res)
                    }
                };
                penalty_sum += penalty;
                grad_q[rec.s][rec.a] += grad / n_src;
                q_loss_src += loss / n_src;
            }
        }
        if !batch_tar.is_empty() {
            let n_tar = batch_tar.len() as f64;
            for &i in &batch_tar {
                let rec = &ds_tar.records[i];
                let y = td_target(rec, &v, 0.0, 0.0, cfg.gamma);
                let res = q.values[rec.s][rec.a] - y;
                grad_q[rec.s][rec.a] += res / n_tar;
                q_loss_tar += 0.5 * res * res / n_tar;
            }
        }
        for s in 0..ns {
            for a in 0..na {
                q.values[s][a] -= cfg.q_lr * grad_q[s][a];
            }
        }

        // Slow target copy.
        for s in 0..ns {
            for a in 0..na {
                q_target.values[s][a] += cfg.mu * (q.values[s][a] - q_target.values[s][a]);
            }
        }

        // Divergence guard.
        for (table, values) in [("Q", &q.values), ("Q_target", &q_target.values)] {
            for (s, row) in values.iter().enumerate() {
                for (a, &x) in row.iter().enumerate() {
                    if !x.is_finite() || x.abs() > guard {
                        return Err(Error::Diverged {
                            step,
                            table,
                            index: format!("({s},{a})"),
                            value: x,
                            bound: guard,
                        });
                    }
                }
            }
        }
        for (s, &x) in v.values.iter().enumerate() {
            if !x.is_finite() || x.abs() > guard {
                return Err(Error::Diverged {
                    step,
                    table: "V",
                    index: format!("({s})"),
                    value: x,
                    bound: guard,
                });
            }
        }

        if step % TRACE_EVERY == 0 || step + 1 == cfg.steps {
            trace.push(LossTraceRow {
                step,
                v_loss,
                q_loss_src,
                q_loss_tar,
                mean_penalty: if batch_src.is_empty() {
                    0.0
                } else {
                    penalty_sum / batch_src.len() as f64
                },
            });
        }
    }

    let policy = extract_awr_policy(&q, &v, &support, &behavior, cfg.awr_alpha);
    Ok(TrainState {
        q,
        q_target,
        v,
        policy,
        ensemble,
        steps_done: cfg.steps,
        trace,
    })
}

/// Closed-form advantage-weighted extraction:
/// `pi(a|s) propto mu_hat(a|s) * exp(alpha * (Q(s,a) - V(s)))` over the
/// behavior support, renormalized. Unvisited states fall back to uniform.
pub fn extract_awr_policy(
    q: &TabularQ,
    v: &TabularV,
    support: &SupportMask,
    behavior: &[Option<Vec<f64>>],
    alpha: f64,
) -> TabularPolicy {
    let (ns, na) = (q.n_states(), q.n_actions());
    let mut probs = vec![vec![0.0f64; na]; ns];
    for s in 0..ns {
        match &behavior[s] {
            None => {
                probs[s] = vec![1.0 / na as f64; na];
            }
            Some(mu) => {
                // Shift advantages by the in-support max before
                // exponentiating; the normalized result is unchanged.
                let shift = support
                    .actions(s)
                    .iter()
                    .map(|&a| alpha * (q.values[s][a] - v.values[s]))
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for &a in support.actions(s) {
                    let adv = alpha * (q.values[s][a] - v.values[s]);
                    let w = mu[a] * (adv - shift).exp();
                    probs[s][a] = w;
                    total += w;
                }
                for p in probs[s].iter_mut() {
                    *p /= total;
                }
            }
        }
    }
    TabularPolicy { probs }
}
