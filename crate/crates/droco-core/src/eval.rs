//! Test-time evaluation under clean and perturbed target dynamics.
//!
//! Perturbations only ever touch the transition kernel — rewards,
//! discount, initial distribution, and metric pass through untouched.
//! Kinematic and morphology perturbations mirror the source-domain shift
//! construction at three intensity levels; the min-value attack relocates
//! each realized next state to the worst state (under the evaluated
//! agent's own value table) within a metric ball, which keeps the
//! per-state-action Wasserstein distance to the clean kernel below the
//! attack scale.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{generate_dataset, sample_categorical, subsample, Domain, Quality};
use crate::grid::{apply_shift_kernel, build_pair, GridAction, GridSpec, Rotation, Shift};
use crate::mdp::{
    greedy_policy, optimal_q, policy_eval_exact, policy_return, FiniteMdp, TabularPolicy, TabularV,
};
use crate::seeding::{stream_rng, stream_seed};
use crate::train::{train, train_baseline_merged, DrocoConfig, TrainState};
use crate::{Error, Result};

/// Perturbation intensity tiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Easy,
    Medium,
    Hard,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Easy, Level::Medium, Level::Hard];

    pub fn label(self) -> &'static str {
        match self {
            Level::Easy => "easy",
            Level::Medium => "medium",
            Level::Hard => "hard",
        }
    }

    /// Jam probabilities per tier.
    fn jam_prob(self) -> f64 {
        match self {
            Level::Easy => 0.2,
            Level::Medium => 0.5,
            Level::Hard => 0.8,
        }
    }

    /// Rotation mix weights per tier.
    fn mix_weight(self) -> f64 {
        match self {
            Level::Easy => 0.15,
            Level::Medium => 0.35,
            Level::Hard => 0.6,
        }
    }
}

/// A test-time dynamics perturbation, resolved to concrete kernel edits
/// by [`perturb`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PerturbationSpec {
    KinematicAnalog {
        jammed_action: GridAction,
        level: Level,
    },
    MorphologyAnalog {
        rotation: Rotation,
        level: Level,
    },
    MinVAdversarial {
        scale: f64,
    },
}

impl PerturbationSpec {
    pub fn condition(&self) -> &'static str {
        match self {
            PerturbationSpec::KinematicAnalog { .. } => "kinematic",
            PerturbationSpec::MorphologyAnalog { .. } => "morphology",
            PerturbationSpec::MinVAdversarial { .. } => "min_v",
        }
    }

    pub fn level_or_scale(&self) -> String {
        match self {
            PerturbationSpec::KinematicAnalog { level, .. }
            | PerturbationSpec::MorphologyAnalog { level, .. } => level.label().to_string(),
            PerturbationSpec::MinVAdversarial { scale } => format!("{scale}"),
        }
    }

    /// The standard nine-condition battery against a reference shift
    /// direction: three tiers each of kinematic, morphology, and
    /// min-value perturbations.
    pub fn standard_battery(jammed_action: GridAction, rotation: Rotation) -> Vec<Self> {
        let mut specs = Vec::new();
        for level in Level::ALL {
            specs.push(PerturbationSpec::KinematicAnalog {
                jammed_action,
                level,
            });
        }
        for level in Level::ALL {
            specs.push(PerturbationSpec::MorphologyAnalog { rotation, level });
        }
        for scale in [1.0, 2.0, 3.0] {
            specs.push(PerturbationSpec::MinVAdversarial { scale });
        }
        specs
    }
}

/// Apply a perturbation to the target MDP.
///
/// The min-value attack needs the evaluated agent's value table
/// (`attack_v`); passing `None` for it is an unresolved spec.
pub fn perturb(
    mdp_tar: &FiniteMdp,
    spec: &PerturbationSpec,
    attack_v: Option<&TabularV>,
) -> Result<FiniteMdp> {
    let kernel = match *spec {
        PerturbationSpec::KinematicAnalog {
            jammed_action,
            level,
        } => apply_shift_kernel(
            &mdp_tar.kernel,
            Shift::KinematicAnalog {
                jammed_action,
                jam_prob: level.jam_prob(),
            },
        )?,
        PerturbationSpec::MorphologyAnalog { rotation, level } => apply_shift_kernel(
            &mdp_tar.kernel,
            Shift::MorphologyAnalog {
                rotation,
                mix_weight: level.mix_weight(),
            },
        )?,
        PerturbationSpec::MinVAdversarial { scale } => {
            if scale < 0.0 {
                return Err(Error::BadParameter(format!("scale {scale} must be >= 0")));
            }
            let v = attack_v.ok_or_else(|| {
                Error::BadParameter("min_v perturbation needs the agent value table".into())
            })?;
            if v.values.len() != mdp_tar.n_states {
                return Err(Error::DimensionMismatch("attack value table".into()));
            }
            // Worst in-ball state per realized next state, lowest index
            // on ties.
            let relocate: Vec<usize> = (0..mdp_tar.n_states)
                .map(|sp| {
                    let mut best = sp;
                    let mut best_v = f64::INFINITY;
                    for sbar in 0..mdp_tar.n_states {
                        if mdp_tar.metric[sp][sbar] <= scale && v.values[sbar] < best_v {
                            best_v = v.values[sbar];
                            best = sbar;
                        }
                    }
                    best
                })
                .collect();
            let mut kernel =
                vec![vec![vec![0.0; mdp_tar.n_states]; mdp_tar.n_actions]; mdp_tar.n_states];
            for s in 0..mdp_tar.n_states {
                for a in 0..mdp_tar.n_actions {
                    for (sp, &p) in mdp_tar.kernel[s][a].iter().enumerate() {
                        if p > 0.0 {
                            kernel[s][a][relocate[sp]] += p;
                        }
                    }
                }
            }
            kernel
        }
    };
    let out = FiniteMdp {
        kernel,
        ..mdp_tar.clone()
    };
    out.validate()?;
    Ok(out)
}

/// How a policy is scored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EvalMode {
    /// Expected discounted return from the initial distribution via exact
    /// policy evaluation (zero standard deviation).
    Exact,
    /// Episodic Monte Carlo rollouts.
    MonteCarlo {
        episodes: usize,
        horizon: usize,
        seed: u64,
    },
}

/// Mean and standard deviation of the discounted return.
pub fn evaluate(policy: &TabularPolicy, mdp: &FiniteMdp, mode: EvalMode) -> Result<(f64, f64)> {
    policy.validate(mdp.n_states, mdp.n_actions)?;
    match mode {
        EvalMode::Exact => {
            let v = policy_eval_exact(mdp, policy, 1e-10)?;
            let mean = mdp
                .init_dist
                .iter()
                .zip(&v.values)
                .map(|(p, val)| p * val)
                .sum();
            Ok((mean, 0.0))
        }
        EvalMode::MonteCarlo {
            episodes,
            horizon,
            seed,
        } => {
            if horizon == 0 || episodes == 0 {
                return Err(Error::BadParameter(
                    "episodes and horizon must be positive".into(),
                ));
            }
            let mut rng = stream_rng(seed, "evaluate", 0);
            let mut returns = Vec::with_capacity(episodes);
            for _ in 0..episodes {
                let mut s = sample_categorical(&mdp.init_dist, &mut rng);
                let mut total = 0.0;
                let mut discount = 1.0;
                for _ in 0..horizon {
                    let a = sample_categorical(&policy.probs[s], &mut rng);
                    total += discount * mdp.reward[s][a];
                    discount *= mdp.gamma;
                    s = sample_categorical(&mdp.kernel[s][a], &mut rng);
                }
                returns.push(total);
            }
            let mean = returns.iter().sum::<f64>() / episodes as f64;
            let var = if episodes > 1 {
                returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (episodes - 1) as f64
            } else {
                0.0
            };
            Ok((mean, var.sqrt()))
        }
    }
}

/// Reference returns used by the normalized score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreScale {
    pub j_random: f64,
    pub j_expert: f64,
}

impl ScoreScale {
    /// Exact returns of the uniform-random policy and of the exact
    /// optimal policy on `mdp`.
    pub fn for_mdp(mdp: &FiniteMdp) -> Result<Self> {
        let random = TabularPolicy::uniform(mdp.n_states, mdp.n_actions);
        let j_random = policy_return(mdp, &random, 1e-10)?;
        let q = optimal_q(mdp, 1e-10)?;
        let j_expert = policy_return(mdp, &greedy_policy(&q), 1e-10)?;
        Ok(Self { j_random, j_expert })
    }

    /// `(ret - J_random) / (J_expert - J_random) * 100`.
    pub fn normalized_score(&self, ret: f64) -> Result<f64> {
        let denom = self.j_expert - self.j_random;
        if denom.abs() < 1e-12 {
            return Err(Error::BadParameter(
                "degenerate score scale: expert equals random".into(),
            ));
        }
        Ok((ret - self.j_random) / denom * 100.0)
    }
}

/// Normalized score of a raw return on the target MDP.
pub fn normalized_score(ret: f64, mdp_tar: &FiniteMdp) -> Result<f64> {
    ScoreScale::for_mdp(mdp_tar)?.normalized_score(ret)
}

/// One evaluated condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub condition: String,
    pub level_or_scale: String,
    pub seed: u64,
    pub return_mean: f64,
    pub return_std: f64,
    pub norm_score: f64,
    pub degradation_pct: f64,
}

/// Structured evaluation output plus CSV rendering.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "condition,level_or_scale,seed,return_mean,return_std,norm_score,degradation_pct\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.condition,
                r.level_or_scale,
                r.seed,
                r.return_mean,
                r.return_std,
                r.norm_score,
                r.degradation_pct
            ));
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Mean degradation over seeds for one condition/level.
    pub fn mean_degradation(&self, condition: &str, level_or_scale: &str) -> Option<f64> {
        let matching: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.condition == condition && r.level_or_scale == level_or_scale)
            .map(|r| r.degradation_pct)
            .collect();
        if matching.is_empty() {
            None
        } else {
            Some(matching.iter().sum::<f64>() / matching.len() as f64)
        }
    }
}

/// Evaluate a policy under the clean target and every perturbation in
/// `specs`, across seeds.
///
/// Degradation of a perturbed run is measured against the same seed's
/// clean run: `(clean - perturbed) / |clean - J_random| * 100`. In exact
/// mode the eval seed only labels rows; returns are deterministic.
pub fn robustness_curve(
    policy: &TabularPolicy,
    attack_v: &TabularV,
    mdp_tar: &FiniteMdp,
    specs: &[PerturbationSpec],
    seeds: &[u64],
    mode: EvalMode,
) -> Result<EvalReport> {
    if seeds.is_empty() {
        return Err(Error::BadParameter("robustness_curve needs seeds".into()));
    }
    let scale = ScoreScale::for_mdp(mdp_tar)?;
    let mut rows = Vec::new();
    let perturbed: Vec<FiniteMdp> = specs
        .iter()
        .map(|spec| perturb(mdp_tar, spec, Some(attack_v)))
        .collect::<Result<_>>()?;
    for &seed in seeds {
        let seeded = |cond_index: u64| match mode {
            EvalMode::Exact => EvalMode::Exact,
            EvalMode::MonteCarlo {
                episodes, horizon, ..
            } => EvalMode::MonteCarlo {
                episodes,
                horizon,
                seed: stream_seed(seed, "robustness-curve", cond_index),
            },
        };
        let (clean_mean, clean_std) = evaluate(policy, mdp_tar, seeded(0))?;
        let clean_floor = (clean_mean - scale.j_random).abs().max(1e-12);
        rows.push(EvalRow {
            condition: "clean".into(),
            level_or_scale: "0".into(),
            seed,
            return_mean: clean_mean,
            return_std: clean_std,
            norm_score: scale.normalized_score(clean_mean)?,
            degradation_pct: 0.0,
        });
        for (k, (spec, mdp_pert)) in specs.iter().zip(&perturbed).enumerate() {
            let (mean, std) = evaluate(policy, mdp_pert, seeded(k as u64 + 1))?;
            rows.push(EvalRow {
                condition: spec.condition().into(),
                level_or_scale: spec.level_or_scale(),
                seed,
                return_mean: mean,
                return_std: std,
                norm_score: scale.normalized_score(mean)?,
                degradation_pct: (clean_mean - mean) / clean_floor * 100.0,
            });
        }
    }
    Ok(EvalReport { rows })
}

/// Configuration of the data-size sensitivity study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub spec_src: GridSpec,
    pub spec_tar: GridSpec,
    pub quality: Quality,
    pub n_src: usize,
    /// Records collected for the target domain before subsampling.
    pub n_tar_full: usize,
    pub horizon: usize,
    pub droco: DrocoConfig,
    pub fractions: Vec<f64>,
    pub seeds: Vec<u64>,
    pub specs: Vec<PerturbationSpec>,
}

impl StudyConfig {
    /// The default study, calibrated so the directional phenomena
    /// separate cleanly on the 8x8 grid: a fully jammed climb actuator in
    /// the source domain, broad-coverage replay-mix data, slip 0.15, and
    /// a test battery whose kinematic leg jams the orthogonal actuator
    /// (test-time failures rarely repeat the training-time shift).
    pub fn default_study() -> Self {
        let mut spec_tar = GridSpec::default_8x8();
        spec_tar.slip_prob = 0.15;
        let mut spec_src = spec_tar.clone();
        spec_src.shift = Shift::KinematicAnalog {
            jammed_action: GridAction::Up,
            jam_prob: 1.0,
        };
        StudyConfig {
            spec_src,
            spec_tar,
            quality: Quality::MediumReplayMix,
            n_src: 20_000,
            n_tar_full: 20_000,
            horizon: 40,
            droco: DrocoConfig {
                steps: 30_000,
                ..DrocoConfig::default()
            },
            fractions: vec![0.1, 1.0],
            seeds: (0..8).collect(),
            specs: PerturbationSpec::standard_battery(GridAction::Right, Rotation::Quarter),
        }
    }
}

/// One study measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub algorithm: String,
    pub fraction: f64,
    pub condition: String,
    pub level_or_scale: String,
    pub seed: u64,
    pub clean_score: f64,
    pub score: f64,
    pub degradation_pct: f64,
}

/// Aggregated study output.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StudyReport {
    pub rows: Vec<StudyRow>,
}

impl StudyReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "algorithm,fraction,condition,level_or_scale,seed,clean_score,score,degradation_pct\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.algorithm,
                r.fraction,
                r.condition,
                r.level_or_scale,
                r.seed,
                r.clean_score,
                r.score,
                r.degradation_pct
            ));
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Mean degradation over seeds for (algorithm, fraction, condition,
    /// level), or `None` when nothing matches.
    pub fn mean_degradation(
        &self,
        algorithm: &str,
        fraction: f64,
        condition: &str,
        level_or_scale: &str,
    ) -> Option<f64> {
        let matching: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| {
                r.algorithm == algorithm
                    && (r.fraction - fraction).abs() < 1e-12
                    && r.condition == condition
                    && r.level_or_scale == level_or_scale
            })
            .map(|r| r.degradation_pct)
            .collect();
        if matching.is_empty() {
            None
        } else {
            Some(matching.iter().sum::<f64>() / matching.len() as f64)
        }
    }
}

/// Train one (droco, baseline) pair on freshly collected data and return
/// their states with the target MDP. Shared across the study and the
/// command-line pipeline.
pub fn train_pair_on_fresh_data(
    study: &StudyConfig,
    fraction: f64,
    seed: u64,
) -> Result<(FiniteMdp, TrainState, TrainState)> {
    let (mdp_src, mdp_tar) = build_pair(&study.spec_src, &study.spec_tar)?;
    let ds_src = generate_dataset(
        &mdp_src,
        study.quality,
        study.n_src,
        study.horizon,
        Domain::Src,
        stream_seed(seed, "study/src-data", 0),
    )?;
    let ds_tar_full = generate_dataset(
        &mdp_tar,
        study.quality,
        study.n_tar_full,
        study.horizon,
        Domain::Tar,
        stream_seed(seed, "study/tar-data", 0),
    )?;
    let ds_tar = if fraction < 1.0 {
        subsample(&ds_tar_full, fraction, stream_seed(seed, "study/subsample", 0))?
    } else {
        ds_tar_full
    };
    let cfg = DrocoConfig {
        seed: stream_seed(seed, "study/train", 0),
        ..study.droco.clone()
    };
    let droco = train(&ds_src, &ds_tar, mdp_tar.r_max, &cfg)?;
    let baseline = train_baseline_merged(&ds_src, &ds_tar, mdp_tar.r_max, &cfg)?;
    Ok((mdp_tar, droco, baseline))
}

/// The data-size sensitivity study: per fraction and seed, train both
/// learners, evaluate exactly under the clean target and every
/// perturbation, and log normalized scores and degradations.
pub fn data_size_study(study: &StudyConfig) -> Result<StudyReport> {
    if study.fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
        return Err(Error::BadParameter("fractions must lie in (0,1]".into()));
    }
    let mut rows = Vec::new();
    for &fraction in &study.fractions {
        for &seed in &study.seeds {
            let (mdp_tar, droco, baseline) = train_pair_on_fresh_data(study, fraction, seed)?;
            for (name, state) in [("droco", &droco), ("baseline", &baseline)] {
                let report = robustness_curve(
                    &state.policy,
                    &state.v,
                    &mdp_tar,
                    &study.specs,
                    &[seed],
                    EvalMode::Exact,
                )?;
                let clean_score = report
                    .rows
                    .iter()
                    .find(|r| r.condition == "clean")
                    .map(|r| r.norm_score)
                    .unwrap_or(f64::NAN);
                for r in &report.rows {
                    if r.condition == "clean" {
                        continue;
                    }
                    rows.push(StudyRow {
                        algorithm: name.into(),
                        fraction,
                        condition: r.condition.clone(),
                        level_or_scale: r.level_or_scale.clone(),
                        seed,
                        clean_score,
                        score: r.norm_score,
                        degradation_pct: r.degradation_pct,
                    });
                }
            }
        }
    }
    Ok(StudyReport { rows })
}
