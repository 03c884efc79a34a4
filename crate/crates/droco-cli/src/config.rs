//! Run configuration: a flat, typed key-value document with sections.
//! Unknown keys are rejected so stale configs fail loudly.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use droco_core::data::Quality;
use droco_core::grid::{GridAction, GridSpec, Rotation, Shift};
use droco_core::train::DrocoConfig;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub grid: GridSection,
    pub shift: ShiftSection,
    pub data: DataSection,
    pub droco: DrocoSection,
    pub eval: EvalSection,
    pub sweep: SweepSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub width: usize,
    pub height: usize,
    pub slip_prob: f64,
    pub goal_cell: usize,
    pub step_reward: f64,
    pub goal_reward: f64,
    pub gamma: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        let spec = GridSpec::default_8x8();
        GridSection {
            width: spec.width,
            height: spec.height,
            slip_prob: spec.slip_prob,
            goal_cell: spec.goal_cell,
            step_reward: spec.step_reward,
            goal_reward: spec.goal_reward,
            gamma: spec.gamma,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShiftSection {
    /// `none`, `kinematic`, or `morph`.
    pub kind: String,
    pub jam_action: String,
    pub jam_prob: f64,
    pub rotation: String,
    pub mix_weight: f64,
}

impl Default for ShiftSection {
    fn default() -> Self {
        ShiftSection {
            kind: "kinematic".into(),
            jam_action: "up".into(),
            jam_prob: 1.0,
            rotation: "quarter".into(),
            mix_weight: 0.3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub quality: String,
    pub n_src: usize,
    pub n_tar_full: usize,
    pub fraction: f64,
    pub horizon: usize,
    /// Optional pre-generated inputs; when set, `train` loads these
    /// instead of rolling out fresh data.
    pub src_path: Option<PathBuf>,
    pub tar_path: Option<PathBuf>,
    pub mdp_src_path: Option<PathBuf>,
    pub mdp_tar_path: Option<PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            quality: "medium_replay".into(),
            n_src: 20_000,
            n_tar_full: 20_000,
            fraction: 0.1,
            horizon: 40,
            src_path: None,
            tar_path: None,
            mdp_src_path: None,
            mdp_tar_path: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DrocoSection {
    pub beta: f64,
    pub delta: f64,
    pub tau: f64,
    pub awr_alpha: f64,
    pub n_members: usize,
    pub smoothing_alpha: f64,
    pub q_lr: f64,
    pub v_lr: f64,
    pub batch_src: usize,
    pub batch_tar: usize,
    pub steps: usize,
    pub mu: f64,
}

impl Default for DrocoSection {
    fn default() -> Self {
        let cfg = DrocoConfig::default();
        DrocoSection {
            beta: cfg.beta,
            delta: cfg.delta,
            tau: cfg.tau,
            awr_alpha: cfg.awr_alpha,
            n_members: cfg.n_members,
            smoothing_alpha: cfg.smoothing_alpha,
            q_lr: cfg.q_lr,
            v_lr: cfg.v_lr,
            batch_src: cfg.batch_src,
            batch_tar: cfg.batch_tar,
            steps: cfg.steps,
            mu: cfg.mu,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub jam_action: String,
    pub rotation: String,
    pub min_v_scales: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Zero selects exact evaluation.
    pub episodes: usize,
    pub horizon: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            jam_action: "right".into(),
            rotation: "quarter".into(),
            min_v_scales: vec![1.0, 2.0, 3.0],
            seeds: vec![0, 1, 2, 3, 4],
            episodes: 0,
            horizon: 100,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub betas: Vec<f64>,
    pub deltas: Vec<f64>,
    pub fractions: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            betas: vec![0.0, 0.5, 1.0, 1.2],
            deltas: vec![30.0],
            fractions: vec![0.1],
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<(Self, String), String> {
        let text = fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| format!("config parse error: {e}"))?;
        Ok((cfg, text))
    }

    pub fn grid_spec(&self, shift: Shift) -> GridSpec {
        GridSpec {
            width: self.grid.width,
            height: self.grid.height,
            slip_prob: self.grid.slip_prob,
            goal_cell: self.grid.goal_cell,
            step_reward: self.grid.step_reward,
            goal_reward: self.grid.goal_reward,
            gamma: self.grid.gamma,
            shift,
        }
    }

    pub fn source_shift(&self) -> Result<Shift, String> {
        parse_shift(
            &self.shift.kind,
            &self.shift.jam_action,
            self.shift.jam_prob,
            &self.shift.rotation,
            self.shift.mix_weight,
        )
    }

    pub fn quality(&self) -> Result<Quality, String> {
        parse_quality(&self.data.quality)
    }

    pub fn droco_config(&self, seed: u64) -> DrocoConfig {
        DrocoConfig {
            beta: self.droco.beta,
            delta: self.droco.delta,
            tau: self.droco.tau,
            awr_alpha: self.droco.awr_alpha,
            gamma: self.grid.gamma,
            n_members: self.droco.n_members,
            smoothing_alpha: self.droco.smoothing_alpha,
            q_lr: self.droco.q_lr,
            v_lr: self.droco.v_lr,
            batch_src: self.droco.batch_src,
            batch_tar: self.droco.batch_tar,
            steps: self.droco.steps,
            mu: self.droco.mu,
            seed,
        }
    }
}

pub fn parse_quality(s: &str) -> Result<Quality, String> {
    match s {
        "medium" => Ok(Quality::Medium),
        "expert" => Ok(Quality::Expert),
        "medium_replay" => Ok(Quality::MediumReplayMix),
        "medium_expert" => Ok(Quality::MediumExpertMix),
        other => Err(format!(
            "unknown quality '{other}' (expected medium|expert|medium_replay|medium_expert)"
        )),
    }
}

pub fn parse_action(s: &str) -> Result<GridAction, String> {
    match s {
        "up" => Ok(GridAction::Up),
        "down" => Ok(GridAction::Down),
        "left" => Ok(GridAction::Left),
        "right" => Ok(GridAction::Right),
        "stay" => Ok(GridAction::Stay),
        other => Err(format!("unknown action '{other}'")),
    }
}

pub fn parse_rotation(s: &str) -> Result<Rotation, String> {
    match s {
        "quarter" | "90" => Ok(Rotation::Quarter),
        "half" | "180" => Ok(Rotation::Half),
        "three_quarter" | "270" => Ok(Rotation::ThreeQuarter),
        other => Err(format!("unknown rotation '{other}'")),
    }
}

pub fn parse_shift(
    kind: &str,
    jam_action: &str,
    jam_prob: f64,
    rotation: &str,
    mix_weight: f64,
) -> Result<Shift, String> {
    match kind {
        "none" => Ok(Shift::None),
        "kinematic" => Ok(Shift::KinematicAnalog {
            jammed_action: parse_action(jam_action)?,
            jam_prob,
        }),
        "morph" | "morphology" => Ok(Shift::MorphologyAnalog {
            rotation: parse_rotation(rotation)?,
            mix_weight,
        }),
        other => Err(format!(
            "unknown shift '{other}' (expected none|kinematic|morph)"
        )),
    }
}

/// FNV-1a over the raw config text, rendered as eight hex characters.
pub fn config_hash(text: &str) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in text.as_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{:08x}", h as u32 ^ (h >> 32) as u32)
}
