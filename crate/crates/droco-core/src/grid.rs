//! Gridworld MDP pairs with controlled dynamics shifts.
//!
//! A grid cell is a state (`index = y * width + x`), actions are the four
//! compass moves plus `Stay`, and moves that would leave the grid bounce
//! back. The goal cell is absorbing and pays `goal_reward` every step;
//! every other cell pays `step_reward`. The state metric is Manhattan
//! distance.
//!
//! Dynamics shifts come in two flavors that both act as pure kernel
//! transforms, so the same machinery drives source-domain construction
//! and test-time perturbation:
//!
//! - kinematic: one action partially jams, behaving as `Stay` with some
//!   probability (an actuator losing authority);
//! - morphology: the kernel is mixed with a copy whose action meanings
//!   are rotated (the body responding differently to the same commands).

use serde::{Deserialize, Serialize};

use crate::mdp::FiniteMdp;
use crate::{Error, Result};

/// Compass actions; `Stay` is what a jammed action degrades into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridAction {
    Up,
    Down,
    Left,
    Right,
    Stay,
}

impl GridAction {
    pub const ALL: [GridAction; 5] = [
        GridAction::Up,
        GridAction::Down,
        GridAction::Left,
        GridAction::Right,
        GridAction::Stay,
    ];

    pub fn index(self) -> usize {
        match self {
            GridAction::Up => 0,
            GridAction::Down => 1,
            GridAction::Left => 2,
            GridAction::Right => 3,
            GridAction::Stay => 4,
        }
    }

    /// (dx, dy) displacement.
    fn delta(self) -> (i64, i64) {
        match self {
            GridAction::Up => (0, 1),
            GridAction::Down => (0, -1),
            GridAction::Left => (-1, 0),
            GridAction::Right => (1, 0),
            GridAction::Stay => (0, 0),
        }
    }
}

/// Quarter-turn rotations of the action semantics (clockwise).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rotation {
    Quarter,
    Half,
    ThreeQuarter,
}

impl Rotation {
    /// The action a command actually performs under this rotation.
    pub fn apply(self, a: GridAction) -> GridAction {
        use GridAction::*;
        let quarter = |a| match a {
            Up => Right,
            Right => Down,
            Down => Left,
            Left => Up,
            Stay => Stay,
        };
        match self {
            Rotation::Quarter => quarter(a),
            Rotation::Half => quarter(quarter(a)),
            Rotation::ThreeQuarter => quarter(quarter(quarter(a))),
        }
    }
}

/// Dynamics shift applied to a grid kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shift {
    None,
    KinematicAnalog {
        jammed_action: GridAction,
        jam_prob: f64,
    },
    MorphologyAnalog {
        rotation: Rotation,
        mix_weight: f64,
    },
}

/// Gridworld layout plus the shift that turns it into a source domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    pub slip_prob: f64,
    pub goal_cell: usize,
    pub step_reward: f64,
    pub goal_reward: f64,
    pub gamma: f64,
    pub shift: Shift,
}

impl GridSpec {
    /// Default 8x8 layout: goal in the far corner, slip 0.15, unit goal
    /// reward, discount 0.99, no shift.
    pub fn default_8x8() -> Self {
        GridSpec {
            width: 8,
            height: 8,
            slip_prob: 0.15,
            goal_cell: 63,
            step_reward: 0.0,
            goal_reward: 1.0,
            gamma: 0.99,
            shift: Shift::None,
        }
    }

    pub fn n_states(&self) -> usize {
        self.width * self.height
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::BadParameter("grid must be nonempty".into()));
        }
        if self.goal_cell >= self.n_states() {
            return Err(Error::BadParameter(format!(
                "goal_cell {} outside {}x{} grid",
                self.goal_cell, self.width, self.height
            )));
        }
        if !(0.0..1.0).contains(&self.slip_prob) {
            return Err(Error::BadParameter(format!(
                "slip_prob {} not in [0,1)",
                self.slip_prob
            )));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::BadParameter(format!("gamma {} not in (0,1)", self.gamma)));
        }
        match self.shift {
            Shift::None => {}
            Shift::KinematicAnalog { jam_prob, .. } => {
                if !(0.0..=1.0).contains(&jam_prob) {
                    return Err(Error::BadParameter(format!("jam_prob {jam_prob} not in [0,1]")));
                }
            }
            Shift::MorphologyAnalog { mix_weight, .. } => {
                if !(0.0..=1.0).contains(&mix_weight) {
                    return Err(Error::BadParameter(format!(
                        "mix_weight {mix_weight} not in [0,1]"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Build the finite MDP for this spec, shift included.
    pub fn build(&self) -> Result<FiniteMdp> {
        self.validate()?;
        let n = self.n_states();
        let n_actions = GridAction::ALL.len();
        let base = self.base_kernel();
        let kernel = apply_shift_kernel(&base, self.shift)?;

        let mut reward = vec![vec![self.step_reward; n_actions]; n];
        for a in 0..n_actions {
            reward[self.goal_cell][a] = self.goal_reward;
        }
        let r_max = self
            .step_reward
            .abs()
            .max(self.goal_reward.abs())
            .max(1e-9);

        let non_goal = (n - 1) as f64;
        let init_dist: Vec<f64> = (0..n)
            .map(|s| if s == self.goal_cell { 0.0 } else { 1.0 / non_goal })
            .collect();

        let metric = (0..n)
            .map(|s1| {
                (0..n)
                    .map(|s2| {
                        let (x1, y1) = (s1 % self.width, s1 / self.width);
                        let (x2, y2) = (s2 % self.width, s2 / self.width);
                        (x1 as f64 - x2 as f64).abs() + (y1 as f64 - y2 as f64).abs()
                    })
                    .collect()
            })
            .collect();

        let mdp = FiniteMdp {
            n_states: n,
            n_actions,
            kernel,
            reward,
            r_max,
            gamma: self.gamma,
            init_dist,
            metric,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    /// Shift-free kernel: intended move with probability `1 - slip`, a
    /// uniformly random compass move otherwise; walls bounce. The goal is
    /// absorbing.
    fn base_kernel(&self) -> Vec<Vec<Vec<f64>>> {
        let n = self.n_states();
        let mut kernel = vec![vec![vec![0.0; n]; GridAction::ALL.len()]; n];
        for s in 0..n {
            for action in GridAction::ALL {
                let row = &mut kernel[s][action.index()];
                if s == self.goal_cell {
                    row[s] = 1.0;
                    continue;
                }
                let slip_each = self.slip_prob / 4.0;
                row[self.step(s, action)] += 1.0 - self.slip_prob;
                for dir in [
                    GridAction::Up,
                    GridAction::Down,
                    GridAction::Left,
                    GridAction::Right,
                ] {
                    row[self.step(s, dir)] += slip_each;
                }
            }
        }
        kernel
    }

    fn step(&self, s: usize, action: GridAction) -> usize {
        let (x, y) = ((s % self.width) as i64, (s / self.width) as i64);
        let (dx, dy) = action.delta();
        let (nx, ny) = (x + dx, y + dy);
        if nx < 0 || ny < 0 || nx >= self.width as i64 || ny >= self.height as i64 {
            s
        } else {
            (ny as usize) * self.width + nx as usize
        }
    }

    fn shares_layout_with(&self, other: &GridSpec) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.slip_prob == other.slip_prob
            && self.goal_cell == other.goal_cell
            && self.step_reward == other.step_reward
            && self.goal_reward == other.goal_reward
            && self.gamma == other.gamma
    }
}

/// Apply a shift to an arbitrary kernel over grid actions.
///
/// Works on any kernel whose action axis uses [`GridAction`] indices, so
/// test-time perturbations reuse it against the target kernel directly.
pub fn apply_shift_kernel(kernel: &[Vec<Vec<f64>>], shift: Shift) -> Result<Vec<Vec<Vec<f64>>>> {
    match shift {
        Shift::None => Ok(kernel.to_vec()),
        Shift::KinematicAnalog {
            jammed_action,
            jam_prob,
        } => {
            if !(0.0..=1.0).contains(&jam_prob) {
                return Err(Error::BadParameter(format!("jam_prob {jam_prob} not in [0,1]")));
            }
            let mut out = kernel.to_vec();
            let a = jammed_action.index();
            let stay = GridAction::Stay.index();
            for (s, rows) in out.iter_mut().enumerate() {
                let jam_row: Vec<f64> = kernel[s][stay].clone();
                for (sp, val) in rows[a].iter_mut().enumerate() {
                    *val = (1.0 - jam_prob) * kernel[s][a][sp] + jam_prob * jam_row[sp];
                }
            }
            Ok(out)
        }
        Shift::MorphologyAnalog {
            rotation,
            mix_weight,
        } => {
            if !(0.0..=1.0).contains(&mix_weight) {
                return Err(Error::BadParameter(format!(
                    "mix_weight {mix_weight} not in [0,1]"
                )));
            }
            let mut out = kernel.to_vec();
            for (s, rows) in out.iter_mut().enumerate() {
                for action in GridAction::ALL {
                    let a = action.index();
                    let rot = rotation.apply(action).index();
                    for (sp, val) in rows[a].iter_mut().enumerate() {
                        *val = (1.0 - mix_weight) * kernel[s][a][sp]
                            + mix_weight * kernel[s][rot][sp];
                    }
                }
            }
            Ok(out)
        }
    }
}

/// Build the (source, target) MDP pair. The specs must agree on every
/// layout field; only the shift may differ. Rewards, discount, initial
/// distribution, and metric come out bitwise identical.
pub fn build_pair(spec_src: &GridSpec, spec_tar: &GridSpec) -> Result<(FiniteMdp, FiniteMdp)> {
    if !spec_src.shares_layout_with(spec_tar) {
        return Err(Error::BadParameter(
            "source and target grid specs differ on shared layout fields".into(),
        ));
    }
    let src = spec_src.build()?;
    let tar = spec_tar.build()?;
    Ok((src, tar))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_shift_pair_is_identical() {
        let spec = GridSpec::default_8x8();
        let (src, tar) = build_pair(&spec, &spec).unwrap();
        assert_eq!(src, tar);
    }

    #[test]
    fn pair_differs_only_in_kernel() {
        let tar = GridSpec::default_8x8();
        let mut src = tar.clone();
        src.shift = Shift::KinematicAnalog {
            jammed_action: GridAction::Up,
            jam_prob: 0.6,
        };
        let (m_src, m_tar) = build_pair(&src, &tar).unwrap();
        assert_ne!(m_src.kernel, m_tar.kernel);
        assert_eq!(m_src.reward, m_tar.reward);
        assert_eq!(m_src.gamma, m_tar.gamma);
        assert_eq!(m_src.init_dist, m_tar.init_dist);
        assert_eq!(m_src.metric, m_tar.metric);
        m_src.validate().unwrap();
    }

    #[test]
    fn full_jam_replaces_row_with_stay_row() {
        let tar = GridSpec::default_8x8();
        let mut src_spec = tar.clone();
        src_spec.shift = Shift::KinematicAnalog {
            jammed_action: GridAction::Up,
            jam_prob: 1.0,
        };
        let (m_src, m_tar) = build_pair(&src_spec, &tar).unwrap();
        let up = GridAction::Up.index();
        let stay = GridAction::Stay.index();
        for s in 0..m_src.n_states {
            assert_eq!(m_src.kernel[s][up], m_tar.kernel[s][stay], "state {s}");
        }
    }

    /// Mixture recomputed by hand on one interior cell.
    #[test]
    fn morphology_mix_matches_hand_mixture() {
        let tar = GridSpec::default_8x8();
        let mut src_spec = tar.clone();
        src_spec.shift = Shift::MorphologyAnalog {
            rotation: Rotation::Quarter,
            mix_weight: 0.3,
        };
        let (m_src, m_tar) = build_pair(&src_spec, &tar).unwrap();
        let s = 3 * 8 + 3;
        let up = GridAction::Up.index();
        let right = GridAction::Right.index();
        for sp in 0..m_src.n_states {
            let expect = 0.7 * m_tar.kernel[s][up][sp] + 0.3 * m_tar.kernel[s][right][sp];
            assert!((m_src.kernel[s][up][sp] - expect).abs() < 1e-15);
        }
        // Rows remain stochastic.
        m_src.validate().unwrap();
    }

    #[test]
    fn layout_mismatch_rejected() {
        let a = GridSpec::default_8x8();
        let mut b = a.clone();
        b.goal_cell = 0;
        assert!(build_pair(&a, &b).is_err());
    }

    #[test]
    fn bad_spec_params_rejected() {
        let mut spec = GridSpec::default_8x8();
        spec.goal_cell = 64;
        assert!(spec.validate().is_err());
        let mut spec = GridSpec::default_8x8();
        spec.shift = Shift::KinematicAnalog {
            jammed_action: GridAction::Up,
            jam_prob: 1.5,
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn rotations_compose() {
        use GridAction::*;
        assert_eq!(Rotation::Quarter.apply(Up), Right);
        assert_eq!(Rotation::Half.apply(Up), Down);
        assert_eq!(Rotation::ThreeQuarter.apply(Up), Left);
        assert_eq!(Rotation::Half.apply(Stay), Stay);
    }
}
