//! One pick-and-place episode as seen by the high-level policy: observation
//! assembly, action scaling, decision stepping and termination.
//!
//! Observation layout (all positions in the robot's yaw-aligned frame, whose
//! origin is the base position projected to the ground):
//!
//! | block | size |
//! |---|---|
//! | `s_r`: v_x, v_y, yaw rate, height offset, pitch, q, q', tau/tau_max, tool point, gripper | 27 |
//! | `s_o`: centre/top/bottom keypoints, width, height, shape one-hot | 13 |
//! | previous scaled action | 12 |
//! | pick table centre and height, place table centre and height | 6 |
//! | phase one-hot | 6 |
//! | mass and contact estimates | 2 |
//! | history of `[s_r, s_o, a]`, oldest first | `52 * H` |

use std::collections::VecDeque;

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::judge::{JudgeSpec, StepSummary, SuccessTracker, TrackerFlags};
use crate::nn::sigmoid;
use crate::reward::{update_phase, Phase, RewardBreakdown, RewardConfig, RewardMachine, TaskIndicators};
use crate::sampler::EpisodeConfig;
use crate::sim::{
    base, ArmCommand, ArmParams, BaseCommand, GripperMode, Placement, SimParams, Support, WorldState, NUM_JOINTS,
};

/// Plant steps per policy decision (50 Hz decisions over the 100 Hz plant).
pub const DECISION_STEPS: usize = 2;
pub const ACTION_DIM: usize = 12;
pub const S_R_DIM: usize = 27;
pub const S_O_DIM: usize = 13;
pub const ENTRY_DIM: usize = S_R_DIM + S_O_DIM + ACTION_DIM;
const FIXED_DIM: usize = S_R_DIM + S_O_DIM + ACTION_DIM + 6 + 6 + 2;

pub fn observation_dim(history_len: usize) -> usize {
    FIXED_DIM + ENTRY_DIM * history_len
}

/// Scaled high-level command.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HighLevelAction {
    pub base: BaseCommand,
    pub arm: ArmCommand,
}

impl HighLevelAction {
    /// `[v_x, v_y, yaw_rate, height_offset, pitch, q_des (6), gripper]`
    pub fn to_array(&self) -> [f64; ACTION_DIM] {
        let b = &self.base;
        let mut out = [0.0; ACTION_DIM];
        out[..5].copy_from_slice(&[b.v_x, b.v_y, b.yaw_rate, b.height_offset, b.pitch]);
        out[5..11].copy_from_slice(&self.arm.targets);
        out[11] = if self.arm.gripper == GripperMode::Closed { 1.0 } else { 0.0 };
        out
    }

    pub fn within_limits(&self, arm: &ArmParams) -> bool {
        self.base.within_limits()
            && self.arm.targets.iter().zip(&arm.joints).all(|(q, j)| *q >= j.lower && *q <= j.upper)
    }

    pub fn hold(world: &WorldState) -> Self {
        Self {
            base: BaseCommand::default(),
            arm: ArmCommand { targets: world.arm.positions, gripper: world.gripper.mode },
        }
    }
}

/// Maps unbounded policy outputs onto the command limits: saturating maps for
/// the velocities, pitch and joint targets, a logistic map for the height
/// offset, and a strict sign test for the gripper. Forward velocity uses a
/// separate gain on each side of zero so a zero output stands still.
pub fn scale_action(raw: &[f64], arm: &ArmParams) -> HighLevelAction {
    assert_eq!(raw.len(), ACTION_DIM);
    let t = |x: f64| x.tanh();
    let vx = t(raw[0]);
    let cmd = BaseCommand {
        v_x: if vx >= 0.0 { base::VX_MAX * vx } else { -base::VX_MIN * vx },
        v_y: base::VY_MAX * t(raw[1]),
        yaw_rate: base::YAW_RATE_MAX * t(raw[2]),
        height_offset: base::HEIGHT_OFFSET_MIN * sigmoid(raw[3]),
        pitch: base::PITCH_MAX * t(raw[4]),
    };
    let targets = std::array::from_fn(|i| {
        let j = &arm.joints[i];
        let mid = 0.5 * (j.lower + j.upper);
        let half = 0.5 * (j.upper - j.lower);
        (mid + half * t(raw[5 + i])).clamp(j.lower, j.upper)
    });
    let gripper = if raw[11] > 0.0 { GripperMode::Closed } else { GripperMode::Open };
    HighLevelAction { base: cmd, arm: ArmCommand { targets, gripper } }
}

/// Raw output whose scaled action is a standing robot with the arm at
/// `targets`, gripper open and the height offset at `height_offset`.
pub fn raw_rest_action(arm: &ArmParams, targets: &[f64; NUM_JOINTS], height_offset: f64) -> [f64; ACTION_DIM] {
    let mut raw = [0.0; ACTION_DIM];
    let frac = (height_offset / base::HEIGHT_OFFSET_MIN).clamp(1e-6, 1.0 - 1e-6);
    raw[3] = (frac / (1.0 - frac)).ln();
    for i in 0..NUM_JOINTS {
        let j = &arm.joints[i];
        let mid = 0.5 * (j.lower + j.upper);
        let half = 0.5 * (j.upper - j.lower);
        raw[5 + i] = ((targets[i] - mid) / half).clamp(-0.999, 0.999).atanh();
    }
    raw[11] = -1.0;
    raw
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvParams {
    pub sim: SimParams,
    pub reward: RewardConfig,
    pub history_len: usize,
}

impl Default for EnvParams {
    fn default() -> Self {
        Self { sim: SimParams::default(), reward: RewardConfig::default(), history_len: 10 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Running,
    Success,
    ObjectLost,
    Timeout,
}

impl Termination {
    pub fn is_done(self) -> bool {
        self != Termination::Running
    }

    /// Whether the value of the final state should be bootstrapped. Only a
    /// lost object is a true terminal state; the horizon is a time limit and
    /// success ends the episode early without making further reward
    /// unreachable in principle.
    pub fn bootstraps(self) -> bool {
        matches!(self, Termination::Success | Termination::Timeout)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub reward: RewardBreakdown,
    pub termination: Termination,
    pub summary: StepSummary,
    pub flags: TrackerFlags,
}

/// World frame to the robot's yaw-aligned frame.
pub struct RobotFrame {
    origin: Vector3<f64>,
    inv: Rotation3<f64>,
}

impl RobotFrame {
    pub fn of(world: &WorldState) -> Self {
        let b = &world.base;
        Self {
            origin: Vector3::new(b.position[0], b.position[1], 0.0),
            inv: Rotation3::from_axis_angle(&Vector3::z_axis(), -b.yaw),
        }
    }

    pub fn point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.inv * (p - self.origin)
    }
}

#[derive(Clone, Debug)]
pub struct Env {
    pub config: EpisodeConfig,
    pub world: WorldState,
    pub phase: Phase,
    pub machine: RewardMachine,
    pub tracker: SuccessTracker,
    pub history: VecDeque<[f64; ENTRY_DIM]>,
    pub prev_action: [f64; ACTION_DIM],
    pub decisions: u64,
    pub termination: Termination,
    history_len: usize,
}

impl Env {
    pub fn new(config: EpisodeConfig, params: &EnvParams) -> Self {
        let world = config.initial_world(&params.sim);
        let spec = JudgeSpec {
            place_center: config.place_table.center,
            place_height: config.place_table.height,
            pick_height: config.pick_table.height,
            tolerances: config.tolerances,
            horizon: config.horizon,
            tilt_tolerance_deg: params.sim.placement.tilt_tolerance_deg,
        };
        let mut prev_action = [0.0; ACTION_DIM];
        prev_action[5..11].copy_from_slice(&world.arm.positions);
        Self {
            config,
            world,
            phase: Phase::INITIAL,
            machine: RewardMachine::new(),
            tracker: SuccessTracker::new(spec),
            history: VecDeque::from(vec![[0.0; ENTRY_DIM]; params.history_len]),
            prev_action,
            decisions: 0,
            termination: Termination::Running,
            history_len: params.history_len,
        }
    }

    pub fn history_len(&self) -> usize {
        self.history_len
    }

    pub fn robot_state(&self, sim: &SimParams) -> [f64; S_R_DIM] {
        let w = &self.world;
        let frame = RobotFrame::of(w);
        let mut s = [0.0; S_R_DIM];
        let b = &w.base;
        s[..5].copy_from_slice(&[b.v_x, b.v_y, b.yaw_rate, b.height_offset, b.pitch]);
        s[5..11].copy_from_slice(&w.arm.positions);
        s[11..17].copy_from_slice(&w.arm.velocities);
        for i in 0..NUM_JOINTS {
            s[17 + i] = w.arm.torques[i] / sim.arm.joints[i].torque_limit;
        }
        let ee = frame.point(&w.ee_position());
        s[23..26].copy_from_slice(ee.as_slice());
        s[26] = if w.gripper.mode == GripperMode::Closed { 1.0 } else { 0.0 };
        s
    }

    pub fn object_state(&self) -> [f64; S_O_DIM] {
        let w = &self.world;
        let frame = RobotFrame::of(w);
        let k = w.object.keypoints();
        let mut s = [0.0; S_O_DIM];
        for (i, p) in [k.center, k.top, k.bottom].iter().enumerate() {
            s[3 * i..3 * i + 3].copy_from_slice(frame.point(p).as_slice());
        }
        s[9] = w.object.width;
        s[10] = w.object.height;
        s[11..13].copy_from_slice(&w.object.shape.one_hot());
        s
    }

    /// `[s_r, s_o, a_prev]` for the estimator at the current step.
    pub fn estimator_input(&self, sim: &SimParams) -> [f64; ENTRY_DIM] {
        let mut x = [0.0; ENTRY_DIM];
        x[..S_R_DIM].copy_from_slice(&self.robot_state(sim));
        x[S_R_DIM..S_R_DIM + S_O_DIM].copy_from_slice(&self.object_state());
        x[S_R_DIM + S_O_DIM..].copy_from_slice(&self.prev_action);
        x
    }

    /// Privileged labels: true mass and whether the object is in the gripper.
    pub fn privileged(&self) -> (f64, bool) {
        (self.world.object.mass, self.world.gripper.is_attached())
    }

    pub fn observe(&self, sim: &SimParams, estimates: (f64, f64), out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(&self.robot_state(sim));
        out.extend_from_slice(&self.object_state());
        out.extend_from_slice(&self.prev_action);
        let frame = RobotFrame::of(&self.world);
        for table in [&self.world.pick_table, &self.world.place_table] {
            let p = frame.point(&table.top_center());
            out.extend_from_slice(&[p.x, p.y, table.height]);
        }
        out.extend_from_slice(&self.phase.one_hot());
        out.extend_from_slice(&[estimates.0, estimates.1]);
        for entry in &self.history {
            out.extend_from_slice(entry);
        }
        debug_assert_eq!(out.len(), observation_dim(self.history_len));
    }

    pub fn summary(&self, close_event: Option<[f64; 2]>) -> StepSummary {
        let w = &self.world;
        let ee = w.ee_position();
        StepSummary {
            time: w.time,
            base: [w.base.position[0], w.base.position[1], w.base.yaw],
            base_speed: w.base.planar_speed(),
            ee: [ee.x, ee.y, ee.z],
            object_center: [w.object.center.x, w.object.center.y, w.object.center.z],
            object_bottom_z: w.object.bottom().z,
            uprightness: w.object.uprightness(),
            support: w.object.support,
            attached: w.gripper.is_attached(),
            gripper_closed: w.gripper.mode == GripperMode::Closed,
            phase: self.phase.index() as u8,
            close_event,
        }
    }

    /// Applies one decision for [`DECISION_STEPS`] plant steps.
    pub fn step(&mut self, params: &EnvParams, action: &HighLevelAction) -> Result<StepResult> {
        if self.termination.is_done() {
            return Err(Error::InvalidConfig("step called on a finished episode".into()));
        }
        let sim = &params.sim;
        if !action.within_limits(&sim.arm) {
            return Err(Error::Diverged(format!("action outside command limits: {action:?}")));
        }
        if self.history_len > 0 {
            let mut entry = [0.0; ENTRY_DIM];
            entry[..S_R_DIM].copy_from_slice(&self.robot_state(sim));
            entry[S_R_DIM..S_R_DIM + S_O_DIM].copy_from_slice(&self.object_state());
            entry[S_R_DIM + S_O_DIM..].copy_from_slice(&action.to_array());
            self.history.pop_front();
            self.history.push_back(entry);
        }

        let prev_phase = self.phase;
        let mut close_event = None;
        for _ in 0..DECISION_STEPS {
            if self.world.gripper.mode == GripperMode::Open && action.arm.gripper == GripperMode::Closed {
                let rel = (self.world.ee_velocity - self.world.object.velocity).norm();
                close_event = Some([self.world.base.planar_speed(), rel]);
            }
            self.world = self.world.step(sim, &action.base, &action.arm)?;
        }
        self.decisions += 1;
        self.phase = update_phase(&self.world, self.phase, sim, params.reward.home_tolerance);

        let summary = self.summary(close_event);
        let flags = self.tracker.update(&summary);
        let placement_success = self.world.check_placement(sim) == Placement::PlacedUpright
            && self.world.place_table.horizontal_distance(&self.world.object.center)
                <= self.config.tolerances.place_tolerance;
        let indicators = TaskIndicators {
            secured: flags.secured,
            placement_success,
            release_success: flags.release_success,
            retreat_success: flags.retreat_success,
            task_done: flags.success_now,
        };
        let a = action.to_array();
        let reward = self.machine.step(
            &self.world,
            sim,
            &params.reward,
            [a[0], a[1], a[2]],
            [a[4], a[3]],
            std::array::from_fn(|i| a[5 + i]),
            prev_phase,
            self.phase,
            indicators,
        );
        self.prev_action = a;

        self.termination = if flags.success_now {
            Termination::Success
        } else if self.world.object.support == Support::Floor {
            Termination::ObjectLost
        } else if self.world.time >= self.config.horizon - 1e-9 {
            Termination::Timeout
        } else {
            Termination::Running
        };
        Ok(StepResult { reward, termination: self.termination, summary, flags })
    }
}

#[cfg(test)]
mod tests;
