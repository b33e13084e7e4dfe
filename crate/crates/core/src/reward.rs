//! Six-stage reward machine.
//!
//! Dense shaping terms are only active in their own stage; sparse terms fire
//! at most once per episode on their triggering step; the three penalty groups
//! (arm, base, manipulation) apply at every step.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{GripperMode, Placement, SimParams, WorldState, NUM_JOINTS};

/// Task progress index, 0 through 5. Transitions only move forward.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Phase(u8);

impl Phase {
    pub const INITIAL: Phase = Phase(0);
    pub const ABOVE_PICK: Phase = Phase(1);
    pub const ABOVE_PLACE: Phase = Phase(2);
    pub const PLACED: Phase = Phase(3);
    pub const RELEASED: Phase = Phase(4);
    pub const ARM_RETURNED: Phase = Phase(5);
    pub const COUNT: usize = 6;

    pub fn new(value: u8) -> Option<Phase> {
        (value < 6).then_some(Phase(value))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn one_hot(self) -> [f64; Phase::COUNT] {
        let mut v = [0.0; Phase::COUNT];
        v[self.index()] = 1.0;
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    PreGrasping,
    Grasping,
    Carrying,
    Placement,
    Retreating,
    Finishing,
}

/// Steady-state stage for a phase and gripper status. The one-step grasping
/// and finishing stages are assigned by [`RewardMachine`] when their sparse
/// events fire.
pub fn stage_of(phase: Phase, attached: bool, released: bool) -> Stage {
    if phase >= Phase::ARM_RETURNED {
        Stage::Finishing
    } else if phase >= Phase::RELEASED || (phase == Phase::PLACED && released) {
        Stage::Retreating
    } else if phase == Phase::PLACED {
        Stage::Placement
    } else if attached {
        Stage::Carrying
    } else {
        Stage::PreGrasping
    }
}

/// Advances the phase by at most one transition. No transition depends on
/// whether the object is actually in the gripper.
pub fn update_phase(world: &WorldState, phase: Phase, sim: &SimParams, home_tolerance: f64) -> Phase {
    let next = match phase.0 {
        0 => world.ee_over(&world.pick_table),
        1 => world.ee_over(&world.place_table),
        2 => world.check_placement(sim) != Placement::NotPlaced,
        3 => world.gripper.mode == GripperMode::Open,
        4 => world
            .arm
            .positions
            .iter()
            .zip(&sim.arm.nominal)
            .all(|(q, n)| (q - n).abs() <= home_tolerance),
        _ => false,
    };
    if next {
        Phase(phase.0 + 1)
    } else {
        phase
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardTerm {
    EeToObj,
    EeObjContact,
    GraspingSuccess,
    BaseHeading,
    ObjToPlace,
    BaseToPlace,
    PlaceSuccess,
    GripperRelease,
    BaseRetreat,
    EeRetreat,
    Complete,
    ArmJointVelocity,
    ArmActionRate,
    ArmTorque,
    ArmPosture,
    ArmJointLimit,
    BaseStability,
    BaseCommandRate,
    BaseCommandAccel,
    BaseCommandMagnitude,
    BodyCommandRate,
    BodyCommandAccel,
    BodyCommandMagnitude,
    GripperTableForce,
    ObjectUpright,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TermKind {
    Dense(Stage),
    Sparse(Stage),
    Penalty,
}

impl RewardTerm {
    pub const ALL: [RewardTerm; 25] = [
        RewardTerm::EeToObj,
        RewardTerm::EeObjContact,
        RewardTerm::GraspingSuccess,
        RewardTerm::BaseHeading,
        RewardTerm::ObjToPlace,
        RewardTerm::BaseToPlace,
        RewardTerm::PlaceSuccess,
        RewardTerm::GripperRelease,
        RewardTerm::BaseRetreat,
        RewardTerm::EeRetreat,
        RewardTerm::Complete,
        RewardTerm::ArmJointVelocity,
        RewardTerm::ArmActionRate,
        RewardTerm::ArmTorque,
        RewardTerm::ArmPosture,
        RewardTerm::ArmJointLimit,
        RewardTerm::BaseStability,
        RewardTerm::BaseCommandRate,
        RewardTerm::BaseCommandAccel,
        RewardTerm::BaseCommandMagnitude,
        RewardTerm::BodyCommandRate,
        RewardTerm::BodyCommandAccel,
        RewardTerm::BodyCommandMagnitude,
        RewardTerm::GripperTableForce,
        RewardTerm::ObjectUpright,
    ];

    pub fn kind(self) -> TermKind {
        use RewardTerm::*;
        match self {
            EeToObj | EeObjContact => TermKind::Dense(Stage::PreGrasping),
            GraspingSuccess => TermKind::Sparse(Stage::Grasping),
            BaseHeading | ObjToPlace | BaseToPlace => TermKind::Dense(Stage::Carrying),
            PlaceSuccess | GripperRelease => TermKind::Sparse(Stage::Placement),
            BaseRetreat | EeRetreat => TermKind::Dense(Stage::Retreating),
            Complete => TermKind::Sparse(Stage::Finishing),
            _ => TermKind::Penalty,
        }
    }

    pub fn name(self) -> &'static str {
        use RewardTerm::*;
        match self {
            EeToObj => "ee_to_obj",
            EeObjContact => "ee_obj_contact",
            GraspingSuccess => "grasping_success",
            BaseHeading => "base_heading",
            ObjToPlace => "obj_to_place",
            BaseToPlace => "base_to_place",
            PlaceSuccess => "place_success",
            GripperRelease => "gripper_release",
            BaseRetreat => "base_retreat",
            EeRetreat => "ee_retreat",
            Complete => "complete",
            ArmJointVelocity => "arm_joint_velocity",
            ArmActionRate => "arm_action_rate",
            ArmTorque => "arm_torque",
            ArmPosture => "arm_posture",
            ArmJointLimit => "arm_joint_limit",
            BaseStability => "base_stability",
            BaseCommandRate => "base_command_rate",
            BaseCommandAccel => "base_command_accel",
            BaseCommandMagnitude => "base_command_magnitude",
            BodyCommandRate => "body_command_rate",
            BodyCommandAccel => "body_command_accel",
            BodyCommandMagnitude => "body_command_magnitude",
            GripperTableForce => "gripper_table_force",
            ObjectUpright => "object_upright",
        }
    }
}

/// Reward coefficients `k1..k27`. Penalty coefficients (`k14..k27`) are
/// magnitudes; the machine applies them with a negative sign.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    pub k5: f64,
    pub k6: f64,
    pub k7: f64,
    pub k8: f64,
    pub k9: f64,
    pub k10: f64,
    pub k11: f64,
    pub k12: f64,
    pub k13: f64,
    pub k14: f64,
    pub k15: f64,
    pub k16: f64,
    pub k17: f64,
    pub k18: f64,
    pub k19: f64,
    pub k20: f64,
    pub k21: f64,
    pub k22: f64,
    pub k23: f64,
    pub k24: f64,
    pub k25: f64,
    pub k26: f64,
    pub k27: f64,
    /// Per-joint tolerance to the nominal posture for the arm-returned phase, rad.
    pub home_tolerance: f64,
    /// Lift above the spawn surface that makes a grasp count as secured, m.
    pub lift_threshold: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            k1: 0.6,
            k2: 0.2,
            k3: 0.2,
            k4: 10.0,
            k5: 0.25,
            k6: 0.5,
            k7: 0.75,
            k8: 0.6,
            k9: 15.0,
            k10: 10.0,
            k11: 1.5,
            k12: 1.5,
            k13: 15.0,
            k14: 2e-3,
            k15: 5e-3,
            k16: 1e-4,
            k17: 2e-3,
            k18: 1e-2,
            k19: 1e-2,
            k20: 5e-3,
            k21: 2e-3,
            k22: 2e-3,
            k23: 1e-2,
            k24: 5e-3,
            k25: 5e-3,
            k26: 1e-4,
            k27: 0.5,
            home_tolerance: 0.15,
            lift_threshold: 0.03,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        let sparse = [self.k4, self.k9, self.k10, self.k13];
        if sparse.iter().any(|k| !(*k > 0.0)) {
            return Err(Error::InvalidConfig("sparse coefficients k4, k9, k10, k13 must be positive".into()));
        }
        let penalties = [
            self.k14, self.k15, self.k16, self.k17, self.k18, self.k19, self.k20, self.k21, self.k22, self.k23,
            self.k24, self.k25, self.k26, self.k27,
        ];
        if penalties.iter().any(|k| !(*k >= 0.0)) {
            return Err(Error::InvalidConfig("penalty magnitudes k14..k27 must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub terms: Vec<(RewardTerm, f64)>,
    pub total: f64,
    pub stage: Stage,
}

impl RewardBreakdown {
    pub fn get(&self, term: RewardTerm) -> Option<f64> {
        self.terms.iter().find(|(t, _)| *t == term).map(|(_, v)| *v)
    }
}

/// Sparse events on this step. `None` means the event did not fire.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SparseEvents {
    /// `([object in gripper], [grasping success])`
    pub grasping: Option<(bool, bool)>,
    /// `[placement success]`
    pub place: Option<bool>,
    /// `[gripper open]`
    pub release: Option<bool>,
    /// `([release success], [retreat success])`
    pub complete: Option<(bool, bool)>,
}

/// Command and action histories, newest first, zero-padded at episode start.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ActionHistory {
    /// `c_t, c_{t-1}, c_{t-2}`: planar velocity commands.
    pub velocity: [[f64; 3]; 3],
    /// `b_t, b_{t-1}, b_{t-2}`: pitch and height commands.
    pub body: [[f64; 2]; 3],
    /// `a^arm_t, a^arm_{t-1}`: joint targets and gripper bit.
    pub arm: [[f64; NUM_JOINTS + 1]; 2],
}

impl ActionHistory {
    pub fn push(&mut self, velocity: [f64; 3], body: [f64; 2], arm: [f64; NUM_JOINTS + 1]) {
        self.velocity = [velocity, self.velocity[0], self.velocity[1]];
        self.body = [body, self.body[0], self.body[1]];
        self.arm = [arm, self.arm[0]];
    }
}

pub struct RewardInputs<'a> {
    pub world: &'a WorldState,
    pub sim: &'a SimParams,
    pub history: &'a ActionHistory,
    pub stage: Stage,
    pub sparse: SparseEvents,
}

fn sq_norm<const N: usize>(v: [f64; N]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn diff<const N: usize>(a: &[f64; N], b: &[f64; N]) -> [f64; N] {
    std::array::from_fn(|i| a[i] - b[i])
}

fn second_diff<const N: usize>(a: &[f64; N], b: &[f64; N], c: &[f64; N]) -> [f64; N] {
    std::array::from_fn(|i| a[i] - 2.0 * b[i] + c[i])
}

fn planar(v: Vector3<f64>) -> Vector3<f64> {
    Vector3::new(v.x, v.y, 0.0)
}

/// Upright keypoint targets with the object's bottom on the place-table centre.
pub fn place_keypoints(world: &WorldState) -> [Vector3<f64>; 3] {
    let bottom = world.place_table.top_center();
    let up = Vector3::new(0.0, 0.0, world.object.height);
    [bottom + 0.5 * up, bottom + up, bottom]
}

/// Squared distance between the object's (centre, top, bottom) keypoints and
/// their upright targets on the place table.
pub fn keypoint_error(world: &WorldState) -> f64 {
    let k = world.object.keypoints();
    let target = place_keypoints(world);
    (k.center - target[0]).norm_squared() + (k.top - target[1]).norm_squared() + (k.bottom - target[2]).norm_squared()
}

/// Evaluates the terms active in `inputs.stage` plus all penalties.
pub fn compute_reward(inputs: &RewardInputs, k: &RewardConfig) -> RewardBreakdown {
    let w = inputs.world;
    let mut terms: Vec<(RewardTerm, f64)> = Vec::with_capacity(20);
    let p_ee = w.ee_position();
    let p_obj = w.object.center;
    let place = w.place_table.top_center();
    let base_xy = Vector3::new(w.base.position[0], w.base.position[1], 0.0);

    match inputs.stage {
        Stage::PreGrasping => {
            let d2 = (p_obj - p_ee).norm_squared();
            terms.push((RewardTerm::EeToObj, k.k1 * (-25.0 * d2).exp() + k.k2 * (-d2).exp()));
            let contact = d2.sqrt() <= inputs.sim.grasp.radius;
            terms.push((RewardTerm::EeObjContact, if contact { k.k3 } else { 0.0 }));
        }
        Stage::Carrying => {
            let to_place = planar(place) - base_xy;
            let heading = if to_place.norm() > 1e-9 { w.base.heading().dot(&to_place.normalize()) } else { 1.0 };
            terms.push((RewardTerm::BaseHeading, k.k5 * heading));
            let e = keypoint_error(w);
            terms.push((RewardTerm::ObjToPlace, k.k6 * (-5.0 * e).exp() + k.k7 * (-25.0 * e).exp()));
            let d = to_place.norm();
            terms.push((RewardTerm::BaseToPlace, k.k8 * (-0.5 * d.max(0.3)).exp()));
        }
        Stage::Retreating => {
            let d_base = (base_xy - planar(place)).norm();
            terms.push((RewardTerm::BaseRetreat, k.k11 * (d_base * d_base).min(1.0)));
            let d_ee = (p_ee - p_obj).norm();
            terms.push((RewardTerm::EeRetreat, k.k12 * (1.0 - (-5.0 * d_ee.min(1.0)).exp())));
        }
        Stage::Grasping | Stage::Placement | Stage::Finishing => {}
    }

    let ind = |b: bool| if b { 1.0 } else { 0.0 };
    if let Some((in_gripper, secured)) = inputs.sparse.grasping {
        terms.push((RewardTerm::GraspingSuccess, k.k4 * (ind(in_gripper) + ind(secured))));
    }
    if let Some(success) = inputs.sparse.place {
        terms.push((RewardTerm::PlaceSuccess, k.k9 * ind(success)));
    }
    if let Some(open) = inputs.sparse.release {
        terms.push((RewardTerm::GripperRelease, k.k10 * ind(open)));
    }
    if let Some((release, retreat)) = inputs.sparse.complete {
        terms.push((RewardTerm::Complete, k.k13 * (ind(release) + 2.0 * ind(retreat))));
    }

    // Arm penalties.
    let arm = &w.arm;
    let joints = &inputs.sim.arm.joints;
    let nominal = &inputs.sim.arm.nominal;
    let h = inputs.history;
    let vel_sum: f64 = arm.velocities.iter().map(|v| v.abs()).sum();
    let torque_sum: f64 = arm.torques.iter().map(|t| t.abs()).sum();
    let posture: f64 = arm.positions.iter().zip(nominal).map(|(q, n)| (q - n).abs()).sum();
    let near_limit = arm
        .positions
        .iter()
        .zip(joints)
        .filter(|(q, j)| (*q - j.lower).abs() <= 0.05 * j.lower.abs() || (*q - j.upper).abs() <= 0.05 * j.upper.abs())
        .count() as f64;
    terms.push((RewardTerm::ArmJointVelocity, -k.k14 * vel_sum));
    terms.push((RewardTerm::ArmActionRate, -k.k15 * sq_norm(diff(&h.arm[0], &h.arm[1])).sqrt()));
    terms.push((RewardTerm::ArmTorque, -k.k16 * torque_sum));
    terms.push((RewardTerm::ArmPosture, -k.k17 * posture));
    terms.push((RewardTerm::ArmJointLimit, -k.k18 * near_limit));

    // Base penalties.
    let b = &w.base;
    let stability = b.vertical_velocity * b.vertical_velocity + 0.02 * b.roll_rate.abs() + 0.02 * b.pitch_rate.abs();
    let c = &h.velocity;
    let body = &h.body;
    terms.push((RewardTerm::BaseStability, -k.k19 * stability));
    terms.push((RewardTerm::BaseCommandRate, -k.k20 * sq_norm(diff(&c[0], &c[1]))));
    terms.push((RewardTerm::BaseCommandAccel, -k.k21 * sq_norm(second_diff(&c[0], &c[1], &c[2]))));
    terms.push((RewardTerm::BaseCommandMagnitude, -k.k22 * (1.0 + sq_norm(body[0])) * sq_norm(c[0]).sqrt()));
    terms.push((RewardTerm::BodyCommandRate, -k.k23 * sq_norm(diff(&body[0], &body[1]))));
    terms.push((RewardTerm::BodyCommandAccel, -k.k24 * sq_norm(second_diff(&body[0], &body[1], &body[2]))));
    terms.push((RewardTerm::BodyCommandMagnitude, -k.k25 * sq_norm(body[0])));

    // Manipulation penalties.
    let force = w.ee_table_contact_force(inputs.sim);
    terms.push((RewardTerm::GripperTableForce, -k.k26 * force * force));
    let tilt = w.object.uprightness() - 1.0;
    terms.push((RewardTerm::ObjectUpright, -k.k27 * (-(p_obj - place).norm()).exp() * tilt * tilt));

    let total = terms.iter().map(|(_, v)| v).sum();
    RewardBreakdown { terms, total, stage: inputs.stage }
}

/// Indicators supplied by the task tracker for the current step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TaskIndicators {
    /// Object attached and lifted clear of its spawn support.
    pub secured: bool,
    /// Object upright on the place table within the centre tolerance.
    pub placement_success: bool,
    /// Released object resting upright within tolerance.
    pub release_success: bool,
    /// Tool point retreated far enough without disturbing the object.
    pub retreat_success: bool,
    /// Episode success reached on this step.
    pub task_done: bool,
}

/// Per-episode reward state: command histories and the once-only latches of
/// the sparse terms.
#[derive(Clone, Debug, Default)]
pub struct RewardMachine {
    pub history: ActionHistory,
    fired: [bool; 4],
    released: bool,
}

impl RewardMachine {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }

    /// Reward for a decision step. `prev_phase` is the phase at the start of
    /// the step, `phase` the phase after it.
    #[allow(clippy::too_many_arguments)]
    pub fn step(
        &mut self,
        world: &WorldState,
        sim: &SimParams,
        config: &RewardConfig,
        velocity_cmd: [f64; 3],
        body_cmd: [f64; 2],
        arm_action: [f64; NUM_JOINTS + 1],
        prev_phase: Phase,
        phase: Phase,
        indicators: TaskIndicators,
    ) -> RewardBreakdown {
        self.history.push(velocity_cmd, body_cmd, arm_action);
        let attached = world.gripper.is_attached();
        if phase >= Phase::RELEASED {
            self.released = true;
        }
        let mut stage = stage_of(phase, attached, self.released);
        let mut sparse = SparseEvents::default();

        if !self.fired[0] && indicators.secured {
            self.fired[0] = true;
            sparse.grasping = Some((attached, true));
            stage = Stage::Grasping;
        }
        if !self.fired[1] && prev_phase < Phase::PLACED && phase >= Phase::PLACED {
            self.fired[1] = true;
            sparse.place = Some(indicators.placement_success);
        }
        if !self.fired[2] && prev_phase < Phase::RELEASED && phase >= Phase::RELEASED {
            self.fired[2] = true;
            sparse.release = Some(world.gripper.mode == GripperMode::Open);
        }
        if !self.fired[3] && (phase >= Phase::ARM_RETURNED || indicators.task_done) {
            self.fired[3] = true;
            sparse.complete = Some((indicators.release_success, indicators.retreat_success));
            stage = Stage::Finishing;
        }

        let inputs = RewardInputs { world, sim, history: &self.history, stage, sparse };
        compute_reward(&inputs, config)
    }
}
