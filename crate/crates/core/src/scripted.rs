//! Hand-written controllers: a waypoint pick-and-place controller with
//! analytic arm IK, plus the trivial do-nothing and uniform-random policies.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{scale_action, Env, EnvParams, HighLevelAction, ACTION_DIM};
use crate::reward::Phase;
use crate::sim::{base, ArmCommand, ArmParams, BaseCommand, GripperMode, SimParams, NUM_JOINTS};

/// Joint angles placing the tool point at `target` (in the base frame) with
/// the wrist pitched by one of a few candidate angles; the candidate closest
/// to the nominal posture wins. Assumes the shipped arm layout: a vertical
/// yaw joint, three pitch joints with links along x, and a straight wrist.
pub fn planar_ik(arm: &ArmParams, target: &Vector3<f64>) -> Option<[f64; NUM_JOINTS]> {
    planar_ik_with(arm, target, None)
}

/// As [`planar_ik`], but when `pitch` is given the wrist pitch (sum of the
/// three pitch joints) is held there if reachable, otherwise kept as close as possible.
pub fn planar_ik_with(arm: &ArmParams, target: &Vector3<f64>, pitch: Option<f64>) -> Option<[f64; NUM_JOINTS]> {
    let shoulder = Vector3::from(arm.mount) + Vector3::from(arm.joints[0].origin) + Vector3::from(arm.joints[1].origin);
    let l1 = arm.joints[2].origin[0];
    let l2 = arm.joints[3].origin[0];
    let l3 = arm.joints[4].origin[0] + arm.joints[5].origin[0] + arm.tool[0];
    let d = target - shoulder;
    let q0 = d.y.atan2(d.x);
    let r = d.x.hypot(d.y);
    let z = d.z;

    let mut best: Option<([f64; NUM_JOINTS], f64)> = None;
    let candidates = pitch.into_iter().chain((0..109).map(|k| -1.2 + 0.025 * k as f64));
    for psi in candidates {
        // Wrist pitch positive points down.
        let wr = r - l3 * psi.cos();
        let wz = z + l3 * psi.sin();
        let c2 = (wr * wr + wz * wz - l1 * l1 - l2 * l2) / (2.0 * l1 * l2);
        if !(-1.0..=1.0).contains(&c2) {
            continue;
        }
        // Angles measured upwards; the elbow-up branch has a negative elbow angle.
        let a2 = -c2.acos();
        let a1 = wz.atan2(wr) - (l2 * a2.sin()).atan2(l1 + l2 * a2.cos());
        let (q1, q2) = (-a1, -a2);
        let q3 = psi - q1 - q2;
        let q = [q0, q1, q2, q3, 0.0, 0.0];
        if q.iter().zip(&arm.joints).any(|(q, j)| *q < j.lower || *q > j.upper) {
            continue;
        }
        let cost: f64 = match pitch {
            Some(p) => (psi - p).powi(2),
            None => q.iter().zip(&arm.nominal).map(|(a, b)| (a - b).powi(2)).sum(),
        };
        if best.as_ref().is_none_or(|(_, c)| cost < *c) {
            best = Some((q, cost));
        }
    }
    best.map(|(q, _)| q)
}

fn wrap(a: f64) -> f64 {
    let mut a = (a + PI) % (2.0 * PI);
    if a < 0.0 {
        a += 2.0 * PI;
    }
    a - PI
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptStage {
    ApproachPick,
    Reach,
    Lift,
    Carry,
    Lower,
    Release,
    Retreat,
    Done,
}

/// Waypoint controller: walk to a standoff pose, reach, close, lift, walk to
/// the place table, lower, open, retreat. An integral term on the tool-point
/// error removes the sag caused by the payload.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScriptedController {
    pub stage: ScriptStage,
    pub standoff: f64,
    correction: [f64; 3],
    wait: u32,
    pitch: Option<f64>,
    last: Option<[f64; NUM_JOINTS]>,
}

impl Default for ScriptedController {
    fn default() -> Self {
        Self::new()
    }
}

impl ScriptedController {
    pub fn new() -> Self {
        Self { stage: ScriptStage::ApproachPick, standoff: 0.5, correction: [0.0; 3], wait: 0, pitch: None, last: None }
    }

    fn base_command(&self, env: &Env, table_xy: [f64; 2], height: f64) -> (BaseCommand, f64) {
        let b = &env.world.base;
        let to_table = Vector3::new(table_xy[0] - b.position[0], table_xy[1] - b.position[1], 0.0);
        let dist = to_table.norm();
        let dir = if dist > 1e-9 { to_table / dist } else { b.heading() };
        let goal = Vector3::new(table_xy[0], table_xy[1], 0.0) - dir * self.standoff;
        let err = goal - Vector3::new(b.position[0], b.position[1], 0.0);
        let (s, c) = b.yaw.sin_cos();
        let ex = c * err.x + s * err.y;
        let ey = -s * err.x + c * err.y;
        let heading_err = wrap(dir.y.atan2(dir.x) - b.yaw);
        let turn_scale = (1.0 - heading_err.abs() / 1.2).max(0.0);
        let cmd = BaseCommand {
            v_x: (2.0 * ex * turn_scale).clamp(-0.8, 1.5),
            v_y: (2.0 * ey * turn_scale).clamp(-0.8, 0.8),
            yaw_rate: (2.5 * heading_err).clamp(-1.0, 1.0),
            height_offset: if height < 0.45 { base::HEIGHT_OFFSET_MIN } else { 0.0 },
            pitch: 0.0,
        };
        (cmd.clamped(), err.norm() + 0.3 * heading_err.abs())
    }

    /// Arm targets moving the tool point to `world_target`.
    fn arm_targets(&mut self, env: &Env, sim: &SimParams, world_target: Vector3<f64>, integrate: bool) -> [f64; NUM_JOINTS] {
        let ee = env.world.ee_position();
        if integrate {
            let e = world_target - ee;
            for i in 0..3 {
                self.correction[i] = (self.correction[i] + 0.15 * e[i]).clamp(-0.08, 0.08);
            }
        }
        let corrected = world_target + Vector3::from(self.correction);
        let pose = env.world.base.pose(&sim.plant);
        let local = pose.inverse() * nalgebra::Point3::from(corrected);
        let q = planar_ik_with(&sim.arm, &local.coords, self.pitch).unwrap_or_else(|| {
            // Out of reach: keep the last posture and point the arm at the target.
            let mut q = self.last.filter(|_| self.pitch.is_some()).unwrap_or(sim.arm.nominal);
            q[0] = local.y.atan2(local.x - sim.arm.mount[0]).clamp(sim.arm.joints[0].lower, sim.arm.joints[0].upper);
            q
        });
        self.last = Some(q);
        q
    }

    pub fn act(&mut self, env: &Env, params: &EnvParams) -> HighLevelAction {
        let sim = &params.sim;
        let w = &env.world;
        let cfg = &env.config;
        let obj = w.object.center;
        let ee = w.ee_position();
        let h = w.object.height;
        let pick = cfg.pick_table.center;
        let place = cfg.place_table.center;
        let place_h = cfg.place_table.height;
        let hover = cfg.pick_table.height.max(place_h) + h + 0.08;
        let mut gripper = w.gripper.mode;
        let mut base_cmd = BaseCommand::default();
        let mut targets = sim.arm.nominal;

        match self.stage {
            ScriptStage::ApproachPick | ScriptStage::Reach => {
                let (cmd, err) = self.base_command(env, pick, obj.z);
                base_cmd = cmd;
                let near = err < 0.12 && w.base.planar_speed() < 0.25;
                if near {
                    self.stage = ScriptStage::Reach;
                }
                if self.stage == ScriptStage::Reach {
                    targets = self.arm_targets(env, sim, obj, true);
                    let d = (obj - ee).norm();
                    let rel = (w.ee_velocity - w.object.velocity).norm();
                    if w.gripper.mode == GripperMode::Closed && !w.gripper.is_attached() {
                        gripper = GripperMode::Open;
                    } else if d < 0.012 && rel < 0.15 {
                        gripper = GripperMode::Closed;
                    }
                    if w.gripper.is_attached() {
                        self.stage = ScriptStage::Lift;
                        self.correction = [0.0; 3];
                        self.wait = 0;
                        let q = &w.arm.positions;
                        self.pitch = Some(q[1] + q[2] + q[3]);
                    }
                } else if err < 0.6 {
                    targets = self.arm_targets(env, sim, obj + Vector3::new(0.0, 0.0, 0.08), false);
                }
            }
            ScriptStage::Lift => {
                gripper = GripperMode::Closed;
                let (cmd, _) = self.base_command(env, pick, obj.z);
                base_cmd = BaseCommand { v_x: 0.0, v_y: 0.0, ..cmd };
                let goal = Vector3::new(ee.x, ee.y, cfg.pick_table.height + h + 0.12);
                targets = self.arm_targets(env, sim, goal, true);
                self.wait += 1;
                if w.object.bottom().z > cfg.pick_table.height + 0.06 || self.wait > 40 {
                    self.stage = ScriptStage::Carry;
                }
            }
            ScriptStage::Carry | ScriptStage::Lower => {
                gripper = GripperMode::Closed;
                let (cmd, err) = self.base_command(env, place, place_h);
                base_cmd = cmd;
                if self.stage == ScriptStage::Lower && place_h < cfg.pick_table.height - 0.1 {
                    // Crouch so the wrist can keep its grasp pitch at the lower table.
                    base_cmd.height_offset = base::HEIGHT_OFFSET_MIN;
                }
                let offset = obj - ee;
                let over = Vector3::new(place[0], place[1], place_h + h + 0.06);
                if self.stage == ScriptStage::Carry {
                    let horiz = (obj.x - place[0]).hypot(obj.y - place[1]);
                    // Carry high until close so the object clears the table edge.
                    let goal = if horiz > 0.25 { Vector3::new(ee.x, ee.y, hover) } else { over - offset };
                    targets = self.arm_targets(env, sim, goal, err < 0.15);
                    if err < 0.12 && horiz < 0.015 && w.base.planar_speed() < 0.2 {
                        self.stage = ScriptStage::Lower;
                    }
                } else {
                    // Descend at a bounded rate so touchdown is gentle.
                    let z = (place_h + 0.5 * h - 0.005).max(obj.z - 0.008);
                    let down = Vector3::new(place[0], place[1], z);
                    targets = self.arm_targets(env, sim, down - offset, true);
                    if env.phase >= Phase::PLACED {
                        self.stage = ScriptStage::Release;
                        self.wait = 0;
                    }
                }
                if !w.gripper.is_attached() {
                    self.stage = ScriptStage::Done;
                }
            }
            ScriptStage::Release => {
                gripper = GripperMode::Open;
                targets = w.arm.positions;
                self.wait += 1;
                if self.wait >= 5 {
                    self.stage = ScriptStage::Retreat;
                    self.correction = [0.0; 3];
                    self.pitch = None;
                }
            }
            ScriptStage::Retreat | ScriptStage::Done => {
                gripper = GripperMode::Open;
                let up = Vector3::new(ee.x, ee.y, obj.z + 0.25);
                targets = if self.stage == ScriptStage::Retreat { self.arm_targets(env, sim, up, false) } else { sim.arm.nominal };
                if (ee - obj).norm() > 0.2 {
                    self.stage = ScriptStage::Done;
                }
            }
        }
        HighLevelAction { base: base_cmd.clamped(), arm: ArmCommand { targets, gripper } }
    }
}

/// Stands still with the arm at the nominal posture and the gripper open.
pub fn do_nothing(sim: &SimParams) -> HighLevelAction {
    HighLevelAction { base: BaseCommand::default(), arm: ArmCommand { targets: sim.arm.nominal, gripper: GripperMode::Open } }
}

/// Uniform raw outputs on `[-3, 3]` pushed through the action scaling.
pub fn random_action<R: Rng + ?Sized>(rng: &mut R, arm: &ArmParams) -> HighLevelAction {
    let raw: [f64; ACTION_DIM] = std::array::from_fn(|_| rng.random_range(-3.0..3.0));
    scale_action(&raw, arm)
}
