//! Six-joint serial arm: kinematic chain, forward kinematics and the
//! joint-space PD tracking model used by the plant.

use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::sim::GRAVITY;

pub const NUM_JOINTS: usize = 6;

/// Rotation axis of a revolute joint, expressed in the joint's local frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn unit(self) -> Vector3<f64> {
        match self {
            Axis::X => Vector3::x(),
            Axis::Y => Vector3::y(),
            Axis::Z => Vector3::z(),
        }
    }

    pub fn rotation(self, angle: f64) -> UnitQuaternion<f64> {
        UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_unchecked(self.unit()), angle)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    /// Translation from the previous joint frame to this joint's origin.
    pub origin: [f64; 3],
    pub axis: Axis,
    pub lower: f64,
    pub upper: f64,
    /// Effective reflected inertia about the joint axis, kg·m².
    pub inertia: f64,
    /// Mass of the link driven by this joint. Its centre of mass sits halfway
    /// along the segment to the next joint (or to the tool point).
    pub link_mass: f64,
    pub torque_limit: f64,
}

impl JointSpec {
    pub fn clamp(&self, q: f64) -> f64 {
        q.clamp(self.lower, self.upper)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArmParams {
    /// Arm mount position in the base frame.
    pub mount: [f64; 3],
    pub joints: [JointSpec; NUM_JOINTS],
    /// Tool centre point offset from the last joint frame.
    pub tool: [f64; 3],
    pub nominal: [f64; NUM_JOINTS],
    /// Natural frequency of the critically damped joint tracking loop, rad/s.
    pub natural_frequency: f64,
    pub velocity_limit: f64,
}

impl Default for ArmParams {
    fn default() -> Self {
        let joint = |origin: [f64; 3], axis, lower, upper, inertia, link_mass, torque_limit| JointSpec {
            origin,
            axis,
            lower,
            upper,
            inertia,
            link_mass,
            torque_limit,
        };
        Self {
            mount: [0.15, 0.0, 0.10],
            joints: [
                joint([0.0, 0.0, 0.05], Axis::Z, -2.6, 2.6, 0.25, 1.2, 30.0),
                joint([0.0, 0.0, 0.05], Axis::Y, -1.8, 1.6, 0.40, 1.0, 60.0),
                joint([0.35, 0.0, 0.0], Axis::Y, -0.5, 2.9, 0.20, 0.8, 40.0),
                joint([0.22, 0.0, 0.0], Axis::Y, -1.6, 1.6, 0.12, 0.35, 30.0),
                joint([0.07, 0.0, 0.0], Axis::Z, -1.4, 1.4, 0.06, 0.3, 30.0),
                joint([0.05, 0.0, 0.0], Axis::X, -2.6, 2.6, 0.04, 0.45, 30.0),
            ],
            tool: [0.05, 0.0, 0.0],
            nominal: [0.0, -1.3, 2.6, -1.3, 0.0, 0.0],
            natural_frequency: 15.0,
            velocity_limit: 3.0,
        }
    }
}

impl ArmParams {
    pub fn lower(&self) -> [f64; NUM_JOINTS] {
        std::array::from_fn(|i| self.joints[i].lower)
    }

    pub fn upper(&self) -> [f64; NUM_JOINTS] {
        std::array::from_fn(|i| self.joints[i].upper)
    }

    /// Sum of all link translations: the tool point at zero joint angles,
    /// relative to the base frame.
    pub fn home_offset(&self) -> Vector3<f64> {
        let mut p = Vector3::from(self.mount) + Vector3::from(self.tool);
        for j in &self.joints {
            p += Vector3::from(j.origin);
        }
        p
    }

    /// Upper bound on the tool-point distance from the shoulder joint.
    pub fn reach(&self) -> f64 {
        self.joints[2..]
            .iter()
            .map(|j| Vector3::from(j.origin).norm())
            .sum::<f64>()
            + Vector3::from(self.tool).norm()
    }

    pub fn validate(&self) -> Result<(), String> {
        for (i, j) in self.joints.iter().enumerate() {
            if !(j.lower <= j.upper) {
                return Err(format!("joint {i}: lower limit above upper limit"));
            }
            if j.inertia <= 0.0 || j.torque_limit <= 0.0 || j.link_mass < 0.0 {
                return Err(format!("joint {i}: inertia and torque limit must be positive"));
            }
            if self.nominal[i] < j.lower || self.nominal[i] > j.upper {
                return Err(format!("joint {i}: nominal posture outside limits"));
            }
        }
        if self.natural_frequency <= 0.0 || self.velocity_limit <= 0.0 {
            return Err("tracking frequency and velocity limit must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmState {
    pub positions: [f64; NUM_JOINTS],
    pub velocities: [f64; NUM_JOINTS],
    pub accelerations: [f64; NUM_JOINTS],
    /// Motor torque proxy from the last tracking update, N·m.
    pub torques: [f64; NUM_JOINTS],
    /// Extra mass rigidly fixed to the flange (used by disturbance tests and
    /// the random arm-motion generator), kg.
    pub flange_payload: f64,
}

impl ArmState {
    pub fn at_rest(positions: [f64; NUM_JOINTS]) -> Self {
        Self {
            positions,
            velocities: [0.0; NUM_JOINTS],
            accelerations: [0.0; NUM_JOINTS],
            torques: [0.0; NUM_JOINTS],
            flange_payload: 0.0,
        }
    }
}

/// World-frame quantities of the chain at one configuration.
#[derive(Clone, Debug)]
pub struct ArmFrames {
    pub joint_origins: [Vector3<f64>; NUM_JOINTS],
    pub joint_axes: [Vector3<f64>; NUM_JOINTS],
    pub link_coms: [Vector3<f64>; NUM_JOINTS],
    pub ee: Isometry3<f64>,
}

impl ArmFrames {
    pub fn compute(params: &ArmParams, base_pose: &Isometry3<f64>, q: &[f64; NUM_JOINTS]) -> Self {
        let mut frame = base_pose * Translation3::from(Vector3::from(params.mount));
        let mut joint_origins = [Vector3::zeros(); NUM_JOINTS];
        let mut joint_axes = [Vector3::zeros(); NUM_JOINTS];
        for (i, joint) in params.joints.iter().enumerate() {
            frame *= Translation3::from(Vector3::from(joint.origin));
            joint_origins[i] = frame.translation.vector;
            joint_axes[i] = frame.rotation * joint.axis.unit();
            frame *= joint.axis.rotation(q[i]);
        }
        let ee = frame * Translation3::from(Vector3::from(params.tool));
        let mut link_coms = [Vector3::zeros(); NUM_JOINTS];
        for i in 0..NUM_JOINTS {
            let next = if i + 1 < NUM_JOINTS { joint_origins[i + 1] } else { ee.translation.vector };
            link_coms[i] = 0.5 * (joint_origins[i] + next);
        }
        Self { joint_origins, joint_axes, link_coms, ee }
    }

    pub fn ee_position(&self) -> Vector3<f64> {
        self.ee.translation.vector
    }

    /// Torque exerted by gravity on the arm links distal to each joint, about
    /// that joint's axis.
    pub fn link_gravity_torques(&self, params: &ArmParams) -> [f64; NUM_JOINTS] {
        std::array::from_fn(|i| {
            let mut moment = Vector3::zeros();
            for k in i..NUM_JOINTS {
                let force = Vector3::new(0.0, 0.0, -GRAVITY * params.joints[k].link_mass);
                moment += (self.link_coms[k] - self.joint_origins[i]).cross(&force);
            }
            self.joint_axes[i].dot(&moment)
        })
    }

    /// Torque exerted by gravity on a unit mass at the tool point, about each
    /// joint axis.
    pub fn unit_payload_torques(&self) -> [f64; NUM_JOINTS] {
        let force = Vector3::new(0.0, 0.0, -GRAVITY);
        let p = self.ee_position();
        std::array::from_fn(|i| self.joint_axes[i].dot(&(p - self.joint_origins[i]).cross(&force)))
    }
}

/// One tracking update of the joint-space PD loop.
///
/// The controller compensates link gravity but not the payload, so a payload
/// of mass `payload` makes each joint settle below its target by
/// `payload * unit_torque / K_p`. The returned state carries the motor torque
/// that produced the update.
pub fn track(
    params: &ArmParams,
    frames: &ArmFrames,
    state: &ArmState,
    targets: &[f64; NUM_JOINTS],
    payload: f64,
    dt: f64,
) -> ArmState {
    let omega = params.natural_frequency;
    let link_torques = frames.link_gravity_torques(params);
    let unit_torques = frames.unit_payload_torques();
    let mut next = state.clone();
    for i in 0..NUM_JOINTS {
        let spec = &params.joints[i];
        let kp = spec.inertia * omega * omega;
        let kd = 2.0 * spec.inertia * omega;
        let target = spec.clamp(targets[i]);
        let pd = kp * (target - state.positions[i]) - kd * state.velocities[i];
        let motor = (pd - link_torques[i]).clamp(-spec.torque_limit, spec.torque_limit);
        let acc = (motor + link_torques[i] + payload * unit_torques[i]) / spec.inertia;

        let mut vel = (state.velocities[i] + acc * dt).clamp(-params.velocity_limit, params.velocity_limit);
        let mut pos = state.positions[i] + vel * dt;
        if pos <= spec.lower || pos >= spec.upper {
            pos = spec.clamp(pos);
            vel = 0.0;
        }
        next.accelerations[i] = (vel - state.velocities[i]) / dt;
        next.velocities[i] = vel;
        next.positions[i] = pos;
        next.torques[i] = motor;
    }
    next
}
