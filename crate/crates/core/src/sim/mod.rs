//! Fixed-step world model: base plant, arm, binary gripper, object and the
//! two tables.

pub mod arm;
pub mod base;
pub mod object;

use nalgebra::{Isometry3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use arm::{ArmFrames, ArmParams, ArmState, Axis, JointSpec, NUM_JOINTS};
pub use base::{ArmReaction, BaseCommand, BaseState, PlantParams};
pub use object::{Keypoints, ObjectState, Shape, Support, TableSpec, MAX_OBJECT_MASS, TABLE_RADIUS};

/// Plant integration step, s (100 Hz).
pub const DT: f64 = 0.01;
pub const GRAVITY: f64 = 9.81;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraspParams {
    /// Maximum tool-to-object-centre distance for attachment, m.
    pub radius: f64,
    /// Maximum tool-object relative speed for attachment, m/s.
    pub max_relative_speed: f64,
    /// Object displacement per unit relative speed on a failed close, s.
    pub bump_gain: f64,
    /// Failed closes within this distance disturb the object, m.
    pub bump_radius: f64,
}

impl Default for GraspParams {
    fn default() -> Self {
        Self { radius: 0.03, max_relative_speed: 0.3, bump_gain: 0.1, bump_radius: 0.06 }
    }
}

/// The two attachment gates evaluated on plain numbers.
pub fn grasp_gate(distance: f64, relative_speed: f64, params: &GraspParams) -> bool {
    distance <= params.radius && relative_speed <= params.max_relative_speed
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlacementParams {
    pub tilt_tolerance_deg: f64,
    /// A held object counts as resting when its bottom is at most this far
    /// above the table top...
    pub contact_band: f64,
    /// ...or at most this far below it.
    pub penetration_band: f64,
}

impl Default for PlacementParams {
    fn default() -> Self {
        Self { tilt_tolerance_deg: 10.0, contact_band: 0.01, penetration_band: 0.03 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContactParams {
    /// Tool-point clearance above a table top before contact, m.
    pub clearance: f64,
    /// Penalty spring constant, N/m.
    pub stiffness: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        Self { clearance: 0.02, stiffness: 500.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectParams {
    /// Touchdown horizontal speed that tips an object of unit aspect, m/s.
    pub tip_speed_ref: f64,
    /// Resting tilt of a tipped object, rad.
    pub tipped_tilt: f64,
}

impl Default for ObjectParams {
    fn default() -> Self {
        Self { tip_speed_ref: 1.0, tipped_tilt: 1.5 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimParams {
    pub plant: PlantParams,
    pub arm: ArmParams,
    pub grasp: GraspParams,
    pub placement: PlacementParams,
    pub contact: ContactParams,
    pub object: ObjectParams,
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        self.arm.validate().map_err(Error::InvalidConfig)?;
        let p = &self.plant;
        if p.tau_track <= 0.0 || p.tau_body <= 0.0 || p.kappa_dist < 0.0 {
            return Err(Error::InvalidConfig("plant time constants must be positive".into()));
        }
        if self.grasp.radius <= 0.0 || self.grasp.max_relative_speed <= 0.0 {
            return Err(Error::InvalidConfig("grasp gates must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GripperMode {
    #[default]
    Open,
    Closed,
}

/// Object pose relative to the tool frame, fixed at attach time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attachment {
    pub offset: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GripperState {
    pub mode: GripperMode,
    pub attachment: Option<Attachment>,
}

impl GripperState {
    pub fn is_attached(&self) -> bool {
        self.attachment.is_some()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmCommand {
    pub targets: [f64; NUM_JOINTS],
    pub gripper: GripperMode,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    NotPlaced,
    PlacedUpright,
    PlacedTipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub base: BaseState,
    pub arm: ArmState,
    pub gripper: GripperState,
    pub object: ObjectState,
    pub pick_table: TableSpec,
    pub place_table: TableSpec,
    pub time: f64,
    pub step_count: u64,
    pub ee: Isometry3<f64>,
    pub ee_velocity: Vector3<f64>,
    pub ee_acceleration: Vector3<f64>,
}

pub fn forward_kinematics(params: &SimParams, arm: &ArmState, base: &BaseState) -> Isometry3<f64> {
    ArmFrames::compute(&params.arm, &base.pose(&params.plant), &arm.positions).ee
}

impl WorldState {
    pub fn new(
        params: &SimParams,
        base: BaseState,
        arm: ArmState,
        object: ObjectState,
        pick_table: TableSpec,
        place_table: TableSpec,
    ) -> Self {
        let ee = forward_kinematics(params, &arm, &base);
        Self {
            base,
            arm,
            gripper: GripperState::default(),
            object,
            pick_table,
            place_table,
            time: 0.0,
            step_count: 0,
            ee,
            ee_velocity: Vector3::zeros(),
            ee_acceleration: Vector3::zeros(),
        }
    }

    pub fn ee_position(&self) -> Vector3<f64> {
        self.ee.translation.vector
    }

    pub fn payload(&self) -> f64 {
        let object = if self.gripper.is_attached() { self.object.mass } else { 0.0 };
        self.arm.flange_payload + object
    }

    pub fn frames(&self, params: &SimParams) -> ArmFrames {
        ArmFrames::compute(&params.arm, &self.base.pose(&params.plant), &self.arm.positions)
    }

    /// Advances the world by one plant step of [`DT`].
    pub fn step(&self, params: &SimParams, base_cmd: &BaseCommand, arm_cmd: &ArmCommand) -> Result<WorldState> {
        if !base_cmd.is_finite() {
            return Err(Error::NonFinite("base command"));
        }
        if arm_cmd.targets.iter().any(|q| !q.is_finite()) {
            return Err(Error::NonFinite("arm command"));
        }

        let payload = self.payload();
        let base_pose = self.base.pose(&params.plant);
        let frames = ArmFrames::compute(&params.arm, &base_pose, &self.arm.positions);
        let arm = arm::track(&params.arm, &frames, &self.arm, &arm_cmd.targets, payload, DT);

        let inv = base_pose.rotation.inverse();
        let force = inv * (payload * self.ee_acceleration);
        let lever = inv * (self.ee_position() - base_pose.translation.vector);
        let reaction = ArmReaction { force, moment: lever.cross(&force) };
        let base = base::step(&self.base, base_cmd, &reaction, &params.plant, DT);

        let ee = forward_kinematics(params, &arm, &base);
        let ee_velocity = (ee.translation.vector - self.ee_position()) / DT;
        let ee_acceleration = (ee_velocity - self.ee_velocity) / DT;

        let step_count = self.step_count + 1;
        let mut next = WorldState {
            base,
            arm,
            gripper: self.gripper.clone(),
            object: self.object.clone(),
            pick_table: self.pick_table.clone(),
            place_table: self.place_table.clone(),
            time: step_count as f64 * DT,
            step_count,
            ee,
            ee_velocity,
            ee_acceleration,
        };

        match (self.gripper.mode, arm_cmd.gripper) {
            (GripperMode::Open, GripperMode::Closed) => {
                next.gripper.mode = GripperMode::Closed;
                next.try_grasp(params);
            }
            (GripperMode::Closed, GripperMode::Open) => {
                next.gripper.mode = GripperMode::Open;
                if next.gripper.attachment.take().is_some() {
                    next.object.support = Support::Falling;
                    next.object.velocity = next.ee_velocity;
                }
            }
            _ => {}
        }
        next.update_object(params);

        let finite = next.base.position.iter().all(|v| v.is_finite())
            && next.arm.positions.iter().all(|v| v.is_finite())
            && next.object.center.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("world state"));
        }
        Ok(next)
    }

    /// Attempts to attach the object on a gripper close. Succeeds iff both
    /// grasp gates pass; a failed close near the object shoves it along the
    /// horizontal relative velocity.
    pub fn try_grasp(&mut self, params: &SimParams) {
        if self.gripper.mode != GripperMode::Closed || self.gripper.is_attached() {
            return;
        }
        let to_object = self.object.center - self.ee_position();
        let distance = to_object.norm();
        let relative = self.ee_velocity - self.object.velocity;
        if grasp_gate(distance, relative.norm(), &params.grasp) {
            let inv = self.ee.rotation.inverse();
            self.gripper.attachment = Some(Attachment {
                offset: inv * to_object,
                rotation: inv * self.object.orientation,
            });
            self.object.support = Support::Gripper;
            self.object.velocity = self.ee_velocity;
        } else if distance <= params.grasp.bump_radius {
            let shove = params.grasp.bump_gain * Vector3::new(relative.x, relative.y, 0.0);
            self.object.center += shove;
            let table = match self.object.support {
                Support::PickTable => Some(&self.pick_table),
                Support::PlaceTable => Some(&self.place_table),
                _ => None,
            };
            if let Some(table) = table {
                if !table.covers(&self.object.center) {
                    self.object.support = Support::Falling;
                }
            }
        }
    }

    fn update_object(&mut self, params: &SimParams) {
        if let Some(att) = &self.gripper.attachment {
            self.object.center = self.ee.translation.vector + self.ee.rotation * att.offset;
            self.object.orientation = self.ee.rotation * att.rotation;
            self.object.velocity = self.ee_velocity;
            self.object.support = Support::Gripper;
            return;
        }
        if self.object.support != Support::Falling {
            return;
        }
        let prev_bottom = self.object.bottom().z;
        self.object.velocity.z -= GRAVITY * DT;
        self.object.center += self.object.velocity * DT;
        let bottom = self.object.bottom().z;
        let band = params.placement.penetration_band;
        for (table, support) in [(&self.pick_table, Support::PickTable), (&self.place_table, Support::PlaceTable)] {
            if table.covers(&self.object.center) && prev_bottom >= table.height - band && bottom <= table.height {
                let h = table.height;
                self.object.settle(h, support, params.object.tip_speed_ref, params.object.tipped_tilt);
                return;
            }
        }
        if bottom <= 0.0 {
            self.object.settle(0.0, Support::Floor, params.object.tip_speed_ref, params.object.tipped_tilt);
        }
    }

    /// Placement status on the place table. A held object counts once its
    /// bottom is within the contact band of the table top.
    pub fn check_placement(&self, params: &SimParams) -> Placement {
        let table = &self.place_table;
        let resting = match self.object.support {
            Support::PlaceTable => true,
            Support::Gripper => {
                let dz = self.object.bottom().z - table.height;
                dz <= params.placement.contact_band && dz >= -params.placement.penetration_band
            }
            _ => false,
        };
        if !resting || !table.covers(&self.object.center) {
            return Placement::NotPlaced;
        }
        let cos_tol = params.placement.tilt_tolerance_deg.to_radians().cos();
        if self.object.uprightness() >= cos_tol {
            Placement::PlacedUpright
        } else {
            Placement::PlacedTipped
        }
    }

    /// Penalty force between the tool point and the table tops, N.
    pub fn ee_table_contact_force(&self, params: &SimParams) -> f64 {
        let p = self.ee_position();
        [&self.pick_table, &self.place_table]
            .into_iter()
            .filter(|t| t.covers(&p))
            .map(|t| params.contact.stiffness * (t.height + params.contact.clearance - p.z).max(0.0))
            .fold(0.0, f64::max)
    }

    /// Horizontal tool point position relative to a table centre.
    pub fn ee_over(&self, table: &TableSpec) -> bool {
        let p = self.ee_position();
        table.covers(&p) && p.z > table.height
    }
}

#[cfg(test)]
mod tests;
