use nalgebra::{Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

pub const MAX_OBJECT_MASS: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Box,
    Cylinder,
}

impl Shape {
    pub fn one_hot(self) -> [f64; 2] {
        match self {
            Shape::Box => [1.0, 0.0],
            Shape::Cylinder => [0.0, 1.0],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Support {
    PickTable,
    PlaceTable,
    Gripper,
    Falling,
    Floor,
}

/// Centre, top and bottom points along the object's own z axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Keypoints {
    pub center: Vector3<f64>,
    pub top: Vector3<f64>,
    pub bottom: Vector3<f64>,
}

impl Keypoints {
    pub fn to_array(&self) -> [f64; 9] {
        [
            self.center.x,
            self.center.y,
            self.center.z,
            self.top.x,
            self.top.y,
            self.top.z,
            self.bottom.x,
            self.bottom.y,
            self.bottom.z,
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    pub shape: Shape,
    /// Box side length or cylinder diameter, m.
    pub width: f64,
    pub height: f64,
    pub mass: f64,
    pub center: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
    pub velocity: Vector3<f64>,
    pub support: Support,
}

impl ObjectState {
    /// An upright object resting with its bottom at `surface` height.
    pub fn upright(
        shape: Shape,
        width: f64,
        height: f64,
        mass: f64,
        xy: [f64; 2],
        surface: f64,
        yaw: f64,
        support: Support,
    ) -> Self {
        Self {
            shape,
            width,
            height,
            mass,
            center: Vector3::new(xy[0], xy[1], surface + 0.5 * height),
            orientation: UnitQuaternion::from_euler_angles(0.0, 0.0, yaw),
            velocity: Vector3::zeros(),
            support,
        }
    }

    pub fn z_axis(&self) -> Vector3<f64> {
        self.orientation * Vector3::z()
    }

    pub fn yaw(&self) -> f64 {
        self.orientation.euler_angles().2
    }

    pub fn keypoints(&self) -> Keypoints {
        let half = 0.5 * self.height * self.z_axis();
        Keypoints { center: self.center, top: self.center + half, bottom: self.center - half }
    }

    pub fn bottom(&self) -> Vector3<f64> {
        self.center - 0.5 * self.height * self.z_axis()
    }

    /// Cosine of the tilt from vertical.
    pub fn uprightness(&self) -> f64 {
        self.z_axis().z
    }

    pub fn is_resting(&self) -> bool {
        matches!(self.support, Support::PickTable | Support::PlaceTable | Support::Floor)
    }

    /// Settles the object onto a surface after touchdown. It stays upright
    /// unless its tilt puts the centre of mass outside the footprint or its
    /// horizontal speed exceeds `tip_speed_ref * width / height`.
    pub fn settle(&mut self, surface: f64, support: Support, tip_speed_ref: f64, tipped_tilt: f64) {
        let aspect = self.width / self.height;
        let tilt = self.uprightness().clamp(-1.0, 1.0).acos();
        let horizontal = Vector3::new(self.velocity.x, self.velocity.y, 0.0);
        let tips = tilt > aspect.atan() || horizontal.norm() > tip_speed_ref * aspect;
        let yaw = self.yaw();
        if tips {
            // Fall over towards the direction of travel, or of the tilt.
            let mut dir = horizontal;
            if dir.norm() < 1e-9 {
                let z = self.z_axis();
                dir = Vector3::new(z.x, z.y, 0.0);
            }
            if dir.norm() < 1e-9 {
                dir = Vector3::x();
            }
            let axis = Unit::new_normalize(Vector3::z().cross(&dir.normalize()));
            self.orientation =
                UnitQuaternion::from_axis_angle(&axis, tipped_tilt) * UnitQuaternion::from_euler_angles(0.0, 0.0, yaw);
            let (s, c) = tipped_tilt.sin_cos();
            self.center.z = surface + 0.5 * self.height * c + 0.5 * self.width * s;
        } else {
            self.orientation = UnitQuaternion::from_euler_angles(0.0, 0.0, yaw);
            self.center.z = surface + 0.5 * self.height;
        }
        self.velocity = Vector3::zeros();
        self.support = support;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableSpec {
    pub center: [f64; 2],
    pub height: f64,
    pub radius: f64,
}

pub const TABLE_RADIUS: f64 = 0.10;

impl TableSpec {
    pub fn new(center: [f64; 2], height: f64) -> Self {
        Self { center, height, radius: TABLE_RADIUS }
    }

    pub fn horizontal_distance(&self, p: &Vector3<f64>) -> f64 {
        (p.x - self.center[0]).hypot(p.y - self.center[1])
    }

    pub fn covers(&self, p: &Vector3<f64>) -> bool {
        self.horizontal_distance(p) <= self.radius
    }

    pub fn top_center(&self) -> Vector3<f64> {
        Vector3::new(self.center[0], self.center[1], self.height)
    }
}
