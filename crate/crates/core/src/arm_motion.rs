//! Random joint-space arm motions.
//!
//! Every joint gets its own start, target, duration and motion profile, so
//! joints finish at different times and the arm keeps producing varied
//! reaction loads on the base.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::NUM_JOINTS;

pub const MAX_PAYLOAD: f64 = 2.0;
pub const DEFAULT_DURATION_RANGE: (f64, f64) = (0.5, 4.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionMode {
    ConstantVelocity,
    SymmetricAcceleration,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointTrajectory {
    pub joint: usize,
    pub start: f64,
    pub target: f64,
    pub duration: f64,
    pub mode: MotionMode,
}

impl JointTrajectory {
    pub fn displacement(&self) -> f64 {
        self.target - self.start
    }

    /// Position and velocity at time `t` (negative `t` is treated as 0).
    /// After the duration the joint holds its target at rest.
    pub fn evaluate(&self, t: f64) -> (f64, f64) {
        let t = t.max(0.0);
        let big_t = self.duration;
        if t >= big_t {
            return (self.target, 0.0);
        }
        let dq = self.displacement();
        let (q, v) = match self.mode {
            MotionMode::ConstantVelocity => (self.start + dq * (t / big_t), dq / big_t),
            MotionMode::SymmetricAcceleration => {
                let a = 4.0 * dq / (big_t * big_t);
                if t <= 0.5 * big_t {
                    (self.start + 0.5 * a * t * t, a * t)
                } else {
                    let rem = big_t - t;
                    (self.target - 0.5 * a * rem * rem, a * rem)
                }
            }
        };
        let (lo, hi) = if self.start <= self.target { (self.start, self.target) } else { (self.target, self.start) };
        (q.clamp(lo, hi), v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmMotionPlan {
    pub joints: Vec<JointTrajectory>,
    pub payload_mass: f64,
}

impl ArmMotionPlan {
    pub fn initial_positions(&self) -> [f64; NUM_JOINTS] {
        std::array::from_fn(|i| self.joints[i].start)
    }

    pub fn evaluate(&self, t: f64) -> ([f64; NUM_JOINTS], [f64; NUM_JOINTS]) {
        let mut q = [0.0; NUM_JOINTS];
        let mut v = [0.0; NUM_JOINTS];
        for (i, traj) in self.joints.iter().enumerate() {
            (q[i], v[i]) = traj.evaluate(t);
        }
        (q, v)
    }

    pub fn longest_duration(&self) -> f64 {
        self.joints.iter().map(|j| j.duration).fold(0.0, f64::max)
    }

    /// Samples the plan on a uniform time grid from 0 to `horizon` inclusive.
    pub fn tabulate(&self, dt: f64, horizon: f64) -> Vec<MotionSample> {
        let n = (horizon / dt).round() as usize;
        (0..=n)
            .map(|k| {
                let t = k as f64 * dt;
                let (q, qd) = self.evaluate(t);
                MotionSample { t, q, qd }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionSample {
    pub t: f64,
    pub q: [f64; NUM_JOINTS],
    pub qd: [f64; NUM_JOINTS],
}

/// Draws one plan: per joint, start and target uniform over the joint range,
/// duration uniform over `duration_range`, and an even coin for the profile;
/// payload uniform on `[0, 2]` kg.
pub fn sample_plan<R: Rng + ?Sized>(
    rng: &mut R,
    lower: &[f64; NUM_JOINTS],
    upper: &[f64; NUM_JOINTS],
    duration_range: (f64, f64),
) -> Result<ArmMotionPlan> {
    let (d_lo, d_hi) = duration_range;
    if !(d_lo > 0.0 && d_hi >= d_lo && d_hi.is_finite()) {
        return Err(Error::InvalidConfig(format!("duration range {duration_range:?} must be positive")));
    }
    let joints = (0..NUM_JOINTS)
        .map(|joint| {
            let (lo, hi) = (lower[joint], upper[joint]);
            let start = rng.random_range(lo..=hi);
            let target = rng.random_range(lo..=hi);
            let duration = rng.random_range(d_lo..=d_hi);
            let mode = if rng.random_bool(0.5) {
                MotionMode::ConstantVelocity
            } else {
                MotionMode::SymmetricAcceleration
            };
            JointTrajectory { joint, start, target, duration, mode }
        })
        .collect();
    let payload_mass = rng.random_range(0.0..=MAX_PAYLOAD);
    Ok(ArmMotionPlan { joints, payload_mass })
}
