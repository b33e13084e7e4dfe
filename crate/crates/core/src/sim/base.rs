//! Command-tracking base plant.
//!
//! Stands in for a learned locomotion controller: planar and yaw velocities
//! follow their commands through a first-order lag, body height offset and
//! pitch follow theirs through a slower lag, and the arm's reaction on the
//! body enters as an additive velocity disturbance.

use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

pub const VX_MIN: f64 = -1.0;
pub const VX_MAX: f64 = 2.0;
pub const VY_MAX: f64 = 1.0;
pub const YAW_RATE_MAX: f64 = 1.0;
pub const HEIGHT_OFFSET_MIN: f64 = -0.2;
pub const HEIGHT_OFFSET_MAX: f64 = 0.0;
pub const PITCH_MAX: f64 = 0.28;

/// High-level command accepted by the plant.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BaseCommand {
    pub v_x: f64,
    pub v_y: f64,
    pub yaw_rate: f64,
    pub height_offset: f64,
    pub pitch: f64,
}

impl BaseCommand {
    pub fn within_limits(&self) -> bool {
        (VX_MIN..=VX_MAX).contains(&self.v_x)
            && self.v_y.abs() <= VY_MAX
            && self.yaw_rate.abs() <= YAW_RATE_MAX
            && (HEIGHT_OFFSET_MIN..=HEIGHT_OFFSET_MAX).contains(&self.height_offset)
            && self.pitch.abs() <= PITCH_MAX
    }

    pub fn clamped(&self) -> Self {
        Self {
            v_x: self.v_x.clamp(VX_MIN, VX_MAX),
            v_y: self.v_y.clamp(-VY_MAX, VY_MAX),
            yaw_rate: self.yaw_rate.clamp(-YAW_RATE_MAX, YAW_RATE_MAX),
            height_offset: self.height_offset.clamp(HEIGHT_OFFSET_MIN, HEIGHT_OFFSET_MAX),
            pitch: self.pitch.clamp(-PITCH_MAX, PITCH_MAX),
        }
    }

    /// Planar velocity part `c_t = [v_x, v_y, ω_z]`.
    pub fn velocity(&self) -> [f64; 3] {
        [self.v_x, self.v_y, self.yaw_rate]
    }

    /// Body posture part `b_t = [φ, Δh]`.
    pub fn body(&self) -> [f64; 2] {
        [self.pitch, self.height_offset]
    }

    pub fn is_finite(&self) -> bool {
        [self.v_x, self.v_y, self.yaw_rate, self.height_offset, self.pitch]
            .iter()
            .all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantParams {
    /// Velocity tracking time constant, s.
    pub tau_track: f64,
    /// Height/pitch tracking time constant, s.
    pub tau_body: f64,
    /// Gain from arm reaction (payload mass × tool acceleration) to base
    /// velocity disturbance, 1/kg.
    pub kappa_dist: f64,
    /// Body frame height above ground at zero height offset, m.
    pub nominal_height: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self { tau_track: 0.15, tau_body: 0.25, kappa_dist: 0.05, nominal_height: 0.45 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BaseState {
    pub position: [f64; 2],
    pub yaw: f64,
    pub height_offset: f64,
    pub pitch: f64,
    /// Body-frame planar velocity, m/s.
    pub v_x: f64,
    pub v_y: f64,
    pub yaw_rate: f64,
    pub vertical_velocity: f64,
    pub roll_rate: f64,
    pub pitch_rate: f64,
    /// Part of `pitch_rate` caused by arm reaction; decays with `tau_track`.
    pub pitch_disturbance: f64,
}

impl BaseState {
    pub fn at(x: f64, y: f64, yaw: f64) -> Self {
        Self { position: [x, y], yaw, ..Default::default() }
    }

    /// Base frame pose: yaw about world z, then pitch about the body y axis.
    pub fn pose(&self, params: &PlantParams) -> Isometry3<f64> {
        let rotation = UnitQuaternion::from_euler_angles(0.0, self.pitch, self.yaw);
        Isometry3::from_parts(
            Translation3::new(
                self.position[0],
                self.position[1],
                params.nominal_height + self.height_offset,
            ),
            rotation,
        )
    }

    pub fn heading(&self) -> Vector3<f64> {
        Vector3::new(self.yaw.cos(), self.yaw.sin(), 0.0)
    }

    pub fn planar_speed(&self) -> f64 {
        self.v_x.hypot(self.v_y)
    }

    /// Kinetic energy proxy of a unit-mass, unit-inertia body.
    pub fn kinetic_energy(&self) -> f64 {
        0.5 * (self.v_x * self.v_x
            + self.v_y * self.v_y
            + self.vertical_velocity * self.vertical_velocity
            + self.yaw_rate * self.yaw_rate
            + self.roll_rate * self.roll_rate
            + self.pitch_rate * self.pitch_rate)
    }

    pub fn within_limits(&self) -> bool {
        (VX_MIN..=VX_MAX).contains(&self.v_x)
            && self.v_y.abs() <= VY_MAX
            && self.yaw_rate.abs() <= YAW_RATE_MAX
            && (HEIGHT_OFFSET_MIN..=HEIGHT_OFFSET_MAX).contains(&self.height_offset)
            && self.pitch.abs() <= PITCH_MAX
    }
}

/// Reaction of the arm on the body, in the body frame.
#[derive(Clone, Copy, Debug, Default)]
pub struct ArmReaction {
    /// Payload mass times tool-point acceleration.
    pub force: Vector3<f64>,
    /// Moment of `force` about the base origin.
    pub moment: Vector3<f64>,
}

fn lag(value: f64, target: f64, decay: f64) -> f64 {
    target + (value - target) * decay
}

/// Advances the plant by `dt`. The command is clamped to the plant limits.
pub fn step(
    state: &BaseState,
    command: &BaseCommand,
    reaction: &ArmReaction,
    params: &PlantParams,
    dt: f64,
) -> BaseState {
    let cmd = command.clamped();
    let track = (-dt / params.tau_track).exp();
    let body = (-dt / params.tau_body).exp();
    let k = params.kappa_dist * dt;

    let v_x = (lag(state.v_x, cmd.v_x, track) - k * reaction.force.x).clamp(VX_MIN, VX_MAX);
    let v_y = (lag(state.v_y, cmd.v_y, track) - k * reaction.force.y).clamp(-VY_MAX, VY_MAX);
    let yaw_rate = (lag(state.yaw_rate, cmd.yaw_rate, track) - k * reaction.moment.z)
        .clamp(-YAW_RATE_MAX, YAW_RATE_MAX);
    let roll_rate = state.roll_rate * track - k * reaction.moment.x;
    let pitch_disturbance = state.pitch_disturbance * track - k * reaction.moment.y;

    let height_offset =
        lag(state.height_offset, cmd.height_offset, body).clamp(HEIGHT_OFFSET_MIN, HEIGHT_OFFSET_MAX);
    let pitch = lag(state.pitch, cmd.pitch, body).clamp(-PITCH_MAX, PITCH_MAX);

    // Semi-implicit: integrate the pose with the updated rates.
    let yaw = state.yaw + yaw_rate * dt;
    let mid = state.yaw + 0.5 * yaw_rate * dt;
    let (s, c) = mid.sin_cos();
    let position = [
        state.position[0] + (c * v_x - s * v_y) * dt,
        state.position[1] + (s * v_x + c * v_y) * dt,
    ];

    BaseState {
        position,
        yaw,
        height_offset,
        pitch,
        v_x,
        v_y,
        yaw_rate,
        vertical_velocity: (height_offset - state.height_offset) / dt,
        roll_rate,
        pitch_rate: (pitch - state.pitch) / dt + pitch_disturbance,
        pitch_disturbance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DT: f64 = 0.01;

    #[test]
    fn step_response_matches_first_order_lag() {
        let params = PlantParams::default();
        let cmd = BaseCommand { v_x: 1.0, ..Default::default() };
        let mut s = BaseState::default();
        for n in 1..=200 {
            s = step(&s, &cmd, &ArmReaction::default(), &params, DT);
            let t = n as f64 * DT;
            let expected = 1.0 - (-t / params.tau_track).exp();
            assert!((s.v_x - expected).abs() < 1e-6, "t={t}: {} vs {expected}", s.v_x);
        }
    }

    #[test]
    fn zero_command_decays_below_one_percent_after_five_time_constants() {
        let params = PlantParams::default();
        let mut s = BaseState { v_x: 1.5, v_y: -0.8, yaw_rate: 0.9, ..Default::default() };
        let initial = s.planar_speed().max(s.yaw_rate.abs());
        let steps = (5.0 * params.tau_track / DT).round() as usize;
        for _ in 0..steps {
            s = step(&s, &BaseCommand::default(), &ArmReaction::default(), &params, DT);
        }
        assert!(s.planar_speed() < 0.01 * initial);
        assert!(s.yaw_rate.abs() < 0.01 * initial);
    }

    #[test]
    fn body_posture_saturates() {
        let params = PlantParams::default();
        let cmd = BaseCommand { height_offset: -5.0, pitch: 3.0, v_x: 9.0, ..Default::default() };
        let mut s = BaseState::default();
        for _ in 0..500 {
            s = step(&s, &cmd, &ArmReaction::default(), &params, DT);
            assert!(s.within_limits());
        }
        assert!((s.height_offset - HEIGHT_OFFSET_MIN).abs() < 1e-9);
        assert!((s.pitch - PITCH_MAX).abs() < 1e-9);
    }

    #[test]
    fn reaction_pushes_base_opposite_to_payload_acceleration() {
        let params = PlantParams::default();
        let reaction = ArmReaction { force: Vector3::new(20.0, 0.0, 0.0), moment: Vector3::zeros() };
        let s = step(&BaseState::default(), &BaseCommand::default(), &reaction, &params, DT);
        assert!(s.v_x < 0.0);
    }
}
