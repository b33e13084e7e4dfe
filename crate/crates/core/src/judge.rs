//! Episode success criterion and failure taxonomy.
//!
//! The judge is a fold over per-step summaries, so the online tracker used
//! while simulating and the offline re-judging of a record are the same code.

use serde::{Deserialize, Serialize};

use crate::curriculum::{SubgoalOutcome, Tolerances};
use crate::sim::Support;

/// Largest post-release object displacement that still counts as undisturbed, m.
pub const DISTURB_LIMIT: f64 = 0.01;
/// Lift above the spawn surface that counts as a secured grasp, m.
pub const LIFT_THRESHOLD: f64 = 0.03;

/// What the judge needs to know about one decision step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub time: f64,
    pub base: [f64; 3],
    pub base_speed: f64,
    pub ee: [f64; 3],
    pub object_center: [f64; 3],
    pub object_bottom_z: f64,
    pub uprightness: f64,
    pub support: Support,
    pub attached: bool,
    pub gripper_closed: bool,
    pub phase: u8,
    /// `(base planar speed, tool-object relative speed)` at the instant the
    /// gripper closed during this step.
    pub close_event: Option<[f64; 2]>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureMode {
    GraspSlip,
    TipOver,
    Timeout,
    OffCenter,
    RetreatDisturb,
}

impl FailureMode {
    pub const ALL: [FailureMode; 5] = [
        FailureMode::GraspSlip,
        FailureMode::TipOver,
        FailureMode::Timeout,
        FailureMode::OffCenter,
        FailureMode::RetreatDisturb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FailureMode::GraspSlip => "grasp_slip",
            FailureMode::TipOver => "tip_over",
            FailureMode::Timeout => "timeout",
            FailureMode::OffCenter => "off_center",
            FailureMode::RetreatDisturb => "retreat_disturb",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum Outcome {
    Success { completion_time: f64 },
    Failure { mode: FailureMode },
}

impl Outcome {
    pub fn is_success(&self) -> bool {
        matches!(self, Outcome::Success { .. })
    }
}

/// Static task facts the judge needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JudgeSpec {
    pub place_center: [f64; 2],
    pub place_height: f64,
    pub pick_height: f64,
    pub tolerances: Tolerances,
    pub horizon: f64,
    pub tilt_tolerance_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Settled {
    center: [f64; 3],
    on_place: bool,
    upright: bool,
    within: bool,
}

/// Per-step flags for the reward machine and the curriculum.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TrackerFlags {
    pub secured: bool,
    pub release_success: bool,
    pub retreat_success: bool,
    pub success_now: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuccessTracker {
    spec: JudgeSpec,
    was_attached: bool,
    secured: bool,
    placed_ok: bool,
    released: bool,
    settled: Option<Settled>,
    disturbed: bool,
    lost: bool,
    success_time: Option<f64>,
    last_time: f64,
}

fn hdist(a: &[f64; 3], c: &[f64; 2]) -> f64 {
    (a[0] - c[0]).hypot(a[1] - c[1])
}

fn dist3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

impl SuccessTracker {
    pub fn new(spec: JudgeSpec) -> Self {
        Self {
            spec,
            was_attached: false,
            secured: false,
            placed_ok: false,
            released: false,
            settled: None,
            disturbed: false,
            lost: false,
            success_time: None,
            last_time: 0.0,
        }
    }

    pub fn spec(&self) -> &JudgeSpec {
        &self.spec
    }

    pub fn update(&mut self, s: &StepSummary) -> TrackerFlags {
        self.last_time = s.time;
        let mut flags = TrackerFlags::default();
        let cos_tol = self.spec.tilt_tolerance_deg.to_radians().cos();

        if s.attached {
            if !self.was_attached {
                // A fresh grasp starts a new placement attempt.
                self.released = false;
                self.settled = None;
                self.disturbed = false;
            }
            if s.object_bottom_z >= self.spec.pick_height + LIFT_THRESHOLD {
                self.secured = true;
            }
        } else if self.was_attached {
            self.released = true;
        }
        self.was_attached = s.attached;
        flags.secured = self.secured && s.attached;

        if s.support == Support::Floor {
            self.lost = true;
        }

        let resting = matches!(s.support, Support::PickTable | Support::PlaceTable | Support::Floor);
        if self.released && resting && self.settled.is_none() {
            let on_place = s.support == Support::PlaceTable;
            let upright = s.uprightness >= cos_tol;
            let within = hdist(&s.object_center, &self.spec.place_center) <= self.spec.tolerances.place_tolerance;
            if on_place && upright && within {
                self.placed_ok = true;
            }
            self.settled = Some(Settled { center: s.object_center, on_place, upright, within });
        }

        if let Some(settled) = &self.settled {
            if !s.attached && dist3(&s.object_center, &settled.center) > DISTURB_LIMIT {
                self.disturbed = true;
            }
            let good = settled.on_place && settled.upright && settled.within && !self.disturbed;
            flags.release_success = good;
            let retreated = dist3(&s.ee, &s.object_center) >= self.spec.tolerances.retreat_distance;
            flags.retreat_success = good && retreated && !s.attached;
            if flags.retreat_success && self.success_time.is_none() && s.time <= self.spec.horizon + 1e-9 {
                self.success_time = Some(s.time);
                flags.success_now = true;
            }
        }
        flags
    }

    pub fn succeeded(&self) -> bool {
        self.success_time.is_some()
    }

    pub fn subgoals(&self) -> SubgoalOutcome {
        SubgoalOutcome { pick: self.secured, place: self.placed_ok, release: self.succeeded() }
    }

    pub fn outcome(&self) -> Outcome {
        if let Some(t) = self.success_time {
            return Outcome::Success { completion_time: t };
        }
        let mode = match &self.settled {
            _ if self.disturbed => FailureMode::RetreatDisturb,
            Some(s) if !s.upright => FailureMode::TipOver,
            Some(s) if s.on_place && !s.within => FailureMode::OffCenter,
            Some(s) if s.on_place => FailureMode::Timeout,
            _ if self.lost || !self.secured => FailureMode::GraspSlip,
            Some(_) => FailureMode::GraspSlip,
            None => FailureMode::Timeout,
        };
        Outcome::Failure { mode }
    }
}

/// Judges a full sequence of step summaries.
pub fn judge(spec: &JudgeSpec, steps: &[StepSummary]) -> Outcome {
    let mut tracker = SuccessTracker::new(spec.clone());
    for s in steps {
        tracker.update(s);
    }
    tracker.outcome()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> JudgeSpec {
        JudgeSpec {
            place_center: [0.0, 0.0],
            place_height: 0.9,
            pick_height: 0.6,
            tolerances: Tolerances::strict(),
            horizon: 10.0,
            tilt_tolerance_deg: 10.0,
        }
    }

    fn step(time: f64, ee: [f64; 3], obj: [f64; 3], support: Support, attached: bool) -> StepSummary {
        StepSummary {
            time,
            base: [0.0; 3],
            base_speed: 0.0,
            ee,
            object_center: obj,
            object_bottom_z: obj[2] - 0.05,
            uprightness: 1.0,
            support,
            attached,
            gripper_closed: attached,
            phase: 0,
            close_event: None,
        }
    }

    /// Grasp, lift, carry, release at `(dx, 0)` from the centre at time `t_release`,
    /// then retreat by `retreat` at `t_retreat`.
    fn episode(dx: f64, retreat: f64, t_release: f64, t_retreat: f64) -> Vec<StepSummary> {
        let obj = [dx, 0.0, 0.95];
        vec![
            step(1.0, [1.0, 0.0, 0.65], [1.0, 0.0, 0.65], Support::PickTable, false),
            step(1.5, [1.0, 0.0, 0.70], [1.0, 0.0, 0.70], Support::Gripper, true),
            step(t_release - 0.1, obj, obj, Support::Gripper, true),
            step(t_release, obj, obj, Support::PlaceTable, false),
            step(t_retreat, [dx - retreat, 0.0, 0.95], obj, Support::PlaceTable, false),
        ]
    }

    #[test]
    fn nominal_success() {
        let out = judge(&spec(), &episode(0.04, 0.12, 6.0, 8.0));
        assert_eq!(out, Outcome::Success { completion_time: 8.0 });
    }

    #[test]
    fn off_center_failure() {
        let out = judge(&spec(), &episode(0.06, 0.12, 6.0, 8.0));
        assert_eq!(out, Outcome::Failure { mode: FailureMode::OffCenter });
    }

    #[test]
    fn late_success_is_timeout() {
        let out = judge(&spec(), &episode(0.04, 0.12, 9.0, 10.5));
        assert_eq!(out, Outcome::Failure { mode: FailureMode::Timeout });
    }

    #[test]
    fn short_retreat_is_timeout() {
        let out = judge(&spec(), &episode(0.0, 0.05, 6.0, 8.0));
        assert_eq!(out, Outcome::Failure { mode: FailureMode::Timeout });
    }

    #[test]
    fn nudged_object_is_retreat_disturb() {
        let mut steps = episode(0.0, 0.05, 6.0, 7.0);
        steps.push(step(7.5, [-0.2, 0.0, 0.95], [0.02, 0.0, 0.95], Support::PlaceTable, false));
        assert_eq!(judge(&spec(), &steps), Outcome::Failure { mode: FailureMode::RetreatDisturb });
    }

    #[test]
    fn tipped_object_is_tip_over() {
        let mut steps = episode(0.0, 0.12, 6.0, 8.0);
        steps[3].uprightness = 0.1;
        steps[4].uprightness = 0.1;
        assert_eq!(judge(&spec(), &steps), Outcome::Failure { mode: FailureMode::TipOver });
    }

    #[test]
    fn never_grasped_or_dropped_is_grasp_slip() {
        let steps = vec![step(1.0, [0.0; 3], [1.0, 0.0, 0.65], Support::PickTable, false)];
        assert_eq!(judge(&spec(), &steps), Outcome::Failure { mode: FailureMode::GraspSlip });
        let mut steps = episode(0.0, 0.12, 6.0, 8.0);
        steps.truncate(2);
        steps.push(step(2.0, [1.0, 0.0, 0.7], [1.2, 0.0, 0.05], Support::Floor, false));
        assert_eq!(judge(&spec(), &steps), Outcome::Failure { mode: FailureMode::GraspSlip });
    }

    #[test]
    fn subgoals_track_progress() {
        let mut t = SuccessTracker::new(spec());
        for s in &episode(0.04, 0.12, 6.0, 8.0) {
            t.update(s);
        }
        assert_eq!(t.subgoals(), SubgoalOutcome { pick: true, place: true, release: true });
    }
}
