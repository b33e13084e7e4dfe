//! Success-rate curriculum over three difficulty levels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::TaskRanges;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurriculumConfig {
    pub initial_level: f64,
    pub step: f64,
    pub period: u64,
    pub pick_threshold: f64,
    pub place_threshold: f64,
    pub release_threshold: f64,
    /// Largest allowed gap between the pick and place levels.
    pub sync_margin: f64,
    /// Place-centre tolerance at level 0 and at level 1, m.
    pub place_tolerance: (f64, f64),
    /// Required tool retreat at level 0 and at level 1, m.
    pub retreat_distance: (f64, f64),
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            initial_level: 0.10,
            step: 0.01,
            period: 50,
            pick_threshold: 0.90,
            place_threshold: 0.85,
            release_threshold: 0.85,
            sync_margin: 0.015,
            place_tolerance: (0.12, 0.05),
            retreat_distance: (0.05, 0.10),
        }
    }
}

impl CurriculumConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.initial_level)
            && self.step > 0.0
            && self.period > 0
            && self.sync_margin >= 0.0
            && self.place_tolerance.0 >= self.place_tolerance.1
            && self.retreat_distance.0 <= self.retreat_distance.1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid curriculum config {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Levels {
    pub pick: f64,
    pub place: f64,
    pub release: f64,
}

impl Levels {
    pub fn uniform(level: f64) -> Self {
        Self { pick: level, place: level, release: level }
    }

    pub fn full() -> Self {
        Self::uniform(1.0)
    }
}

/// Subgoal outcomes of one finished episode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubgoalOutcome {
    pub pick: bool,
    pub place: bool,
    pub release: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub successes: u64,
    pub attempts: u64,
}

impl Tally {
    fn add(&mut self, success: bool) {
        self.attempts += 1;
        self.successes += u64::from(success);
    }

    pub fn rate(&self) -> Option<f64> {
        (self.attempts > 0).then(|| self.successes as f64 / self.attempts as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurriculumState {
    pub levels: Levels,
    pub iteration: u64,
    pub pick: Tally,
    pub place: Tally,
    pub release: Tally,
}

/// Success tolerances used by the judge for an episode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub place_tolerance: f64,
    pub retreat_distance: f64,
}

impl Tolerances {
    /// Full-difficulty criterion: within 5 cm, retreated by 10 cm.
    pub fn strict() -> Self {
        Self { place_tolerance: 0.05, retreat_distance: 0.10 }
    }
}

/// Rates and levels at one curriculum evaluation, for the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurriculumTrace {
    pub iteration: u64,
    pub levels: Levels,
    pub pick_rate: Option<f64>,
    pub place_rate: Option<f64>,
    pub release_rate: Option<f64>,
}

const EPS: f64 = 1e-9;

impl CurriculumState {
    pub fn new(config: &CurriculumConfig) -> Self {
        Self::at(Levels::uniform(config.initial_level))
    }

    pub fn at(levels: Levels) -> Self {
        Self { levels, iteration: 0, pick: Tally::default(), place: Tally::default(), release: Tally::default() }
    }

    /// A place attempt counts only after a successful pick, a release attempt
    /// only after a successful place.
    pub fn record_episode(&mut self, outcome: SubgoalOutcome) {
        self.pick.add(outcome.pick);
        if outcome.pick {
            self.place.add(outcome.place);
            if outcome.place {
                self.release.add(outcome.release);
            }
        }
    }

    /// Evaluates the window at multiples of the update period. Returns the
    /// trace when an evaluation happened. Iterations that do not move forward
    /// are ignored.
    pub fn maybe_advance(&mut self, iteration: u64, config: &CurriculumConfig) -> Option<CurriculumTrace> {
        if iteration <= self.iteration && !(iteration == 0 && self.iteration == 0) {
            return None;
        }
        self.iteration = iteration;
        if iteration == 0 || !iteration.is_multiple_of(config.period) {
            return None;
        }
        let rates = (self.pick.rate(), self.place.rate(), self.release.rate());
        let exceeds = |rate: Option<f64>, threshold: f64| rate.is_some_and(|r| r > threshold);
        let bump = |level: f64| (level + config.step).min(1.0);

        let old = self.levels;
        let mut pick = if exceeds(rates.0, config.pick_threshold) { bump(old.pick) } else { old.pick };
        let mut place = if exceeds(rates.1, config.place_threshold) { bump(old.place) } else { old.place };
        if (pick - place).abs() > config.sync_margin + EPS {
            // Keep the advance of whichever level is behind.
            if pick > place {
                pick = old.pick;
            } else {
                place = old.place;
            }
            if (pick - place).abs() > config.sync_margin + EPS {
                pick = old.pick;
                place = old.place;
            }
        }
        let release = if exceeds(rates.2, config.release_threshold) { bump(old.release) } else { old.release };
        self.levels = Levels { pick, place, release };
        self.pick = Tally::default();
        self.place = Tally::default();
        self.release = Tally::default();
        Some(CurriculumTrace {
            iteration,
            levels: self.levels,
            pick_rate: rates.0,
            place_rate: rates.1,
            release_rate: rates.2,
        })
    }
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Effective sampling ranges and judge tolerances for the given levels.
/// Each modulated range keeps its easy end and moves its far end.
pub fn modulate(levels: &Levels, base: &TaskRanges, config: &CurriculumConfig) -> (TaskRanges, Tolerances) {
    let mut r = base.clone();
    r.pick_distance.1 = lerp(base.pick_distance.0, base.pick_distance.1, levels.pick);
    r.place_distance.1 = lerp(base.place_distance.0, base.place_distance.1, levels.place);
    r.mass.1 = lerp(base.mass.0, base.mass.1, levels.pick);
    let tol = Tolerances {
        place_tolerance: lerp(config.place_tolerance.0, config.place_tolerance.1, levels.place),
        retreat_distance: lerp(config.retreat_distance.0, config.retreat_distance.1, levels.release),
    };
    (r, tol)
}
