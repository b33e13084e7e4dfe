//! Randomised task instances and the fixed evaluation scenarios.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::curriculum::{modulate, CurriculumConfig, Levels, Tolerances};
use crate::error::{Error, Result};
use crate::sim::{ArmState, BaseState, ObjectState, Shape, SimParams, Support, TableSpec, WorldState, TABLE_RADIUS};

pub const EPISODE_HORIZON: f64 = 10.0;
pub const MAX_RESAMPLE_TRIES: usize = 100;

/// Full task-variable ranges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskRanges {
    pub pick_distance: (f64, f64),
    pub table_height: (f64, f64),
    pub place_distance: (f64, f64),
    pub object_yaw: (f64, f64),
    pub box_width: (f64, f64),
    pub cylinder_diameter: (f64, f64),
    pub object_height: (f64, f64),
    pub mass: (f64, f64),
    /// Minimum gap between table edges, m.
    pub table_clearance: f64,
    /// Minimum distance from the robot to the place-table centre, m.
    pub robot_clearance: f64,
}

impl Default for TaskRanges {
    fn default() -> Self {
        Self {
            pick_distance: (0.9, 3.0),
            table_height: (0.0, 1.3),
            place_distance: (0.5, 3.0),
            object_yaw: (0.0, PI),
            box_width: (0.03, 0.05),
            cylinder_diameter: (0.04, 0.07),
            object_height: (0.06, 0.10),
            mass: (0.2, 2.3),
            table_clearance: 0.25,
            robot_clearance: 0.6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub pick_table: TableSpec,
    pub place_table: TableSpec,
    pub shape: Shape,
    /// Box side or cylinder diameter, m.
    pub width: f64,
    pub height: f64,
    pub mass: f64,
    pub object_yaw: f64,
    /// Robot spawn `[x, y, yaw]`.
    pub spawn: [f64; 3],
    pub horizon: f64,
    pub tolerances: Tolerances,
}

impl EpisodeConfig {
    pub fn pick_distance(&self) -> f64 {
        (self.pick_table.center[0] - self.spawn[0]).hypot(self.pick_table.center[1] - self.spawn[1])
    }

    pub fn place_distance(&self) -> f64 {
        (self.place_table.center[0] - self.pick_table.center[0]).hypot(self.place_table.center[1] - self.pick_table.center[1])
    }

    /// Initial world: robot at its spawn with the arm at the nominal posture,
    /// object upright on the pick-table centre.
    pub fn initial_world(&self, sim: &SimParams) -> WorldState {
        let object = ObjectState::upright(
            self.shape,
            self.width,
            self.height,
            self.mass,
            self.pick_table.center,
            self.pick_table.height,
            self.object_yaw,
            Support::PickTable,
        );
        WorldState::new(
            sim,
            BaseState::at(self.spawn[0], self.spawn[1], self.spawn[2]),
            ArmState::at_rest(sim.arm.nominal),
            object,
            self.pick_table.clone(),
            self.place_table.clone(),
        )
    }

    fn geometry_ok(&self, ranges: &TaskRanges) -> bool {
        let min_gap = 2.0 * TABLE_RADIUS + ranges.table_clearance;
        let robot_to_place = (self.place_table.center[0] - self.spawn[0]).hypot(self.place_table.center[1] - self.spawn[1]);
        self.place_distance() >= min_gap && robot_to_place >= ranges.robot_clearance
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Draws a task instance at the given curriculum levels. The robot spawns at
/// the origin facing +x; the pick table sits at a uniform bearing from the
/// robot and the place table at a uniform bearing from the pick table.
pub fn sample<R: Rng + ?Sized>(
    rng: &mut R,
    levels: &Levels,
    base: &TaskRanges,
    curriculum: &CurriculumConfig,
) -> Result<EpisodeConfig> {
    let (ranges, tolerances) = modulate(levels, base, curriculum);
    for _ in 0..MAX_RESAMPLE_TRIES {
        let d_pick = uniform(rng, ranges.pick_distance);
        let bearing_pick = rng.random_range(0.0..TAU);
        let d_place = uniform(rng, ranges.place_distance);
        let bearing_place = rng.random_range(0.0..TAU);
        let pick_height = uniform(rng, ranges.table_height);
        let place_height = uniform(rng, ranges.table_height);
        let shape = if rng.random_bool(0.5) { Shape::Box } else { Shape::Cylinder };
        let width = match shape {
            Shape::Box => uniform(rng, ranges.box_width),
            Shape::Cylinder => uniform(rng, ranges.cylinder_diameter),
        };
        let height = uniform(rng, ranges.object_height);
        let mass = uniform(rng, ranges.mass);
        let object_yaw = uniform(rng, ranges.object_yaw);

        let pick = [d_pick * bearing_pick.cos(), d_pick * bearing_pick.sin()];
        let place = [pick[0] + d_place * bearing_place.cos(), pick[1] + d_place * bearing_place.sin()];
        let config = EpisodeConfig {
            pick_table: TableSpec::new(pick, pick_height),
            place_table: TableSpec::new(place, place_height),
            shape,
            width,
            height,
            mass,
            object_yaw,
            spawn: [0.0, 0.0, 0.0],
            horizon: EPISODE_HORIZON,
            tolerances,
        };
        if config.geometry_ok(&ranges) {
            return Ok(config);
        }
    }
    Err(Error::InfeasibleEpisode(MAX_RESAMPLE_TRIES))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Nominal,
    Heavy,
    Light,
    Square,
    LargeSize,
    LargeHeightGap,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::Nominal,
        Scenario::Heavy,
        Scenario::Light,
        Scenario::Square,
        Scenario::LargeSize,
        Scenario::LargeHeightGap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Nominal => "nominal",
            Scenario::Heavy => "heavy",
            Scenario::Light => "light",
            Scenario::Square => "square",
            Scenario::LargeSize => "large_size",
            Scenario::LargeHeightGap => "large_height_gap",
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == key)
            .ok_or_else(|| Error::UnknownScenario(s.to_string()))
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Fixed part of an evaluation scenario; the robot spawn is drawn per episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTemplate {
    pub scenario: Scenario,
    pub shape: Shape,
    pub width: f64,
    pub height: f64,
    pub mass: f64,
    /// The two table heights; either may serve as the pick table.
    pub heights: (f64, f64),
    pub table_offset: f64,
    pub spawn_radius: f64,
}

pub fn scenario_config(scenario: Scenario) -> ScenarioTemplate {
    let nominal = ScenarioTemplate {
        scenario,
        shape: Shape::Cylinder,
        width: 0.06,
        height: 0.10,
        mass: 0.83,
        heights: (0.6, 0.9),
        table_offset: 1.0,
        spawn_radius: 3.0,
    };
    match scenario {
        Scenario::Nominal => nominal,
        Scenario::Heavy => ScenarioTemplate { mass: 1.3, ..nominal },
        Scenario::Light => ScenarioTemplate { mass: 0.47, ..nominal },
        Scenario::Square => ScenarioTemplate { shape: Shape::Box, width: 0.05, ..nominal },
        Scenario::LargeSize => ScenarioTemplate { width: 0.07, ..nominal },
        Scenario::LargeHeightGap => ScenarioTemplate { heights: (0.0, 1.1), ..nominal },
    }
}

impl ScenarioTemplate {
    /// Tables at `(+offset, 0)` and `(-offset, 0)`. A coin picks the direction
    /// of transfer; the robot spawns uniformly over the disc of `spawn_radius`
    /// around the origin, away from both tables, facing a uniform heading.
    pub fn instantiate<R: Rng + ?Sized>(&self, rng: &mut R, ranges: &TaskRanges) -> Result<EpisodeConfig> {
        let (h_a, h_b) = if rng.random_bool(0.5) { self.heights } else { (self.heights.1, self.heights.0) };
        let pick_table = TableSpec::new([self.table_offset, 0.0], h_a);
        let place_table = TableSpec::new([-self.table_offset, 0.0], h_b);
        let object_yaw = uniform(rng, ranges.object_yaw);
        for _ in 0..MAX_RESAMPLE_TRIES {
            let r = self.spawn_radius * rng.random::<f64>().sqrt();
            let theta = rng.random_range(0.0..TAU);
            let spawn = [r * theta.cos(), r * theta.sin(), rng.random_range(-PI..PI)];
            let clear = |t: &TableSpec| (t.center[0] - spawn[0]).hypot(t.center[1] - spawn[1]) >= ranges.robot_clearance;
            if clear(&pick_table) && clear(&place_table) {
                return Ok(EpisodeConfig {
                    pick_table,
                    place_table,
                    shape: self.shape,
                    width: self.width,
                    height: self.height,
                    mass: self.mass,
                    object_yaw,
                    spawn,
                    horizon: EPISODE_HORIZON,
                    tolerances: Tolerances::strict(),
                });
            }
        }
        Err(Error::InfeasibleEpisode(MAX_RESAMPLE_TRIES))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn draw(seed: u64, levels: Levels, n: usize) -> Vec<EpisodeConfig> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = TaskRanges::default();
        let cfg = CurriculumConfig::default();
        (0..n).map(|_| sample(&mut rng, &levels, &base, &cfg).unwrap()).collect()
    }

    #[test]
    fn full_level_masses_are_uniform() {
        let samples = draw(1, Levels::full(), 10_000);
        let bins = 20;
        let mut counts = vec![0usize; bins];
        for s in &samples {
            assert!((0.2..=2.3).contains(&s.mass));
            let b = (((s.mass - 0.2) / 2.1) * bins as f64).floor() as usize;
            counts[b.min(bins - 1)] += 1;
        }
        let expected = samples.len() as f64 / bins as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        let p = 1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(chi2);
        assert!(p > 0.01, "chi2 {chi2} p {p}");
    }

    #[test]
    fn low_level_pick_distance_range() {
        for s in draw(2, Levels::uniform(0.10), 5_000) {
            let d = s.pick_distance();
            assert!((0.9 - 1e-9..=1.11 + 1e-9).contains(&d), "{d}");
        }
    }

    #[test]
    fn shape_frequencies_are_balanced() {
        let samples = draw(3, Levels::full(), 10_000);
        let boxes = samples.iter().filter(|s| s.shape == Shape::Box).count() as f64 / 1e4;
        assert!((boxes - 0.5).abs() <= 0.02, "{boxes}");
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        assert_eq!(draw(7, Levels::uniform(0.4), 20), draw(7, Levels::uniform(0.4), 20));
        assert_ne!(draw(7, Levels::uniform(0.4), 20), draw(8, Levels::uniform(0.4), 20));
    }

    #[test]
    fn fuzzed_configs_satisfy_invariants() {
        let base = TaskRanges::default();
        let cfg = CurriculumConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for i in 0..100_000 {
            let level = (i % 91) as f64 / 100.0 + 0.10;
            let levels = Levels::uniform(level);
            let (ranges, tol) = modulate(&levels, &base, &cfg);
            let s = sample(&mut rng, &levels, &base, &cfg).unwrap();
            let within = |v: f64, (lo, hi): (f64, f64)| v >= lo - 1e-9 && v <= hi + 1e-9;
            assert!(within(s.pick_distance(), ranges.pick_distance));
            assert!(within(s.place_distance(), ranges.place_distance));
            assert!(s.place_distance() >= 0.45 - 1e-9);
            assert!(within(s.pick_table.height, (0.0, 1.3)) && within(s.place_table.height, (0.0, 1.3)));
            assert!(within(s.mass, ranges.mass));
            assert!(within(s.height, (0.06, 0.10)));
            assert!(within(s.object_yaw, (0.0, PI)));
            let width_range = if s.shape == Shape::Box { (0.03, 0.05) } else { (0.04, 0.07) };
            assert!(within(s.width, width_range));
            assert_eq!(s.tolerances, tol);
            assert_eq!(s.horizon, 10.0);
        }
    }

    #[test]
    fn impossible_geometry_is_a_hard_error() {
        let base = TaskRanges { place_distance: (0.1, 0.2), ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = sample(&mut rng, &Levels::full(), &base, &CurriculumConfig::default()).unwrap_err();
        assert!(matches!(err, Error::InfeasibleEpisode(100)));
    }

    #[test]
    fn scenario_templates() {
        assert_eq!(scenario_config(Scenario::Nominal).mass, 0.83);
        assert_eq!(scenario_config(Scenario::Heavy).mass, 1.3);
        assert_eq!(scenario_config(Scenario::Light).mass, 0.47);
        let sq = scenario_config(Scenario::Square);
        assert_eq!((sq.shape, sq.width, sq.height), (Shape::Box, 0.05, 0.10));
        assert_eq!(scenario_config(Scenario::LargeSize).width, 0.07);
        assert_eq!(scenario_config(Scenario::LargeHeightGap).heights, (0.0, 1.1));
        assert!("large-height-gap".parse::<Scenario>().is_ok());
        assert!(matches!("tiny".parse::<Scenario>(), Err(Error::UnknownScenario(_))));
    }

    #[test]
    fn scenario_instances_respect_layout() {
        let ranges = TaskRanges::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for sc in Scenario::ALL {
            for _ in 0..500 {
                let e = scenario_config(sc).instantiate(&mut rng, &ranges).unwrap();
                assert!((e.place_distance() - 2.0).abs() < 1e-12);
                assert!(e.spawn[0].hypot(e.spawn[1]) <= 3.0);
                assert_eq!(e.tolerances, Tolerances::strict());
                let hs = [e.pick_table.height, e.place_table.height];
                let t = scenario_config(sc).heights;
                assert!(hs == [t.0, t.1] || hs == [t.1, t.0]);
            }
        }
    }
}
