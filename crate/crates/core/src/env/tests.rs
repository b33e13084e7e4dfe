use super::*;
use crate::curriculum::{CurriculumConfig, Levels};
use crate::sampler::{sample, TaskRanges};
use crate::sim::TableSpec;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(seed: u64) -> EpisodeConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample(&mut rng, &Levels::uniform(0.3), &TaskRanges::default(), &CurriculumConfig::default()).unwrap()
}

#[test]
fn scale_action_examples() {
    let arm = ArmParams::default();
    let mut raw = [0.0; ACTION_DIM];
    let a = scale_action(&raw, &arm);
    assert_eq!(a.base.v_x, 0.0);
    assert_eq!(a.arm.gripper, GripperMode::Open);
    raw[0] = f64::INFINITY;
    raw[11] = 1e-12;
    let a = scale_action(&raw, &arm);
    assert_eq!(a.base.v_x, 2.0);
    assert_eq!(a.arm.gripper, GripperMode::Closed);
    raw[0] = f64::NEG_INFINITY;
    raw[3] = f64::INFINITY;
    let a = scale_action(&raw, &arm);
    assert_eq!(a.base.v_x, -1.0);
    assert_eq!(a.base.height_offset, -0.2);
}

#[test]
fn rest_action_scales_to_rest() {
    let arm = ArmParams::default();
    let raw = raw_rest_action(&arm, &arm.nominal, -0.02);
    let a = scale_action(&raw, &arm);
    assert!(a.base.v_x.abs() < 1e-12);
    assert!((a.base.height_offset + 0.02).abs() < 1e-12);
    for i in 0..NUM_JOINTS {
        assert!((a.arm.targets[i] - arm.nominal[i]).abs() < 1e-9);
    }
    assert_eq!(a.arm.gripper, GripperMode::Open);
}

#[test]
fn random_raw_outputs_respect_limits() {
    let arm = ArmParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..100_000 {
        let raw: [f64; ACTION_DIM] = std::array::from_fn(|_| rng.random_range(-50.0..50.0));
        assert!(scale_action(&raw, &arm).within_limits(&arm));
    }
}

#[test]
fn history_starts_zeroed_and_fills() {
    let params = EnvParams::default();
    let mut env = Env::new(config(1), &params);
    let mut obs = Vec::new();
    env.observe(&params.sim, (1.25, 0.0), &mut obs);
    assert_eq!(obs.len(), observation_dim(10));
    assert!(obs[FIXED_DIM..].iter().all(|v| *v == 0.0));
    let a = HighLevelAction::hold(&env.world);
    env.step(&params, &a).unwrap();
    env.observe(&params.sim, (1.25, 0.0), &mut obs);
    let last = &obs[obs.len() - ENTRY_DIM..];
    assert!(last.iter().any(|v| *v != 0.0));
    assert!(obs[FIXED_DIM..obs.len() - ENTRY_DIM].iter().all(|v| *v == 0.0));
}

#[test]
fn phase_appears_as_one_hot() {
    let params = EnvParams::default();
    let mut env = Env::new(config(2), &params);
    env.phase = Phase::PLACED;
    let mut obs = Vec::new();
    env.observe(&params.sim, (1.25, 0.0), &mut obs);
    let at = S_R_DIM + S_O_DIM + ACTION_DIM + 6;
    assert_eq!(&obs[at..at + 6], &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
}

/// Rotates the whole scene about the world z axis through the origin.
fn rotate_config(cfg: &EpisodeConfig, angle: f64) -> EpisodeConfig {
    let (s, c) = angle.sin_cos();
    let rot = |p: [f64; 2]| [c * p[0] - s * p[1], s * p[0] + c * p[1]];
    let mut out = cfg.clone();
    out.pick_table = TableSpec::new(rot(cfg.pick_table.center), cfg.pick_table.height);
    out.place_table = TableSpec::new(rot(cfg.place_table.center), cfg.place_table.height);
    let sp = rot([cfg.spawn[0], cfg.spawn[1]]);
    out.spawn = [sp[0], sp[1], cfg.spawn[2] + angle];
    out.object_yaw = cfg.object_yaw + angle;
    out
}

#[test]
fn observation_is_frame_invariant() {
    let params = EnvParams::default();
    let cfg = config(3);
    let mut a = Env::new(cfg.clone(), &params);
    let mut b = Env::new(rotate_config(&cfg, std::f64::consts::FRAC_PI_2), &params);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut oa, mut ob) = (Vec::new(), Vec::new());
    for _ in 0..40 {
        let raw: [f64; ACTION_DIM] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let act = scale_action(&raw, &params.sim.arm);
        a.step(&params, &act).unwrap();
        b.step(&params, &act).unwrap();
        a.observe(&params.sim, (1.0, 0.5), &mut oa);
        b.observe(&params.sim, (1.0, 0.5), &mut ob);
        for (x, y) in oa.iter().zip(&ob) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }
}

#[test]
fn episodes_are_deterministic() {
    let params = EnvParams::default();
    let run = || {
        let mut env = Env::new(config(4), &params);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut rewards = Vec::new();
        while !env.termination.is_done() {
            let raw: [f64; ACTION_DIM] = std::array::from_fn(|_| rng.random_range(-2.0..2.0));
            let r = env.step(&params, &scale_action(&raw, &params.sim.arm)).unwrap();
            rewards.push(r.reward.total.to_bits());
        }
        (rewards, env.world)
    };
    assert_eq!(run(), run());
}

#[test]
fn horizon_ends_episode() {
    let params = EnvParams::default();
    let mut env = Env::new(config(7), &params);
    let mut steps = 0;
    let mut last = Termination::Running;
    while !env.termination.is_done() {
        last = env.step(&params, &HighLevelAction::hold(&env.world)).unwrap().termination;
        steps += 1;
    }
    assert_eq!(last, Termination::Timeout);
    assert_eq!(steps, 500);
    assert!(env.step(&params, &HighLevelAction::hold(&env.world)).is_err());
}

#[test]
fn object_on_floor_is_terminal() {
    let params = EnvParams::default();
    let mut env = Env::new(config(8), &params);
    env.world.object.center.z = 0.5;
    env.world.object.center.x += 3.0;
    env.world.object.support = Support::Falling;
    let mut last = Termination::Running;
    for _ in 0..100 {
        last = env.step(&params, &HighLevelAction::hold(&env.world)).unwrap().termination;
        if last.is_done() {
            break;
        }
    }
    assert_eq!(last, Termination::ObjectLost);
    assert!(!last.bootstraps());
}

#[test]
fn out_of_limit_action_is_rejected() {
    let params = EnvParams::default();
    let mut env = Env::new(config(9), &params);
    let mut a = HighLevelAction::hold(&env.world);
    a.base.v_x = 2.5;
    assert!(env.step(&params, &a).is_err());
}

proptest! {
    #[test]
    fn scaled_commands_within_limits(raw in prop::array::uniform12(prop::num::f64::NORMAL | prop::num::f64::ZERO)) {
        let arm = ArmParams::default();
        prop_assert!(scale_action(&raw, &arm).within_limits(&arm));
    }
}
