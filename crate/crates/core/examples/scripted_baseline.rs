//! Success rate of the waypoint controller on every scenario and on
//! reduced-difficulty sampled tasks.

use dynpick::curriculum::{CurriculumConfig, Levels};
use dynpick::env::{Env, EnvParams, Termination};
use dynpick::sampler::{sample, scenario_config, Scenario, TaskRanges};
use dynpick::scripted::ScriptedController;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn run(env: &mut Env, params: &EnvParams) -> Termination {
    let mut ctl = ScriptedController::new();
    loop {
        let a = ctl.act(env, params);
        let r = env.step(params, &a).expect("step");
        if r.termination.is_done() {
            return r.termination;
        }
    }
}

fn main() {
    let params = EnvParams::default();
    let ranges = TaskRanges::default();
    let n = 50;
    for scenario in Scenario::ALL {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut wins = 0;
        for _ in 0..n {
            let cfg = scenario_config(scenario).instantiate(&mut rng, &ranges).expect("scenario");
            wins += (run(&mut Env::new(cfg, &params), &params) == Termination::Success) as usize;
        }
        println!("{:<20} {wins}/{n}", scenario.name());
    }
    for level in [0.10, 0.5, 1.0] {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut wins = 0;
        for _ in 0..n {
            let cfg = sample(&mut rng, &Levels::uniform(level), &ranges, &CurriculumConfig::default()).expect("sample");
            wins += (run(&mut Env::new(cfg, &params), &params) == Termination::Success) as usize;
        }
        println!("level {level:<14} {wins}/{n}");
    }
}
