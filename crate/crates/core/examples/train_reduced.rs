//! Trains on the reduced task and prints progress.
//!
//! Arguments: iterations, environments, an optional TOML file merged over the
//! training config, and an output checkpoint path (default `reduced.dpk`).
use std::time::Instant;

use dynpick::trainer::{TaskSchedule, TrainConfig, Trainer};

fn main() -> dynpick::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let iters: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(50);
    let mut cfg = TrainConfig { schedule: TaskSchedule::reduced(), ..TrainConfig::default() };
    if let Some(e) = args.get(2).and_then(|s| s.parse().ok()) {
        cfg.envs = e;
    }
    if let Some(path) = args.get(3) {
        let mut merged: toml::Value = toml::Value::try_from(&cfg).expect("config to toml");
        let extra: toml::Value = toml::from_str(&std::fs::read_to_string(path)?).expect("toml");
        merge(&mut merged, extra);
        cfg = merged.try_into().expect("config");
    }
    let mut t = Trainer::new(cfg)?;
    let start = Instant::now();
    for _ in 0..iters {
        let r = t.iterate()?;
        println!(
            "{:4} {:7.1}s rew {:+.4} ret {:?} len {:?} succ {:?} pick {:?} place {:?} kl {:.4} ev {:.3} std {:.3} est {:.4}",
            r.iteration,
            start.elapsed().as_secs_f64(),
            r.mean_reward,
            r.mean_return.map(|v| (v * 100.0).round() / 100.0),
            r.mean_length.map(|v| v.round()),
            r.success_rate,
            r.pick_rate,
            r.place_rate,
            r.ppo.approx_kl,
            r.ppo.explained_variance,
            t.state.policy.std().mean().unwrap(),
            r.estimator.total,
        );
    }
    let out = args.get(4).map(String::as_str).unwrap_or("reduced.dpk");
    t.save(std::path::Path::new(out))?;
    Ok(())
}

fn merge(base: &mut toml::Value, extra: toml::Value) {
    match (base, extra) {
        (toml::Value::Table(b), toml::Value::Table(e)) => {
            for (k, v) in e {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, e) => *b = e,
    }
}
