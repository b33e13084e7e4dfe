//! Loads a checkpoint and summarises a few episodes on the reduced task.
use dynpick::eval::{run_episode, Controller, EvalConfig, TaskSource};
use dynpick::trainer::TrainerState;

fn main() -> dynpick::Result<()> {
    let path = std::env::args().nth(1).expect("checkpoint");
    let s: TrainerState = dynpick::checkpoint::load(std::path::Path::new(&path))?;
    for det in [true, false] {
        let c = Controller::Trained {
            policy: Box::new(s.policy.clone()),
            estimator: Box::new(s.estimator.clone()),
            use_estimator: true,
            deterministic: det,
        };
        let cfg = EvalConfig { seed: 11, ..EvalConfig::default() };
        let task = TaskSource::Levels { level: 0.1, mass: Some(0.5) };
        for i in 0..6 {
            let r = run_episode(&c, &task, &cfg, i)?;
            let mut min_d = f64::MAX;
            let mut min_t = 0.0;
            let mut closes = 0;
            let mut max_phase = 0;
            let mut close_d = vec![];
            for st in &r.steps {
                let s = &st.summary;
                let d = ((s.ee[0] - s.object_center[0]).powi(2) + (s.ee[1] - s.object_center[1]).powi(2) + (s.ee[2] - s.object_center[2]).powi(2)).sqrt();
                if d < min_d {
                    min_d = d;
                    min_t = s.time;
                }
                if let Some(ev) = s.close_event {
                    closes += 1;
                    close_d.push(format!("{:.2}@{:.2}/{:.2}", d, ev[0], ev[1]));
                }
                max_phase = max_phase.max(s.phase);
            }
            let last = &r.steps.last().unwrap().summary;
            println!(
                "det {det} ep {i}: pick_d {:.2} steps {} min_d {min_d:.3} at {min_t:.1}s closes {closes} phase {max_phase} base_speed_end {:.2} outcome {:?} closes {:?}",
                r.config.pick_distance(), r.steps.len(), last.base_speed, r.outcome, &close_d[..close_d.len().min(4)]
            );
        }
    }
    Ok(())
}
