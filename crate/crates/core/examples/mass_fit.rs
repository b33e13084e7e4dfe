//! Fits the payload estimator on waypoint-controller episodes and prints
//! release-moment estimates for a few masses.
use std::time::Instant;

use dynpick::curriculum::CurriculumConfig;
use dynpick::env::EnvParams;
use dynpick::estimator::{scripted_episodes, Estimator, EstimatorConfig, EstimatorTrainer};
use dynpick::sampler::TaskRanges;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> dynpick::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3);
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let params = EnvParams::default();
    let ranges = TaskRanges::default();
    let cur = CurriculumConfig::default();
    let start = Instant::now();
    let data = scripted_episodes(n, 1, 0.3, ranges.mass, &params, &ranges, &cur)?;
    let steps: usize = data.iter().map(|e| e.len()).sum();
    let held: usize = data.iter().map(|e| e.contact.iter().filter(|c| **c).count()).sum();
    let released = data.iter().filter(|e| e.release_step().is_some()).count();
    println!("{n} episodes, {steps} steps, {held} held, {released} releases in {:.1}s", start.elapsed().as_secs_f64());
    let cfg = EstimatorConfig { epochs: 1, learning_rate: lr, ..EstimatorConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut est = Estimator::new(&cfg, &mut rng);
    let mut trainer = EstimatorTrainer::new(cfg, &est);
    let tests: Vec<_> = [0.5, 1.0, 1.5, 2.0]
        .iter()
        .map(|&m| scripted_episodes(20, 99, 0.1, (m, m), &params, &ranges, &cur).unwrap())
        .collect();
    for epoch in 0..epochs {
        let l = trainer.fit_episodes(&mut est, &data, 32, 50, &mut rng);
        print!("epoch {epoch} {:.1}s mse {:.4} bce {:.4} |", start.elapsed().as_secs_f64(), l.mass_mse, l.contact_bce);
        for (m, eps) in [0.5, 1.0, 1.5, 2.0].iter().zip(&tests) {
            let v: Vec<f64> = eps.iter().filter_map(|e| e.release_estimate(&est)).map(|e| e.mass).collect();
            let mean = v.iter().sum::<f64>() / v.len().max(1) as f64;
            let worst = v.iter().map(|x| ((x - m) / m).abs()).fold(0.0, f64::max);
            print!(" {m}: {mean:.3} (n {} worst {:.1}%)", v.len(), 100.0 * worst);
        }
        println!();
    }
    Ok(())
}
