use super::*;
use crate::env::ACTION_DIM;
use crate::policy::PolicyConfig;
use crate::sim::ArmParams;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_policy(seed: u64, obs_dim: usize) -> Policy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = PolicyConfig { actor_hidden: vec![4], critic_hidden: vec![4], ..PolicyConfig::default() };
    Policy::new(&cfg, obs_dim, &ArmParams::default(), &mut rng)
}

fn random_batch(policy: &Policy, n: usize, seed: u64) -> PpoBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let obs = Array2::from_shape_fn((n, policy.obs_dim()), |_| rng.random_range(-1.0..1.0));
    let step = policy.act(obs.view(), false, &mut rng);
    // Perturb the behaviour log-probs so ratios differ from one but stay
    // inside the clip range, away from the kinks.
    let old: Vec<f64> = step.log_probs.iter().map(|l| l + rng.random_range(-0.1..0.1)).collect();
    PpoBatch {
        obs,
        actions: step.actions,
        old_log_probs: old,
        old_values: step.values.clone(),
        advantages: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        returns: (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
    }
}

#[test]
fn gae_matches_explicit_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let n = 40;
    let rewards: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let values: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let ends: Vec<bool> = (0..n).map(|t| t == n - 1 || rng.random_bool(0.1)).collect();
    let next_values: Vec<f64> =
        (0..n).map(|t| if ends[t] { rng.random_range(-1.0..1.0) } else { values[t + 1] }).collect();
    let (g, l) = (0.99, 0.9);
    let (adv, ret) = gae(&rewards, &values, &next_values, &ends, g, l);
    for t in 0..n {
        let mut want = 0.0;
        let mut k = t;
        loop {
            let delta = rewards[k] + g * next_values[k] - values[k];
            want += (g * l).powi((k - t) as i32) * delta;
            if ends[k] {
                break;
            }
            k += 1;
        }
        assert!((adv[t] - want).abs() < 1e-12);
        assert!((ret[t] - (want + values[t])).abs() < 1e-12);
    }
}

/// Relative error `|fd - analytic| / max(|fd|, |analytic|)` over the whole vector.
pub(crate) fn gradient_check(policy: &Policy, batch: &PpoBatch, cfg: &PpoConfig) -> f64 {
    let mut grad = vec![0.0; policy.param_count()];
    surrogate_loss(policy, batch, cfg, Some(&mut grad));
    let base = policy.flat_params();
    let h = 1e-6;
    let mut fd = vec![0.0; base.len()];
    let mut p = policy.clone();
    for i in 0..base.len() {
        let mut v = base.clone();
        v[i] = base[i] + h;
        p.set_flat_params(&v);
        let lp = surrogate_loss(&p, batch, cfg, None).total;
        v[i] = base[i] - h;
        p.set_flat_params(&v);
        let lm = surrogate_loss(&p, batch, cfg, None).total;
        fd[i] = (lp - lm) / (2.0 * h);
    }
    let diff: f64 = fd.iter().zip(&grad).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale = crate::nn::l2_norm(&fd).max(crate::nn::l2_norm(&grad)).max(1e-12);
    diff / scale
}

#[test]
fn surrogate_gradient_matches_finite_differences() {
    let policy = tiny_policy(1, 5);
    let batch = random_batch(&policy, 16, 2);
    let err = gradient_check(&policy, &batch, &PpoConfig::default());
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn zero_advantages_give_no_actor_gradient() {
    let policy = tiny_policy(3, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let obs = Array2::from_shape_fn((8, 5), |_| rng.random_range(-1.0..1.0));
    let step = policy.act(obs.view(), false, &mut rng);
    let batch = PpoBatch {
        obs,
        actions: step.actions,
        old_log_probs: step.log_probs,
        old_values: step.values.clone(),
        advantages: vec![0.0; 8],
        returns: step.values,
    };
    let cfg = PpoConfig { entropy_coef: 0.0, ..PpoConfig::default() };
    let mut grad = vec![0.0; policy.param_count()];
    surrogate_loss(&policy, &batch, &cfg, Some(&mut grad));
    assert!(grad.iter().all(|g| *g == 0.0));
}

#[test]
fn zero_learning_rate_leaves_parameters_bitwise() {
    let mut policy = tiny_policy(5, 5);
    let batch = random_batch(&policy, 32, 6);
    let before: Vec<u64> = policy.flat_params().iter().map(|v| v.to_bits()).collect();
    let mut trainer = PpoTrainer::new(PpoConfig { learning_rate: 0.0, ..PpoConfig::default() }, &policy);
    trainer.update(&mut policy, &batch, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    let after: Vec<u64> = policy.flat_params().iter().map(|v| v.to_bits()).collect();
    assert_eq!(before, after);
}

#[test]
fn non_finite_loss_aborts() {
    let mut policy = tiny_policy(8, 5);
    let mut batch = random_batch(&policy, 8, 9);
    batch.returns[3] = f64::NAN;
    let mut trainer = PpoTrainer::new(PpoConfig::default(), &policy);
    let before = policy.flat_params();
    assert!(matches!(trainer.update(&mut policy, &batch, &mut ChaCha8Rng::seed_from_u64(1)), Err(Error::Diverged(_))));
    assert_eq!(policy.flat_params(), before);
}

/// One-state bandit: reward 1 for a closed gripper, 0 otherwise.
#[test]
fn bandit_converges_to_optimal_action() {
    let mut policy = tiny_policy(10, 3);
    let mut trainer = PpoTrainer::new(PpoConfig { learning_rate: 3e-3, ..PpoConfig::default() }, &policy);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 64;
    let obs = Array2::from_elem((n, 3), 0.5);
    let closed_prob = |p: &Policy| {
        let mean = p.mean(obs.view())[[0, ACTION_DIM - 1]];
        let std = p.std()[ACTION_DIM - 1];
        0.5 * (1.0 + statrs::function::erf::erf(mean / (std * std::f64::consts::SQRT_2)))
    };
    assert!(closed_prob(&policy) < 0.5);
    let mut updates = 0;
    while closed_prob(&policy) <= 0.95 {
        assert!(updates < 200, "probability {} after 200 updates", closed_prob(&policy));
        let step = policy.act(obs.view(), false, &mut rng);
        let rewards: Vec<f64> = step.actions.column(ACTION_DIM - 1).iter().map(|a| if *a > 0.0 { 1.0 } else { 0.0 }).collect();
        let batch = PpoBatch {
            obs: obs.clone(),
            actions: step.actions,
            old_log_probs: step.log_probs,
            old_values: step.values.clone(),
            advantages: rewards.iter().zip(&step.values).map(|(r, v)| r - v).collect(),
            returns: rewards,
        };
        trainer.update(&mut policy, &batch, &mut rng).unwrap();
        updates += 1;
    }
}

#[test]
fn explained_variance_of_perfect_critic_is_one() {
    let r = [1.0, 2.0, -3.0, 0.5];
    assert!((explained_variance(&r, &r) - 1.0).abs() < 1e-12);
    assert!(explained_variance(&[0.0; 4], &r).abs() < 1e-12);
}

proptest! {
    #[test]
    fn advantage_normalisation_keeps_argmax(adv in prop::collection::vec(-1e3f64..1e3, 2..50)) {
        let argmax = |v: &[f64]| v.iter().enumerate().fold(0, |b, (i, x)| if *x > v[b] { i } else { b });
        let mut n = adv.clone();
        normalize_advantages(&mut n);
        let spread = adv.iter().cloned().fold(f64::MIN, f64::max) - adv.iter().cloned().fold(f64::MAX, f64::min);
        prop_assume!(spread > 1e-6);
        prop_assert_eq!(argmax(&adv), argmax(&n));
    }
}
