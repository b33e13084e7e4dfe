//! Gaussian actor and value critic over the high-level observation.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::env::{raw_rest_action, ACTION_DIM};
use crate::nn::{Mlp, RunningNorm};
use crate::sim::ArmParams;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    /// Initial log-std of the five base channels.
    pub init_log_std: f64,
    /// Initial log-std of the six joint-target channels. Targets are
    /// absolute, so raw noise maps onto radians of target jitter.
    pub arm_init_log_std: f64,
    pub gripper_init_log_std: f64,
    pub min_log_std: f64,
    pub max_log_std: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            actor_hidden: vec![128, 128, 64],
            critic_hidden: vec![128, 128, 64],
            init_log_std: -0.5,
            arm_init_log_std: -0.5,
            gripper_init_log_std: -0.5,
            min_log_std: -4.0,
            max_log_std: 1.0,
        }
    }
}

impl PolicyConfig {
    /// The network sizes used for the full-scale runs.
    pub fn paper_scale() -> Self {
        Self { actor_hidden: vec![512, 512, 128], critic_hidden: vec![512, 512, 128], ..Self::default() }
    }
}

fn sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    std::iter::once(input).chain(hidden.iter().copied()).chain(std::iter::once(output)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub actor: Mlp,
    pub critic: Mlp,
    pub log_std: Vec<f64>,
    pub obs_norm: RunningNorm,
    pub min_log_std: f64,
    pub max_log_std: f64,
}

/// Output of one batched policy evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyStep {
    /// Raw (unscaled) actions, `batch x ACTION_DIM`.
    pub actions: Array2<f64>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
}

impl Policy {
    /// The actor's mean starts at a standing robot with the arm at its
    /// nominal posture and the gripper open.
    pub fn new<R: Rng + ?Sized>(cfg: &PolicyConfig, obs_dim: usize, arm: &ArmParams, rng: &mut R) -> Self {
        let mut actor = Mlp::new(&sizes(obs_dim, &cfg.actor_hidden, ACTION_DIM), 0.01, rng);
        actor.output_bias_mut().copy_from_slice(&raw_rest_action(arm, &arm.nominal, 0.0));
        let critic = Mlp::new(&sizes(obs_dim, &cfg.critic_hidden, 1), 1.0, rng);
        Self {
            actor,
            critic,
            log_std: (0..ACTION_DIM)
                .map(|i| match i {
                    0..5 => cfg.init_log_std,
                    11 => cfg.gripper_init_log_std,
                    _ => cfg.arm_init_log_std,
                })
                .collect(),
            obs_norm: RunningNorm::new(obs_dim),
            min_log_std: cfg.min_log_std,
            max_log_std: cfg.max_log_std,
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn normalize(&self, raw_obs: ArrayView2<f64>) -> Array2<f64> {
        self.obs_norm.normalize(raw_obs)
    }

    pub fn std(&self) -> Array1<f64> {
        self.log_std.iter().map(|l| l.clamp(self.min_log_std, self.max_log_std).exp()).collect()
    }

    pub fn mean(&self, obs: ArrayView2<f64>) -> Array2<f64> {
        self.actor.forward(obs)
    }

    pub fn values(&self, obs: ArrayView2<f64>) -> Vec<f64> {
        self.critic.forward(obs).column(0).to_vec()
    }

    /// Samples actions for normalised observations, or returns the mean when
    /// `deterministic`.
    pub fn act<R: Rng + ?Sized>(&self, obs: ArrayView2<f64>, deterministic: bool, rng: &mut R) -> PolicyStep {
        let mean = self.mean(obs);
        let std = self.std();
        let mut actions = mean.clone();
        if !deterministic {
            for mut row in actions.rows_mut() {
                for (a, s) in row.iter_mut().zip(std.iter()) {
                    let n: f64 = StandardNormal.sample(rng);
                    *a += s * n;
                }
            }
        }
        let log_probs = self.log_prob(&mean, &actions);
        PolicyStep { actions, log_probs, values: self.values(obs) }
    }

    /// Diagonal Gaussian log density of `actions` around `mean`.
    pub fn log_prob(&self, mean: &Array2<f64>, actions: &Array2<f64>) -> Vec<f64> {
        let log_std: Vec<f64> = self.log_std.iter().map(|l| l.clamp(self.min_log_std, self.max_log_std)).collect();
        let norm: f64 = log_std.iter().sum::<f64>() + 0.5 * LN_2PI * ACTION_DIM as f64;
        (actions - mean)
            .axis_iter(Axis(0))
            .map(|d| {
                let quad: f64 = d.iter().zip(&log_std).map(|(x, l)| (x / l.exp()).powi(2)).sum();
                -0.5 * quad - norm
            })
            .collect()
    }

    /// Entropy of the action distribution (state independent).
    pub fn entropy(&self) -> f64 {
        self.log_std.iter().map(|l| l.clamp(self.min_log_std, self.max_log_std) + 0.5 * (1.0 + LN_2PI)).sum()
    }

    pub fn param_count(&self) -> usize {
        self.actor.params.len() + self.log_std.len() + self.critic.params.len()
    }

    /// All trainable parameters: actor, log-std, critic.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        v.extend_from_slice(&self.actor.params);
        v.extend_from_slice(&self.log_std);
        v.extend_from_slice(&self.critic.params);
        v
    }

    pub fn set_flat_params(&mut self, v: &[f64]) {
        let a = self.actor.params.len();
        let s = self.log_std.len();
        self.actor.params.copy_from_slice(&v[..a]);
        self.log_std.copy_from_slice(&v[a..a + s]);
        self.critic.params.copy_from_slice(&v[a + s..]);
    }
}
