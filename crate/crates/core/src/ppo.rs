//! Clipped-surrogate PPO with generalised advantage estimation.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, Adam, AdamConfig};
use crate::policy::Policy;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
    /// Stop the epoch loop early once the approximate KL exceeds this.
    pub target_kl: Option<f64>,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.996,
            lambda: 0.95,
            clip: 0.2,
            value_coef: 0.5,
            entropy_coef: 1e-3,
            learning_rate: 3e-4,
            epochs: 5,
            minibatches: 4,
            max_grad_norm: 1.0,
            normalize_advantages: true,
            target_kl: Some(0.05),
        }
    }
}

/// Advantages and returns for one environment's step sequence.
///
/// `next_values[t]` is the value of the state reached after step `t`: zero for
/// a true terminal, the critic's estimate of the final observation when the
/// episode was cut off, and `values[t + 1]` otherwise. `ends[t]` marks an
/// episode boundary after step `t`, which stops the advantage recursion.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    next_values: &[f64],
    ends: &[bool],
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        if ends[t] {
            running = 0.0;
        }
        let delta = rewards[t] + gamma * next_values[t] - values[t];
        running = delta + gamma * lambda * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Shifts and scales to zero mean and unit variance.
pub fn normalize_advantages(adv: &mut [f64]) {
    let n = adv.len() as f64;
    if n < 2.0 {
        return;
    }
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt() + 1e-8;
    adv.iter_mut().for_each(|a| *a = (*a - mean) / std);
}

/// Flattened training data; observations are already normalised.
#[derive(Clone, Debug, PartialEq)]
pub struct PpoBatch {
    pub obs: Array2<f64>,
    pub actions: Array2<f64>,
    pub old_log_probs: Vec<f64>,
    pub old_values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl PpoBatch {
    pub fn len(&self) -> usize {
        self.old_log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.old_log_probs.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> PpoBatch {
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<f64>>();
        PpoBatch {
            obs: self.obs.select(Axis(0), idx),
            actions: self.actions.select(Axis(0), idx),
            old_log_probs: pick(&self.old_log_probs),
            old_values: pick(&self.old_values),
            advantages: pick(&self.advantages),
            returns: pick(&self.returns),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub total: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// The PPO loss `-surrogate + c_v * 0.5 * mse - c_e * entropy` on `batch`,
/// with its gradient over [`Policy::flat_params`] when `grad` is given.
pub fn surrogate_loss(policy: &Policy, batch: &PpoBatch, cfg: &PpoConfig, grad: Option<&mut [f64]>) -> LossParts {
    let n = batch.len().max(1) as f64;
    let (mean, actor_cache) = policy.actor.forward_cached(batch.obs.view());
    let (vout, critic_cache) = policy.critic.forward_cached(batch.obs.view());
    let log_probs = policy.log_prob(&mean, &batch.actions);
    let log_std: Vec<f64> = policy.log_std.iter().map(|l| l.clamp(policy.min_log_std, policy.max_log_std)).collect();
    let inv_var: Vec<f64> = log_std.iter().map(|l| (-2.0 * l).exp()).collect();

    let mut parts = LossParts::default();
    let mut d_logp = vec![0.0; batch.len()];
    for i in 0..batch.len() {
        let log_ratio = log_probs[i] - batch.old_log_probs[i];
        let ratio = log_ratio.exp();
        let a = batch.advantages[i];
        let unclipped = ratio * a;
        let clipped = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip) * a;
        parts.policy -= unclipped.min(clipped) / n;
        if unclipped <= clipped {
            d_logp[i] = -unclipped / n;
        }
        if (ratio - 1.0).abs() > cfg.clip {
            parts.clip_fraction += 1.0 / n;
        }
        parts.approx_kl += ((ratio - 1.0) - log_ratio) / n;
    }
    let mut d_v = Array2::zeros(vout.raw_dim());
    for i in 0..batch.len() {
        let err = vout[[i, 0]] - batch.returns[i];
        parts.value += 0.5 * err * err / n;
        d_v[[i, 0]] = cfg.value_coef * err / n;
    }
    parts.entropy = policy.entropy();
    parts.total = parts.policy + cfg.value_coef * parts.value - cfg.entropy_coef * parts.entropy;

    if let Some(grad) = grad {
        let a_len = policy.actor.params.len();
        let s_len = policy.log_std.len();
        let (g_actor, rest) = grad.split_at_mut(a_len);
        let (g_std, g_critic) = rest.split_at_mut(s_len);
        let diff = &batch.actions - &mean;
        let mut d_mean = Array2::zeros(mean.raw_dim());
        for i in 0..batch.len() {
            for j in 0..s_len {
                d_mean[[i, j]] = d_logp[i] * diff[[i, j]] * inv_var[j];
            }
        }
        for j in 0..s_len {
            let inside = policy.log_std[j] > policy.min_log_std && policy.log_std[j] < policy.max_log_std;
            if !inside {
                continue;
            }
            let mut g = -cfg.entropy_coef;
            for i in 0..batch.len() {
                g += d_logp[i] * (diff[[i, j]] * diff[[i, j]] * inv_var[j] - 1.0);
            }
            g_std[j] += g;
        }
        policy.actor.backward(&actor_cache, d_mean, g_actor);
        policy.critic.backward(&critic_cache, d_v, g_critic);
    }
    parts
}

/// Fraction of return variance explained by the value predictions.
pub fn explained_variance(values: &[f64], returns: &[f64]) -> f64 {
    let n = returns.len() as f64;
    if n < 2.0 {
        return 0.0;
    }
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let res_mean = returns.iter().zip(values).map(|(r, v)| r - v).sum::<f64>() / n;
    let res_var = returns.iter().zip(values).map(|(r, v)| (r - v - res_mean).powi(2)).sum::<f64>() / n;
    if var == 0.0 {
        0.0
    } else {
        1.0 - res_var / var
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub explained_variance: f64,
    pub grad_norm: f64,
    pub updates: usize,
}

/// Optimiser state for the policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpoTrainer {
    pub cfg: PpoConfig,
    pub adam: Adam,
}

impl PpoTrainer {
    pub fn new(cfg: PpoConfig, policy: &Policy) -> Self {
        Self { cfg, adam: Adam::new(policy.param_count()) }
    }

    /// Several epochs of shuffled minibatch updates. Any non-finite loss or
    /// gradient aborts with [`Error::Diverged`] before touching parameters.
    pub fn update<R: Rng + ?Sized>(&mut self, policy: &mut Policy, batch: &PpoBatch, rng: &mut R) -> Result<PpoStats> {
        if batch.is_empty() {
            return Err(Error::Diverged("empty batch".into()));
        }
        let mut batch = batch.clone();
        if self.cfg.normalize_advantages {
            normalize_advantages(&mut batch.advantages);
        }
        let adam_cfg = AdamConfig { learning_rate: self.cfg.learning_rate, ..AdamConfig::default() };
        let mut stats = PpoStats {
            explained_variance: explained_variance(&batch.old_values, &batch.returns),
            ..PpoStats::default()
        };
        let mut idx: Vec<usize> = (0..batch.len()).collect();
        let mb_size = batch.len().div_ceil(self.cfg.minibatches.max(1));
        let mut params = policy.flat_params();
        let mut grad = vec![0.0; params.len()];
        'epochs: for _ in 0..self.cfg.epochs {
            idx.shuffle(rng);
            let mut epoch_kl = 0.0;
            let mut chunks = 0;
            for chunk in idx.chunks(mb_size) {
                let mb = batch.select(chunk);
                grad.iter_mut().for_each(|g| *g = 0.0);
                let parts = surrogate_loss(policy, &mb, &self.cfg, Some(&mut grad));
                if !parts.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    return Err(Error::Diverged(format!(
                        "non-finite PPO loss (policy {}, value {}, entropy {}, kl {})",
                        parts.policy, parts.value, parts.entropy, parts.approx_kl
                    )));
                }
                stats.grad_norm = clip_grad_norm(&mut [&mut grad], self.cfg.max_grad_norm);
                self.adam.step(&mut params, &grad, &adam_cfg);
                policy.set_flat_params(&params);
                stats.policy_loss += parts.policy;
                stats.value_loss += parts.value;
                stats.entropy += parts.entropy;
                stats.approx_kl += parts.approx_kl;
                stats.clip_fraction += parts.clip_fraction;
                stats.updates += 1;
                epoch_kl += parts.approx_kl;
                chunks += 1;
            }
            if let Some(limit) = self.cfg.target_kl {
                if epoch_kl / chunks.max(1) as f64 > limit {
                    break 'epochs;
                }
            }
        }
        let k = stats.updates.max(1) as f64;
        stats.policy_loss /= k;
        stats.value_loss /= k;
        stats.entropy /= k;
        stats.approx_kl /= k;
        stats.clip_fraction /= k;
        Ok(stats)
    }
}

#[cfg(test)]
mod tests;
