//! Small dense networks with hand-written backpropagation.
//!
//! Parameters live in one flat `Vec<f64>` per network so optimisers,
//! checkpoints and gradient checks can treat every model the same way.

mod lstm;
mod mlp;

pub use lstm::{Lstm, LstmCache, LstmState};
pub use mlp::{Mlp, MlpCache};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 3e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], cfg: &AdamConfig) {
        debug_assert_eq!(params.len(), grads.len());
        self.t += 1;
        let b1t = 1.0 - cfg.beta1.powi(self.t as i32);
        let b2t = 1.0 - cfg.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = self.m[i] / b1t;
            let v_hat = self.v[i] / b2t;
            params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Scales `grads` down so their joint norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_grad_norm(grads: &mut [&mut [f64]], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

/// Per-feature running mean and variance (parallel Welford merge).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningNorm {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: f64,
    pub clip: f64,
}

impl RunningNorm {
    pub fn new(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], var: vec![1.0; dim], count: 1e-4, clip: 5.0 }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn update(&mut self, batch: ArrayView2<f64>) {
        let n = batch.nrows() as f64;
        if n == 0.0 {
            return;
        }
        let b_mean: Array1<f64> = batch.mean_axis(Axis(0)).unwrap();
        let b_var: Array1<f64> = batch.var_axis(Axis(0), 0.0);
        let total = self.count + n;
        for i in 0..self.mean.len() {
            let delta = b_mean[i] - self.mean[i];
            let m_a = self.var[i] * self.count;
            let m_b = b_var[i] * n;
            let m2 = m_a + m_b + delta * delta * self.count * n / total;
            self.mean[i] += delta * n / total;
            self.var[i] = m2 / total;
        }
        self.count = total;
    }

    pub fn normalize_row(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..x.len() {
            let z = (x[i] - self.mean[i]) / (self.var[i] + 1e-8).sqrt();
            out[i] = z.clamp(-self.clip, self.clip);
        }
    }

    pub fn normalize(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(x.raw_dim());
        for (row, mut o) in x.rows().into_iter().zip(out.rows_mut()) {
            self.normalize_row(row.as_slice().unwrap(), o.as_slice_mut().unwrap());
        }
        out
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn running_norm_matches_two_pass_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = Array2::from_shape_fn((300, 3), |(_, j)| rng.random_range(-1.0..1.0) * (j as f64 + 1.0) + j as f64);
        let mut norm = RunningNorm::new(3);
        norm.count = 0.0;
        norm.var = vec![0.0; 3];
        for chunk in data.axis_chunks_iter(Axis(0), 37) {
            norm.update(chunk);
        }
        let mean = data.mean_axis(Axis(0)).unwrap();
        let var = data.var_axis(Axis(0), 0.0);
        for j in 0..3 {
            assert!((norm.mean[j] - mean[j]).abs() < 1e-12);
            assert!((norm.var[j] - var[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let cfg = AdamConfig { learning_rate: 0.1, ..Default::default() };
        let mut p = vec![1.0, -2.0];
        let mut adam = Adam::new(2);
        adam.step(&mut p, &[0.5, -3.0], &cfg);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 1.9).abs() < 1e-6);
    }

    #[test]
    fn adam_zero_rate_is_bitwise_noop() {
        let cfg = AdamConfig { learning_rate: 0.0, ..Default::default() };
        let mut p = vec![0.3, 0.7];
        adam_step_twice(&mut p, &cfg);
        assert_eq!(p, vec![0.3, 0.7]);
    }

    fn adam_step_twice(p: &mut [f64], cfg: &AdamConfig) {
        let mut adam = Adam::new(p.len());
        adam.step(p, &[1.0, -1.0], cfg);
        adam.step(p, &[0.2, 5.0], cfg);
    }

    #[test]
    fn clip_scales_joint_norm() {
        let mut a = vec![3.0];
        let mut b = vec![4.0];
        let n = clip_grad_norm(&mut [&mut a, &mut b], 1.0);
        assert_eq!(n, 5.0);
        assert!((a[0] - 0.6).abs() < 1e-12 && (b[0] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn normalize_clips() {
        let mut norm = RunningNorm::new(1);
        norm.mean = vec![0.0];
        norm.var = vec![1.0];
        let out = norm.normalize(array![[100.0], [-0.5]].view());
        assert_eq!(out[[0, 0]], 5.0);
        assert!((out[[1, 0]] + 0.5).abs() < 1e-6);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }
}
