use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::LEAKY_SLOPE;

/// Fully connected network, leaky-ReLU on hidden layers, linear output.
/// Per layer the flat layout is `W (out x in, row-major)` then `b (out)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
}

pub struct MlpCache {
    /// Inputs to each layer; `inputs[0]` is the network input.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of hidden layers.
    pre: Vec<Array2<f64>>,
}

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

impl Mlp {
    pub fn param_count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// He-uniform hidden layers, output layer scaled by `output_scale`,
    /// zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], output_scale: f64, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let mut params = Vec::with_capacity(Self::param_count(sizes));
        let layers = sizes.len() - 1;
        for (l, w) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let mut bound = (6.0 / fan_in as f64).sqrt();
            if l + 1 == layers {
                bound *= output_scale;
            }
            params.extend((0..fan_in * fan_out).map(|_| rng.random_range(-bound..=bound)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Self { sizes: sizes.to_vec(), params }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    fn offsets(&self, layer: usize) -> (usize, usize, usize) {
        let before: usize = self.sizes.windows(2).take(layer).map(|w| w[0] * w[1] + w[1]).sum();
        let (i, o) = (self.sizes[layer], self.sizes[layer + 1]);
        (before, before + i * o, before + i * o + o)
    }

    pub fn weights(&self, layer: usize) -> ArrayView2<'_, f64> {
        let (w0, b0, _) = self.offsets(layer);
        ArrayView2::from_shape((self.sizes[layer + 1], self.sizes[layer]), &self.params[w0..b0]).unwrap()
    }

    pub fn bias(&self, layer: usize) -> ArrayView1<'_, f64> {
        let (_, b0, end) = self.offsets(layer);
        ArrayView1::from(&self.params[b0..end])
    }

    /// Mutable view of the output-layer bias.
    pub fn output_bias_mut(&mut self) -> &mut [f64] {
        let (_, b0, end) = self.offsets(self.sizes.len() - 2);
        &mut self.params[b0..end]
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let layers = self.sizes.len() - 1;
        let mut a = x.to_owned();
        for l in 0..layers {
            let mut z = a.dot(&self.weights(l).t());
            z += &self.bias(l);
            if l + 1 < layers {
                z.mapv_inplace(leaky);
            }
            a = z;
        }
        a
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> (Array2<f64>, MlpCache) {
        let layers = self.sizes.len() - 1;
        let mut inputs = Vec::with_capacity(layers);
        let mut pre = Vec::with_capacity(layers - 1);
        let mut a = x.to_owned();
        for l in 0..layers {
            let mut z = a.dot(&self.weights(l).t());
            z += &self.bias(l);
            inputs.push(a);
            if l + 1 < layers {
                a = z.mapv(leaky);
                pre.push(z);
            } else {
                a = z;
            }
        }
        (a, MlpCache { inputs, pre })
    }

    /// Accumulates parameter gradients into `grad` and returns the gradient
    /// with respect to the input.
    pub fn backward(&self, cache: &MlpCache, d_out: Array2<f64>, grad: &mut [f64]) -> Array2<f64> {
        let layers = self.sizes.len() - 1;
        let mut delta = d_out;
        for l in (0..layers).rev() {
            if l + 1 < layers {
                let z = &cache.pre[l];
                ndarray::Zip::from(&mut delta).and(z).for_each(|d, &z| {
                    if z <= 0.0 {
                        *d *= LEAKY_SLOPE;
                    }
                });
            }
            let (w0, b0, end) = self.offsets(l);
            let gw = delta.t().dot(&cache.inputs[l]);
            for (g, v) in grad[w0..b0].iter_mut().zip(gw.iter()) {
                *g += v;
            }
            let gb = delta.sum_axis(Axis(0));
            for (g, v) in grad[b0..end].iter_mut().zip(gb.iter()) {
                *g += v;
            }
            delta = delta.dot(&self.weights(l));
        }
        delta
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn loss(net: &Mlp, x: &Array2<f64>, target: &Array2<f64>) -> f64 {
        let y = net.forward(x.view());
        0.5 * (&y - target).mapv(|v| v * v).sum()
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = Mlp::new(&[3, 5, 4, 2], 1.0, &mut rng);
        // Non-zero biases so no pre-activation sits exactly on the kink.
        for p in net.params.iter_mut() {
            *p += rng.random_range(-0.1..0.1);
        }
        let x = Array2::from_shape_fn((6, 3), |_| rng.random_range(-1.0..1.0));
        let target = Array2::from_shape_fn((6, 2), |_| rng.random_range(-1.0..1.0));
        let (y, cache) = net.forward_cached(x.view());
        let mut grad = vec![0.0; net.params.len()];
        let dx = net.backward(&cache, &y - &target, &mut grad);
        let h = 1e-6;
        for i in 0..net.params.len() {
            let orig = net.params[i];
            net.params[i] = orig + h;
            let lp = loss(&net, &x, &target);
            net.params[i] = orig - h;
            let lm = loss(&net, &x, &target);
            net.params[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - grad[i]).abs() <= 1e-6 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", grad[i]);
        }
        let mut xp = x.clone();
        xp[[2, 1]] += h;
        let mut xm = x.clone();
        xm[[2, 1]] -= h;
        let fd = (loss(&net, &xp, &target) - loss(&net, &xm, &target)) / (2.0 * h);
        assert!((fd - dx[[2, 1]]).abs() < 1e-6);
    }

    #[test]
    fn forward_matches_cached_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::new(&[4, 8, 3], 0.5, &mut rng);
        let x = Array2::from_shape_fn((5, 4), |_| rng.random_range(-2.0..2.0));
        assert_eq!(net.forward(x.view()), net.forward_cached(x.view()).0);
        assert_eq!(net.params.len(), Mlp::param_count(&[4, 8, 3]));
    }
}
