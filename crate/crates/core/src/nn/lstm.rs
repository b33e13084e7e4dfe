use ndarray::{concatenate, s, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::sigmoid;

/// Stacked LSTM over batches. Gate order in the weights is input, forget,
/// cell, output. Per layer the flat layout is `W (4H x (in + H))` then `b (4H)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lstm {
    pub input_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub params: Vec<f64>,
}

/// Hidden and cell state per layer, each `batch x hidden`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmState {
    pub h: Vec<Array2<f64>>,
    pub c: Vec<Array2<f64>>,
}

impl LstmState {
    pub fn zeros(layers: usize, batch: usize, hidden: usize) -> Self {
        Self { h: vec![Array2::zeros((batch, hidden)); layers], c: vec![Array2::zeros((batch, hidden)); layers] }
    }

    pub fn batch(&self) -> usize {
        self.h[0].nrows()
    }

    /// Copies row `src` of `other` into row `dst` of `self`.
    pub fn set_row(&mut self, dst: usize, other: &LstmState, src: usize) {
        for l in 0..self.h.len() {
            self.h[l].row_mut(dst).assign(&other.h[l].row(src));
            self.c[l].row_mut(dst).assign(&other.c[l].row(src));
        }
    }

    pub fn reset_row(&mut self, row: usize) {
        for l in 0..self.h.len() {
            self.h[l].row_mut(row).fill(0.0);
            self.c[l].row_mut(row).fill(0.0);
        }
    }

    /// Stacks single-row states into one batch.
    pub fn stack(rows: &[LstmState]) -> Self {
        let layers = rows[0].h.len();
        let cat = |f: &dyn Fn(&LstmState) -> &Array2<f64>| {
            let views: Vec<ArrayView2<f64>> = rows.iter().map(|r| f(r).view()).collect();
            concatenate(Axis(0), &views).unwrap()
        };
        Self {
            h: (0..layers).map(|l| cat(&|r: &LstmState| &r.h[l])).collect(),
            c: (0..layers).map(|l| cat(&|r: &LstmState| &r.c[l])).collect(),
        }
    }

    pub fn row(&self, row: usize) -> LstmState {
        Self {
            h: self.h.iter().map(|h| h.slice(s![row..row + 1, ..]).to_owned()).collect(),
            c: self.c.iter().map(|c| c.slice(s![row..row + 1, ..]).to_owned()).collect(),
        }
    }
}

struct StepCache {
    xh: Array2<f64>,
    i: Array2<f64>,
    f: Array2<f64>,
    g: Array2<f64>,
    o: Array2<f64>,
    c_prev: Array2<f64>,
    tanh_c: Array2<f64>,
}

/// Cached activations of a sequence, indexed `[time][layer]`.
pub struct LstmCache {
    steps: Vec<Vec<StepCache>>,
    /// Per-step row masks applied to the incoming state, if any.
    masks: Vec<Option<Array2<f64>>>,
}

impl Lstm {
    pub fn param_count(input_dim: usize, hidden: usize, layers: usize) -> usize {
        (0..layers).map(|l| {
            let inp = if l == 0 { input_dim } else { hidden };
            4 * hidden * (inp + hidden) + 4 * hidden
        }).sum()
    }

    /// Uniform init on `±1/sqrt(hidden)`, forget-gate bias 1.
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden: usize, layers: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut params = Vec::with_capacity(Self::param_count(input_dim, hidden, layers));
        for l in 0..layers {
            let inp = if l == 0 { input_dim } else { hidden };
            params.extend((0..4 * hidden * (inp + hidden)).map(|_| rng.random_range(-bound..=bound)));
            params.extend((0..4 * hidden).map(|k| if (hidden..2 * hidden).contains(&k) { 1.0 } else { 0.0 }));
        }
        Self { input_dim, hidden, layers, params }
    }

    fn layer_input(&self, l: usize) -> usize {
        if l == 0 {
            self.input_dim
        } else {
            self.hidden
        }
    }

    fn offsets(&self, layer: usize) -> (usize, usize, usize) {
        let h = self.hidden;
        let before: usize = (0..layer).map(|l| 4 * h * (self.layer_input(l) + h) + 4 * h).sum();
        let w_len = 4 * h * (self.layer_input(layer) + h);
        (before, before + w_len, before + w_len + 4 * h)
    }

    fn weights(&self, layer: usize) -> ArrayView2<'_, f64> {
        let (w0, b0, _) = self.offsets(layer);
        ArrayView2::from_shape((4 * self.hidden, self.layer_input(layer) + self.hidden), &self.params[w0..b0]).unwrap()
    }

    fn bias(&self, layer: usize) -> ArrayView1<'_, f64> {
        let (_, b0, end) = self.offsets(layer);
        ArrayView1::from(&self.params[b0..end])
    }

    pub fn zero_state(&self, batch: usize) -> LstmState {
        LstmState::zeros(self.layers, batch, self.hidden)
    }

    fn cell(&self, l: usize, x: ArrayView2<f64>, state: &mut LstmState) -> StepCache {
        let h = self.hidden;
        let xh = concatenate(Axis(1), &[x, state.h[l].view()]).unwrap();
        let mut z = xh.dot(&self.weights(l).t());
        z += &self.bias(l);
        let i = z.slice(s![.., 0..h]).mapv(sigmoid);
        let f = z.slice(s![.., h..2 * h]).mapv(sigmoid);
        let g = z.slice(s![.., 2 * h..3 * h]).mapv(f64::tanh);
        let o = z.slice(s![.., 3 * h..4 * h]).mapv(sigmoid);
        let c_prev = std::mem::replace(&mut state.c[l], Array2::zeros((0, 0)));
        let c = &f * &c_prev + &i * &g;
        let tanh_c = c.mapv(f64::tanh);
        state.h[l] = &o * &tanh_c;
        state.c[l] = c;
        StepCache { xh, i, f, g, o, c_prev, tanh_c }
    }

    /// One time step for a batch; returns the top-layer hidden state.
    pub fn step(&self, state: &mut LstmState, x: ArrayView2<f64>) -> Array2<f64> {
        let mut input = x.to_owned();
        for l in 0..self.layers {
            self.cell(l, input.view(), state);
            input = state.h[l].clone();
        }
        input
    }

    /// Runs a sequence from `init`, returning top-layer outputs per step and
    /// the cache for [`Lstm::backward_seq`].
    pub fn forward_seq(&self, init: &LstmState, xs: &[Array2<f64>]) -> (Vec<Array2<f64>>, LstmCache) {
        self.forward_seq_masked(init, xs, &[])
    }

    /// As [`Lstm::forward_seq`], but before step `t` every row `b` of the
    /// carried state is multiplied by `keep[t][b]` (0 resets the row at an
    /// episode boundary). An empty `keep` means no masking.
    pub fn forward_seq_masked(&self, init: &LstmState, xs: &[Array2<f64>], keep: &[Vec<f64>]) -> (Vec<Array2<f64>>, LstmCache) {
        let mut state = init.clone();
        let mut outputs = Vec::with_capacity(xs.len());
        let mut steps = Vec::with_capacity(xs.len());
        let mut masks = Vec::with_capacity(xs.len());
        for (t, x) in xs.iter().enumerate() {
            let mask = keep.get(t).filter(|k| k.iter().any(|v| *v != 1.0)).map(|k| {
                Array2::from_shape_vec((k.len(), 1), k.clone()).expect("mask shape")
            });
            if let Some(m) = &mask {
                for l in 0..self.layers {
                    state.h[l] *= m;
                    state.c[l] *= m;
                }
            }
            masks.push(mask);
            let mut per_layer = Vec::with_capacity(self.layers);
            let mut input = x.clone();
            for l in 0..self.layers {
                per_layer.push(self.cell(l, input.view(), &mut state));
                input = state.h[l].clone();
            }
            outputs.push(input);
            steps.push(per_layer);
        }
        (outputs, LstmCache { steps, masks })
    }

    /// Backpropagation through time. `d_outputs[t]` is the loss gradient with
    /// respect to the top-layer output at step `t`. Gradients accumulate into
    /// `grad`; the initial state is treated as a constant.
    pub fn backward_seq(&self, cache: &LstmCache, d_outputs: &[Array2<f64>], grad: &mut [f64]) {
        let h = self.hidden;
        let batch = d_outputs.first().map_or(0, |d| d.nrows());
        let mut dh_next = vec![Array2::<f64>::zeros((batch, h)); self.layers];
        let mut dc_next = vec![Array2::<f64>::zeros((batch, h)); self.layers];
        for t in (0..cache.steps.len()).rev() {
            let mut d_above = d_outputs[t].clone();
            for l in (0..self.layers).rev() {
                let sc = &cache.steps[t][l];
                let dh = &d_above + &dh_next[l];
                let dc = &dc_next[l] + &(&dh * &sc.o * &sc.tanh_c.mapv(|v| 1.0 - v * v));
                let d_i = &dc * &sc.g * &sc.i.mapv(|v| v * (1.0 - v));
                let d_f = &dc * &sc.c_prev * &sc.f.mapv(|v| v * (1.0 - v));
                let d_g = &dc * &sc.i * &sc.g.mapv(|v| 1.0 - v * v);
                let d_o = &dh * &sc.tanh_c * &sc.o.mapv(|v| v * (1.0 - v));
                let d_z = concatenate(Axis(1), &[d_i.view(), d_f.view(), d_g.view(), d_o.view()]).unwrap();
                dc_next[l] = &dc * &sc.f;

                let (w0, b0, end) = self.offsets(l);
                let gw = d_z.t().dot(&sc.xh);
                for (g, v) in grad[w0..b0].iter_mut().zip(gw.iter()) {
                    *g += v;
                }
                let gb = d_z.sum_axis(Axis(0));
                for (g, v) in grad[b0..end].iter_mut().zip(gb.iter()) {
                    *g += v;
                }
                let d_xh = d_z.dot(&self.weights(l));
                let inp = self.layer_input(l);
                dh_next[l] = d_xh.slice(s![.., inp..]).to_owned();
                d_above = d_xh.slice(s![.., ..inp]).to_owned();
            }
            if let Some(m) = &cache.masks[t] {
                for l in 0..self.layers {
                    dh_next[l] *= m;
                    dc_next[l] *= m;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seq_loss(net: &Lstm, init: &LstmState, xs: &[Array2<f64>], targets: &[Array2<f64>]) -> f64 {
        let (ys, _) = net.forward_seq(init, xs);
        ys.iter().zip(targets).map(|(y, t)| 0.5 * (y - t).mapv(|v| v * v).sum()).sum()
    }

    #[test]
    fn bptt_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut net = Lstm::new(3, 4, 2, &mut rng);
        let mut init = net.zero_state(2);
        init.h[0].mapv_inplace(|_| 0.3);
        init.c[1].mapv_inplace(|_| -0.2);
        let xs: Vec<Array2<f64>> = (0..5).map(|_| Array2::from_shape_fn((2, 3), |_| rng.random_range(-1.0..1.0))).collect();
        let targets: Vec<Array2<f64>> = (0..5).map(|_| Array2::from_shape_fn((2, 4), |_| rng.random_range(-0.5..0.5))).collect();
        let (ys, cache) = net.forward_seq(&init, &xs);
        let d: Vec<Array2<f64>> = ys.iter().zip(&targets).map(|(y, t)| y - t).collect();
        let mut grad = vec![0.0; net.params.len()];
        net.backward_seq(&cache, &d, &mut grad);
        let h = 1e-6;
        for i in 0..net.params.len() {
            let orig = net.params[i];
            net.params[i] = orig + h;
            let lp = seq_loss(&net, &init, &xs, &targets);
            net.params[i] = orig - h;
            let lm = seq_loss(&net, &init, &xs, &targets);
            net.params[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - grad[i]).abs() <= 1e-7 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn masked_bptt_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut net = Lstm::new(3, 4, 2, &mut rng);
        let mut init = net.zero_state(2);
        init.c[0].mapv_inplace(|_| 0.4);
        let xs: Vec<Array2<f64>> = (0..6).map(|_| Array2::from_shape_fn((2, 3), |_| rng.random_range(-1.0..1.0))).collect();
        let targets: Vec<Array2<f64>> = (0..6).map(|_| Array2::from_shape_fn((2, 4), |_| rng.random_range(-0.5..0.5))).collect();
        let keep: Vec<Vec<f64>> = (0..6).map(|t| vec![if t == 3 { 0.0 } else { 1.0 }, 1.0]).collect();
        let loss = |net: &Lstm| -> f64 {
            let (ys, _) = net.forward_seq_masked(&init, &xs, &keep);
            ys.iter().zip(&targets).map(|(y, t)| 0.5 * (y - t).mapv(|v| v * v).sum()).sum()
        };
        let (ys, cache) = net.forward_seq_masked(&init, &xs, &keep);
        let d: Vec<Array2<f64>> = ys.iter().zip(&targets).map(|(y, t)| y - t).collect();
        let mut grad = vec![0.0; net.params.len()];
        net.backward_seq(&cache, &d, &mut grad);
        for i in 0..net.params.len() {
            let orig = net.params[i];
            net.params[i] = orig + 1e-6;
            let lp = loss(&net);
            net.params[i] = orig - 1e-6;
            let lm = loss(&net);
            net.params[i] = orig;
            let fd = (lp - lm) / 2e-6;
            assert!((fd - grad[i]).abs() <= 1e-7 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", grad[i]);
        }
        // A reset row continues exactly like a fresh sequence.
        let (fresh, _) = net.forward_seq(&net.zero_state(2), &xs[3..]);
        for (a, b) in ys[3..].iter().zip(&fresh) {
            assert_eq!(a.row(0), b.row(0));
        }
    }

    #[test]
    fn step_matches_sequence_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = Lstm::new(5, 6, 2, &mut rng);
        let xs: Vec<Array2<f64>> = (0..4).map(|_| Array2::from_shape_fn((3, 5), |_| rng.random_range(-1.0..1.0))).collect();
        let init = net.zero_state(3);
        let (ys, _) = net.forward_seq(&init, &xs);
        let mut state = init.clone();
        for (x, y) in xs.iter().zip(&ys) {
            assert_eq!(&net.step(&mut state, x.view()), y);
        }
        assert_eq!(net.params.len(), Lstm::param_count(5, 6, 2));
    }

    #[test]
    fn state_rows_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let net = Lstm::new(2, 3, 2, &mut rng);
        let mut state = net.zero_state(3);
        net.step(&mut state, Array2::from_shape_fn((3, 2), |(i, j)| (i + j) as f64).view());
        let rows: Vec<LstmState> = (0..3).map(|r| state.row(r)).collect();
        assert_eq!(LstmState::stack(&rows), state);
        state.reset_row(1);
        assert!(state.h[0].row(1).iter().all(|v| *v == 0.0));
    }
}
