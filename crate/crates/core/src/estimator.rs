//! Recurrent estimator of object mass and gripper contact.
//!
//! A two-layer LSTM reads the per-step `[s_r, s_o, a]` tuple and a linear head
//! produces two logits: mass `3 sigmoid(z0)` kg and contact `sigmoid(z1)`.
//! Training is supervised on privileged labels with truncated BPTT over
//! rollout chunks whose initial recurrent state was stored during the rollout.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::curriculum::{CurriculumConfig, Levels};
use crate::env::{Env, EnvParams, ENTRY_DIM};
use crate::error::Result;
use crate::sampler::{sample, EpisodeConfig, TaskRanges};
use crate::scripted::ScriptedController;
use crate::nn::{clip_grad_norm, sigmoid, Adam, AdamConfig, Lstm, LstmState, Mlp, RunningNorm};
use crate::sim::{SimParams, WorldState};

/// Upper clamp of the mass output, kg.
pub const MASS_MAX: f64 = 3.0;
/// Mass predicted before any evidence: the mean of the training mass range.
pub const MASS_PRIOR: f64 = 1.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    pub hidden: usize,
    pub layers: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Sequences per gradient step.
    pub minibatch: usize,
    pub max_grad_norm: f64,
    pub mass_weight: f64,
    pub contact_weight: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            hidden: 24,
            layers: 2,
            learning_rate: 1e-3,
            epochs: 2,
            minibatch: 32,
            max_grad_norm: 1.0,
            mass_weight: 1.0,
            contact_weight: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mass: f64,
    pub contact: f64,
}

impl Estimate {
    pub fn prior() -> Self {
        Self { mass: MASS_PRIOR, contact: 0.0 }
    }

    pub fn as_pair(&self) -> (f64, f64) {
        (self.mass, self.contact)
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn to_estimate(z0: f64, z1: f64) -> Estimate {
    Estimate { mass: (MASS_MAX * sigmoid(z0)).clamp(0.0, MASS_MAX), contact: sigmoid(z1).clamp(0.0, 1.0) }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimator {
    pub lstm: Lstm,
    pub head: Mlp,
    pub norm: RunningNorm,
}

impl Estimator {
    pub fn new<R: Rng + ?Sized>(cfg: &EstimatorConfig, rng: &mut R) -> Self {
        let lstm = Lstm::new(ENTRY_DIM, cfg.hidden, cfg.layers, rng);
        let mut head = Mlp::new(&[cfg.hidden, 2], 0.01, rng);
        let bias = head.output_bias_mut();
        bias[0] = logit(MASS_PRIOR / MASS_MAX);
        bias[1] = -2.0;
        Self { lstm, head, norm: RunningNorm::new(ENTRY_DIM) }
    }

    pub fn initial_state(&self, batch: usize) -> LstmState {
        self.lstm.zero_state(batch)
    }

    /// One step for a batch of raw inputs (`batch x ENTRY_DIM`).
    pub fn predict(&self, state: &mut LstmState, inputs: ArrayView2<f64>) -> Vec<Estimate> {
        let x = self.norm.normalize(inputs);
        let h = self.lstm.step(state, x.view());
        let z = self.head.forward(h.view());
        z.rows().into_iter().map(|r| to_estimate(r[0], r[1])).collect()
    }

    pub fn predict_one(&self, state: &mut LstmState, input: &[f64; ENTRY_DIM]) -> Estimate {
        let x = ArrayView2::from_shape((1, ENTRY_DIM), input).expect("entry shape");
        self.predict(state, x)[0]
    }

    pub fn param_count(&self) -> usize {
        self.lstm.params.len() + self.head.params.len()
    }
}

/// A chunk of `T` consecutive steps for `B` environments with the recurrent
/// state the rollout held at the chunk start. Inputs are raw (unnormalised).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceBatch {
    pub init: LstmState,
    /// `T` arrays of `B x ENTRY_DIM`.
    pub inputs: Vec<Array2<f64>>,
    /// `T x B` true object mass, kg.
    pub mass: Array2<f64>,
    /// `T x B` attachment flag as 0/1.
    pub contact: Array2<f64>,
    /// `T x B`; 0 where an episode starts at that step, so the carried
    /// state is reset. Empty means no resets inside the chunk.
    #[serde(default)]
    pub keep: Vec<Vec<f64>>,
}

impl SequenceBatch {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn batch(&self) -> usize {
        self.mass.ncols()
    }

    /// Selects a subset of the environments (columns).
    pub fn select(&self, cols: &[usize]) -> SequenceBatch {
        let rows: Vec<LstmState> = cols.iter().map(|&c| self.init.row(c)).collect();
        SequenceBatch {
            init: LstmState::stack(&rows),
            inputs: self.inputs.iter().map(|x| x.select(Axis(0), cols)).collect(),
            mass: self.mass.select(Axis(1), cols),
            contact: self.contact.select(Axis(1), cols),
            keep: self.keep.iter().map(|k| cols.iter().map(|&c| k[c]).collect()).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EstimatorLosses {
    /// Mean squared mass error over in-contact steps, kg².
    pub mass_mse: f64,
    /// Mean binary cross-entropy of the contact output.
    pub contact_bce: f64,
    pub total: f64,
    /// In-contact steps that contributed to the mass loss.
    pub contact_steps: usize,
}

/// Loss and, when `grad` is given, its gradient (lstm params then head params).
pub fn loss(est: &Estimator, batch: &SequenceBatch, cfg: &EstimatorConfig, grad: Option<&mut [f64]>) -> EstimatorLosses {
    let xs: Vec<Array2<f64>> = batch.inputs.iter().map(|x| est.norm.normalize(x.view())).collect();
    let (hs, cache) = est.lstm.forward_seq_masked(&batch.init, &xs, &batch.keep);
    let n_contact = batch.contact.iter().filter(|c| **c > 0.5).count();
    let n_all = batch.contact.len().max(1) as f64;
    let (mut mse, mut bce) = (0.0, 0.0);
    let mut d_zs = Vec::with_capacity(hs.len());
    let mut head_caches = Vec::with_capacity(hs.len());
    for (t, h) in hs.iter().enumerate() {
        let (z, hc) = est.head.forward_cached(h.view());
        let mut dz = Array2::zeros(z.raw_dim());
        for b in 0..z.nrows() {
            let (z0, z1) = (z[[b, 0]], z[[b, 1]]);
            let c = batch.contact[[t, b]];
            let s0 = sigmoid(z0);
            if c > 0.5 {
                let err = MASS_MAX * s0 - batch.mass[[t, b]];
                mse += err * err;
                dz[[b, 0]] = cfg.mass_weight * 2.0 * err * MASS_MAX * s0 * (1.0 - s0) / n_contact as f64;
            }
            // Cross-entropy with logits: softplus(z) - c z.
            let softplus = if z1 > 0.0 { z1 + (-z1).exp().ln_1p() } else { z1.exp().ln_1p() };
            bce += softplus - c * z1;
            dz[[b, 1]] = cfg.contact_weight * (sigmoid(z1) - c) / n_all;
        }
        d_zs.push(dz);
        head_caches.push(hc);
    }
    let mass_mse = if n_contact > 0 { mse / n_contact as f64 } else { 0.0 };
    let contact_bce = bce / n_all;
    let out = EstimatorLosses {
        mass_mse,
        contact_bce,
        total: cfg.mass_weight * mass_mse + cfg.contact_weight * contact_bce,
        contact_steps: n_contact,
    };
    if let Some(grad) = grad {
        let (g_lstm, g_head) = grad.split_at_mut(est.lstm.params.len());
        let d_h: Vec<Array2<f64>> =
            d_zs.into_iter().zip(&head_caches).map(|(dz, hc)| est.head.backward(hc, dz, g_head)).collect();
        est.lstm.backward_seq(&cache, &d_h, g_lstm);
    }
    out
}

/// Optimiser state for supervised estimator training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorTrainer {
    pub cfg: EstimatorConfig,
    pub adam: Adam,
}

impl EstimatorTrainer {
    pub fn new(cfg: EstimatorConfig, est: &Estimator) -> Self {
        Self { cfg, adam: Adam::new(est.param_count()) }
    }

    /// Updates the input statistics with the batches, then runs the configured
    /// number of epochs of minibatch Adam. Returns the mean loss of the last epoch.
    pub fn train_supervised<R: Rng + ?Sized>(
        &mut self,
        est: &mut Estimator,
        batches: &[SequenceBatch],
        rng: &mut R,
    ) -> EstimatorLosses {
        for b in batches {
            for x in &b.inputs {
                est.norm.update(x.view());
            }
        }
        let adam_cfg = AdamConfig { learning_rate: self.cfg.learning_rate, ..AdamConfig::default() };
        let mut units: Vec<(usize, Vec<usize>)> = Vec::new();
        for (i, b) in batches.iter().enumerate() {
            let mut cols: Vec<usize> = (0..b.batch()).collect();
            cols.shuffle(rng);
            for chunk in cols.chunks(self.cfg.minibatch.max(1)) {
                units.push((i, chunk.to_vec()));
            }
        }
        let mut last = EstimatorLosses::default();
        let n = est.param_count();
        let mut grad = vec![0.0; n];
        let mut params = vec![0.0; n];
        for _ in 0..self.cfg.epochs.max(1) {
            units.shuffle(rng);
            let mut sum = EstimatorLosses::default();
            for (i, cols) in &units {
                let mb = batches[*i].select(cols);
                grad.iter_mut().for_each(|g| *g = 0.0);
                let l = loss(est, &mb, &self.cfg, Some(&mut grad));
                if !l.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    continue;
                }
                clip_grad_norm(&mut [&mut grad], self.cfg.max_grad_norm);
                let split = est.lstm.params.len();
                params[..split].copy_from_slice(&est.lstm.params);
                params[split..].copy_from_slice(&est.head.params);
                self.adam.step(&mut params, &grad, &adam_cfg);
                est.lstm.params.copy_from_slice(&params[..split]);
                est.head.params.copy_from_slice(&params[split..]);
                sum.mass_mse += l.mass_mse;
                sum.contact_bce += l.contact_bce;
                sum.total += l.total;
                sum.contact_steps += l.contact_steps;
            }
            let k = units.len().max(1) as f64;
            last = EstimatorLosses {
                mass_mse: sum.mass_mse / k,
                contact_bce: sum.contact_bce / k,
                total: sum.total / k,
                contact_steps: sum.contact_steps,
            };
        }
        last
    }
}

/// One episode of estimator inputs with privileged labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelledEpisode {
    pub inputs: Vec<[f64; ENTRY_DIM]>,
    pub mass: f64,
    pub contact: Vec<bool>,
}

impl LabelledEpisode {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Index of the first step after a held object was let go.
    pub fn release_step(&self) -> Option<usize> {
        (1..self.contact.len()).find(|&t| self.contact[t - 1] && !self.contact[t])
    }

    /// Runs the estimator over the episode and returns its output after
    /// each step.
    pub fn estimates(&self, est: &Estimator) -> Vec<Estimate> {
        let mut state = est.initial_state(1);
        self.inputs.iter().map(|x| est.predict_one(&mut state, x)).collect()
    }

    /// The estimate held at the moment of release: the output after the last
    /// step with the object in hand.
    pub fn release_estimate(&self, est: &Estimator) -> Option<Estimate> {
        let t = self.release_step()?;
        Some(self.estimates(est)[t - 1])
    }
}

/// Lays episodes back to back into `streams` parallel sequences, each new
/// episode going to the currently shortest stream, and truncates all streams
/// to the shortest length.
fn pack_streams(episodes: &[&LabelledEpisode], streams: usize) -> (Vec<Array2<f64>>, Array2<f64>, Array2<f64>, Vec<Vec<f64>>) {
    let mut lanes: Vec<Vec<(usize, usize)>> = vec![Vec::new(); streams];
    let mut lens = vec![0usize; streams];
    for (i, ep) in episodes.iter().enumerate() {
        let k = (0..streams).min_by_key(|&k| lens[k]).unwrap_or(0);
        for t in 0..ep.len() {
            lanes[k].push((i, t));
        }
        lens[k] += ep.len();
    }
    let t_len = lens.iter().copied().min().unwrap_or(0);
    let mut inputs = Vec::with_capacity(t_len);
    let mut mass = Array2::zeros((t_len, streams));
    let mut contact = Array2::zeros((t_len, streams));
    let mut keep = vec![vec![1.0; streams]; t_len];
    for t in 0..t_len {
        let mut x = Array2::zeros((streams, ENTRY_DIM));
        for (b, lane) in lanes.iter().enumerate() {
            let (i, step) = lane[t];
            let ep = episodes[i];
            x.row_mut(b).as_slice_mut().unwrap().copy_from_slice(&ep.inputs[step]);
            mass[[t, b]] = ep.mass;
            contact[[t, b]] = if ep.contact[step] { 1.0 } else { 0.0 };
            if step == 0 {
                keep[t][b] = 0.0;
            }
        }
        inputs.push(x);
    }
    (inputs, mass, contact, keep)
}

impl EstimatorTrainer {
    /// Fits the estimator to whole episodes with truncated BPTT. Each epoch
    /// shuffles the episodes into `streams` parallel sequences and walks them
    /// in `chunk`-step windows, carrying the recurrent state from one window
    /// to the next. Returns the mean loss of the last epoch.
    pub fn fit_episodes<R: Rng + ?Sized>(
        &mut self,
        est: &mut Estimator,
        episodes: &[LabelledEpisode],
        streams: usize,
        chunk: usize,
        rng: &mut R,
    ) -> EstimatorLosses {
        let streams = streams.max(1);
        let chunk = chunk.max(1);
        for ep in episodes {
            if ep.is_empty() {
                continue;
            }
            let flat: Vec<f64> = ep.inputs.iter().flatten().copied().collect();
            est.norm.update(ArrayView2::from_shape((ep.len(), ENTRY_DIM), &flat).expect("episode shape"));
        }
        let adam_cfg = AdamConfig { learning_rate: self.cfg.learning_rate, ..AdamConfig::default() };
        let n = est.param_count();
        let split = est.lstm.params.len();
        let mut grad = vec![0.0; n];
        let mut params = vec![0.0; n];
        let mut order: Vec<&LabelledEpisode> = episodes.iter().filter(|e| !e.is_empty()).collect();
        let mut last = EstimatorLosses::default();
        for _ in 0..self.cfg.epochs.max(1) {
            order.shuffle(rng);
            let (inputs, mass, contact, keep) = pack_streams(&order, streams);
            let mut state = est.initial_state(streams);
            let mut sum = EstimatorLosses::default();
            let mut windows = 0;
            let mut start = 0;
            while start < inputs.len() {
                let end = (start + chunk).min(inputs.len());
                let batch = SequenceBatch {
                    init: state.clone(),
                    inputs: inputs[start..end].to_vec(),
                    mass: mass.slice(ndarray::s![start..end, ..]).to_owned(),
                    contact: contact.slice(ndarray::s![start..end, ..]).to_owned(),
                    keep: keep[start..end].to_vec(),
                };
                grad.iter_mut().for_each(|g| *g = 0.0);
                let l = loss(est, &batch, &self.cfg, Some(&mut grad));
                if l.total.is_finite() && grad.iter().all(|g| g.is_finite()) {
                    clip_grad_norm(&mut [&mut grad], self.cfg.max_grad_norm);
                    params[..split].copy_from_slice(&est.lstm.params);
                    params[split..].copy_from_slice(&est.head.params);
                    self.adam.step(&mut params, &grad, &adam_cfg);
                    est.lstm.params.copy_from_slice(&params[..split]);
                    est.head.params.copy_from_slice(&params[split..]);
                    sum.mass_mse += l.mass_mse;
                    sum.contact_bce += l.contact_bce;
                    sum.total += l.total;
                    sum.contact_steps += l.contact_steps;
                    windows += 1;
                }
                // Carry the state forward under the updated parameters.
                for t in start..end {
                    for (b, k) in keep[t].iter().enumerate() {
                        if *k == 0.0 {
                            state.reset_row(b);
                        }
                    }
                    est.lstm.step(&mut state, est.norm.normalize(inputs[t].view()).view());
                }
                start = end;
            }
            let k = windows.max(1) as f64;
            last = EstimatorLosses {
                mass_mse: sum.mass_mse / k,
                contact_bce: sum.contact_bce / k,
                total: sum.total / k,
                contact_steps: sum.contact_steps,
            };
        }
        last
    }
}

/// Runs the waypoint controller on `n` sampled tasks at `level` with masses
/// uniform on `mass_range` and records estimator inputs with labels.
/// Episode `i` draws from stream `i` of `seed`.
pub fn scripted_episodes(
    n: usize,
    seed: u64,
    level: f64,
    mass_range: (f64, f64),
    params: &EnvParams,
    ranges: &TaskRanges,
    curriculum: &CurriculumConfig,
) -> Result<Vec<LabelledEpisode>> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i);
            let mut cfg = sample(&mut rng, &Levels::uniform(level), ranges, curriculum)?;
            cfg.mass = rng.random_range(mass_range.0..=mass_range.1);
            scripted_episode(cfg, params)
        })
        .collect()
}

/// One waypoint-controller episode on a given task.
pub fn scripted_episode(config: EpisodeConfig, params: &EnvParams) -> Result<LabelledEpisode> {
    let mass = config.mass;
    let mut env = Env::new(config, params);
    let mut ctl = ScriptedController::new();
    let mut ep = LabelledEpisode { inputs: Vec::new(), mass, contact: Vec::new() };
    while !env.termination.is_done() {
        let action = ctl.act(&env, params);
        env.step(params, &action)?;
        ep.inputs.push(env.estimator_input(&params.sim));
        ep.contact.push(env.privileged().1);
    }
    Ok(ep)
}

/// Largest tool-point acceleration for which the world counts as static, m/s².
pub const ORACLE_ACCEL_LIMIT: f64 = 1e-3;

/// Object mass recovered from the arm's torque proxy in steady state.
///
/// With zero joint velocity and acceleration the tracking loop balances
/// `motor + link gravity + payload * unit torque = 0` at every joint, so the
/// payload follows by least squares over the joints with nonzero leverage.
/// Returns `None` when the object is not held or the arm is moving.
pub fn analytic_mass_oracle(world: &WorldState, sim: &SimParams) -> Option<f64> {
    if !world.gripper.is_attached() {
        return None;
    }
    let moving = world.arm.velocities.iter().chain(&world.arm.accelerations).any(|v| v.abs() > 1e-6);
    if world.ee_acceleration.norm() > ORACLE_ACCEL_LIMIT || moving {
        return None;
    }
    let frames = world.frames(sim);
    let link = frames.link_gravity_torques(&sim.arm);
    let unit = frames.unit_payload_torques();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..unit.len() {
        let saturated = world.arm.torques[i].abs() >= sim.arm.joints[i].torque_limit - 1e-12;
        if unit[i].abs() < 1e-6 || saturated {
            continue;
        }
        num -= unit[i] * (world.arm.torques[i] + link[i]);
        den += unit[i] * unit[i];
    }
    if den == 0.0 {
        return None;
    }
    Some(num / den - world.arm.flange_payload)
}
