//! PPO training loop over a batch of environments.
//!
//! Each iteration collects `rollout_steps` decisions from every environment,
//! updates the policy with PPO, fits the payload estimator on the same chunk
//! with privileged labels, and lets the curriculum evaluate. The estimator's
//! outputs enter the observation as plain inputs, so no gradient crosses
//! between the two networks.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::curriculum::{CurriculumConfig, CurriculumState, CurriculumTrace, Levels};
use crate::env::{observation_dim, scale_action, Env, EnvParams, Termination, ACTION_DIM, ENTRY_DIM};
use crate::error::{Error, Result};
use crate::estimator::{Estimate, Estimator, EstimatorConfig, EstimatorLosses, EstimatorTrainer, SequenceBatch};
use crate::nn::{LstmState, RunningNorm};
use crate::policy::{Policy, PolicyConfig};
use crate::ppo::{gae, PpoBatch, PpoConfig, PpoStats, PpoTrainer};
use crate::sampler::{sample, EpisodeConfig, TaskRanges};

/// Which task instances the environments draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TaskSchedule {
    /// Levels follow the success-rate curriculum.
    Curriculum,
    /// Levels stay at `level`; `mass` overrides the sampled mass.
    Fixed { level: f64, mass: Option<f64> },
}

impl TaskSchedule {
    /// Levels fixed at 0.10 with a 0.5 kg object.
    pub fn reduced() -> Self {
        TaskSchedule::Fixed { level: 0.10, mass: Some(0.5) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    pub envs: usize,
    /// Decisions per environment per iteration.
    pub rollout_steps: usize,
    pub checkpoint_interval: u64,
    /// Worker threads for stepping; 1 steps in the calling thread.
    pub threads: usize,
    /// Feed the estimator's outputs to the policy; otherwise the prior.
    pub use_estimator: bool,
    pub schedule: TaskSchedule,
    pub env: EnvParams,
    pub policy: PolicyConfig,
    pub ppo: PpoConfig,
    pub estimator: EstimatorConfig,
    pub curriculum: CurriculumConfig,
    pub ranges: TaskRanges,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            envs: 32,
            rollout_steps: 64,
            checkpoint_interval: 50,
            threads: 1,
            use_estimator: true,
            schedule: TaskSchedule::Curriculum,
            env: EnvParams::default(),
            policy: PolicyConfig::default(),
            ppo: PpoConfig::default(),
            estimator: EstimatorConfig::default(),
            curriculum: CurriculumConfig::default(),
            ranges: TaskRanges::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.envs == 0 || self.rollout_steps == 0 || self.checkpoint_interval == 0 {
            return Err(Error::InvalidConfig("envs, rollout_steps and checkpoint_interval must be positive".into()));
        }
        if let TaskSchedule::Fixed { level, mass } = self.schedule {
            if !(0.0..=1.0).contains(&level) || mass.is_some_and(|m| !(m > 0.0)) {
                return Err(Error::InvalidConfig(format!("bad fixed schedule {:?}", self.schedule)));
            }
        }
        self.curriculum.validate()
    }

    /// Levels episodes are drawn at, given the curriculum's levels.
    pub fn effective_levels(&self, curriculum_levels: Levels) -> Levels {
        match self.schedule {
            TaskSchedule::Curriculum => curriculum_levels,
            TaskSchedule::Fixed { level, .. } => Levels::uniform(level),
        }
    }

    /// Draws one episode for the current levels.
    pub fn draw_episode(&self, rng: &mut ChaCha8Rng, curriculum_levels: Levels) -> Result<EpisodeConfig> {
        let levels = self.effective_levels(curriculum_levels);
        match self.schedule {
            TaskSchedule::Curriculum => sample(rng, &levels, &self.ranges, &self.curriculum),
            TaskSchedule::Fixed { mass, .. } => {
                let mut cfg = sample(rng, &levels, &self.ranges, &self.curriculum)?;
                if let Some(m) = mass {
                    cfg.mass = m;
                }
                Ok(cfg)
            }
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u64,
    /// Decisions taken so far, over all environments.
    pub total_steps: u64,
    pub mean_reward: f64,
    pub terms: BTreeMap<String, f64>,
    pub episodes: usize,
    pub mean_return: Option<f64>,
    pub mean_length: Option<f64>,
    pub success_rate: Option<f64>,
    pub pick_rate: Option<f64>,
    pub place_rate: Option<f64>,
    pub release_rate: Option<f64>,
    pub levels: Levels,
    pub curriculum: Option<CurriculumTrace>,
    pub ppo: PpoStats,
    pub estimator: EstimatorLosses,
}

/// Everything needed to continue training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub config: TrainConfig,
    pub iteration: u64,
    pub total_steps: u64,
    pub policy: Policy,
    pub ppo: PpoTrainer,
    pub estimator: Estimator,
    pub estimator_trainer: EstimatorTrainer,
    pub curriculum: CurriculumState,
}

struct Slot {
    env: Env,
    rng: ChaCha8Rng,
    estimate: Estimate,
    ret: f64,
}

/// Finished-episode bookkeeping within one iteration.
#[derive(Default)]
struct EpisodeTally {
    episodes: usize,
    successes: usize,
    returns: f64,
    lengths: f64,
    pick: (usize, usize),
    place: (usize, usize),
    release: (usize, usize),
}

fn rate((hits, tries): (usize, usize)) -> Option<f64> {
    (tries > 0).then(|| hits as f64 / tries as f64)
}

const ENV_STREAM: u64 = 1 << 40;

pub struct Trainer {
    pub state: TrainerState,
    slots: Vec<Slot>,
    est_state: LstmState,
    pool: Option<rayon::ThreadPool>,
    obs_buf: Vec<f64>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let obs_dim = observation_dim(config.env.history_len);
        let policy = Policy::new(&config.policy, obs_dim, &config.env.sim.arm, &mut rng);
        let estimator = Estimator::new(&config.estimator, &mut rng);
        let state = TrainerState {
            ppo: PpoTrainer::new(config.ppo.clone(), &policy),
            estimator_trainer: EstimatorTrainer::new(config.estimator.clone(), &estimator),
            curriculum: CurriculumState::new(&config.curriculum),
            config,
            iteration: 0,
            total_steps: 0,
            policy,
            estimator,
        };
        Self::from_state(state)
    }

    /// Continues from a saved state. Environments restart with fresh episodes
    /// drawn from streams keyed on the resume iteration.
    pub fn from_state(state: TrainerState) -> Result<Self> {
        state.config.validate()?;
        let cfg = &state.config;
        let obs_dim = observation_dim(cfg.env.history_len);
        if state.policy.obs_dim() != obs_dim {
            return Err(Error::InvalidConfig(format!(
                "policy expects {} inputs, environment produces {obs_dim}",
                state.policy.obs_dim()
            )));
        }
        let levels = state.curriculum.levels;
        let mut slots = Vec::with_capacity(cfg.envs);
        for i in 0..cfg.envs {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(ENV_STREAM + (state.iteration << 20) + i as u64);
            let ep = cfg.draw_episode(&mut rng, levels)?;
            slots.push(Slot { env: Env::new(ep, &cfg.env), rng, estimate: Estimate::prior(), ret: 0.0 });
        }
        let pool = if cfg.threads > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(cfg.threads)
                    .build()
                    .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?,
            )
        } else {
            None
        };
        let est_state = state.estimator.initial_state(cfg.envs);
        Ok(Self { state, slots, est_state, pool, obs_buf: Vec::with_capacity(obs_dim) })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_state(checkpoint::load(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.state)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.state.config
    }

    fn estimates_for(&self, slot: &Slot) -> (f64, f64) {
        if self.state.config.use_estimator {
            slot.estimate.as_pair()
        } else {
            Estimate::prior().as_pair()
        }
    }

    /// Runs one iteration and returns its log record.
    pub fn iterate(&mut self) -> Result<IterationRecord> {
        let cfg = self.state.config.clone();
        let iteration = self.state.iteration + 1;
        let n_env = cfg.envs;
        let t_len = cfg.rollout_steps;
        let obs_dim = self.state.policy.obs_dim();
        let n = n_env * t_len;

        let mut act_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        act_rng.set_stream(2 * iteration);
        let mut update_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        update_rng.set_stream(2 * iteration + 1);

        // Rows are laid out step-major: row = t * n_env + e.
        let mut obs = Array2::zeros((n, obs_dim));
        let mut actions = Array2::zeros((n, ACTION_DIM));
        let mut log_probs = vec![0.0; n];
        let mut values = vec![0.0; n];
        let mut rewards = vec![0.0; n];
        let mut ends = vec![false; n];
        // (row, raw final observation) for cut-off episodes needing a bootstrap.
        let mut finals: Vec<(usize, Vec<f64>)> = Vec::new();
        let mut next_norm: RunningNorm = self.state.policy.obs_norm.clone();

        let est_init = self.est_state.clone();
        let mut est_inputs = Vec::with_capacity(t_len);
        let mut est_mass = Array2::zeros((t_len, n_env));
        let mut est_contact = Array2::zeros((t_len, n_env));
        let mut keep = vec![vec![1.0; n_env]; t_len];

        let mut term_sums: BTreeMap<&'static str, f64> = BTreeMap::new();
        let mut tally = EpisodeTally::default();
        let mut reward_sum = 0.0;
        let mut raw = Array2::zeros((n_env, obs_dim));

        for t in 0..t_len {
            for e in 0..n_env {
                let est = self.estimates_for(&self.slots[e]);
                self.slots[e].env.observe(&cfg.env.sim, est, &mut self.obs_buf);
                raw.row_mut(e).as_slice_mut().unwrap().copy_from_slice(&self.obs_buf);
            }
            next_norm.update(raw.view());
            let normed = self.state.policy.normalize(raw.view());
            let step = self.state.policy.act(normed.view(), false, &mut act_rng);
            let rows = t * n_env..(t + 1) * n_env;
            obs.slice_mut(ndarray::s![rows.clone(), ..]).assign(&normed);
            actions.slice_mut(ndarray::s![rows.clone(), ..]).assign(&step.actions);
            log_probs[rows.clone()].copy_from_slice(&step.log_probs);
            values[rows.clone()].copy_from_slice(&step.values);

            let params = &cfg.env;
            let acts = &step.actions;
            let run = |(e, slot): (usize, &mut Slot)| -> Result<_> {
                let cmd = scale_action(acts.row(e).as_slice().unwrap(), &params.sim.arm);
                if !cmd.within_limits(&params.sim.arm) {
                    return Err(Error::Diverged(format!("scaled action outside limits: {cmd:?}")));
                }
                slot.env.step(params, &cmd)
            };
            let results: Vec<Result<_>> = match &self.pool {
                Some(pool) => pool.install(|| self.slots.par_iter_mut().enumerate().map(run).collect()),
                None => self.slots.iter_mut().enumerate().map(run).collect(),
            };

            let mut x = Array2::zeros((n_env, ENTRY_DIM));
            let mut terminations = Vec::with_capacity(n_env);
            for (e, res) in results.into_iter().enumerate() {
                let res = res?;
                let row = t * n_env + e;
                let r = res.reward.total;
                if !r.is_finite() {
                    return Err(Error::NonFinite("reward"));
                }
                rewards[row] = r;
                reward_sum += r;
                for (term, v) in &res.reward.terms {
                    *term_sums.entry(term.name()).or_insert(0.0) += v;
                }
                let slot = &mut self.slots[e];
                slot.ret += r;
                x.row_mut(e).as_slice_mut().unwrap().copy_from_slice(&slot.env.estimator_input(&cfg.env.sim));
                let (mass, attached) = slot.env.privileged();
                est_mass[[t, e]] = mass;
                est_contact[[t, e]] = if attached { 1.0 } else { 0.0 };
                terminations.push(res.termination);
            }
            let preds = self.state.estimator.predict(&mut self.est_state, x.view());
            est_inputs.push(x);

            for (e, term) in terminations.into_iter().enumerate() {
                self.slots[e].estimate = preds[e];
                if !term.is_done() {
                    continue;
                }
                let row = t * n_env + e;
                ends[row] = true;
                if term.bootstraps() {
                    let est = self.estimates_for(&self.slots[e]);
                    self.slots[e].env.observe(&cfg.env.sim, est, &mut self.obs_buf);
                    finals.push((row, self.obs_buf.clone()));
                }
                let levels = self.state.curriculum.levels;
                let slot = &mut self.slots[e];
                let sub = slot.env.tracker.subgoals();
                self.state.curriculum.record_episode(sub);
                tally.episodes += 1;
                tally.successes += usize::from(term == Termination::Success);
                tally.returns += slot.ret;
                tally.lengths += slot.env.decisions as f64;
                tally.pick.1 += 1;
                tally.pick.0 += usize::from(sub.pick);
                if sub.pick {
                    tally.place.1 += 1;
                    tally.place.0 += usize::from(sub.place);
                    if sub.place {
                        tally.release.1 += 1;
                        tally.release.0 += usize::from(sub.release);
                    }
                }
                let ep = cfg.draw_episode(&mut slot.rng, levels)?;
                slot.env = Env::new(ep, &cfg.env);
                slot.estimate = Estimate::prior();
                slot.ret = 0.0;
                self.est_state.reset_row(e);
                if t + 1 < t_len {
                    keep[t + 1][e] = 0.0;
                }
            }
        }

        // Bootstrap values: final observations of cut-off episodes and the
        // observation after the last step of every running episode.
        let mut tail = Array2::zeros((n_env, obs_dim));
        for e in 0..n_env {
            let est = self.estimates_for(&self.slots[e]);
            self.slots[e].env.observe(&cfg.env.sim, est, &mut self.obs_buf);
            tail.row_mut(e).as_slice_mut().unwrap().copy_from_slice(&self.obs_buf);
        }
        let tail_values = self.state.policy.values(self.state.policy.normalize(tail.view()).view());
        let mut final_values = BTreeMap::new();
        if !finals.is_empty() {
            let mut m = Array2::zeros((finals.len(), obs_dim));
            for (i, (_, o)) in finals.iter().enumerate() {
                m.row_mut(i).as_slice_mut().unwrap().copy_from_slice(o);
            }
            let v = self.state.policy.values(self.state.policy.normalize(m.view()).view());
            for ((row, _), v) in finals.iter().zip(v) {
                final_values.insert(*row, v);
            }
        }

        let mut advantages = vec![0.0; n];
        let mut returns = vec![0.0; n];
        for e in 0..n_env {
            let idx: Vec<usize> = (0..t_len).map(|t| t * n_env + e).collect();
            let r: Vec<f64> = idx.iter().map(|&i| rewards[i]).collect();
            let v: Vec<f64> = idx.iter().map(|&i| values[i]).collect();
            let d: Vec<bool> = idx.iter().map(|&i| ends[i]).collect();
            let nv: Vec<f64> = (0..t_len)
                .map(|t| {
                    let row = idx[t];
                    if ends[row] {
                        final_values.get(&row).copied().unwrap_or(0.0)
                    } else if t + 1 < t_len {
                        v[t + 1]
                    } else {
                        tail_values[e]
                    }
                })
                .collect();
            let (a, ret) = gae(&r, &v, &nv, &d, cfg.ppo.gamma, cfg.ppo.lambda);
            for (k, &i) in idx.iter().enumerate() {
                advantages[i] = a[k];
                returns[i] = ret[k];
            }
        }

        let batch = PpoBatch { obs, actions, old_log_probs: log_probs, old_values: values, advantages, returns };
        let ppo_stats = self.state.ppo.update(&mut self.state.policy, &batch, &mut update_rng)?;
        self.state.policy.obs_norm = next_norm;

        let seq = SequenceBatch { init: est_init, inputs: est_inputs, mass: est_mass, contact: est_contact, keep };
        let est_losses =
            self.state.estimator_trainer.train_supervised(&mut self.state.estimator, &[seq], &mut update_rng);

        let trace = match cfg.schedule {
            TaskSchedule::Curriculum => self.state.curriculum.maybe_advance(iteration, &cfg.curriculum),
            TaskSchedule::Fixed { .. } => None,
        };

        self.state.iteration = iteration;
        self.state.total_steps += n as u64;
        let nf = n as f64;
        let ep = tally.episodes as f64;
        Ok(IterationRecord {
            iteration,
            total_steps: self.state.total_steps,
            mean_reward: reward_sum / nf,
            terms: term_sums.into_iter().map(|(k, v)| (k.to_string(), v / nf)).collect(),
            episodes: tally.episodes,
            mean_return: (tally.episodes > 0).then(|| tally.returns / ep),
            mean_length: (tally.episodes > 0).then(|| tally.lengths / ep),
            success_rate: rate((tally.successes, tally.episodes)),
            pick_rate: rate(tally.pick),
            place_rate: rate(tally.place),
            release_rate: rate(tally.release),
            levels: self.state.config.effective_levels(self.state.curriculum.levels),
            curriculum: trace,
            ppo: ppo_stats,
            estimator: est_losses,
        })
    }

    /// Runs `iterations` more iterations, appending to `out/train.jsonl` and
    /// writing a checkpoint every `checkpoint_interval` iterations and after
    /// the last one. `on_record` may stop the run early by returning false.
    pub fn run<F>(&mut self, iterations: u64, out: &Path, mut on_record: F) -> Result<Vec<PathBuf>>
    where
        F: FnMut(&IterationRecord) -> bool,
    {
        std::fs::create_dir_all(out)?;
        let file = OpenOptions::new().create(true).append(true).open(out.join("train.jsonl"))?;
        let mut log_file = BufWriter::new(file);
        let mut saved = Vec::new();
        let end = self.state.iteration + iterations;
        while self.state.iteration < end {
            let record = self.iterate()?;
            serde_json::to_writer(&mut log_file, &record)?;
            log_file.write_all(b"\n")?;
            log_file.flush()?;
            let keep_going = on_record(&record);
            let last = self.state.iteration == end || !keep_going;
            if self.state.iteration.is_multiple_of(self.state.config.checkpoint_interval) || last {
                let path = checkpoint_path(out, self.state.iteration);
                self.save(&path)?;
                log::debug!("saved {}", path.display());
                saved.push(path);
            }
            if !keep_going {
                break;
            }
        }
        Ok(saved)
    }
}

pub fn checkpoint_path(out: &Path, iteration: u64) -> PathBuf {
    out.join(format!("ckpt_{iteration:06}.dpk"))
}

/// Reads a training log back.
pub fn read_log(path: &Path) -> Result<Vec<IterationRecord>> {
    use std::io::BufRead;
    let f = std::io::BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
