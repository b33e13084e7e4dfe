//! Seeded evaluation episodes, metrics, record files and replay.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curriculum::{CurriculumConfig, Levels};
use crate::env::{scale_action, Env, EnvParams, HighLevelAction};
use crate::error::{Error, Result};
use crate::estimator::{Estimate, Estimator};
use crate::judge::{judge, FailureMode, JudgeSpec, Outcome, StepSummary};
use crate::policy::Policy;
use crate::reward::RewardBreakdown;
use crate::sampler::{sample, scenario_config, EpisodeConfig, Scenario, TaskRanges};
use crate::scripted::{do_nothing, random_action, ScriptedController};

/// Version of the episode-record layout.
pub const RECORD_VERSION: u32 = 1;
const RECORD_FORMAT: &str = "dynpick-episodes";

/// Where evaluation tasks come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskSource {
    Scenario { scenario: Scenario },
    /// Randomised tasks at fixed levels, optionally with a fixed mass.
    Levels { level: f64, mass: Option<f64> },
}

impl TaskSource {
    pub fn draw(&self, rng: &mut ChaCha8Rng, ranges: &TaskRanges, curriculum: &CurriculumConfig) -> Result<EpisodeConfig> {
        match self {
            TaskSource::Scenario { scenario } => scenario_config(*scenario).instantiate(rng, ranges),
            TaskSource::Levels { level, mass } => {
                let mut cfg = sample(rng, &Levels::uniform(*level), ranges, curriculum)?;
                if let Some(m) = mass {
                    cfg.mass = *m;
                }
                Ok(cfg)
            }
        }
    }
}

/// The thing choosing actions.
#[derive(Clone, Debug)]
pub enum Controller {
    Trained { policy: Box<Policy>, estimator: Box<Estimator>, use_estimator: bool, deterministic: bool },
    Scripted,
    Random,
    DoNothing,
}

impl Controller {
    pub fn name(&self) -> &'static str {
        match self {
            Controller::Trained { .. } => "trained",
            Controller::Scripted => "scripted",
            Controller::Random => "random",
            Controller::DoNothing => "do_nothing",
        }
    }
}

/// Speeds at the gripper close that attached the object.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraspEvent {
    pub time: f64,
    pub base_speed: f64,
    pub relative_speed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub action: HighLevelAction,
    pub reward: RewardBreakdown,
    pub summary: StepSummary,
    /// Estimates the controller saw when choosing `action`.
    pub estimates: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub index: u64,
    pub controller: String,
    pub config: EpisodeConfig,
    pub judge: JudgeSpec,
    pub steps: Vec<StepLog>,
    pub outcome: Outcome,
    pub completion_time: Option<f64>,
    pub grasp: Option<GraspEvent>,
}

impl EpisodeRecord {
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward.total).sum()
    }

    /// Per-term sums over the episode, in first-seen order.
    pub fn term_totals(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = Vec::new();
        for s in &self.steps {
            for (term, v) in &s.reward.terms {
                match out.iter_mut().find(|(n, _)| n == term.name()) {
                    Some(e) => e.1 += v,
                    None => out.push((term.name().to_string(), *v)),
                }
            }
        }
        out
    }

    /// Re-judges the stored summaries.
    pub fn rejudge(&self) -> Outcome {
        let summaries: Vec<StepSummary> = self.steps.iter().map(|s| s.summary.clone()).collect();
        judge(&self.judge, &summaries)
    }
}

fn grasp_event(steps: &[StepLog]) -> Option<GraspEvent> {
    steps.iter().find_map(|s| {
        let [base, rel] = s.summary.close_event?;
        s.summary.attached.then_some(GraspEvent { time: s.summary.time, base_speed: base, relative_speed: rel })
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub episodes: usize,
    pub seed: u64,
    pub env: EnvParams,
    pub ranges: TaskRanges,
    pub curriculum: CurriculumConfig,
    /// Thresholds for counting a grasp as dynamic.
    pub dynamic_base_speed: f64,
    pub dynamic_relative_speed: f64,
    /// Keep per-step logs in the returned records.
    pub keep_steps: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes: 100,
            seed: 0,
            env: EnvParams::default(),
            ranges: TaskRanges::default(),
            curriculum: CurriculumConfig::default(),
            dynamic_base_speed: 0.3,
            dynamic_relative_speed: 0.3,
            keep_steps: true,
        }
    }
}

/// Runs episode `index` of an evaluation.
pub fn run_episode(controller: &Controller, task: &TaskSource, cfg: &EvalConfig, index: u64) -> Result<EpisodeRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);
    let config = task.draw(&mut rng, &cfg.ranges, &cfg.curriculum)?;
    let params = &cfg.env;
    let mut env = Env::new(config.clone(), params);
    let spec = env.tracker.spec().clone();
    let mut scripted = ScriptedController::new();
    let mut lstm = match controller {
        Controller::Trained { estimator, .. } => Some(estimator.initial_state(1)),
        _ => None,
    };
    let mut estimate = Estimate::prior();
    let mut obs = Vec::new();
    let mut steps = Vec::new();
    loop {
        let seen = match controller {
            Controller::Trained { use_estimator: true, .. } => estimate.as_pair(),
            _ => Estimate::prior().as_pair(),
        };
        let action = match controller {
            Controller::Trained { policy, deterministic, .. } => {
                env.observe(&params.sim, seen, &mut obs);
                let raw = Array2::from_shape_vec((1, obs.len()), obs.clone()).expect("row");
                let step = policy.act(policy.normalize(raw.view()).view(), *deterministic, &mut rng);
                scale_action(step.actions.row(0).as_slice().expect("row"), &params.sim.arm)
            }
            Controller::Scripted => scripted.act(&env, params),
            Controller::Random => random_action(&mut rng, &params.sim.arm),
            Controller::DoNothing => do_nothing(&params.sim),
        };
        let result = env.step(params, &action)?;
        if let (Controller::Trained { estimator, .. }, Some(state)) = (controller, lstm.as_mut()) {
            estimate = estimator.predict_one(state, &env.estimator_input(&params.sim));
        }
        steps.push(StepLog { action, reward: result.reward, summary: result.summary, estimates: seen });
        if result.termination.is_done() {
            break;
        }
    }
    let outcome = env.tracker.outcome();
    let completion_time = match outcome {
        Outcome::Success { completion_time } => Some(completion_time),
        Outcome::Failure { .. } => None,
    };
    let grasp = grasp_event(&steps);
    if !cfg.keep_steps {
        steps.clear();
    }
    Ok(EpisodeRecord {
        seed: cfg.seed,
        index,
        controller: controller.name().to_string(),
        config,
        judge: spec,
        steps,
        outcome,
        completion_time,
        grasp,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicGraspReport {
    pub base_speed_threshold: f64,
    pub relative_speed_threshold: f64,
    /// Successful episodes with a recorded grasp.
    pub successes: usize,
    pub dynamic: usize,
    pub fraction: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub controller: String,
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub completion_time_mean: Option<f64>,
    pub completion_time_std: Option<f64>,
    pub failures: BTreeMap<String, usize>,
    pub dynamic_grasp: DynamicGraspReport,
}

/// Aggregates records; the order of `records` does not matter.
pub fn metrics(records: &[EpisodeRecord], cfg: &EvalConfig) -> MetricsReport {
    let mut sorted: Vec<&EpisodeRecord> = records.iter().collect();
    sorted.sort_by_key(|r| (r.seed, r.index));
    let mut failures: BTreeMap<String, usize> = FailureMode::ALL.iter().map(|m| (m.name().to_string(), 0)).collect();
    let mut times = Vec::new();
    let mut dynamic = DynamicGraspReport {
        base_speed_threshold: cfg.dynamic_base_speed,
        relative_speed_threshold: cfg.dynamic_relative_speed,
        successes: 0,
        dynamic: 0,
        fraction: None,
    };
    for r in &sorted {
        match &r.outcome {
            Outcome::Success { completion_time } => {
                times.push(*completion_time);
                if let Some(g) = r.grasp {
                    dynamic.successes += 1;
                    if g.base_speed > cfg.dynamic_base_speed && g.relative_speed < cfg.dynamic_relative_speed {
                        dynamic.dynamic += 1;
                    }
                }
            }
            Outcome::Failure { mode } => *failures.entry(mode.name().to_string()).or_insert(0) += 1,
        }
    }
    dynamic.fraction = (dynamic.successes > 0).then(|| dynamic.dynamic as f64 / dynamic.successes as f64);
    let n = times.len() as f64;
    let mean = (!times.is_empty()).then(|| times.iter().sum::<f64>() / n);
    let std = mean.map(|m| (times.iter().map(|t| (t - m).powi(2)).sum::<f64>() / n).sqrt());
    MetricsReport {
        controller: sorted.first().map(|r| r.controller.clone()).unwrap_or_default(),
        episodes: sorted.len(),
        successes: times.len(),
        success_rate: if sorted.is_empty() { 0.0 } else { times.len() as f64 / sorted.len() as f64 },
        completion_time_mean: mean,
        completion_time_std: std,
        failures,
        dynamic_grasp: dynamic,
    }
}

/// Runs `cfg.episodes` independent episodes in parallel.
pub fn run_eval(controller: &Controller, task: &TaskSource, cfg: &EvalConfig) -> Result<(MetricsReport, Vec<EpisodeRecord>)> {
    let records: Vec<EpisodeRecord> = (0..cfg.episodes as u64)
        .into_par_iter()
        .map(|i| run_episode(controller, task, cfg, i))
        .collect::<Result<_>>()?;
    Ok((metrics(&records, cfg), records))
}

#[derive(Serialize, Deserialize)]
struct RecordHeader {
    format: String,
    version: u32,
}

/// Writes a version header line followed by one record per line.
pub fn write_records(path: &Path, records: &[EpisodeRecord]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(&mut w, &RecordHeader { format: RECORD_FORMAT.into(), version: RECORD_VERSION })?;
    w.write_all(b"\n")?;
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<EpisodeRecord>> {
    let mut lines = BufReader::new(std::fs::File::open(path)?).lines();
    let header: RecordHeader = match lines.next() {
        Some(line) => serde_json::from_str(&line?).map_err(|e| Error::Record(format!("bad header: {e}")))?,
        None => return Err(Error::Record("empty record file".into())),
    };
    if header.format != RECORD_FORMAT {
        return Err(Error::Record(format!("unknown format {:?}", header.format)));
    }
    if header.version != RECORD_VERSION {
        return Err(Error::VersionMismatch { expected: RECORD_VERSION, found: header.version });
    }
    let mut out = Vec::new();
    for line in lines {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// First step at which a replay departs from the record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub step: usize,
    pub field: String,
}

/// Re-simulates the recorded actions from the recorded configuration and
/// compares every step bitwise. `None` means the replay matched.
pub fn replay(record: &EpisodeRecord, params: &EnvParams) -> Result<Option<Divergence>> {
    let mut env = Env::new(record.config.clone(), params);
    let diverged = |step: usize, field: &str| Ok(Some(Divergence { step, field: field.to_string() }));
    if env.tracker.spec() != &record.judge {
        return diverged(0, "judge");
    }
    for (i, logged) in record.steps.iter().enumerate() {
        if env.termination.is_done() {
            return diverged(i, "termination");
        }
        let r = env.step(params, &logged.action)?;
        if r.reward != logged.reward {
            return diverged(i, "reward");
        }
        if r.summary != logged.summary {
            return diverged(i, "summary");
        }
    }
    if !env.termination.is_done() && !record.steps.is_empty() {
        return diverged(record.steps.len(), "termination");
    }
    if env.tracker.outcome() != record.outcome {
        return diverged(record.steps.len(), "outcome");
    }
    Ok(None)
}

#[cfg(test)]
mod tests;
