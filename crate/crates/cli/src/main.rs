use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dynpick::arm_motion::{sample_plan, DEFAULT_DURATION_RANGE};
use dynpick::config::Config;
use dynpick::eval::{read_records, replay, run_eval, write_records, Controller, TaskSource};
use dynpick::sampler::Scenario;
use dynpick::trainer::{TrainerState, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "dynpick", version, about = "Train and evaluate dynamic legged pick-and-place policies")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy with PPO.
    Train(TrainArgs),
    /// Evaluate a checkpoint or a baseline controller.
    Eval(EvalArgs),
    /// Re-simulate recorded episodes and report the first divergence.
    Replay(ReplayArgs),
    /// Per-term reward totals of a recorded episode.
    InspectReward(InspectArgs),
    /// Sample random arm motion plans and their time tables.
    GenArmMotions(ArmArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    envs: Option<usize>,
    #[arg(long, default_value_t = 100)]
    iters: u64,
    /// Continue from a checkpoint; its configuration is used.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    Scripted,
    Random,
    DoNothing,
}

#[derive(Args)]
struct EvalArgs {
    /// Trained checkpoint to evaluate.
    #[arg(long, conflicts_with = "baseline")]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    baseline: Option<Baseline>,
    /// Named scenario; otherwise randomised tasks at `--level`.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    level: f64,
    /// Fixed object mass for randomised tasks, kg.
    #[arg(long)]
    mass: Option<f64>,
    #[arg(long)]
    episodes: Option<usize>,
    /// Sample actions instead of using the policy mean.
    #[arg(long)]
    stochastic: bool,
}

#[derive(Args)]
struct ReplayArgs {
    records: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    records: PathBuf,
    #[arg(long, default_value_t = 0)]
    episode: usize,
    /// Print every step instead of episode totals.
    #[arg(long)]
    steps: bool,
}

#[derive(Args)]
struct ArmArgs {
    #[arg(long, default_value_t = 10)]
    count: usize,
    #[arg(long, default_value_t = 0.01)]
    dt: f64,
}

fn main() {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log_level).init();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(p) => Config::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        config.train.seed = seed;
        config.eval.seed = seed;
    }
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("runs"));
    match cli.command {
        Command::Train(a) => train(config, &out, a),
        Command::Eval(a) => eval(config, &out, a),
        Command::Replay(a) => replay_cmd(&config, a),
        Command::InspectReward(a) => inspect(a),
        Command::GenArmMotions(a) => gen_arm_motions(&config, cli.seed.unwrap_or(0), cli.out.as_deref(), a),
    }
}

fn train(mut config: Config, out: &Path, a: TrainArgs) -> Result<()> {
    let mut trainer = match &a.resume {
        Some(p) => Trainer::load(p).with_context(|| format!("resuming from {}", p.display()))?,
        None => {
            if let Some(e) = a.envs {
                config.train.envs = e;
            }
            Trainer::new(config.train)?
        }
    };
    log::info!("training {} iterations with {} envs into {}", a.iters, trainer.config().envs, out.display());
    let saved = trainer.run(a.iters, out, |r| {
        log::info!(
            "iter {} reward {:.4} episodes {} success {:?} levels {:.2}/{:.2}/{:.2}",
            r.iteration,
            r.mean_reward,
            r.episodes,
            r.success_rate,
            r.levels.pick,
            r.levels.place,
            r.levels.release
        );
        true
    })?;
    for p in saved {
        println!("{}", p.display());
    }
    Ok(())
}

fn eval(config: Config, out: &Path, a: EvalArgs) -> Result<()> {
    let mut cfg = config.eval;
    if let Some(n) = a.episodes {
        cfg.episodes = n;
    }
    let controller = match (&a.checkpoint, a.baseline) {
        (Some(path), _) => {
            let state: TrainerState =
                dynpick::checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
            cfg.env = state.config.env.clone();
            Controller::Trained {
                policy: Box::new(state.policy),
                estimator: Box::new(state.estimator),
                use_estimator: state.config.use_estimator,
                deterministic: !a.stochastic,
            }
        }
        (None, Some(Baseline::Scripted)) => Controller::Scripted,
        (None, Some(Baseline::Random)) => Controller::Random,
        (None, Some(Baseline::DoNothing)) => Controller::DoNothing,
        (None, None) => bail!("pass --checkpoint or --baseline"),
    };
    let task = match &a.scenario {
        Some(name) => TaskSource::Scenario { scenario: name.parse::<Scenario>()? },
        None => TaskSource::Levels { level: a.level, mass: a.mass },
    };
    let (report, records) = run_eval(&controller, &task, &cfg)?;
    std::fs::create_dir_all(out)?;
    write_records(&out.join("episodes.jsonl"), &records)?;
    let text = serde_json::to_string_pretty(&report)?;
    std::fs::write(out.join("metrics.json"), &text)?;
    println!("{text}");
    Ok(())
}

fn replay_cmd(config: &Config, a: ReplayArgs) -> Result<()> {
    let records = read_records(&a.records)?;
    let mut diverged = 0;
    for r in &records {
        match replay(r, &config.eval.env)? {
            None => println!("{{\"index\":{},\"divergence\":null}}", r.index),
            Some(d) => {
                diverged += 1;
                println!("{{\"index\":{},\"divergence\":{}}}", r.index, serde_json::to_string(&d)?);
            }
        }
    }
    if diverged > 0 {
        bail!("{diverged} of {} records diverged", records.len());
    }
    Ok(())
}

fn inspect(a: InspectArgs) -> Result<()> {
    let records = read_records(&a.records)?;
    let r = records.get(a.episode).with_context(|| format!("no episode {} (file has {})", a.episode, records.len()))?;
    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    if a.steps {
        for (i, s) in r.steps.iter().enumerate() {
            let terms: serde_json::Map<String, serde_json::Value> =
                s.reward.terms.iter().map(|(t, v)| (t.name().to_string(), (*v).into())).collect();
            let line = serde_json::json!({
                "step": i, "time": s.summary.time, "stage": s.reward.stage, "phase": s.summary.phase,
                "total": s.reward.total, "terms": terms,
            });
            writeln!(w, "{line}")?;
        }
    } else {
        writeln!(w, "episode {} outcome {:?} total {:.4}", r.index, r.outcome, r.total_reward())?;
        for (name, v) in r.term_totals() {
            writeln!(w, "{name:<24} {v:+.4}")?;
        }
    }
    Ok(())
}

fn gen_arm_motions(config: &Config, seed: u64, out: Option<&Path>, a: ArmArgs) -> Result<()> {
    let arm = &config.train.env.sim.arm;
    let lower = std::array::from_fn(|i| arm.joints[i].lower);
    let upper = std::array::from_fn(|i| arm.joints[i].upper);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w: Box<dyn Write> = match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Box::new(std::io::BufWriter::new(std::fs::File::create(dir.join("arm_motions.jsonl"))?))
        }
        None => Box::new(std::io::stdout().lock()),
    };
    for i in 0..a.count {
        let plan = sample_plan(&mut rng, &lower, &upper, DEFAULT_DURATION_RANGE)?;
        let table = plan.tabulate(a.dt, plan.longest_duration());
        writeln!(w, "{}", serde_json::json!({ "plan": i, "spec": plan, "samples": table }))?;
    }
    w.flush()?;
    Ok(())
}
