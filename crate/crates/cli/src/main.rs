use std::error::Error;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use latplan_core::agent::{load_checkpoint, read_metrics, run_experiment, Agent, OracleBench, TrainConfig};
use latplan_core::envs::{EnvKind, EnvSpec};
use latplan_core::planner::{PlanMode, PlannerConfig};

#[derive(Parser)]
#[command(name = "latplan", version, about = "Latent world models with decision-time planning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a training experiment described by a key = value config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config planning mode.
        #[arg(long)]
        mode: Option<PlanMode>,
        /// Overrides the config output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Noise-free evaluation of a saved agent.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Plans on the true dynamics with a fitted reference critic.
    PlanBench {
        #[arg(long)]
        mode: PlanMode,
        #[arg(long)]
        env: EnvKind,
        #[arg(long, default_value_t = 20)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Regression steps for the reference critic.
        #[arg(long, default_value_t = 4000)]
        critic_steps: usize,
    },
    /// Splits a metrics CSV into one `env_step value` file per metric.
    Plot {
        #[arg(long)]
        metrics: PathBuf,
        /// Defaults to a `plot` directory next to the metrics file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn train(config: &Path, seed: Option<u64>, mode: Option<PlanMode>, output: Option<PathBuf>) -> Result<(), Box<dyn Error>> {
    let mut cfg = TrainConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(m) = mode {
        cfg.mode = m;
    }
    if let Some(o) = output {
        cfg.output_dir = o;
    }
    let summary = run_experiment(&cfg)?;
    let mean = summary.eval_returns.iter().sum::<f64>() / summary.eval_returns.len().max(1) as f64;
    println!("episodes: {}", summary.rows.len());
    println!("eval mean return: {mean:.3}");
    println!("metrics: {}", summary.metrics_path.display());
    println!("checkpoint: {}", summary.checkpoint_path.display());
    Ok(())
}

fn eval(checkpoint: &Path, episodes: usize, seed: u64) -> Result<(), Box<dyn Error>> {
    let agent = Agent::from_checkpoint(load_checkpoint(checkpoint)?)?;
    let eps = agent.evaluate(episodes, seed)?;
    for (i, e) in eps.iter().enumerate() {
        println!("episode {i}: return {:.3}, plan {:.3} ms/decision", e.total_return, e.plan_time_ms);
    }
    let mean = eps.iter().map(|e| e.total_return).sum::<f64>() / eps.len().max(1) as f64;
    println!("mode {} mean return {mean:.3}", agent.config().mode);
    Ok(())
}

fn plan_bench(mode: PlanMode, env: EnvKind, episodes: usize, seed: u64, critic_steps: usize) -> Result<(), Box<dyn Error>> {
    let bench = OracleBench::new(EnvSpec::new(env, 200, 2)?, 0.99, 64, critic_steps, seed)?;
    let baseline = bench.random_baseline(episodes, seed)?;
    let eps = bench.run(&PlannerConfig::with_mode(mode), episodes, seed, true)?;
    let n = eps.len().max(1) as f64;
    let mean = eps.iter().map(|e| e.total_return).sum::<f64>() / n;
    let ms = eps.iter().map(|e| e.plan_time_ms).sum::<f64>() / n;
    println!("env {env} mode {mode} episodes {episodes}");
    println!("critic rmse {:.3}", bench.critic_rmse);
    println!("random mean return {baseline:.3}");
    println!("planner mean return {mean:.3} ({:.2}x random)", mean / baseline);
    println!("plan time {ms:.3} ms/decision");
    Ok(())
}

const SERIES: [&str; 8] = [
    "episode_return",
    "J_O",
    "J_R",
    "KL",
    "actor_objective",
    "critic_loss",
    "plan_time_ms",
    "wall_clock_s",
];

fn plot(metrics: &Path, out: Option<PathBuf>) -> Result<(), Box<dyn Error>> {
    let rows = read_metrics(metrics)?;
    let out = out.unwrap_or_else(|| metrics.parent().unwrap_or(Path::new(".")).join("plot"));
    fs::create_dir_all(&out)?;
    for (k, name) in SERIES.iter().enumerate() {
        let mut f = fs::File::create(out.join(format!("{name}.dat")))?;
        writeln!(f, "# env_step {name}")?;
        for r in &rows {
            let v = r.values()[k];
            if v.is_finite() {
                writeln!(f, "{} {v}", r.env_step)?;
            }
        }
    }
    println!("{} series of {} rows in {}", SERIES.len(), rows.len(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            config,
            seed,
            mode,
            output,
        } => train(&config, seed, mode, output),
        Command::Eval {
            checkpoint,
            episodes,
            seed,
        } => eval(&checkpoint, episodes, seed),
        Command::PlanBench {
            mode,
            env,
            episodes,
            seed,
            critic_steps,
        } => plan_bench(mode, env, episodes, seed, critic_steps),
        Command::Plot { metrics, out } => plot(&metrics, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
