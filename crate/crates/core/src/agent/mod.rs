//! Training loop: collect with decision-time planning, sample replay
//! windows, fit the world model, then train the actor and critic in
//! imagination.

mod checkpoint;
mod config;
mod metrics;
mod oracle;
mod replay;

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, FORMAT_VERSION, MAGIC, SEGMENTS,
};
pub use config::TrainConfig;
pub use metrics::{read_metrics, MetricsRow, MetricsWriter, METRICS_HEADER};
pub use oracle::OracleBench;
pub use replay::{ReplayBuffer, StoredStep};

use crate::behavior::{Behavior, BehaviorError};
use crate::diffmath::segment::SegmentError;
use crate::diffmath::{Array, DiffError};
use crate::envs::{Env, EnvError, EnvSpec, Transition};
use crate::planner::{plan, LatentSearch, PlanError};
use crate::worldmodel::{LatentState, ModelError, WorldModel};

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Behavior(#[from] BehaviorError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("replay: {0}")]
    Replay(String),
    #[error("replay holds {windows} windows of length {len}; collect more episodes first")]
    InsufficientData { windows: usize, len: usize },
    #[error("metrics: {0}")]
    Metrics(String),
}

/// Independent generator for the named consumer `name` under `seed`.
/// Streams never share state, so adding a consumer leaves the others
/// unchanged.
pub fn stream(seed: u64, name: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Training phase markers, recorded in call order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    ModelUpdate,
    BehaviorUpdate,
}

#[derive(Clone, Debug, Default)]
pub struct Episode {
    pub transitions: Vec<Transition>,
    pub total_return: f64,
    /// Mean wall time of one planning call, in milliseconds.
    pub plan_time_ms: f64,
}

impl Episode {
    pub fn actions(&self) -> Vec<Vec<f64>> {
        self.transitions.iter().map(|t| t.action.clone()).collect()
    }
}

/// Means over the updates of one train iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationMetrics {
    pub j_o: f64,
    pub j_r: f64,
    pub kl: f64,
    pub actor_objective: f64,
    pub critic_loss: f64,
    pub skipped: usize,
}

impl Default for IterationMetrics {
    fn default() -> Self {
        Self {
            j_o: f64::NAN,
            j_r: f64::NAN,
            kl: f64::NAN,
            actor_objective: f64::NAN,
            critic_loss: f64::NAN,
            skipped: 0,
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

pub struct Agent {
    cfg: TrainConfig,
    spec: EnvSpec,
    model: WorldModel,
    behavior: Behavior,
    planner_rng: ChaCha8Rng,
    train_rng: ChaCha8Rng,
    replay_rng: ChaCha8Rng,
    phases: Vec<Phase>,
}

impl Agent {
    pub fn new(cfg: TrainConfig) -> Result<Self, AgentError> {
        cfg.validate()?;
        let spec = cfg.env_spec()?;
        let mut init = stream(cfg.seed, "model-init");
        let wm_cfg = cfg.world_model_config();
        let model = WorldModel::new(wm_cfg.clone(), &mut init);
        let behavior = Behavior::new(cfg.behavior_config(), wm_cfg.feature_dim(), spec.action_dim, &mut init);
        Ok(Self {
            planner_rng: stream(cfg.seed, "planner"),
            train_rng: stream(cfg.seed, "train"),
            replay_rng: stream(cfg.seed, "replay"),
            cfg,
            spec,
            model,
            behavior,
            phases: Vec::new(),
        })
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self, AgentError> {
        let mut agent = Self::new(ck.config)?;
        agent.model.set_params(ck.world_model)?;
        agent.behavior.policy.set_params(ck.policy)?;
        agent.behavior.value.set_params(ck.value)?;
        Ok(agent)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.cfg.clone(),
            world_model: self.model.params().clone(),
            policy: self.behavior.policy.params().clone(),
            value: self.behavior.value.params().clone(),
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn model(&self) -> &WorldModel {
        &self.model
    }

    pub fn behavior(&self) -> &Behavior {
        &self.behavior
    }

    /// Phases recorded by the most recent [`Agent::train_iteration`].
    pub fn phase_log(&self) -> &[Phase] {
        &self.phases
    }

    pub fn new_replay(&self) -> ReplayBuffer {
        ReplayBuffer::new(self.cfg.replay_capacity, self.spec.obs_dim, self.spec.action_dim)
    }

    /// Belief after observing `obs` following `action` (zero action at
    /// reset). Uses the posterior mean.
    fn update_belief(&self, prev: &LatentState, action: &[f64], obs: &[f64]) -> Result<LatentState, AgentError> {
        let a = Array::matrix(1, action.len(), action.to_vec())?;
        let o = Array::matrix(1, obs.len(), obs.to_vec())?;
        Ok(self.model.posterior_step(prev, &a, &o, None)?)
    }

    /// Runs one episode, planning every decision from the current belief.
    /// `explore` adds the configured exploration noise.
    pub fn collect_episode<R: Rng + ?Sized>(
        &mut self,
        env: &mut Env,
        explore: bool,
        env_rng: &mut R,
    ) -> Result<Episode, AgentError> {
        let mut rng = std::mem::replace(&mut self.planner_rng, ChaCha8Rng::seed_from_u64(0));
        let out = self.run_episode(env, explore, env_rng, &mut rng);
        self.planner_rng = rng;
        out
    }

    fn run_episode<R: Rng + ?Sized>(
        &self,
        env: &mut Env,
        explore: bool,
        env_rng: &mut R,
        rng: &mut ChaCha8Rng,
    ) -> Result<Episode, AgentError> {
        let cfg = self.cfg.planner_config();
        let noise = if explore { cfg.noise_std } else { 0.0 };
        let search = LatentSearch::new(&self.model, &self.behavior.policy, &self.behavior.value);
        let obs = env.reset(env_rng);
        let mut belief = LatentState::initial(1, self.model.config());
        belief = self.update_belief(&belief, &vec![0.0; self.spec.action_dim], &obs)?;
        let mut ep = Episode::default();
        let mut plan_ms = 0.0;
        while !env.is_done() {
            let start = Instant::now();
            let decision = plan(&search, &belief, &cfg, noise, rng)?;
            plan_ms += start.elapsed().as_secs_f64() * 1e3;
            let t = env.step(&decision.action).inspect_err(|e| warn!("episode aborted: {e}"))?;
            belief = self.update_belief(&belief, &t.action, &t.next_obs)?;
            ep.total_return += t.reward;
            ep.transitions.push(t);
        }
        ep.plan_time_ms = if self.cfg.record_timing {
            plan_ms / ep.transitions.len() as f64
        } else {
            0.0
        };
        Ok(ep)
    }

    /// One iteration: `model_updates` world-model steps on replay windows,
    /// then `behavior_updates` actor and critic steps from posterior states
    /// of fresh windows.
    pub fn train_iteration(&mut self, replay: &ReplayBuffer) -> Result<IterationMetrics, AgentError> {
        self.phases.clear();
        let (b, l) = (self.cfg.batch_size, self.cfg.seq_len);
        let (mut jo, mut jr, mut kl) = (Vec::new(), Vec::new(), Vec::new());
        let mut skipped = 0;
        for _ in 0..self.cfg.model_updates {
            let batch = replay.sample_rollouts(b, l, &mut self.replay_rng)?;
            let m = self.model.train_model_batch(&batch, &mut self.train_rng)?;
            self.phases.push(Phase::ModelUpdate);
            if !m.applied {
                warn!("model update skipped: non-finite gradients");
                skipped += 1;
                continue;
            }
            jo.push(m.terms.obs_log_lik);
            jr.push(m.terms.reward_log_lik);
            kl.push(m.terms.kl);
        }
        let (mut obj, mut closs) = (Vec::new(), Vec::new());
        for _ in 0..self.cfg.behavior_updates {
            let batch = replay.sample_rollouts(b, l, &mut self.replay_rng)?;
            let posts = self.model.observe(&batch, &mut self.train_rng)?;
            let starts = LatentState::stack(&posts)?;
            let m = self.behavior.update(&self.model, &starts, &mut self.train_rng)?;
            self.phases.push(Phase::BehaviorUpdate);
            if !(m.actor_applied && m.critic_applied) {
                warn!("behavior update partly skipped: non-finite values");
                skipped += 1;
            }
            if m.actor_objective.is_finite() {
                obj.push(m.actor_objective);
            }
            if m.critic_loss.is_finite() {
                closs.push(m.critic_loss);
            }
        }
        Ok(IterationMetrics {
            j_o: mean(&jo),
            j_r: mean(&jr),
            kl: mean(&kl),
            actor_objective: mean(&obj),
            critic_loss: mean(&closs),
            skipped,
        })
    }

    /// Noise-free episodes with the configured planner. Uses generators
    /// derived from `seed` only, so repeated calls give identical results.
    pub fn evaluate(&self, episodes: usize, seed: u64) -> Result<Vec<Episode>, AgentError> {
        let mut env_rng = stream(seed, "eval-env");
        let mut rng = stream(seed, "eval-planner");
        let mut env = Env::new(self.spec.clone());
        (0..episodes)
            .map(|_| self.run_episode(&mut env, false, &mut env_rng, &mut rng))
            .collect()
    }
}

/// Episode with uniform random actions.
pub fn random_episode<R: Rng + ?Sized>(env: &mut Env, env_rng: &mut R, action_rng: &mut R) -> Result<Episode, AgentError> {
    env.reset(env_rng);
    let dim = env.spec().action_dim;
    let mut ep = Episode::default();
    while !env.is_done() {
        let a: Vec<f64> = (0..dim).map(|_| action_rng.random_range(-1.0..=1.0)).collect();
        let t = env.step(&a)?;
        ep.total_return += t.reward;
        ep.transitions.push(t);
    }
    Ok(ep)
}

/// Mean return of the uniform random policy over `episodes` episodes.
pub fn random_baseline(spec: &EnvSpec, episodes: usize, seed: u64) -> Result<f64, AgentError> {
    let mut env = Env::new(spec.clone());
    let mut env_rng = stream(seed, "baseline-env");
    let mut act_rng = stream(seed, "baseline-actions");
    let returns = (0..episodes)
        .map(|_| random_episode(&mut env, &mut env_rng, &mut act_rng).map(|e| e.total_return))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(mean(&returns))
}

#[derive(Clone, Debug)]
pub struct ExperimentSummary {
    pub rows: Vec<MetricsRow>,
    pub eval_returns: Vec<f64>,
    pub metrics_path: PathBuf,
    pub eval_path: PathBuf,
    pub checkpoint_path: PathBuf,
}

/// Seed episodes with random actions, then alternating training and
/// collection until `total_steps` physics steps. Writes `config.txt`,
/// `metrics.csv` (one row per episode), checkpoints and `eval.csv`
/// (noise-free evaluation of the final agent) into `output_dir`.
pub fn run_experiment(cfg: &TrainConfig) -> Result<ExperimentSummary, AgentError> {
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("config.txt"), cfg.to_text())?;
    let metrics_path = dir.join("metrics.csv");
    let mut writer = MetricsWriter::create(&metrics_path)?;

    let clock = Instant::now();
    let wall = |c: &Instant| if cfg.record_timing { c.elapsed().as_secs_f64() } else { 0.0 };
    let mut agent = Agent::new(cfg.clone())?;
    let mut replay = agent.new_replay();
    let mut env = Env::new(agent.spec().clone());
    let mut env_rng = stream(cfg.seed, "env");
    let mut seed_rng = stream(cfg.seed, "seed-actions");
    let mut rows = Vec::new();
    let mut env_steps = 0u64;
    let mut pending = 0usize;
    let mut last = IterationMetrics::default();
    let mut episodes = 0usize;

    let mut record = |ep: &Episode, env_steps: u64, last: &IterationMetrics, writer: &mut MetricsWriter| {
        let row = MetricsRow {
            env_step: env_steps,
            episode_return: ep.total_return,
            j_o: last.j_o,
            j_r: last.j_r,
            kl: last.kl,
            actor_objective: last.actor_objective,
            critic_loss: last.critic_loss,
            plan_time_ms: ep.plan_time_ms,
            wall_clock_s: wall(&clock),
        };
        rows.push(row);
        writer.append(&row)
    };

    while episodes < cfg.seed_episodes && (env_steps as usize) < cfg.total_steps {
        let ep = random_episode(&mut env, &mut env_rng, &mut seed_rng)?;
        replay.push_episode(&ep.transitions)?;
        env_steps += cfg.episode_length as u64;
        pending += cfg.episode_length;
        episodes += 1;
        record(&ep, env_steps, &last, &mut writer)?;
    }
    while (env_steps as usize) < cfg.total_steps {
        while pending >= cfg.train_every {
            last = agent.train_iteration(&replay)?;
            pending -= cfg.train_every;
        }
        let ep = agent.collect_episode(&mut env, true, &mut env_rng)?;
        replay.push_episode(&ep.transitions)?;
        env_steps += cfg.episode_length as u64;
        pending += cfg.episode_length;
        episodes += 1;
        record(&ep, env_steps, &last, &mut writer)?;
        info!("episode {episodes} step {env_steps} return {:.3}", ep.total_return);
        if cfg.checkpoint_every > 0 && episodes.is_multiple_of(cfg.checkpoint_every) {
            save_checkpoint(&dir.join(format!("checkpoint_{env_steps}.lpln")), &agent.checkpoint())?;
        }
    }
    let checkpoint_path = dir.join("final.lpln");
    save_checkpoint(&checkpoint_path, &agent.checkpoint())?;

    let eval_path = dir.join("eval.csv");
    let eval = agent.evaluate(cfg.eval_episodes, cfg.seed)?;
    write_eval(&eval_path, &eval, env_steps, cfg.record_timing)?;
    Ok(ExperimentSummary {
        rows,
        eval_returns: eval.iter().map(|e| e.total_return).collect(),
        metrics_path,
        eval_path,
        checkpoint_path,
    })
}

/// Evaluation episodes in the metrics schema, all at the final `env_step`.
pub fn write_eval(path: &Path, episodes: &[Episode], env_step: u64, record_timing: bool) -> Result<(), AgentError> {
    let mut w = MetricsWriter::create(path)?;
    for ep in episodes {
        w.append(&MetricsRow {
            env_step,
            episode_return: ep.total_return,
            j_o: f64::NAN,
            j_r: f64::NAN,
            kl: f64::NAN,
            actor_objective: f64::NAN,
            critic_loss: f64::NAN,
            plan_time_ms: if record_timing { ep.plan_time_ms } else { 0.0 },
            wall_clock_s: 0.0,
        })?;
    }
    Ok(())
}

