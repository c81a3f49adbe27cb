//! Flat `key = value` experiment configuration.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use super::AgentError;
use crate::behavior::BehaviorConfig;
use crate::envs::{EnvKind, EnvSpec};
use crate::planner::{PlanMode, PlannerConfig};
use crate::worldmodel::WorldModelConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub env: EnvKind,
    pub mode: PlanMode,
    pub seed: u64,
    /// Physics steps of interaction, seed episodes included.
    pub total_steps: usize,
    pub episode_length: usize,
    pub action_repeat: usize,
    pub seed_episodes: usize,
    /// Collected episodes between train iterations.
    pub train_every: usize,
    pub model_updates: usize,
    pub behavior_updates: usize,
    pub batch_size: usize,
    pub seq_len: usize,
    pub replay_capacity: usize,
    pub deter: usize,
    pub stoch: usize,
    pub hidden: usize,
    pub embed: usize,
    pub beta: f64,
    pub model_lr: f64,
    pub horizon: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub behavior_hidden: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub grad_clip: f64,
    pub simulations: usize,
    pub proposal_candidates: usize,
    pub uniform_candidates: usize,
    pub rollout_depth: usize,
    pub fixed_children: usize,
    pub c1: f64,
    pub c2: f64,
    pub c_pw: f64,
    pub alpha: f64,
    pub noise_std: f64,
    pub eval_episodes: usize,
    /// Episodes between checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
    /// When false, timing columns are written as 0 so metrics files are
    /// reproducible byte for byte.
    pub record_timing: bool,
    pub output_dir: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let b = BehaviorConfig::default();
        let p = PlannerConfig::default();
        let w = WorldModelConfig::new(1, 1);
        Self {
            env: EnvKind::PointMass2D,
            mode: PlanMode::Dreamer,
            seed: 0,
            total_steps: 100_000,
            episode_length: 200,
            action_repeat: 2,
            seed_episodes: 5,
            train_every: 200,
            model_updates: 100,
            behavior_updates: 100,
            batch_size: 32,
            seq_len: 32,
            replay_capacity: 1_000_000,
            deter: w.deter,
            stoch: w.stoch,
            hidden: w.hidden,
            embed: w.embed,
            beta: w.beta,
            model_lr: w.lr,
            horizon: b.horizon,
            gamma: b.gamma,
            lambda: b.lambda,
            behavior_hidden: b.hidden,
            actor_lr: b.actor_lr,
            critic_lr: b.critic_lr,
            grad_clip: b.grad_clip,
            simulations: p.simulations,
            proposal_candidates: p.proposal_candidates,
            uniform_candidates: p.uniform_candidates,
            rollout_depth: p.rollout_depth,
            fixed_children: p.fixed_children,
            c1: p.c1,
            c2: p.c2,
            c_pw: p.c_pw,
            alpha: p.alpha,
            noise_std: p.noise_std,
            eval_episodes: 10,
            checkpoint_every: 0,
            record_timing: true,
            output_dir: PathBuf::from("run"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, AgentError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| AgentError::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

macro_rules! fields {
    ($mac:ident) => {
        $mac! {
            env, mode, seed, total_steps, episode_length, action_repeat, seed_episodes, train_every,
            model_updates, behavior_updates, batch_size, seq_len, replay_capacity, deter, stoch, hidden,
            embed, beta, model_lr, horizon, gamma, lambda, behavior_hidden, actor_lr, critic_lr, grad_clip,
            simulations, proposal_candidates, uniform_candidates, rollout_depth, fixed_children, c1, c2,
            c_pw, alpha, noise_std, eval_episodes, checkpoint_every, record_timing
        }
    };
}

impl TrainConfig {
    /// Every accepted key, in canonical order.
    pub fn keys() -> Vec<&'static str> {
        macro_rules! names {
            ($($f:ident),*) => { vec![$(stringify!($f)),*, "output_dir"] };
        }
        fields!(names)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), AgentError> {
        macro_rules! assign {
            ($($f:ident),*) => {
                match key {
                    $(stringify!($f) => self.$f = parse(key, value)?,)*
                    "output_dir" => self.output_dir = PathBuf::from(value),
                    _ => return Err(AgentError::Config(format!("unknown key {key:?}"))),
                }
            };
        }
        fields!(assign);
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. Blank lines and lines
    /// starting with `#` are ignored; unknown or repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self, AgentError> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| AgentError::Config(format!("line {}: expected key = value", n + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(AgentError::Config(format!("line {}: duplicate key {key:?}", n + 1)));
            }
            cfg.set(key, value.trim())
                .map_err(|e| AgentError::Config(format!("line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, AgentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AgentError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Canonical text form: every key in order, one per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        macro_rules! emit {
            ($($f:ident),*) => {
                $(writeln!(out, "{} = {}", stringify!($f), self.$f).expect("string write");)*
            };
        }
        fields!(emit);
        writeln!(out, "output_dir = {}", self.output_dir.display()).expect("string write");
        out
    }

    /// SHA-256 of [`TrainConfig::to_text`].
    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(self.to_text().as_bytes()).into()
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let positive = [
            ("total_steps", self.total_steps),
            ("train_every", self.train_every),
            ("batch_size", self.batch_size),
            ("seq_len", self.seq_len),
            ("replay_capacity", self.replay_capacity),
            ("deter", self.deter),
            ("stoch", self.stoch),
            ("hidden", self.hidden),
            ("embed", self.embed),
            ("horizon", self.horizon),
            ("behavior_hidden", self.behavior_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(AgentError::Config(format!("{name} must be positive")));
            }
        }
        let spec = self.env_spec()?;
        if self.seq_len > spec.decisions() {
            return Err(AgentError::Config(format!(
                "seq_len {} exceeds the {} decisions of an episode",
                self.seq_len,
                spec.decisions()
            )));
        }
        for (name, v) in [("model_lr", self.model_lr), ("actor_lr", self.actor_lr), ("critic_lr", self.critic_lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(AgentError::Config(format!("{name} must be positive")));
            }
        }
        if !(self.beta >= 0.0) || !(self.grad_clip > 0.0) {
            return Err(AgentError::Config("beta must be >= 0 and grad_clip > 0".into()));
        }
        self.planner_config().validate()?;
        Ok(())
    }

    pub fn env_spec(&self) -> Result<EnvSpec, AgentError> {
        Ok(EnvSpec::new(self.env, self.episode_length, self.action_repeat)?)
    }

    pub fn world_model_config(&self) -> WorldModelConfig {
        WorldModelConfig {
            deter: self.deter,
            stoch: self.stoch,
            hidden: self.hidden,
            embed: self.embed,
            beta: self.beta,
            lr: self.model_lr,
            grad_clip: self.grad_clip,
            ..WorldModelConfig::new(self.env.obs_dim(), self.env.action_dim())
        }
    }

    pub fn behavior_config(&self) -> BehaviorConfig {
        BehaviorConfig {
            horizon: self.horizon,
            gamma: self.gamma,
            lambda: self.lambda,
            hidden: self.behavior_hidden,
            actor_lr: self.actor_lr,
            critic_lr: self.critic_lr,
            grad_clip: self.grad_clip,
        }
    }

    pub fn planner_config(&self) -> PlannerConfig {
        PlannerConfig {
            mode: self.mode,
            simulations: self.simulations,
            proposal_candidates: self.proposal_candidates,
            uniform_candidates: self.uniform_candidates,
            rollout_depth: self.rollout_depth,
            fixed_children: self.fixed_children,
            c1: self.c1,
            c2: self.c2,
            c_pw: self.c_pw,
            alpha: self.alpha,
            noise_std: self.noise_std,
            gamma: self.gamma,
            lambda: self.lambda,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let cfg = TrainConfig {
            mode: PlanMode::MctsFixed,
            env: EnvKind::PendulumSwingUp,
            beta: 0.5,
            ..TrainConfig::default()
        };
        let back = TrainConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn unknown_and_duplicate_keys_rejected() {
        let e = TrainConfig::parse("learning_rate = 3").unwrap_err();
        assert!(e.to_string().contains("unknown key"), "{e}");
        assert!(TrainConfig::parse("seed = 1\nseed = 2").is_err());
        assert!(TrainConfig::parse("seed").is_err());
        assert!(TrainConfig::parse("seed = x").is_err());
        assert!(TrainConfig::parse("mode = greedy").is_err());
    }

    #[test]
    fn comments_and_blank_lines() {
        let cfg = TrainConfig::parse("# run\n\n env = pendulum \nmode=rollout\n").unwrap();
        assert_eq!(cfg.env, EnvKind::PendulumSwingUp);
        assert_eq!(cfg.mode, PlanMode::Rollout);
    }

    #[test]
    fn validation_runs_on_parse() {
        assert!(TrainConfig::parse("batch_size = 0").is_err());
        assert!(TrainConfig::parse("seq_len = 101").is_err());
        assert!(TrainConfig::parse("alpha = 1.5").is_err());
        assert!(TrainConfig::parse("episode_length = 201").is_err());
    }

    #[test]
    fn every_key_is_listed_once() {
        let keys = TrainConfig::keys();
        let text = TrainConfig::default().to_text();
        assert_eq!(text.lines().count(), keys.len());
        for (line, key) in text.lines().zip(&keys) {
            assert!(line.starts_with(&format!("{key} = ")));
        }
    }
}
