//! Low-dimensional continuous-control tasks with rewards in `[0, 1]`, and an
//! adapter exposing their true dynamics to the planners.

mod critic;
mod oracle;

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

pub use critic::{action_lattice, fit_oracle_critic, value_iteration, CriticFit, GridSpec, ValueGrid};
pub use oracle::OracleModel;

/// Integration step of every task.
pub const DT: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("unknown environment {0:?} (expected pointmass or pendulum)")]
    Unknown(String),
    #[error("episode finished after {0} steps; reset before stepping")]
    Terminated(usize),
    #[error("step called before reset")]
    NotReset,
    #[error("action has {got} components, expected {expected}")]
    ActionDim { expected: usize, got: usize },
    #[error("non-finite action component")]
    NonFiniteAction,
    #[error("invalid environment config: {0}")]
    Config(String),
}

/// Which task, plus its physics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EnvKind {
    /// Planar point mass, state `(x, y, vx, vy)`, acceleration `2·a`, walls
    /// at ±2 that stop the mass, reward `exp(-‖x‖²)`.
    PointMass2D,
    /// Damped pendulum, state `(θ, θ̇)` with `θ = 0` upright,
    /// `θ̈ = g sin θ − 0.3 θ̇ + 4u`, reward `(1 + cos θ) / 2`.
    PendulumSwingUp,
}

const PM_ACCEL: f64 = 2.0;
const PM_WALL: f64 = 2.0;
const PM_INIT: f64 = 1.5;
const PEND_G: f64 = 9.81;
const PEND_DAMPING: f64 = 0.3;
const PEND_TORQUE: f64 = 4.0;

impl EnvKind {
    pub const ALL: [EnvKind; 2] = [Self::PointMass2D, Self::PendulumSwingUp];

    pub fn name(self) -> &'static str {
        match self {
            Self::PointMass2D => "pointmass",
            Self::PendulumSwingUp => "pendulum",
        }
    }

    pub fn state_dim(self) -> usize {
        match self {
            Self::PointMass2D => 4,
            Self::PendulumSwingUp => 2,
        }
    }

    pub fn obs_dim(self) -> usize {
        match self {
            Self::PointMass2D => 4,
            Self::PendulumSwingUp => 3,
        }
    }

    pub fn action_dim(self) -> usize {
        match self {
            Self::PointMass2D => 2,
            Self::PendulumSwingUp => 1,
        }
    }

    pub fn initial_state<R: Rng + ?Sized>(self, rng: &mut R) -> Vec<f64> {
        match self {
            Self::PointMass2D => vec![
                rng.random_range(-PM_INIT..=PM_INIT),
                rng.random_range(-PM_INIT..=PM_INIT),
                0.0,
                0.0,
            ],
            Self::PendulumSwingUp => vec![rng.random_range(-PI..PI), 0.0],
        }
    }

    /// One Euler step (velocity first, then position with the new velocity).
    pub fn substep(self, s: &mut [f64], a: &[f64]) {
        match self {
            Self::PointMass2D => {
                for i in 0..2 {
                    s[2 + i] += DT * PM_ACCEL * a[i];
                    s[i] += DT * s[2 + i];
                    if s[i].abs() > PM_WALL {
                        s[i] = PM_WALL.copysign(s[i]);
                        s[2 + i] = 0.0;
                    }
                }
            }
            Self::PendulumSwingUp => {
                let acc = PEND_G * s[0].sin() - PEND_DAMPING * s[1] + PEND_TORQUE * a[0];
                s[1] += DT * acc;
                s[0] = wrap_angle(s[0] + DT * s[1]);
            }
        }
    }

    pub fn reward(self, s: &[f64]) -> f64 {
        match self {
            Self::PointMass2D => (-(s[0] * s[0] + s[1] * s[1])).exp(),
            Self::PendulumSwingUp => 0.5 * (1.0 + s[0].cos()),
        }
    }

    pub fn observe(self, s: &[f64]) -> Vec<f64> {
        match self {
            Self::PointMass2D => s.to_vec(),
            Self::PendulumSwingUp => vec![s[0].cos(), s[0].sin(), s[1]],
        }
    }

    /// `repeat` physics steps under `action` (clipped to `[-1, 1]`); the
    /// reward is the mean of the per-substep rewards.
    pub fn transition(self, state: &[f64], action: &[f64], repeat: usize) -> (Vec<f64>, f64) {
        let a: Vec<f64> = action.iter().map(|x| x.clamp(-1.0, 1.0)).collect();
        let mut s = state.to_vec();
        let mut total = 0.0;
        for _ in 0..repeat {
            self.substep(&mut s, &a);
            total += self.reward(&s);
        }
        (s, total / repeat as f64)
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, EnvError> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| EnvError::Unknown(s.to_string()))
    }
}

/// Maps an angle into `[-π, π)`.
pub fn wrap_angle(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub obs_dim: usize,
    pub action_dim: usize,
    /// Physics steps per episode.
    pub episode_length: usize,
    pub action_repeat: usize,
}

impl EnvSpec {
    pub fn new(kind: EnvKind, episode_length: usize, action_repeat: usize) -> Result<Self, EnvError> {
        if episode_length == 0 || action_repeat == 0 {
            return Err(EnvError::Config("episode_length and action_repeat must be positive".into()));
        }
        if !episode_length.is_multiple_of(action_repeat) {
            return Err(EnvError::Config(format!(
                "episode_length {episode_length} is not a multiple of action_repeat {action_repeat}"
            )));
        }
        Ok(Self {
            kind,
            obs_dim: kind.obs_dim(),
            action_dim: kind.action_dim(),
            episode_length,
            action_repeat,
        })
    }

    /// Agent decisions per episode.
    pub fn decisions(&self) -> usize {
        self.episode_length / self.action_repeat
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    /// Decision index within the episode, from 0.
    pub step_index: usize,
    pub done: bool,
}

#[derive(Clone, Debug)]
pub struct Env {
    spec: EnvSpec,
    state: Option<Vec<f64>>,
    steps: usize,
}

impl Env {
    pub fn new(spec: EnvSpec) -> Self {
        Self {
            spec,
            state: None,
            steps: 0,
        }
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn kind(&self) -> EnvKind {
        self.spec.kind
    }

    pub fn state(&self) -> Option<&[f64]> {
        self.state.as_deref()
    }

    /// Starts an episode from `state` instead of a random draw.
    pub fn reset_to(&mut self, state: Vec<f64>) -> Vec<f64> {
        let obs = self.spec.kind.observe(&state);
        self.state = Some(state);
        self.steps = 0;
        obs
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        let s = self.spec.kind.initial_state(rng);
        self.reset_to(s)
    }

    pub fn is_done(&self) -> bool {
        self.steps >= self.spec.decisions()
    }

    /// Applies `action` (clipped to `[-1, 1]`) for `action_repeat` physics
    /// steps.
    pub fn step(&mut self, action: &[f64]) -> Result<Transition, EnvError> {
        if action.len() != self.spec.action_dim {
            return Err(EnvError::ActionDim {
                expected: self.spec.action_dim,
                got: action.len(),
            });
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(EnvError::NonFiniteAction);
        }
        if self.is_done() {
            return Err(EnvError::Terminated(self.steps));
        }
        let kind = self.spec.kind;
        let state = self.state.as_mut().ok_or(EnvError::NotReset)?;
        let obs = kind.observe(state);
        let (next, reward) = kind.transition(state, action, self.spec.action_repeat);
        *state = next;
        let t = Transition {
            obs,
            action: action.iter().map(|x| x.clamp(-1.0, 1.0)).collect(),
            reward,
            next_obs: kind.observe(state),
            step_index: self.steps,
            done: self.steps + 1 == self.spec.decisions(),
        };
        self.steps += 1;
        Ok(t)
    }
}
