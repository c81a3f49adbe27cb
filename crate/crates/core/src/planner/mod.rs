//! Decision-time planning over any dynamics implementing [`SearchModel`]:
//! batched rollout search and Monte-Carlo tree search with progressive
//! widening or a fixed number of children per node.

mod latent;
mod mcts;
mod rollout;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::behavior::BehaviorError;
use crate::diffmath::DiffError;
use crate::worldmodel::ModelError;

pub use latent::LatentSearch;
pub use mcts::{mcts_plan, EdgeStats, MctsOutcome, NodeId, SearchNode, SearchTree, TraceLine, ROOT};
pub use rollout::{rollout_plan, RolloutOutcome};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlanError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Behavior(#[from] BehaviorError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("dynamics: {0}")]
    Dynamics(String),
    #[error("invalid planner config: {0}")]
    Config(String),
    #[error("node has no edges to select from")]
    NoEdges,
    #[error("edge {0} is already expanded")]
    AlreadyExpanded(usize),
    #[error("{mode} planning is not tree or rollout search")]
    WrongMode { mode: PlanMode },
}

/// Dynamics, reward, value and proposal policy seen by the planners.
pub trait SearchModel {
    type State: Clone;

    fn action_dim(&self) -> usize;

    /// Successor of every `(states[i], actions[i])` pair together with the
    /// reward attributed to that successor.
    fn step(&self, states: &[Self::State], actions: &[Vec<f64>]) -> Result<(Vec<Self::State>, Vec<f64>), PlanError>;

    fn value(&self, states: &[Self::State]) -> Result<Vec<f64>, PlanError>;

    /// Mode of the proposal policy at each state.
    fn policy_mode(&self, states: &[Self::State]) -> Result<Vec<Vec<f64>>, PlanError>;

    /// `n` draws from the proposal policy at `state`.
    fn sample_actions<R: Rng + ?Sized>(&self, state: &Self::State, n: usize, rng: &mut R) -> Result<Vec<Vec<f64>>, PlanError>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PlanMode {
    Dreamer,
    Rollout,
    MctsPw,
    MctsFixed,
}

impl PlanMode {
    pub const ALL: [PlanMode; 4] = [Self::Dreamer, Self::Rollout, Self::MctsPw, Self::MctsFixed];

    pub fn name(self) -> &'static str {
        match self {
            Self::Dreamer => "dreamer",
            Self::Rollout => "rollout",
            Self::MctsPw => "mcts-pw",
            Self::MctsFixed => "mcts-fixed",
        }
    }
}

impl fmt::Display for PlanMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PlanMode {
    type Err = PlanError;

    fn from_str(s: &str) -> Result<Self, PlanError> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| PlanError::Config(format!("unknown mode {s:?} (expected dreamer, rollout, mcts-pw or mcts-fixed)")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlannerConfig {
    pub mode: PlanMode,
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
    pub gamma: f64,
    pub lambda: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            mode: PlanMode::Dreamer,
            simulations: 50,
            proposal_candidates: 100,
            uniform_candidates: 50,
            rollout_depth: 10,
            fixed_children: 20,
            c1: 1.25,
            c2: 19652.0,
            c_pw: 1.0,
            alpha: 0.5,
            noise_std: 0.3,
            gamma: 0.99,
            lambda: 0.95,
        }
    }
}

impl PlannerConfig {
    pub fn with_mode(mode: PlanMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        let counts = [
            ("simulations", self.simulations),
            ("fixed_children", self.fixed_children),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(PlanError::Config(format!("{name} must be at least 1")));
            }
        }
        if self.proposal_candidates + self.uniform_candidates == 0 {
            return Err(PlanError::Config("rollout needs at least one candidate".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(PlanError::Config(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(PlanError::Config(format!("noise_std must be >= 0, got {}", self.noise_std)));
        }
        if !(self.c_pw > 0.0) || !(self.c2 > 0.0) {
            return Err(PlanError::Config("c_pw and c2 must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lambda) {
            return Err(PlanError::Config("gamma and lambda must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Running extremes of Q over one search tree.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MinMaxBounds {
    pub min_q: f64,
    pub max_q: f64,
}

impl Default for MinMaxBounds {
    fn default() -> Self {
        Self {
            min_q: f64::INFINITY,
            max_q: f64::NEG_INFINITY,
        }
    }
}

impl MinMaxBounds {
    pub fn new(min_q: f64, max_q: f64) -> Self {
        Self { min_q, max_q }
    }

    pub fn update(&mut self, q: f64) {
        self.min_q = self.min_q.min(q);
        self.max_q = self.max_q.max(q);
    }

    /// Maps `q` into `[0, 1]`; with fewer than two distinct values observed
    /// `q` passes through unchanged.
    pub fn normalize(&self, q: f64) -> f64 {
        if self.max_q > self.min_q {
            (q - self.min_q) / (self.max_q - self.min_q)
        } else {
            q
        }
    }
}

/// Selection score of one edge given its normalized value.
pub fn puct_score(q_bar: f64, prior: f64, parent_visits: u64, visits: u64, c1: f64, c2: f64) -> f64 {
    let n = parent_visits as f64;
    let explore = n.sqrt() / (1.0 + visits as f64) * (c1 + ((n + c2 + 1.0) / c2).ln());
    q_bar + prior * explore
}

/// Index of the edge with the highest selection score, lowest index on ties.
/// Unvisited edges count as normalized value 0.
pub fn puct_select(edges: &[EdgeStats], bounds: &MinMaxBounds, c1: f64, c2: f64) -> Result<usize, PlanError> {
    if edges.is_empty() {
        return Err(PlanError::NoEdges);
    }
    let parent: u64 = edges.iter().map(|e| e.n).sum();
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, e) in edges.iter().enumerate() {
        let q_bar = if e.n == 0 { 0.0 } else { bounds.normalize(e.q) };
        let score = puct_score(q_bar, e.p, parent, e.n, c1, c2);
        if score > best_score {
            best = i;
            best_score = score;
        }
    }
    Ok(best)
}

/// True when a node with `children` edges and `visits` total visits may grow
/// another child. A node without children always may.
pub fn should_widen(children: usize, visits: u64, c_pw: f64, alpha: f64) -> bool {
    children == 0 || (children as f64) < c_pw * (visits as f64).powf(alpha)
}

/// Discounted returns along a path: `out[k] = r_{k+1} + γ out[k+1]` with
/// `out[l] = leaf_value`, where `rewards[k]` is the reward on edge `k + 1`.
pub fn path_returns(rewards: &[f64], leaf_value: f64, gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len() + 1];
    out[rewards.len()] = leaf_value;
    for k in (0..rewards.len()).rev() {
        out[k] = rewards[k] + gamma * out[k + 1];
    }
    out
}

/// Incremental mean update of one edge.
pub fn update_edge(stats: &mut EdgeStats, g: f64) {
    stats.q = (stats.n as f64 * stats.q + g) / (stats.n as f64 + 1.0);
    stats.n += 1;
}

/// Adds `N(0, noise_std²)` to each component and clips to `[-1, 1]`.
pub fn add_exploration_noise<R: Rng + ?Sized>(action: &[f64], noise_std: f64, rng: &mut R) -> Vec<f64> {
    if noise_std == 0.0 {
        return action.to_vec();
    }
    let normal = Normal::new(0.0, noise_std).expect("validated stddev");
    action
        .iter()
        .map(|a| (a + normal.sample(rng)).clamp(-1.0, 1.0))
        .collect()
}

/// `n` actions uniform on `[-1, 1]^dim`.
pub fn uniform_actions<R: Rng + ?Sized>(dim: usize, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect()).collect()
}

/// Result of one planning call.
#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    pub action: Vec<f64>,
    pub mode: PlanMode,
}

/// Chooses an action at `root` with the configured mode. `noise_std` is the
/// exploration noise applied to root-level candidates and to the returned
/// action; pass 0 for evaluation.
pub fn plan<M: SearchModel, R: Rng + ?Sized>(
    model: &M,
    root: &M::State,
    cfg: &PlannerConfig,
    noise_std: f64,
    rng: &mut R,
) -> Result<Decision, PlanError> {
    let action = match cfg.mode {
        PlanMode::Dreamer => model.policy_mode(std::slice::from_ref(root))?.remove(0),
        PlanMode::Rollout => rollout_plan(model, root, cfg, noise_std, rng)?.action,
        PlanMode::MctsPw | PlanMode::MctsFixed => mcts_plan(model, root, cfg, noise_std, rng)?.action,
    };
    Ok(Decision {
        action: add_exploration_noise(&action, noise_std, rng),
        mode: cfg.mode,
    })
}
