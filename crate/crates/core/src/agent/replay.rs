//! Episode replay with fixed-length window sampling.

use std::collections::VecDeque;

use rand::Rng;

use super::AgentError;
use crate::diffmath::Array;
use crate::envs::Transition;
use crate::worldmodel::SequenceBatch;

/// One stored step: the action that led to `obs`, `obs` itself and the
/// reward earned by that transition. The reset observation of an episode
/// is not stored.
#[derive(Clone, Debug, PartialEq)]
pub struct StoredStep {
    pub action: Vec<f64>,
    pub obs: Vec<f64>,
    pub reward: f64,
}

#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    episodes: VecDeque<Vec<StoredStep>>,
    capacity: usize,
    steps: usize,
    obs_dim: usize,
    action_dim: usize,
}

impl ReplayBuffer {
    /// `capacity` counts stored steps; the oldest episodes are dropped once
    /// it is exceeded, never the newest one.
    pub fn new(capacity: usize, obs_dim: usize, action_dim: usize) -> Self {
        Self {
            episodes: VecDeque::new(),
            capacity,
            steps: 0,
            obs_dim,
            action_dim,
        }
    }

    pub fn num_episodes(&self) -> usize {
        self.episodes.len()
    }

    pub fn num_steps(&self) -> usize {
        self.steps
    }

    pub fn episode(&self, i: usize) -> &[StoredStep] {
        &self.episodes[i]
    }

    pub fn push_episode(&mut self, transitions: &[Transition]) -> Result<(), AgentError> {
        if transitions.is_empty() {
            return Err(AgentError::Replay("empty episode".into()));
        }
        let mut ep = Vec::with_capacity(transitions.len());
        for t in transitions {
            if t.action.len() != self.action_dim || t.next_obs.len() != self.obs_dim {
                return Err(AgentError::Replay(format!(
                    "transition widths {}/{} do not match buffer {}/{}",
                    t.action.len(),
                    t.next_obs.len(),
                    self.action_dim,
                    self.obs_dim
                )));
            }
            ep.push(StoredStep {
                action: t.action.clone(),
                obs: t.next_obs.clone(),
                reward: t.reward,
            });
        }
        self.steps += ep.len();
        self.episodes.push_back(ep);
        while self.steps > self.capacity && self.episodes.len() > 1 {
            let old = self.episodes.pop_front().expect("non-empty");
            self.steps -= old.len();
        }
        Ok(())
    }

    /// Number of distinct length-`len` windows that fit inside episodes.
    pub fn num_windows(&self, len: usize) -> usize {
        self.episodes.iter().map(|e| (e.len() + 1).saturating_sub(len)).sum()
    }

    /// `(episode, start)` pairs drawn uniformly over all valid windows.
    pub fn sample_windows<R: Rng + ?Sized>(&self, batch: usize, len: usize, rng: &mut R) -> Result<Vec<(usize, usize)>, AgentError> {
        let total = self.num_windows(len);
        if len == 0 || batch == 0 || total == 0 {
            return Err(AgentError::InsufficientData {
                windows: total,
                len,
            });
        }
        Ok((0..batch)
            .map(|_| {
                let mut k = rng.random_range(0..total);
                for (i, e) in self.episodes.iter().enumerate() {
                    let n = (e.len() + 1).saturating_sub(len);
                    if k < n {
                        return (i, k);
                    }
                    k -= n;
                }
                unreachable!("window index within total")
            })
            .collect())
    }

    pub fn batch_from_windows(&self, windows: &[(usize, usize)], len: usize) -> Result<SequenceBatch, AgentError> {
        let b = windows.len();
        let mut batch = SequenceBatch {
            observations: Vec::with_capacity(len),
            actions: Vec::with_capacity(len),
            rewards: Vec::with_capacity(len),
        };
        for t in 0..len {
            let mut obs = Vec::with_capacity(b * self.obs_dim);
            let mut act = Vec::with_capacity(b * self.action_dim);
            let mut rew = Vec::with_capacity(b);
            for &(e, s) in windows {
                let step = self
                    .episodes
                    .get(e)
                    .and_then(|ep| ep.get(s + t))
                    .ok_or_else(|| AgentError::Replay(format!("window ({e}, {s}) of length {len} out of range")))?;
                obs.extend_from_slice(&step.obs);
                act.extend_from_slice(&step.action);
                rew.push(step.reward);
            }
            batch.observations.push(Array::matrix(b, self.obs_dim, obs)?);
            batch.actions.push(Array::matrix(b, self.action_dim, act)?);
            batch.rewards.push(Array::matrix(b, 1, rew)?);
        }
        Ok(batch)
    }

    /// `batch` windows of `len` consecutive steps, each inside one episode.
    pub fn sample_rollouts<R: Rng + ?Sized>(&self, batch: usize, len: usize, rng: &mut R) -> Result<SequenceBatch, AgentError> {
        let windows = self.sample_windows(batch, len, rng)?;
        self.batch_from_windows(&windows, len)
    }
}
