use rand::Rng;

use super::{PlanError, SearchModel};
use crate::behavior::{PolicyNet, ValueNet};
use crate::diffmath::Array;
use crate::worldmodel::{LatentState, WorldModel};

/// Learned dynamics behind [`SearchModel`]: transitions take the prior mean,
/// rewards and values are the decoder and critic means. States are
/// single-row latent states.
#[derive(Clone, Copy, Debug)]
pub struct LatentSearch<'a> {
    pub model: &'a WorldModel,
    pub policy: &'a PolicyNet,
    pub value: &'a ValueNet,
}

impl<'a> LatentSearch<'a> {
    pub fn new(model: &'a WorldModel, policy: &'a PolicyNet, value: &'a ValueNet) -> Self {
        Self { model, policy, value }
    }
}

fn stack(states: &[LatentState]) -> Result<LatentState, PlanError> {
    Ok(LatentState::stack(states)?)
}

fn rows(a: &Array) -> Vec<Vec<f64>> {
    (0..a.rows()).map(|i| a.row(i).to_vec()).collect()
}

impl SearchModel for LatentSearch<'_> {
    type State = LatentState;

    fn action_dim(&self) -> usize {
        self.policy.action_dim()
    }

    fn step(&self, states: &[LatentState], actions: &[Vec<f64>]) -> Result<(Vec<LatentState>, Vec<f64>), PlanError> {
        let batch = stack(states)?;
        let acts = Array::from_rows(actions)?;
        let next = self.model.prior_step(&batch, &acts, None)?;
        let rewards = self.model.decode_reward(&next)?;
        Ok(((0..next.batch()).map(|i| next.row(i)).collect(), rewards))
    }

    fn value(&self, states: &[LatentState]) -> Result<Vec<f64>, PlanError> {
        Ok(self.value.values(&stack(states)?.features())?)
    }

    fn policy_mode(&self, states: &[LatentState]) -> Result<Vec<Vec<f64>>, PlanError> {
        Ok(rows(&self.policy.mode(&stack(states)?.features())?))
    }

    fn sample_actions<R: Rng + ?Sized>(&self, state: &LatentState, n: usize, rng: &mut R) -> Result<Vec<Vec<f64>>, PlanError> {
        Ok(self.policy.sample_n(state.features().data(), n, rng)?)
    }
}
