use rand::Rng;

use super::EnvKind;
use crate::behavior::{PolicyNet, ValueNet};
use crate::diffmath::Array;
use crate::planner::{PlanError, SearchModel};

/// True task dynamics behind [`SearchModel`]. States are raw physics states;
/// the proposal policy and the value network read observations.
#[derive(Clone, Copy, Debug)]
pub struct OracleModel<'a> {
    pub kind: EnvKind,
    pub action_repeat: usize,
    pub policy: &'a PolicyNet,
    pub value: &'a ValueNet,
}

impl<'a> OracleModel<'a> {
    pub fn new(kind: EnvKind, action_repeat: usize, policy: &'a PolicyNet, value: &'a ValueNet) -> Self {
        Self {
            kind,
            action_repeat,
            policy,
            value,
        }
    }

    fn observations(&self, states: &[Vec<f64>]) -> Result<Array, PlanError> {
        let rows: Vec<Vec<f64>> = states.iter().map(|s| self.kind.observe(s)).collect();
        Ok(Array::from_rows(&rows)?)
    }
}

impl SearchModel for OracleModel<'_> {
    type State = Vec<f64>;

    fn action_dim(&self) -> usize {
        self.kind.action_dim()
    }

    fn step(&self, states: &[Vec<f64>], actions: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Vec<f64>), PlanError> {
        if states.len() != actions.len() {
            return Err(PlanError::Dynamics(format!("{} states but {} actions", states.len(), actions.len())));
        }
        Ok(states
            .iter()
            .zip(actions)
            .map(|(s, a)| self.kind.transition(s, a, self.action_repeat))
            .unzip())
    }

    fn value(&self, states: &[Vec<f64>]) -> Result<Vec<f64>, PlanError> {
        Ok(self.value.values(&self.observations(states)?)?)
    }

    fn policy_mode(&self, states: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, PlanError> {
        let m = self.policy.mode(&self.observations(states)?)?;
        Ok((0..m.rows()).map(|i| m.row(i).to_vec()).collect())
    }

    fn sample_actions<R: Rng + ?Sized>(&self, state: &Vec<f64>, n: usize, rng: &mut R) -> Result<Vec<Vec<f64>>, PlanError> {
        Ok(self.policy.sample_n(&self.kind.observe(state), n, rng)?)
    }
}
