use rand::Rng;

use super::{add_exploration_noise, uniform_actions, PlanError, PlannerConfig, SearchModel};
use crate::behavior::lambda_return;

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutOutcome {
    pub action: Vec<f64>,
    pub best: usize,
    /// Proposal candidates first, then uniform ones.
    pub candidates: Vec<Vec<f64>>,
    pub scores: Vec<f64>,
}

/// Scores every candidate root action by its immediate reward plus the
/// discounted λ-return of a policy-mode continuation of `cfg.rollout_depth`
/// steps, evaluating all candidates as one batch. Returns the highest scoring
/// candidate, lowest index on ties.
pub fn rollout_plan<M: SearchModel, R: Rng + ?Sized>(
    model: &M,
    root: &M::State,
    cfg: &PlannerConfig,
    noise_std: f64,
    rng: &mut R,
) -> Result<RolloutOutcome, PlanError> {
    cfg.validate()?;
    let mut candidates = model.sample_actions(root, cfg.proposal_candidates, rng)?;
    if noise_std > 0.0 {
        for a in &mut candidates {
            *a = add_exploration_noise(a, noise_std, rng);
        }
    }
    candidates.extend(uniform_actions(model.action_dim(), cfg.uniform_candidates, rng));
    let n = candidates.len();

    let roots = vec![root.clone(); n];
    let (mut states, first) = model.step(&roots, &candidates)?;
    let mut rewards = vec![Vec::with_capacity(cfg.rollout_depth); n];
    let mut values = vec![Vec::with_capacity(cfg.rollout_depth + 1); n];
    for (i, v) in model.value(&states)?.into_iter().enumerate() {
        values[i].push(v);
    }
    for _ in 0..cfg.rollout_depth {
        let actions = model.policy_mode(&states)?;
        let (next, r) = model.step(&states, &actions)?;
        for (i, v) in model.value(&next)?.into_iter().enumerate() {
            values[i].push(v);
            rewards[i].push(r[i]);
        }
        states = next;
    }

    let mut scores = Vec::with_capacity(n);
    for i in 0..n {
        let tail = if cfg.rollout_depth == 0 {
            values[i][0]
        } else {
            lambda_return(&rewards[i], &values[i], cfg.gamma, cfg.lambda, 0)?
        };
        scores.push(first[i] + cfg.gamma * tail);
    }
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    Ok(RolloutOutcome {
        action: candidates[best].clone(),
        best,
        candidates,
        scores,
    })
}
