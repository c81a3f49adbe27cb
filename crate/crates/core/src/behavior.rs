//! Actor-critic learned from imagined latent trajectories.
//!
//! Trajectory indexing used throughout: an imagined trajectory of horizon `H`
//! holds states `s_0..=s_H`, actions `a_0..a_{H-1}`, rewards `r_0..r_{H-1}`
//! where `r_n` is the predicted reward of `s_{n+1}` (the transition taken from
//! `s_n`), and values `v_0..=v_H` with `v_n = v(s_n)`.

use rand::Rng;

use crate::diffmath::nn::{Activation, Mlp};
use crate::diffmath::{
    clip_global_norm, positive_std, Adam, Array, Bound, DiffError, ParameterSet, StepOutcome, Tape,
    Var,
};
use crate::worldmodel::{check_compatible, standard_normal, LatentState, LatentVars, ModelError, WorldModel};

/// Latent transition and reward model that behaviors are learned in.
pub trait LatentModel {
    fn params(&self) -> &ParameterSet;
    fn stoch_dim(&self) -> usize;
    /// One imagined transition; `noise = None` takes the prior mean.
    fn imagine_step<'t>(
        &self,
        p: &Bound<'t>,
        prev: &LatentVars<'t>,
        action: Var<'t>,
        noise: Option<&Array>,
    ) -> Result<LatentVars<'t>, DiffError>;
    /// Predicted reward of `state`, `[B, 1]`.
    fn reward<'t>(&self, p: &Bound<'t>, state: &LatentVars<'t>) -> Result<Var<'t>, DiffError>;
}

impl LatentModel for WorldModel {
    fn params(&self) -> &ParameterSet {
        WorldModel::params(self)
    }

    fn stoch_dim(&self) -> usize {
        self.config().stoch
    }

    fn imagine_step<'t>(
        &self,
        p: &Bound<'t>,
        prev: &LatentVars<'t>,
        action: Var<'t>,
        noise: Option<&Array>,
    ) -> Result<LatentVars<'t>, DiffError> {
        self.prior_step_graph(p, prev, action, noise)
    }

    fn reward<'t>(&self, p: &Bound<'t>, state: &LatentVars<'t>) -> Result<Var<'t>, DiffError> {
        self.reward_mean(p, state)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BehaviorError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("index {tau} outside trajectory of horizon {horizon}")]
    OutOfRange { tau: usize, horizon: usize },
    #[error("k-step return needs k >= 1")]
    ZeroK,
    #[error("trajectory needs {rewards} rewards and {} values, got {values}", rewards + 1)]
    Misaligned { rewards: usize, values: usize },
    #[error("lambda return needs a horizon of at least one step")]
    EmptyHorizon,
    #[error("non-finite {0}")]
    NonFinite(&'static str),
}

#[derive(Clone, Debug, PartialEq)]
pub struct BehaviorConfig {
    pub horizon: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub hidden: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub grad_clip: f64,
}

impl Default for BehaviorConfig {
    fn default() -> Self {
        Self {
            horizon: 15,
            gamma: 0.99,
            lambda: 0.95,
            hidden: 64,
            actor_lr: 8e-5,
            critic_lr: 8e-5,
            grad_clip: 100.0,
        }
    }
}

fn check_trace(rewards: &[f64], values: &[f64], tau: usize) -> Result<(), BehaviorError> {
    if values.len() != rewards.len() + 1 {
        return Err(BehaviorError::Misaligned {
            rewards: rewards.len(),
            values: values.len(),
        });
    }
    if tau > rewards.len() {
        return Err(BehaviorError::OutOfRange {
            tau,
            horizon: rewards.len(),
        });
    }
    Ok(())
}

/// `Σ_{n=τ}^{h-1} γ^{n-τ} r_n + γ^{h-τ} v_h` with `h = min(τ + k, H)`.
pub fn k_step_value(rewards: &[f64], values: &[f64], gamma: f64, tau: usize, k: usize) -> Result<f64, BehaviorError> {
    check_trace(rewards, values, tau)?;
    if k == 0 {
        return Err(BehaviorError::ZeroK);
    }
    let h = (tau + k).min(rewards.len());
    // Nested form, so that at λ = 1 the λ-return recursion reproduces this
    // bit for bit.
    let mut g = values[h];
    for r in rewards[tau..h].iter().rev() {
        g = r + gamma * g;
    }
    Ok(g)
}

/// Exponentially weighted mixture of k-step returns from `tau` to the end of
/// the trajectory, evaluated by the backward recursion
/// `G_τ = r_τ + γ((1 - λ) v_{τ+1} + λ G_{τ+1})`, `G_H = v_H`.
/// `lambda = 0` yields the one-step return and `lambda = 1` the full
/// bootstrapped return.
pub fn lambda_return(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64, tau: usize) -> Result<f64, BehaviorError> {
    check_trace(rewards, values, tau)?;
    if rewards.is_empty() {
        return Err(BehaviorError::EmptyHorizon);
    }
    let horizon = rewards.len();
    let mut g = values[horizon];
    for n in (tau..horizon).rev() {
        g = rewards[n] + gamma * ((1.0 - lambda) * values[n + 1] + lambda * g);
    }
    Ok(g)
}

/// All `G_0..G_{H-1}` at once.
pub fn lambda_returns(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<Vec<f64>, BehaviorError> {
    check_trace(rewards, values, 0)?;
    if rewards.is_empty() {
        return Err(BehaviorError::EmptyHorizon);
    }
    let horizon = rewards.len();
    let mut out = vec![0.0; horizon];
    let mut g = values[horizon];
    for n in (0..horizon).rev() {
        g = rewards[n] + gamma * ((1.0 - lambda) * values[n + 1] + lambda * g);
        out[n] = g;
    }
    Ok(out)
}

/// Tape version of [`lambda_returns`] over per-step `[B, 1]` nodes; same
/// operation order, so values agree bit-for-bit.
pub fn lambda_returns_graph<'t>(
    rewards: &[Var<'t>],
    values: &[Var<'t>],
    gamma: f64,
    lambda: f64,
) -> Result<Vec<Var<'t>>, BehaviorError> {
    if values.len() != rewards.len() + 1 {
        return Err(BehaviorError::Misaligned {
            rewards: rewards.len(),
            values: values.len(),
        });
    }
    if rewards.is_empty() {
        return Err(BehaviorError::EmptyHorizon);
    }
    let horizon = rewards.len();
    let mut out = Vec::with_capacity(horizon);
    let mut g = values[horizon];
    for n in (0..horizon).rev() {
        let mix = values[n + 1].scale(1.0 - lambda).add(g.scale(lambda))?;
        g = rewards[n].add(mix.scale(gamma))?;
        out.push(g);
    }
    out.reverse();
    Ok(out)
}

/// Tanh-transformed diagonal Gaussian action model.
#[derive(Clone, Debug)]
pub struct PolicyNet {
    params: ParameterSet,
    mlp: Mlp,
    action_dim: usize,
    adam: Adam,
}

impl PolicyNet {
    pub fn new(feature_dim: usize, action_dim: usize, hidden: usize, lr: f64, rng: &mut impl Rng) -> Self {
        let mut params = ParameterSet::new();
        let mlp = Mlp::new(
            &mut params,
            "policy",
            &[feature_dim, hidden, hidden, 2 * action_dim],
            Activation::Elu,
            rng,
        );
        Self {
            params,
            mlp,
            action_dim,
            adam: Adam::with_lr(lr),
        }
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.mlp.inputs()
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    pub fn set_params(&mut self, params: ParameterSet) -> Result<(), ModelError> {
        check_compatible(&self.params, &params)?;
        self.params = params;
        Ok(())
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.adam.lr = lr;
    }

    /// Zeroes the output layer so the pre-squash mean is 0 and the stddev is
    /// `softplus(0) + 1e-4` everywhere.
    pub fn zero_output_layer(&mut self) {
        let out = self.mlp.output_layer().clone();
        self.params.get_mut(out.weight).data_mut().fill(0.0);
        self.params.get_mut(out.bias).data_mut().fill(0.0);
    }

    /// Pre-squash mean and stddev.
    pub fn distribution<'t>(&self, p: &Bound<'t>, features: Var<'t>) -> Result<(Var<'t>, Var<'t>), DiffError> {
        let out = self.mlp.forward(p, features)?;
        let a = self.action_dim;
        Ok((out.slice_cols(0, a)?, positive_std(out.slice_cols(a, a)?)))
    }

    /// `tanh(μ + σ·ε)`; `noise = None` gives the mode `tanh(μ)`.
    pub fn sample_action_graph<'t>(
        &self,
        p: &Bound<'t>,
        features: Var<'t>,
        noise: Option<&Array>,
    ) -> Result<Var<'t>, DiffError> {
        let (mean, std) = self.distribution(p, features)?;
        let pre = match noise {
            Some(eps) => crate::diffmath::reparam_sample(mean, std, eps)?,
            None => mean,
        };
        Ok(pre.tanh())
    }

    pub fn sample_action(&self, features: &Array, noise: Option<&Array>) -> Result<Array, DiffError> {
        let tape = Tape::new();
        let p = self.params.bind(&tape);
        let a = self.sample_action_graph(&p, tape.leaf(features.clone()), noise)?;
        Ok((*a.value()).clone())
    }

    pub fn mode(&self, features: &Array) -> Result<Array, DiffError> {
        self.sample_action(features, None)
    }

    /// `n` independent draws for the single feature row `features`.
    pub fn sample_n<R: Rng + ?Sized>(&self, features: &[f64], n: usize, rng: &mut R) -> Result<Vec<Vec<f64>>, DiffError> {
        let tape = Tape::new();
        let p = self.params.bind(&tape);
        let x = tape.leaf(Array::matrix(1, features.len(), features.to_vec())?);
        let (mean, std) = self.distribution(&p, x)?;
        let (mean, std) = (mean.value(), std.value());
        Ok((0..n)
            .map(|_| {
                (0..self.action_dim)
                    .map(|j| {
                        let eps: f64 = rng.sample(rand_distr::StandardNormal);
                        (mean.data()[j] + std.data()[j] * eps).tanh()
                    })
                    .collect()
            })
            .collect())
    }
}

/// Scalar state-value network.
#[derive(Clone, Debug)]
pub struct ValueNet {
    params: ParameterSet,
    mlp: Mlp,
    adam: Adam,
}

impl ValueNet {
    pub fn new(feature_dim: usize, hidden: usize, lr: f64, rng: &mut impl Rng) -> Self {
        let mut params = ParameterSet::new();
        let mlp = Mlp::new(&mut params, "value", &[feature_dim, hidden, hidden, 1], Activation::Elu, rng);
        Self {
            params,
            mlp,
            adam: Adam::with_lr(lr),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.mlp.inputs()
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    pub fn set_params(&mut self, params: ParameterSet) -> Result<(), ModelError> {
        check_compatible(&self.params, &params)?;
        self.params = params;
        Ok(())
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.adam.lr = lr;
    }

    /// Zeroes the output layer so the network predicts 0 everywhere.
    pub fn zero_output_layer(&mut self) {
        let out = self.mlp.output_layer().clone();
        self.params.get_mut(out.weight).data_mut().fill(0.0);
        self.params.get_mut(out.bias).data_mut().fill(0.0);
    }

    /// Multiplies every prediction by `factor` (rescales the linear output
    /// layer).
    pub fn scale_output(&mut self, factor: f64) {
        let out = self.mlp.output_layer().clone();
        for id in [out.weight, out.bias] {
            for x in self.params.get_mut(id).data_mut() {
                *x *= factor;
            }
        }
    }

    pub fn value_graph<'t>(&self, p: &Bound<'t>, features: Var<'t>) -> Result<Var<'t>, DiffError> {
        self.mlp.forward(p, features)
    }

    pub fn values(&self, features: &Array) -> Result<Vec<f64>, DiffError> {
        let tape = Tape::new();
        let p = self.params.bind(&tape);
        Ok(self.value_graph(&p, tape.leaf(features.clone()))?.value().data().to_vec())
    }

    /// One descent step on `mean ½(v(x) − y)²`; returns the loss before the
    /// step.
    pub fn regress(&mut self, features: &Array, targets: &[f64], grad_clip: f64) -> Result<(f64, bool), BehaviorError> {
        let tape = Tape::new();
        let p = self.params.bind(&tape);
        let v = self.value_graph(&p, tape.leaf(features.clone()))?;
        let y = tape.leaf(Array::matrix(targets.len(), 1, targets.to_vec())?);
        let loss = v.sub(y)?.square().scale(0.5).mean_all();
        let value = loss.item();
        if !value.is_finite() {
            return Err(BehaviorError::NonFinite("critic loss"));
        }
        let grads = tape.backward_to(loss, p.leaves())?;
        let mut g = self.params.gradients(&grads, &p);
        drop(p);
        drop(tape);
        clip_global_norm(&mut g, grad_clip);
        let applied = self.params.adam_step(&g, &self.adam) == StepOutcome::Applied;
        Ok((value, applied))
    }
}

/// Plain-valued record of an imagined rollout.
#[derive(Clone, Debug, PartialEq)]
pub struct ImaginedTrajectory {
    pub states: Vec<LatentState>,
    pub actions: Vec<Array>,
    /// `rewards[n][b]`: predicted reward of `s_{n+1}` for batch row `b`.
    pub rewards: Vec<Vec<f64>>,
    /// `values[n][b] = v(s_n)`.
    pub values: Vec<Vec<f64>>,
    pub gamma: f64,
    pub lambda: f64,
}

impl ImaginedTrajectory {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn batch(&self) -> usize {
        self.states[0].batch()
    }

    /// Reward and value traces of one batch row.
    pub fn trace(&self, row: usize) -> (Vec<f64>, Vec<f64>) {
        (
            self.rewards.iter().map(|r| r[row]).collect(),
            self.values.iter().map(|v| v[row]).collect(),
        )
    }

    pub fn k_step_value(&self, row: usize, tau: usize, k: usize) -> Result<f64, BehaviorError> {
        let (r, v) = self.trace(row);
        k_step_value(&r, &v, self.gamma, tau, k)
    }

    pub fn lambda_return(&self, row: usize, tau: usize) -> Result<f64, BehaviorError> {
        let (r, v) = self.trace(row);
        lambda_return(&r, &v, self.gamma, self.lambda, tau)
    }

    /// `targets[τ][b]` for τ in `0..H`.
    pub fn lambda_targets(&self) -> Result<Vec<Vec<f64>>, BehaviorError> {
        let mut out = vec![vec![0.0; self.batch()]; self.horizon()];
        for b in 0..self.batch() {
            let (r, v) = self.trace(b);
            for (tau, g) in lambda_returns(&r, &v, self.gamma, self.lambda)?.into_iter().enumerate() {
                out[tau][b] = g;
            }
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.states.iter().all(LatentState::is_finite)
            && self.actions.iter().all(Array::is_finite)
            && self.rewards.iter().flatten().all(|x| x.is_finite())
            && self.values.iter().flatten().all(|x| x.is_finite())
    }
}

/// Imagined rollout living on a tape.
pub struct ImaginedGraph<'t> {
    pub states: Vec<LatentVars<'t>>,
    pub actions: Vec<Var<'t>>,
    pub rewards: Vec<Var<'t>>,
    pub values: Vec<Var<'t>>,
}

impl ImaginedGraph<'_> {
    pub fn to_trajectory(&self, gamma: f64, lambda: f64) -> ImaginedTrajectory {
        let col = |v: &Var<'_>| v.value().data().to_vec();
        ImaginedTrajectory {
            states: self.states.iter().map(LatentVars::to_state).collect(),
            actions: self.actions.iter().map(|a| (*a.value()).clone()).collect(),
            rewards: self.rewards.iter().map(col).collect(),
            values: self.values.iter().map(col).collect(),
            gamma,
            lambda,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BehaviorMetrics {
    pub actor_objective: f64,
    pub actor_grad_norm: f64,
    pub critic_loss: f64,
    pub actor_applied: bool,
    pub critic_applied: bool,
}

/// Actor and critic with their shared imagination settings.
#[derive(Clone, Debug)]
pub struct Behavior {
    pub cfg: BehaviorConfig,
    pub policy: PolicyNet,
    pub value: ValueNet,
}

impl Behavior {
    pub fn new(cfg: BehaviorConfig, feature_dim: usize, action_dim: usize, rng: &mut impl Rng) -> Self {
        let policy = PolicyNet::new(feature_dim, action_dim, cfg.hidden, cfg.actor_lr, rng);
        let value = ValueNet::new(feature_dim, cfg.hidden, cfg.critic_lr, rng);
        Self { cfg, policy, value }
    }

    /// Rolls the transition model forward `horizon` steps from `start`,
    /// choosing actions with the policy. `sample = false` uses policy modes
    /// and prior means.
    #[allow(clippy::too_many_arguments)]
    pub fn imagine_graph<'t>(
        &self,
        wm: &impl LatentModel,
        p_wm: &Bound<'t>,
        p_pol: &Bound<'t>,
        p_val: &Bound<'t>,
        start: LatentVars<'t>,
        horizon: usize,
        sample: bool,
        rng: &mut impl Rng,
    ) -> Result<ImaginedGraph<'t>, BehaviorError> {
        let b = start.deter.value().rows();
        let stoch = wm.stoch_dim();
        let a_dim = self.policy.action_dim();
        let mut states = vec![start];
        let mut actions = Vec::with_capacity(horizon);
        let mut rewards = Vec::with_capacity(horizon);
        let mut values = vec![self.value.value_graph(p_val, start.features()?)?];
        for _ in 0..horizon {
            let s = *states.last().expect("non-empty");
            let a_noise = sample.then(|| standard_normal(&[b, a_dim], rng));
            let action = self.policy.sample_action_graph(p_pol, s.features()?, a_noise.as_ref())?;
            let z_noise = sample.then(|| standard_normal(&[b, stoch], rng));
            let next = wm.imagine_step(p_wm, &s, action, z_noise.as_ref())?;
            rewards.push(wm.reward(p_wm, &next)?);
            values.push(self.value.value_graph(p_val, next.features()?)?);
            actions.push(action);
            states.push(next);
        }
        Ok(ImaginedGraph {
            states,
            actions,
            rewards,
            values,
        })
    }

    /// Imagined rollout with every network frozen.
    pub fn imagine_rollout(
        &self,
        wm: &impl LatentModel,
        start: &LatentState,
        horizon: usize,
        rng: &mut impl Rng,
    ) -> Result<ImaginedTrajectory, BehaviorError> {
        let tape = Tape::new();
        let p_wm = wm.params().bind(&tape);
        let p_pol = self.policy.params().bind(&tape);
        let p_val = self.value.params().bind(&tape);
        let start = LatentVars::constant(&tape, start);
        let g = self.imagine_graph(wm, &p_wm, &p_pol, &p_val, start, horizon, true, rng)?;
        Ok(g.to_trajectory(self.cfg.gamma, self.cfg.lambda))
    }

    /// Mean λ-return objective of the policy from `starts`, with the world
    /// model and value network frozen. Returns the objective node and the
    /// policy binding on `tape`.
    fn actor_objective<'t>(
        &self,
        tape: &'t Tape,
        wm: &impl LatentModel,
        starts: &LatentState,
        rng: &mut impl Rng,
    ) -> Result<(Var<'t>, Bound<'t>, ImaginedGraph<'t>), BehaviorError> {
        let p_wm = wm.params().bind_frozen(tape);
        let p_pol = self.policy.params().bind(tape);
        let p_val = self.value.params().bind_frozen(tape);
        let start = LatentVars::constant(tape, starts);
        let g = self.imagine_graph(wm, &p_wm, &p_pol, &p_val, start, self.cfg.horizon, true, rng)?;
        let returns = lambda_returns_graph(&g.rewards, &g.values, self.cfg.gamma, self.cfg.lambda)?;
        let mut total = returns[0];
        for r in &returns[1..] {
            total = total.add(*r)?;
        }
        let objective = total.scale(1.0 / returns.len() as f64).mean_all();
        Ok((objective, p_pol, g))
    }

    /// Gradients of the actor objective for every parameter set involved:
    /// `(policy, value, world model)`. Exposed for tests of the freezing
    /// contract.
    pub fn actor_gradients(
        &self,
        wm: &impl LatentModel,
        starts: &LatentState,
        rng: &mut impl Rng,
    ) -> Result<(f64, Vec<Array>, Vec<Array>, Vec<Array>), BehaviorError> {
        let tape = Tape::new();
        let p_wm = wm.params().bind_frozen(&tape);
        let p_pol = self.policy.params().bind(&tape);
        let p_val = self.value.params().bind_frozen(&tape);
        let start = LatentVars::constant(&tape, starts);
        let g = self.imagine_graph(wm, &p_wm, &p_pol, &p_val, start, self.cfg.horizon, true, rng)?;
        let returns = lambda_returns_graph(&g.rewards, &g.values, self.cfg.gamma, self.cfg.lambda)?;
        let mut total = returns[0];
        for r in &returns[1..] {
            total = total.add(*r)?;
        }
        let objective = total.scale(1.0 / returns.len() as f64).mean_all();
        let grads = tape.backward(objective)?;
        Ok((
            objective.item(),
            self.policy.params().gradients(&grads, &p_pol),
            self.value.params().gradients(&grads, &p_val),
            wm.params().gradients(&grads, &p_wm),
        ))
    }

    /// One ascent step of the policy on the mean λ-return; returns the
    /// objective and the imagined trajectory it was computed on.
    pub fn actor_update(
        &mut self,
        wm: &impl LatentModel,
        starts: &LatentState,
        rng: &mut impl Rng,
    ) -> Result<(f64, f64, bool, ImaginedTrajectory), BehaviorError> {
        let tape = Tape::new();
        let (objective, p_pol, g) = self.actor_objective(&tape, wm, starts, rng)?;
        let value = objective.item();
        let traj = g.to_trajectory(self.cfg.gamma, self.cfg.lambda);
        if !value.is_finite() {
            log::warn!("non-finite actor objective; step skipped");
            return Ok((value, f64::NAN, false, traj));
        }
        let grads = tape.backward_to(objective.neg(), p_pol.leaves())?;
        let mut gr = self.policy.params().gradients(&grads, &p_pol);
        drop(p_pol);
        drop(g);
        drop(tape);
        let norm = clip_global_norm(&mut gr, self.cfg.grad_clip);
        let applied = self.policy.params.adam_step(&gr, &self.policy.adam) == StepOutcome::Applied;
        Ok((value, norm, applied, traj))
    }

    /// One regression step of the value network toward stop-gradient
    /// λ-return targets of `traj`, over states `s_0..s_{H-1}`.
    pub fn critic_update(&mut self, traj: &ImaginedTrajectory) -> Result<(f64, bool), BehaviorError> {
        let targets = traj.lambda_targets()?;
        let feats: Vec<Array> = traj.states[..traj.horizon()].iter().map(LatentState::features).collect();
        let x = Array::vstack(&feats.iter().collect::<Vec<_>>())?;
        let y: Vec<f64> = targets.into_iter().flatten().collect();
        let clip = self.cfg.grad_clip;
        match self.value.regress(&x, &y, clip) {
            Err(BehaviorError::NonFinite(what)) => {
                log::warn!("non-finite {what}; critic step skipped");
                Ok((f64::NAN, false))
            }
            other => other,
        }
    }

    /// Actor step followed by a critic step on the same imagination.
    pub fn update(&mut self, wm: &impl LatentModel, starts: &LatentState, rng: &mut impl Rng) -> Result<BehaviorMetrics, BehaviorError> {
        let (actor_objective, actor_grad_norm, actor_applied, traj) = self.actor_update(wm, starts, rng)?;
        let (critic_loss, critic_applied) = if traj.is_finite() {
            self.critic_update(&traj)?
        } else {
            (f64::NAN, false)
        };
        Ok(BehaviorMetrics {
            actor_objective,
            actor_grad_norm,
            critic_loss,
            actor_applied,
            critic_applied,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_step_worked_example() {
        let v = k_step_value(&[0.5, 1.0], &[0.0, 2.0, 1.0], 0.9, 0, 1).unwrap();
        assert!((v - 2.3).abs() < 1e-12);
    }

    #[test]
    fn k_step_clamps_and_gamma_zero() {
        let r = [0.3, -0.2, 0.9];
        let v = [1.0, 2.0, 3.0, 4.0];
        let full = 0.3 + 0.9 * -0.2 + 0.81 * 0.9 + 0.729 * 4.0;
        for k in 3..6 {
            assert!((k_step_value(&r, &v, 0.9, 0, k).unwrap() - full).abs() < 1e-12);
        }
        assert_eq!(k_step_value(&r, &v, 0.0, 1, 2).unwrap(), -0.2);
        assert_eq!(k_step_value(&r, &v, 0.9, 3, 1).unwrap(), 4.0);
    }

    #[test]
    fn k_step_errors() {
        let r = [0.3];
        let v = [1.0, 2.0];
        assert_eq!(k_step_value(&r, &v, 0.9, 0, 0), Err(BehaviorError::ZeroK));
        assert!(matches!(k_step_value(&r, &v, 0.9, 2, 1), Err(BehaviorError::OutOfRange { .. })));
        assert!(matches!(k_step_value(&r, &[1.0], 0.9, 0, 1), Err(BehaviorError::Misaligned { .. })));
        assert!(matches!(lambda_return(&[], &[1.0], 0.9, 0.5, 0), Err(BehaviorError::EmptyHorizon)));
    }

    #[test]
    fn lambda_worked_example() {
        let g = lambda_return(&[0.5, 1.0], &[0.0, 2.0, 1.0], 0.9, 0.5, 0).unwrap();
        assert!((g - 2.255).abs() < 1e-12);
    }

    #[test]
    fn lambda_limits() {
        let r = [0.3, -0.2, 0.9, 0.4];
        let v = [1.0, 2.0, 3.0, 4.0, -1.0];
        let one = lambda_return(&r, &v, 0.95, 1.0, 0).unwrap();
        assert!((one - k_step_value(&r, &v, 0.95, 0, 4).unwrap()).abs() < 1e-12);
        let zero = lambda_return(&r, &v, 0.95, 0.0, 1).unwrap();
        assert_eq!(zero, k_step_value(&r, &v, 0.95, 1, 1).unwrap());
    }
}
