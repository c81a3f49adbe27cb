//! Recurrent state-space world model.
//!
//! The latent state carries a deterministic recurrent part (`deter`) and a
//! sampled stochastic part (`stoch`). Four heads share one parameter set:
//! representation (posterior), transition (prior), observation decoder and
//! reward decoder. Training maximizes the joint reconstruction objective,
//! implemented here as its negation.

use log::warn;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::diffmath::nn::{Activation, Dense, Mlp};
use crate::diffmath::{
    clip_global_norm, diag_gaussian_kl, gaussian_log_prob, positive_std, reparam_sample, Adam,
    Array, Bound, DiffError, ParameterSet, StepOutcome, Tape, Var,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("{what}: expected width {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{what}: batch of {got} rows does not match state batch {expected}")]
    Batch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("sequence batch is empty")]
    EmptyBatch,
    #[error("sequence batch is misaligned: {0}")]
    Misaligned(String),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldModelConfig {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub deter: usize,
    pub stoch: usize,
    pub hidden: usize,
    pub embed: usize,
    pub beta: f64,
    pub lr: f64,
    pub grad_clip: f64,
}

impl WorldModelConfig {
    pub fn new(obs_dim: usize, action_dim: usize) -> Self {
        Self {
            obs_dim,
            action_dim,
            deter: 64,
            stoch: 16,
            hidden: 64,
            embed: 64,
            beta: 1.0,
            lr: 6e-4,
            grad_clip: 100.0,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.deter + self.stoch
    }
}

/// Batch of latent states, one row per batch element.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentState {
    pub deter: Array,
    pub stoch: Array,
    pub mean: Array,
    pub stddev: Array,
}

impl LatentState {
    /// Episode-start state: everything zero except a unit stddev so the
    /// positivity invariant holds.
    pub fn initial(batch: usize, cfg: &WorldModelConfig) -> Self {
        Self {
            deter: Array::zeros(&[batch, cfg.deter]),
            stoch: Array::zeros(&[batch, cfg.stoch]),
            mean: Array::zeros(&[batch, cfg.stoch]),
            stddev: Array::full(&[batch, cfg.stoch], 1.0),
        }
    }

    pub fn batch(&self) -> usize {
        self.deter.rows()
    }

    /// `concat(deter, stoch)` per row.
    pub fn features(&self) -> Array {
        let (d, s) = (self.deter.cols(), self.stoch.cols());
        let mut data = Vec::with_capacity(self.batch() * (d + s));
        for r in 0..self.batch() {
            data.extend_from_slice(self.deter.row(r));
            data.extend_from_slice(self.stoch.row(r));
        }
        Array::matrix(self.batch(), d + s, data).expect("sized")
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            deter: self.deter.select_rows(rows),
            stoch: self.stoch.select_rows(rows),
            mean: self.mean.select_rows(rows),
            stddev: self.stddev.select_rows(rows),
        }
    }

    pub fn row(&self, i: usize) -> Self {
        self.select(&[i])
    }

    pub fn stack(states: &[LatentState]) -> Result<Self, DiffError> {
        let col = |f: fn(&LatentState) -> &Array| -> Result<Array, DiffError> {
            Array::vstack(&states.iter().map(f).collect::<Vec<_>>())
        };
        Ok(Self {
            deter: col(|s| &s.deter)?,
            stoch: col(|s| &s.stoch)?,
            mean: col(|s| &s.mean)?,
            stddev: col(|s| &s.stddev)?,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.deter.is_finite() && self.stoch.is_finite() && self.mean.is_finite() && self.stddev.is_finite()
    }
}

/// Latent state living on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LatentVars<'t> {
    pub deter: Var<'t>,
    pub stoch: Var<'t>,
    pub mean: Var<'t>,
    pub stddev: Var<'t>,
}

impl<'t> LatentVars<'t> {
    pub fn constant(tape: &'t Tape, s: &LatentState) -> Self {
        Self {
            deter: tape.leaf(s.deter.clone()),
            stoch: tape.leaf(s.stoch.clone()),
            mean: tape.leaf(s.mean.clone()),
            stddev: tape.leaf(s.stddev.clone()),
        }
    }

    pub fn features(&self) -> Result<Var<'t>, DiffError> {
        self.deter.tape().concat(&[self.deter, self.stoch])
    }

    pub fn to_state(&self) -> LatentState {
        LatentState {
            deter: (*self.deter.value()).clone(),
            stoch: (*self.stoch.value()).clone(),
            mean: (*self.mean.value()).clone(),
            stddev: (*self.stddev.value()).clone(),
        }
    }

    pub fn stop_gradient(&self) -> Self {
        Self {
            deter: self.deter.stop_gradient(),
            stoch: self.stoch.stop_gradient(),
            mean: self.mean.stop_gradient(),
            stddev: self.stddev.stop_gradient(),
        }
    }
}

/// Aligned training sequences: `actions[t]` is the action that led to
/// `observations[t]`, and `rewards[t]` was received on that transition.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceBatch {
    pub observations: Vec<Array>,
    pub actions: Vec<Array>,
    pub rewards: Vec<Array>,
}

impl SequenceBatch {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn batch_size(&self) -> usize {
        self.observations.first().map_or(0, Array::rows)
    }

    fn validate(&self, cfg: &WorldModelConfig) -> Result<(), ModelError> {
        if self.is_empty() || self.batch_size() == 0 {
            return Err(ModelError::EmptyBatch);
        }
        if self.actions.len() != self.len() || self.rewards.len() != self.len() {
            return Err(ModelError::Misaligned(format!(
                "{} observations, {} actions, {} rewards",
                self.len(),
                self.actions.len(),
                self.rewards.len()
            )));
        }
        let b = self.batch_size();
        for t in 0..self.len() {
            let (o, a, r) = (&self.observations[t], &self.actions[t], &self.rewards[t]);
            if o.shape() != [b, cfg.obs_dim] || a.shape() != [b, cfg.action_dim] || r.shape() != [b, 1] {
                return Err(ModelError::Misaligned(format!(
                    "step {t}: obs {:?}, action {:?}, reward {:?}",
                    o.shape(),
                    a.shape(),
                    r.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Per-term values of one reconstruction loss evaluation. `obs_log_lik` and
/// `reward_log_lik` are log-likelihoods (higher is better), `kl` is the
/// posterior-to-prior divergence; each is summed over time and averaged over
/// the batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub loss: f64,
    pub obs_log_lik: f64,
    pub reward_log_lik: f64,
    pub kl: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ModelMetrics {
    pub terms: LossTerms,
    pub grad_norm: f64,
    pub applied: bool,
}

impl ModelMetrics {
    /// `(name, value)` rows in a fixed order.
    pub fn fields(&self) -> [(&'static str, f64); 4] {
        [
            ("J_O", self.terms.obs_log_lik),
            ("J_R", self.terms.reward_log_lik),
            ("KL", self.terms.kl),
            ("grad_norm", self.grad_norm),
        ]
    }
}

/// Output of the graph-level reconstruction loss.
pub struct Reconstruction<'t> {
    pub loss: Var<'t>,
    pub terms: LossTerms,
    pub posteriors: Vec<LatentVars<'t>>,
}

#[derive(Clone, Debug)]
pub struct WorldModel {
    cfg: WorldModelConfig,
    params: ParameterSet,
    encoder: Dense,
    img_in: Dense,
    gru: Dense,
    prior: Mlp,
    posterior: Mlp,
    obs_decoder: Mlp,
    reward_decoder: Mlp,
    adam: Adam,
}

impl WorldModel {
    pub fn new(cfg: WorldModelConfig, rng: &mut impl Rng) -> Self {
        let mut p = ParameterSet::new();
        let (h, d, s, e) = (cfg.hidden, cfg.deter, cfg.stoch, cfg.embed);
        let encoder = Dense::new(&mut p, "encoder", cfg.obs_dim, e, Activation::Elu, rng);
        let img_in = Dense::new(&mut p, "img_in", s + cfg.action_dim, h, Activation::Elu, rng);
        let gru = Dense::new(&mut p, "gru", h + d, 3 * d, Activation::Identity, rng);
        let prior = Mlp::new(&mut p, "prior", &[d, h, 2 * s], Activation::Elu, rng);
        let posterior = Mlp::new(&mut p, "posterior", &[d + e, h, 2 * s], Activation::Elu, rng);
        let obs_decoder = Mlp::new(&mut p, "obs_decoder", &[d + s, h, h, cfg.obs_dim], Activation::Elu, rng);
        let reward_decoder = Mlp::new(&mut p, "reward_decoder", &[d + s, h, h, 1], Activation::Elu, rng);
        let adam = Adam::with_lr(cfg.lr);
        Self {
            cfg,
            params: p,
            encoder,
            img_in,
            gru,
            prior,
            posterior,
            obs_decoder,
            reward_decoder,
            adam,
        }
    }

    pub fn config(&self) -> &WorldModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    /// Swaps in a parameter set with identical names and shapes.
    pub fn set_params(&mut self, params: ParameterSet) -> Result<(), ModelError> {
        check_compatible(&self.params, &params)?;
        self.params = params;
        Ok(())
    }

    pub fn draw_noise(&self, batch: usize, rng: &mut impl Rng) -> Array {
        standard_normal(&[batch, self.cfg.stoch], rng)
    }

    /// Advances the deterministic path on `(prev.stoch, action)`.
    pub fn recurrent<'t>(&self, p: &Bound<'t>, prev: &LatentVars<'t>, action: Var<'t>) -> Result<Var<'t>, DiffError> {
        let tape = action.tape();
        let x = self.img_in.forward(p, tape.concat(&[prev.stoch, action])?)?;
        let gates = self.gru.forward(p, tape.concat(&[x, prev.deter])?)?;
        let d = self.cfg.deter;
        let reset = gates.slice_cols(0, d)?.sigmoid();
        let cand = reset.mul(gates.slice_cols(d, d)?)?.tanh();
        let update = gates.slice_cols(2 * d, d)?.sigmoid();
        // h' = u ⊙ c + (1 - u) ⊙ h
        let keep = update.neg().offset(1.0);
        update.mul(cand)?.add(keep.mul(prev.deter)?)
    }

    fn stats_to_state<'t>(
        &self,
        deter: Var<'t>,
        stats: Var<'t>,
        noise: Option<&Array>,
    ) -> Result<LatentVars<'t>, DiffError> {
        let s = self.cfg.stoch;
        let mean = stats.slice_cols(0, s)?;
        let stddev = positive_std(stats.slice_cols(s, s)?);
        let stoch = match noise {
            Some(n) => reparam_sample(mean, stddev, n)?,
            None => mean,
        };
        Ok(LatentVars {
            deter,
            stoch,
            mean,
            stddev,
        })
    }

    /// Transition-model state from an already advanced `deter`.
    pub fn prior_from_deter<'t>(
        &self,
        p: &Bound<'t>,
        deter: Var<'t>,
        noise: Option<&Array>,
    ) -> Result<LatentVars<'t>, DiffError> {
        let stats = self.prior.forward(p, deter)?;
        self.stats_to_state(deter, stats, noise)
    }

    /// Representation-model state from an already advanced `deter`.
    pub fn posterior_from_deter<'t>(
        &self,
        p: &Bound<'t>,
        deter: Var<'t>,
        obs: Var<'t>,
        noise: Option<&Array>,
    ) -> Result<LatentVars<'t>, DiffError> {
        let tape = deter.tape();
        let embedded = self.encoder.forward(p, obs)?;
        let stats = self.posterior.forward(p, tape.concat(&[deter, embedded])?)?;
        self.stats_to_state(deter, stats, noise)
    }

    /// `noise = None` takes the mean instead of sampling.
    pub fn prior_step_graph<'t>(
        &self,
        p: &Bound<'t>,
        prev: &LatentVars<'t>,
        action: Var<'t>,
        noise: Option<&Array>,
    ) -> Result<LatentVars<'t>, DiffError> {
        let deter = self.recurrent(p, prev, action)?;
        self.prior_from_deter(p, deter, noise)
    }

    pub fn reward_mean<'t>(&self, p: &Bound<'t>, state: &LatentVars<'t>) -> Result<Var<'t>, DiffError> {
        self.reward_decoder.forward(p, state.features()?)
    }

    pub fn observation_mean<'t>(&self, p: &Bound<'t>, state: &LatentVars<'t>) -> Result<Var<'t>, DiffError> {
        self.obs_decoder.forward(p, state.features()?)
    }

    fn check_step_inputs(&self, prev: &LatentState, action: &Array, obs: Option<&Array>) -> Result<(), ModelError> {
        let b = prev.batch();
        let check = |what, a: &Array, width| -> Result<(), ModelError> {
            if a.shape().len() != 2 || a.cols() != width {
                return Err(ModelError::Dimension {
                    what,
                    expected: width,
                    got: a.cols(),
                });
            }
            if a.rows() != b {
                return Err(ModelError::Batch {
                    what,
                    expected: b,
                    got: a.rows(),
                });
            }
            Ok(())
        };
        check("action", action, self.cfg.action_dim)?;
        if let Some(o) = obs {
            check("observation", o, self.cfg.obs_dim)?;
        }
        check("state.deter", &prev.deter, self.cfg.deter)?;
        check("state.stoch", &prev.stoch, self.cfg.stoch)
    }

    /// Belief update from the previous state, the action taken and the
    /// resulting observation.
    pub fn posterior_step(
        &self,
        prev: &LatentState,
        action: &Array,
        obs: &Array,
        noise: Option<&Array>,
    ) -> Result<LatentState, ModelError> {
        self.check_step_inputs(prev, action, Some(obs))?;
        let tape = Tape::new();
        let p = self.params.bind(&tape);
        let prev = LatentVars::constant(&tape, prev);
        let deter = self.recurrent(&p, &prev, tape.leaf(action.clone()))?;
        let post = self.posterior_from_deter(&p, deter, tape.leaf(obs.clone()), noise)?;
        Ok(post.to_state())
    }

    /// Imagined transition without an observation.
    pub fn prior_step(&self, prev: &LatentState, action: &Array, noise: Option<&Array>) -> Result<LatentState, ModelError> {
        self.check_step_inputs(prev, action, None)?;
        let tape = Tape::new();
        let p = self.params.bind(&tape);
        let prev = LatentVars::constant(&tape, prev);
        Ok(self.prior_step_graph(&p, &prev, tape.leaf(action.clone()), noise)?.to_state())
    }

    /// Mean of the unit-variance observation Gaussian, `[batch, obs_dim]`.
    pub fn decode_observation(&self, state: &LatentState) -> Result<Array, ModelError> {
        let tape = Tape::new();
        let p = self.params.bind(&tape);
        let s = LatentVars::constant(&tape, state);
        Ok((*self.observation_mean(&p, &s)?.value()).clone())
    }

    /// Mean of the unit-variance reward Gaussian, one value per row.
    pub fn decode_reward(&self, state: &LatentState) -> Result<Vec<f64>, ModelError> {
        let tape = Tape::new();
        let p = self.params.bind(&tape);
        let s = LatentVars::constant(&tape, state);
        Ok(self.reward_mean(&p, &s)?.value().data().to_vec())
    }

    /// Negated joint reconstruction objective on `batch`, starting from a zero
    /// state. `noise[t]` drives the posterior sample at step `t`.
    pub fn reconstruction_loss<'t>(
        &self,
        p: &Bound<'t>,
        batch: &SequenceBatch,
        noise: &[Array],
    ) -> Result<Reconstruction<'t>, ModelError> {
        batch.validate(&self.cfg)?;
        if noise.len() != batch.len() {
            return Err(ModelError::Misaligned(format!(
                "{} noise arrays for {} steps",
                noise.len(),
                batch.len()
            )));
        }
        let tape = p.vars()[0].tape();
        let b = batch.batch_size();
        let mut state = LatentVars::constant(tape, &LatentState::initial(b, &self.cfg));
        let obs_std = tape.leaf(Array::full(&[b, self.cfg.obs_dim], 1.0));
        let rew_std = tape.leaf(Array::full(&[b, 1], 1.0));
        let mut total: Option<Var<'t>> = None;
        let mut terms = LossTerms::default();
        let mut posteriors = Vec::with_capacity(batch.len());
        for t in 0..batch.len() {
            let action = tape.leaf(batch.actions[t].clone());
            let obs = tape.leaf(batch.observations[t].clone());
            let reward = tape.leaf(batch.rewards[t].clone());
            let deter = self.recurrent(p, &state, action)?;
            let prior = self.prior_from_deter(p, deter, None)?;
            let post = self.posterior_from_deter(p, deter, obs, Some(&noise[t]))?;

            let obs_lp = gaussian_log_prob(obs, self.observation_mean(p, &post)?, obs_std)?.mean_all();
            let rew_lp = gaussian_log_prob(reward, self.reward_mean(p, &post)?, rew_std)?.mean_all();
            let kl = diag_gaussian_kl(post.mean, post.stddev, prior.mean, prior.stddev)?.mean_all();
            terms.obs_log_lik += obs_lp.item();
            terms.reward_log_lik += rew_lp.item();
            terms.kl += kl.item();

            let step = obs_lp.add(rew_lp)?.neg().add(kl.scale(self.cfg.beta))?;
            total = Some(match total {
                Some(acc) => acc.add(step)?,
                None => step,
            });
            posteriors.push(post);
            state = post;
        }
        let loss = total.expect("non-empty batch");
        terms.loss = loss.item();
        Ok(Reconstruction {
            loss,
            terms,
            posteriors,
        })
    }

    /// One clipped gradient step on the reconstruction loss.
    pub fn train_model_batch(&mut self, batch: &SequenceBatch, rng: &mut impl Rng) -> Result<ModelMetrics, ModelError> {
        batch.validate(&self.cfg)?;
        let noise: Vec<Array> = (0..batch.len()).map(|_| self.draw_noise(batch.batch_size(), rng)).collect();
        let (terms, mut g) = {
            let tape = Tape::new();
            let p = self.params.bind(&tape);
            let rec = self.reconstruction_loss(&p, batch, &noise)?;
            if !rec.terms.loss.is_finite() {
                warn!("non-finite reconstruction loss; model step aborted");
                return Err(ModelError::NonFinite("reconstruction loss"));
            }
            let grads = tape.backward_to(rec.loss, p.leaves())?;
            (rec.terms, self.params.gradients(&grads, &p))
        };
        let grad_norm = clip_global_norm(&mut g, self.cfg.grad_clip);
        let applied = self.params.adam_step(&g, &self.adam) == StepOutcome::Applied;
        Ok(ModelMetrics {
            terms,
            grad_norm,
            applied,
        })
    }

    /// Posterior states for every step of `batch` under the current
    /// parameters, without building gradients.
    pub fn observe(&self, batch: &SequenceBatch, rng: &mut impl Rng) -> Result<Vec<LatentState>, ModelError> {
        batch.validate(&self.cfg)?;
        let b = batch.batch_size();
        let mut state = LatentState::initial(b, &self.cfg);
        let mut out = Vec::with_capacity(batch.len());
        for t in 0..batch.len() {
            let noise = self.draw_noise(b, rng);
            state = self.posterior_step(&state, &batch.actions[t], &batch.observations[t], Some(&noise))?;
            out.push(state.clone());
        }
        Ok(out)
    }
}

pub(crate) fn standard_normal(shape: &[usize], rng: &mut impl Rng) -> Array {
    let n: usize = shape.iter().product();
    Array::new(shape, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).expect("sized")
}

pub(crate) fn check_compatible(current: &ParameterSet, incoming: &ParameterSet) -> Result<(), ModelError> {
    if current.len() != incoming.len() {
        return Err(ModelError::Misaligned(format!(
            "parameter count {} vs {}",
            current.len(),
            incoming.len()
        )));
    }
    for id in current.ids() {
        if current.name(id) != incoming.name(id) || current.get(id).shape() != incoming.get(id).shape() {
            return Err(ModelError::Misaligned(format!(
                "parameter {} {:?} vs {} {:?}",
                current.name(id),
                current.get(id).shape(),
                incoming.name(id),
                incoming.get(id).shape()
            )));
        }
    }
    Ok(())
}
