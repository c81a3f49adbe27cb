//! Planner benchmark on the true dynamics.

use std::time::Instant;

use super::{random_baseline, stream, AgentError, Episode};
use crate::behavior::{PolicyNet, ValueNet};
use crate::envs::{fit_oracle_critic, Env, EnvKind, EnvSpec, OracleModel};
use crate::planner::{plan, PlannerConfig};

/// A fitted reference critic plus a fixed proposal policy for planning on
/// the true dynamics of one environment.
pub struct OracleBench {
    pub spec: EnvSpec,
    pub gamma: f64,
    pub value: ValueNet,
    /// Zero output layer: every proposal is `tanh(N(0, σ₀²))` with the
    /// initial σ₀ = softplus(0).
    pub proposal: PolicyNet,
    /// Fit error of the critic on the grid, in return units.
    pub critic_rmse: f64,
}

impl OracleBench {
    pub fn new(spec: EnvSpec, gamma: f64, hidden: usize, critic_steps: usize, seed: u64) -> Result<Self, AgentError> {
        let kind = spec.kind;
        let mut rng = stream(seed, "oracle-critic");
        let fit = fit_oracle_critic(kind, spec.action_repeat, gamma, hidden, critic_steps, &mut rng)?;
        let mut proposal = PolicyNet::new(kind.obs_dim(), kind.action_dim(), hidden, 1e-3, &mut rng);
        proposal.zero_output_layer();
        Ok(Self {
            spec,
            gamma,
            value: fit.value,
            proposal,
            critic_rmse: fit.rmse,
        })
    }

    pub fn for_env(kind: EnvKind, seed: u64) -> Result<Self, AgentError> {
        Self::new(EnvSpec::new(kind, 200, 2)?, 0.99, 64, 4000, seed)
    }

    /// `episodes` noise-free episodes planned with `cfg` on the true
    /// dynamics. Episode starts depend on `seed` only, so every mode sees
    /// the same initial states.
    pub fn run(&self, cfg: &PlannerConfig, episodes: usize, seed: u64, record_timing: bool) -> Result<Vec<Episode>, AgentError> {
        let model = OracleModel::new(self.spec.kind, self.spec.action_repeat, &self.proposal, &self.value);
        let cfg = PlannerConfig { gamma: self.gamma, ..cfg.clone() };
        let mut env = Env::new(self.spec.clone());
        let mut env_rng = stream(seed, "bench-env");
        let mut rng = stream(seed, "bench-planner");
        let mut out = Vec::with_capacity(episodes);
        for _ in 0..episodes {
            env.reset(&mut env_rng);
            let mut ep = Episode::default();
            let mut ms = 0.0;
            while !env.is_done() {
                let state = env.state().expect("reset").to_vec();
                let start = Instant::now();
                let d = plan(&model, &state, &cfg, 0.0, &mut rng)?;
                ms += start.elapsed().as_secs_f64() * 1e3;
                let t = env.step(&d.action)?;
                ep.total_return += t.reward;
                ep.transitions.push(t);
            }
            ep.plan_time_ms = if record_timing { ms / ep.transitions.len() as f64 } else { 0.0 };
            out.push(ep);
        }
        Ok(out)
    }

    pub fn random_baseline(&self, episodes: usize, seed: u64) -> Result<f64, AgentError> {
        random_baseline(&self.spec, episodes, seed)
    }
}
