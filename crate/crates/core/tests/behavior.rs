mod common;

use common::{random_array, rng};
use latplan_core::behavior::{
    k_step_value, lambda_return, lambda_returns, lambda_returns_graph, Behavior, BehaviorConfig, ImaginedTrajectory,
    LatentModel,
};
use latplan_core::diffmath::{Array, Bound, DiffError, ParameterSet, Tape, Var};
use latplan_core::worldmodel::{LatentState, LatentVars, WorldModel, WorldModelConfig};
use proptest::prelude::*;
use rand::Rng;

/// Direct evaluation of the weighted k-step mixture, written independently
/// of the library recursion.
fn mixture_oracle(r: &[f64], v: &[f64], gamma: f64, lambda: f64, tau: usize) -> f64 {
    let horizon = r.len();
    let kstep = |k: usize| {
        let h = (tau + k).min(horizon);
        let mut total = 0.0;
        for n in tau..h {
            total += gamma.powi((n - tau) as i32) * r[n];
        }
        total + gamma.powi((h - tau) as i32) * v[h]
    };
    let last = horizon - tau;
    if last == 0 {
        return v[horizon];
    }
    let mut total = 0.0;
    for n in 1..last {
        total += (1.0 - lambda) * lambda.powi(n as i32 - 1) * kstep(n);
    }
    total + lambda.powi(last as i32 - 1) * kstep(last)
}

/// Latent model whose stochastic state is the action and whose reward is
/// `-‖a‖²`; it has no parameters.
struct ActionPenalty {
    params: ParameterSet,
    action_dim: usize,
}

impl LatentModel for ActionPenalty {
    fn params(&self) -> &ParameterSet {
        &self.params
    }

    fn stoch_dim(&self) -> usize {
        self.action_dim
    }

    fn imagine_step<'t>(
        &self,
        _p: &Bound<'t>,
        prev: &LatentVars<'t>,
        action: Var<'t>,
        _noise: Option<&Array>,
    ) -> Result<LatentVars<'t>, DiffError> {
        let tape = action.tape();
        Ok(LatentVars {
            deter: prev.deter,
            stoch: action,
            mean: action,
            stddev: tape.leaf(Array::full(&action.shape(), 1.0)),
        })
    }

    fn reward<'t>(&self, _p: &Bound<'t>, state: &LatentVars<'t>) -> Result<Var<'t>, DiffError> {
        let ones = state.stoch.tape().leaf(Array::full(&[self.action_dim, 1], 1.0));
        Ok(state.stoch.square().matmul(ones)?.neg())
    }
}

fn penalty_start(batch: usize, rng: &mut impl Rng) -> LatentState {
    let deter = random_array(rng, &[batch, 3], -1.0, 1.0);
    LatentState {
        deter,
        stoch: Array::zeros(&[batch, 2]),
        mean: Array::zeros(&[batch, 2]),
        stddev: Array::full(&[batch, 2], 1.0),
    }
}

#[test]
fn graph_returns_match_plain_returns_bitwise() {
    let mut r = rng(1);
    let h = 15;
    let rewards: Vec<f64> = (0..h).map(|_| r.random_range(-1.0..1.0)).collect();
    let values: Vec<f64> = (0..=h).map(|_| r.random_range(-5.0..5.0)).collect();
    let tape = Tape::new();
    let rv: Vec<_> = rewards.iter().map(|&x| tape.leaf(Array::matrix(1, 1, vec![x]).unwrap())).collect();
    let vv: Vec<_> = values.iter().map(|&x| tape.leaf(Array::matrix(1, 1, vec![x]).unwrap())).collect();
    let graph = lambda_returns_graph(&rv, &vv, 0.99, 0.95).unwrap();
    let plain = lambda_returns(&rewards, &values, 0.99, 0.95).unwrap();
    for (tau, g) in graph.iter().enumerate() {
        assert_eq!(g.item(), plain[tau]);
        assert_eq!(plain[tau], lambda_return(&rewards, &values, 0.99, 0.95, tau).unwrap());
    }
}

#[test]
fn imagined_rewards_belong_to_successor_states() {
    let cfg = WorldModelConfig::new(3, 2);
    let mut r = rng(2);
    let wm = WorldModel::new(cfg.clone(), &mut r);
    let beh = Behavior::new(BehaviorConfig::default(), cfg.feature_dim(), 2, &mut r);
    let start = LatentState::initial(4, &cfg);
    let traj = beh.imagine_rollout(&wm, &start, 5, &mut r).unwrap();
    assert_eq!(traj.horizon(), 5);
    assert_eq!(traj.states.len(), 6);
    assert_eq!(traj.values.len(), 6);
    assert!(traj.is_finite());
    for n in 0..5 {
        assert_eq!(traj.rewards[n], wm.decode_reward(&traj.states[n + 1]).unwrap());
        assert_eq!(traj.values[n], beh.value.values(&traj.states[n].features()).unwrap());
    }
}

#[test]
fn actions_stay_inside_open_box() {
    let mut r = rng(3);
    let beh = Behavior::new(BehaviorConfig::default(), 6, 2, &mut r);
    let feats = random_array(&mut r, &[1, 6], -10.0, 10.0);
    let draws = beh.policy.sample_n(feats.data(), 50_000, &mut r).unwrap();
    assert!(draws.iter().flatten().all(|a| a.abs() < 1.0));
    assert_eq!(draws.len() * draws[0].len(), 100_000);
}

#[test]
fn actor_gradient_only_reaches_policy() {
    let cfg = WorldModelConfig::new(3, 2);
    let mut r = rng(4);
    let wm = WorldModel::new(cfg.clone(), &mut r);
    let beh = Behavior::new(BehaviorConfig { horizon: 4, ..BehaviorConfig::default() }, cfg.feature_dim(), 2, &mut r);
    let start = LatentState::initial(3, &cfg);
    let (objective, pol, val, model) = beh.actor_gradients(&wm, &start, &mut r).unwrap();
    assert!(objective.is_finite());
    assert!(pol.iter().map(Array::sq_norm).sum::<f64>() > 0.0);
    assert!(val.iter().all(|g| g.data().iter().all(|&x| x == 0.0)));
    assert!(model.iter().all(|g| g.data().iter().all(|&x| x == 0.0)));
}

#[test]
fn actor_update_leaves_model_and_critic_untouched() {
    let cfg = WorldModelConfig::new(3, 2);
    let mut r = rng(5);
    let wm = WorldModel::new(cfg.clone(), &mut r);
    let mut beh = Behavior::new(BehaviorConfig { horizon: 4, ..BehaviorConfig::default() }, cfg.feature_dim(), 2, &mut r);
    let wm_before = wm.params().clone();
    let val_before = beh.value.params().clone();
    let pol_before = beh.policy.params().clone();
    let start = LatentState::initial(3, &cfg);
    let (_, _, applied, traj) = beh.actor_update(&wm, &start, &mut r).unwrap();
    assert!(applied);
    assert_eq!(wm.params(), &wm_before);
    assert_eq!(beh.value.params(), &val_before);
    assert_ne!(beh.policy.params(), &pol_before);
    assert_eq!(traj.horizon(), 4);
}

#[test]
fn synthetic_penalty_drives_mode_to_zero() {
    let mut r = rng(6);
    let model = ActionPenalty {
        params: ParameterSet::new(),
        action_dim: 2,
    };
    let cfg = BehaviorConfig {
        horizon: 3,
        actor_lr: 3e-3,
        ..BehaviorConfig::default()
    };
    let mut beh = Behavior::new(cfg, 5, 2, &mut r);
    beh.value.zero_output_layer();
    let start = penalty_start(16, &mut r);
    let mode_norm = |beh: &Behavior| {
        let m = beh.policy.mode(&start.features()).unwrap();
        (0..m.rows())
            .map(|i| m.row(i).iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    };
    let before = mode_norm(&beh);
    for _ in 0..200 {
        beh.actor_update(&model, &start, &mut r).unwrap();
    }
    let after = mode_norm(&beh);
    assert!(after < 0.1, "mode norm {before} -> {after}");
}

#[test]
fn critic_at_targets_has_zero_loss_and_stays_put() {
    let mut r = rng(7);
    let mut beh = Behavior::new(BehaviorConfig::default(), 5, 2, &mut r);
    beh.value.zero_output_layer();
    let states: Vec<LatentState> = (0..4).map(|_| penalty_start(3, &mut r)).collect();
    let traj = ImaginedTrajectory {
        actions: vec![Array::zeros(&[3, 2]); 3],
        rewards: vec![vec![0.0; 3]; 3],
        values: vec![vec![0.0; 3]; 4],
        states,
        gamma: 0.99,
        lambda: 0.95,
    };
    let before = beh.value.params().clone();
    let (loss, _) = beh.critic_update(&traj).unwrap();
    assert_eq!(loss, 0.0);
    for id in before.ids() {
        assert_eq!(beh.value.params().get(id), before.get(id));
    }
}

#[test]
fn critic_regression_moves_toward_targets() {
    let mut r = rng(8);
    let mut beh = Behavior::new(BehaviorConfig { critic_lr: 1e-2, ..BehaviorConfig::default() }, 5, 2, &mut r);
    let states: Vec<LatentState> = (0..3).map(|_| penalty_start(8, &mut r)).collect();
    let traj = ImaginedTrajectory {
        actions: vec![Array::zeros(&[8, 2]); 2],
        rewards: vec![vec![1.0; 8]; 2],
        values: vec![vec![0.5; 8]; 3],
        states,
        gamma: 0.9,
        lambda: 0.5,
    };
    let first = beh.critic_update(&traj).unwrap().0;
    let mut last = first;
    for _ in 0..100 {
        last = beh.critic_update(&traj).unwrap().0;
    }
    assert!(last < 0.1 * first, "{first} -> {last}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn lambda_return_matches_weighted_mixture(
        rewards in prop::collection::vec(-2.0f64..2.0, 1..20),
        extra in prop::collection::vec(-10.0f64..10.0, 21),
        gamma in 0.0f64..1.0,
        lambda in 0.0f64..1.0,
        tau_frac in 0.0f64..1.0,
    ) {
        let values = &extra[..rewards.len() + 1];
        let tau = ((rewards.len() as f64) * tau_frac) as usize;
        let got = lambda_return(&rewards, values, gamma, lambda, tau).unwrap();
        let want = mixture_oracle(&rewards, values, gamma, lambda, tau);
        prop_assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        let one = lambda_return(&rewards, values, gamma, 1.0, tau).unwrap();
        let full = k_step_value(&rewards, values, gamma, tau, rewards.len()).unwrap();
        prop_assert!((one - full).abs() < 1e-10);
    }
}
