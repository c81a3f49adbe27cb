mod common;

use std::collections::HashSet;

use latplan_core::agent::{
    load_checkpoint, random_episode, read_checkpoint, read_metrics, run_experiment, save_checkpoint, stream,
    write_checkpoint, Agent, AgentError, Phase, ReplayBuffer, TrainConfig, METRICS_HEADER,
};
use latplan_core::diffmath::{Array, ParameterSet};
use latplan_core::envs::{Env, EnvKind};
use latplan_core::planner::PlanMode;
use latplan_core::worldmodel::LatentState;
use proptest::prelude::*;
use rand::Rng;

fn tiny(mode: PlanMode) -> TrainConfig {
    TrainConfig {
        mode,
        episode_length: 40,
        action_repeat: 2,
        total_steps: 200,
        seed_episodes: 2,
        train_every: 40,
        model_updates: 2,
        behavior_updates: 2,
        batch_size: 4,
        seq_len: 8,
        deter: 8,
        stoch: 4,
        hidden: 8,
        embed: 8,
        behavior_hidden: 8,
        horizon: 3,
        simulations: 6,
        proposal_candidates: 6,
        uniform_candidates: 3,
        rollout_depth: 2,
        fixed_children: 3,
        eval_episodes: 2,
        record_timing: false,
        ..TrainConfig::default()
    }
}

fn filled_replay(cfg: &TrainConfig, episodes: usize, seed: u64) -> ReplayBuffer {
    let spec = cfg.env_spec().unwrap();
    let mut replay = ReplayBuffer::new(cfg.replay_capacity, spec.obs_dim, spec.action_dim);
    let mut env = Env::new(spec);
    let (mut a, mut b) = (stream(seed, "env"), stream(seed, "act"));
    for _ in 0..episodes {
        replay.push_episode(&random_episode(&mut env, &mut a, &mut b).unwrap().transitions).unwrap();
    }
    replay
}

fn same_params(a: &ParameterSet, b: &ParameterSet) -> bool {
    a.len() == b.len() && a.ids().all(|id| a.name(id) == b.name(id) && a.get(id) == b.get(id))
}

#[test]
fn stored_steps_pair_each_action_with_its_outcome() {
    let cfg = tiny(PlanMode::Dreamer);
    let spec = cfg.env_spec().unwrap();
    let mut env = Env::new(spec.clone());
    let (mut a, mut b) = (stream(1, "env"), stream(1, "act"));
    let ep = random_episode(&mut env, &mut a, &mut b).unwrap();
    assert_eq!(ep.transitions.len(), spec.decisions());
    let mut replay = ReplayBuffer::new(1000, spec.obs_dim, spec.action_dim);
    replay.push_episode(&ep.transitions).unwrap();
    for (s, t) in replay.episode(0).iter().zip(&ep.transitions) {
        assert_eq!(s.action, t.action);
        assert_eq!(s.obs, t.next_obs);
        assert_eq!(s.reward, t.reward);
    }
}

#[test]
fn full_length_windows_are_whole_episodes() {
    let cfg = tiny(PlanMode::Dreamer);
    let replay = filled_replay(&cfg, 3, 2);
    let len = cfg.env_spec().unwrap().decisions();
    assert_eq!(replay.num_windows(len), 3);
    let w = replay.sample_windows(20, len, &mut common::rng(3)).unwrap();
    assert!(w.iter().all(|&(_, s)| s == 0));
    let batch = replay.batch_from_windows(&w[..1], len).unwrap();
    let ep = replay.episode(w[0].0);
    for t in 0..len {
        assert_eq!(batch.observations[t].row(0), &ep[t].obs[..]);
    }
}

#[test]
fn sampling_is_seeded() {
    let cfg = tiny(PlanMode::Dreamer);
    let replay = filled_replay(&cfg, 3, 4);
    let a = replay.sample_rollouts(5, 8, &mut common::rng(9)).unwrap();
    let b = replay.sample_rollouts(5, 8, &mut common::rng(9)).unwrap();
    assert_eq!(a.observations, b.observations);
    assert_eq!(a.actions, b.actions);
    assert_eq!(a.rewards, b.rewards);
}

#[test]
fn insufficient_data_is_rejected() {
    let cfg = tiny(PlanMode::Dreamer);
    let empty = ReplayBuffer::new(100, 4, 2);
    assert!(matches!(
        empty.sample_rollouts(2, 4, &mut common::rng(0)),
        Err(AgentError::InsufficientData { .. })
    ));
    let replay = filled_replay(&cfg, 1, 5);
    assert!(replay.sample_rollouts(2, 21, &mut common::rng(0)).is_err());
    assert!(replay.sample_rollouts(2, 20, &mut common::rng(0)).is_ok());
}

#[test]
fn capacity_drops_oldest_episodes() {
    let cfg = TrainConfig {
        replay_capacity: 50,
        ..tiny(PlanMode::Dreamer)
    };
    let replay = filled_replay(&cfg, 5, 6);
    assert_eq!(replay.num_episodes(), 2);
    assert_eq!(replay.num_steps(), 40);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn windows_stay_inside_episodes(
        lens in prop::collection::vec(1usize..30, 1..6),
        len in 1usize..12,
        seed in any::<u64>(),
    ) {
        let mut replay = ReplayBuffer::new(10_000, 1, 1);
        for (e, &n) in lens.iter().enumerate() {
            let steps: Vec<_> = (0..n)
                .map(|i| latplan_core::envs::Transition {
                    obs: vec![0.0],
                    action: vec![e as f64],
                    reward: i as f64,
                    next_obs: vec![i as f64],
                    step_index: i,
                    done: i + 1 == n,
                })
                .collect();
            replay.push_episode(&steps).unwrap();
        }
        let expected: usize = lens.iter().map(|&n| (n + 1).saturating_sub(len)).sum();
        prop_assert_eq!(replay.num_windows(len), expected);
        let mut r = common::rng(seed);
        match replay.sample_windows(300, len, &mut r) {
            Ok(w) => {
                for &(e, s) in &w {
                    prop_assert!(s + len <= lens[e]);
                }
                let batch = replay.batch_from_windows(&w, len).unwrap();
                prop_assert_eq!(batch.len(), len);
                for (row, &(e, s)) in w.iter().enumerate() {
                    for t in 0..len {
                        // One episode per window, consecutive steps.
                        prop_assert_eq!(batch.actions[t].row(row)[0], e as f64);
                        prop_assert_eq!(batch.rewards[t].row(row)[0], (s + t) as f64);
                    }
                }
            }
            Err(_) => prop_assert_eq!(expected, 0),
        }
    }
}

#[test]
fn window_draws_cover_the_buffer_uniformly() {
    let mut replay = ReplayBuffer::new(10_000, 1, 1);
    for n in [10usize, 30] {
        let steps: Vec<_> = (0..n)
            .map(|i| latplan_core::envs::Transition {
                obs: vec![0.0],
                action: vec![0.0],
                reward: 0.0,
                next_obs: vec![0.0],
                step_index: i,
                done: false,
            })
            .collect();
        replay.push_episode(&steps).unwrap();
    }
    // 6 windows in the first episode, 26 in the second.
    let w = replay.sample_windows(10_000, 5, &mut common::rng(11)).unwrap();
    let first = w.iter().filter(|x| x.0 == 0).count() as f64 / 1e4;
    assert!((first - 6.0 / 32.0).abs() < 0.015, "{first}");
    let distinct: HashSet<_> = w.iter().collect();
    assert_eq!(distinct.len(), 32);
}

#[test]
fn greedy_dreamer_acts_with_the_policy_mode() {
    let cfg = tiny(PlanMode::Dreamer);
    let agent = Agent::new(cfg.clone()).unwrap();
    let ep = agent.evaluate(1, 5).unwrap().remove(0);
    assert_eq!(ep.transitions.len(), cfg.env_spec().unwrap().decisions());
    // Replay the belief chain and compare with tanh of the policy mean.
    let wm = agent.model();
    let mut belief = LatentState::initial(1, wm.config());
    let first = &ep.transitions[0];
    belief = wm
        .posterior_step(&belief, &Array::matrix(1, 2, vec![0.0, 0.0]).unwrap(), &Array::matrix(1, 4, first.obs.clone()).unwrap(), None)
        .unwrap();
    for t in &ep.transitions {
        let mode = agent.behavior().policy.mode(&belief.features()).unwrap();
        assert_eq!(t.action, mode.row(0).to_vec());
        let a = Array::matrix(1, 2, t.action.clone()).unwrap();
        belief = wm.posterior_step(&belief, &a, &Array::matrix(1, 4, t.next_obs.clone()).unwrap(), None).unwrap();
    }
}

#[test]
fn zero_updates_change_nothing() {
    let cfg = TrainConfig {
        model_updates: 0,
        behavior_updates: 0,
        ..tiny(PlanMode::Dreamer)
    };
    let mut agent = Agent::new(cfg.clone()).unwrap();
    let before = agent.checkpoint();
    let m = agent.train_iteration(&filled_replay(&cfg, 2, 7)).unwrap();
    let after = agent.checkpoint();
    assert!(same_params(&before.world_model, &after.world_model));
    assert!(same_params(&before.policy, &after.policy));
    assert!(same_params(&before.value, &after.value));
    assert!(m.j_o.is_nan() && m.actor_objective.is_nan());
    assert!(agent.phase_log().is_empty());
}

#[test]
fn model_phase_precedes_behavior_phase() {
    let cfg = TrainConfig {
        model_updates: 3,
        behavior_updates: 2,
        ..tiny(PlanMode::Dreamer)
    };
    let mut agent = Agent::new(cfg.clone()).unwrap();
    let before = agent.checkpoint();
    let m = agent.train_iteration(&filled_replay(&cfg, 2, 8)).unwrap();
    assert_eq!(
        agent.phase_log(),
        [Phase::ModelUpdate, Phase::ModelUpdate, Phase::ModelUpdate, Phase::BehaviorUpdate, Phase::BehaviorUpdate]
    );
    for v in [m.j_o, m.j_r, m.kl, m.actor_objective, m.critic_loss] {
        assert!(v.is_finite());
    }
    let after = agent.checkpoint();
    assert!(!same_params(&before.world_model, &after.world_model));
    assert!(!same_params(&before.policy, &after.policy));
}

#[test]
fn checkpoint_round_trip_reproduces_evaluation() {
    let cfg = tiny(PlanMode::MctsPw);
    let mut agent = Agent::new(cfg.clone()).unwrap();
    agent.train_iteration(&filled_replay(&cfg, 2, 9)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.lpln");
    save_checkpoint(&path, &agent.checkpoint()).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"LPLN");

    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.config, cfg);
    let original = agent.checkpoint();
    assert!(same_params(&loaded.world_model, &original.world_model));
    assert_eq!(loaded.world_model.step(), original.world_model.step());
    for id in loaded.policy.ids() {
        assert_eq!(loaded.policy.first_moment(id), original.policy.first_moment(id));
        assert_eq!(loaded.policy.second_moment(id), original.policy.second_moment(id));
    }
    let restored = Agent::from_checkpoint(loaded).unwrap();
    let a: Vec<_> = agent.evaluate(2, 3).unwrap().iter().map(|e| e.actions()).collect();
    let b: Vec<_> = restored.evaluate(2, 3).unwrap().iter().map(|e| e.actions()).collect();
    assert_eq!(a, b);

    let mut again = Vec::new();
    write_checkpoint(&mut again, &restored.checkpoint()).unwrap();
    assert_eq!(again, bytes);
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let cfg = tiny(PlanMode::Dreamer);
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, &Agent::new(cfg).unwrap().checkpoint()).unwrap();
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(read_checkpoint(&mut magic.as_slice()).is_err());
    let mut version = bytes.clone();
    version[4] = 9;
    assert!(read_checkpoint(&mut version.as_slice()).is_err());
    let mut hash = bytes.clone();
    hash[8] ^= 1;
    let e = read_checkpoint(&mut hash.as_slice()).unwrap_err();
    assert!(e.to_string().contains("hash"), "{e}");
    assert!(read_checkpoint(&mut &bytes[..bytes.len() - 3]).is_err());
    assert!(read_checkpoint(&mut bytes.as_slice()).is_ok());
}

/// Checkpoint bytes with the output directory normalised, since it is part
/// of the stored config and differs between the two runs.
fn checkpoint_bytes_without_dir(path: &std::path::Path) -> Vec<u8> {
    let mut ck = load_checkpoint(path).unwrap();
    ck.config.output_dir = "run".into();
    let mut out = Vec::new();
    write_checkpoint(&mut out, &ck).unwrap();
    out
}

#[test]
fn fixed_seed_runs_write_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut texts = Vec::new();
    for run in 0..2 {
        let cfg = TrainConfig {
            output_dir: dir.path().join(format!("run{run}")),
            ..tiny(PlanMode::Rollout)
        };
        let s = run_experiment(&cfg).unwrap();
        texts.push((
            std::fs::read_to_string(&s.metrics_path).unwrap(),
            std::fs::read_to_string(&s.eval_path).unwrap(),
            checkpoint_bytes_without_dir(&s.checkpoint_path),
        ));
        let rows = read_metrics(&s.metrics_path).unwrap();
        assert_eq!(rows.len(), 5);
        assert!(rows.windows(2).all(|w| w[0].env_step < w[1].env_step));
        assert_eq!(rows.last().unwrap().env_step, 200);
        // Seed episodes precede any training.
        assert!(rows[0].j_o.is_nan() && rows[1].j_o.is_nan());
        assert!(rows[2].j_o.is_finite());
        assert_eq!(s.eval_returns.len(), 2);
    }
    assert_eq!(texts[0].0.lines().next().unwrap(), METRICS_HEADER);
    assert_eq!(texts[0], texts[1]);

    let other = TrainConfig {
        seed: 1,
        output_dir: dir.path().join("seed1"),
        ..tiny(PlanMode::Rollout)
    };
    let s = run_experiment(&other).unwrap();
    assert_ne!(std::fs::read_to_string(&s.metrics_path).unwrap(), texts[0].0);
}

#[test]
fn invalid_config_fails_before_any_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        batch_size: 0,
        output_dir: dir.path().join("never"),
        ..tiny(PlanMode::Dreamer)
    };
    assert!(run_experiment(&cfg).is_err());
    assert!(!cfg.output_dir.exists());
}

#[test]
fn checkpoints_follow_the_configured_cadence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        checkpoint_every: 2,
        total_steps: 240,
        output_dir: dir.path().to_path_buf(),
        ..tiny(PlanMode::Dreamer)
    };
    run_experiment(&cfg).unwrap();
    let mut names: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".lpln"))
        .collect();
    names.sort();
    assert_eq!(names, ["checkpoint_160.lpln", "checkpoint_240.lpln", "final.lpln"]);
}

#[test]
fn named_streams_are_independent() {
    let mut a = stream(3, "env");
    let mut b = stream(3, "planner");
    let mut a2 = stream(3, "env");
    let xa: Vec<u64> = (0..4).map(|_| a.random()).collect();
    let xb: Vec<u64> = (0..4).map(|_| b.random()).collect();
    let xa2: Vec<u64> = (0..4).map(|_| a2.random()).collect();
    assert_eq!(xa, xa2);
    assert_ne!(xa, xb);
    assert_ne!(xa, (0..4).map(|_| stream(4, "env").random::<u64>()).collect::<Vec<_>>());
}

#[test]
fn every_mode_collects_full_episodes() {
    for mode in PlanMode::ALL {
        let cfg = tiny(mode);
        let mut agent = Agent::new(cfg.clone()).unwrap();
        let mut env = Env::new(cfg.env_spec().unwrap());
        let ep = agent.collect_episode(&mut env, true, &mut stream(0, "env")).unwrap();
        assert_eq!(ep.transitions.len(), 20, "{mode}");
        assert!(ep.transitions.iter().all(|t| t.action.iter().all(|a| a.abs() <= 1.0)));
        assert_eq!(ep.plan_time_ms, 0.0);
    }
    let cfg = TrainConfig {
        env: EnvKind::PendulumSwingUp,
        ..tiny(PlanMode::MctsFixed)
    };
    let agent = Agent::new(cfg).unwrap();
    assert_eq!(agent.evaluate(1, 0).unwrap()[0].transitions[0].action.len(), 1);
}

#[test]
fn shipped_configs_parse() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    assert_eq!(TrainConfig::load(&dir.join("default.cfg")).unwrap(), TrainConfig::default());
    TrainConfig::load(&dir.join("smoke.cfg")).unwrap();
}
