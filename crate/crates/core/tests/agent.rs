use mabn::agent::{
    clipped_gaussian, q_bias_with, train, AgentConfig, AgentState, Checkpoint, NoiseSchedule,
    Rollout, RunMetrics, TargetBnStrategy, TrainSettings, CHECKPOINT_VERSION,
};
use mabn::envs::{LqrEnv, LqrSpec, StepEnd};
use mabn::nn::{BnMode, Matrix};
use mabn::replay::{Batch, ReplayBuffer, Transition};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small(mode: &str) -> AgentConfig {
    AgentConfig {
        hidden: vec![16, 16],
        batch_size: 32,
        buffer_capacity: 1000,
        mode: mode.into(),
        ..AgentConfig::default()
    }
}

#[test]
fn analytic_critic_drives_gain_to_optimum() {
    let spec = LqrSpec::default();
    let sol = spec.solve().unwrap();
    let cfg = AgentConfig {
        noise: NoiseSchedule {
            actor_loss_noise: false,
            ..NoiseSchedule::default()
        },
        ..small("ETT/TT")
    };
    let mut agent = AgentState::new(&cfg, 1, 1, spec.action_bound, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..3000 {
        let s: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
        let states = Matrix::column(&s);
        agent
            .actor_update_with(&states, 0.0, |s, a| {
                let n = s.rows() as f64;
                let mut loss = 0.0;
                let mut g = Matrix::zeros(s.rows(), 1);
                for i in 0..s.rows() {
                    let (x, u) = (s.get(i, 0), a.get(i, 0));
                    loss -= sol.optimal_q(x, u);
                    g.set(i, 0, (2.0 * sol.r_a * u + 2.0 * sol.cross * x) / n);
                }
                Ok((loss / n, g))
            })
            .unwrap();
    }
    let k = sol.optimal_gain();
    for s in [-0.8, -0.3, 0.4, 0.9] {
        let a = agent.policy(&[s]).unwrap()[0];
        assert!((a / s - k).abs() < 0.1 * k.abs(), "gain {} vs {k}", a / s);
    }
}

fn lqr_batch(n: usize, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let items: Vec<Transition> = (0..n)
        .map(|i| {
            let s = rng.random_range(-1.0..1.0);
            let a = rng.random_range(-1.0..1.0);
            Transition {
                s: vec![s],
                a: vec![a],
                r: -(s * s + a * a),
                s_next: vec![s + a],
                done: i % 5 == 0,
            }
        })
        .collect();
    Batch::from_transitions(&items.iter().collect::<Vec<_>>()).unwrap()
}

fn quiet(mode: &str) -> AgentConfig {
    AgentConfig {
        noise: NoiseSchedule {
            actor_loss_noise: false,
            target_noise: false,
            ..NoiseSchedule::default()
        },
        ..small(mode)
    }
}

#[test]
fn origin_and_ln_carry_no_batch_norm() {
    for mode in ["Origin", "LN"] {
        let agent = AgentState::new(&small(mode), 1, 1, 2.0, 0).unwrap();
        assert!(!agent.actor.has_batch_norm());
        assert!(agent.critics.iter().all(|c| !c.has_batch_norm()));
    }
    let agent = AgentState::new(&small("ETT/TT"), 1, 1, 2.0, 0).unwrap();
    assert!(agent.actor.has_batch_norm() && agent.critics[0].has_batch_norm());
}

#[test]
fn rejected_mode_settings() {
    assert!(AgentState::new(&small("ETT/EE"), 1, 1, 1.0, 0).is_err());
    let mix_on_eval = AgentConfig {
        mix_ratio: Some(2),
        ..small("ETT/TT")
    };
    assert!(mix_on_eval.validate().is_err());
    let soft_on_train_target = AgentConfig {
        target_strategy: TargetBnStrategy::BnSoft,
        ..small("ETT/TT")
    };
    assert!(soft_on_train_target.validate().is_err());
    let soft_on_eval_target = AgentConfig {
        target_strategy: TargetBnStrategy::BnSoft,
        ..small("TTE/TT")
    };
    assert!(soft_on_eval_target.validate().is_ok());
}

#[test]
fn critic_target_masks_terminal_rows() {
    let cfg = quiet("Origin");
    let mut agent = AgentState::new(&cfg, 1, 1, 1.0, 4).unwrap();
    let batch = lqr_batch(20, 1);
    let y = agent.critic_target(&batch, 0.2).unwrap();
    for i in 0..batch.len() {
        let r = batch.rewards[i];
        if batch.dones[i] {
            assert_eq!(y[i], r);
            continue;
        }
        let s = batch.next_states.get(i, 0);
        let pi = agent.actor.predict(&Matrix::row_vector(&[s]), BnMode::Eval).unwrap();
        let a = pi.get(0, 0).clamp(-1.0, 1.0);
        let x = Matrix::row_vector(&[s, a]);
        let q0 = agent.target_critics[0].predict(&x, BnMode::Eval).unwrap().get(0, 0);
        let q1 = agent.target_critics[1].predict(&x, BnMode::Eval).unwrap().get(0, 0);
        let want = r + 0.99 * q0.min(q1);
        assert!((y[i] - want).abs() < 1e-12, "row {i}: {} vs {want}", y[i]);
    }
}

#[test]
fn soft_update_endpoints_and_blend() {
    let mut agent = AgentState::new(&small("TTE/TT"), 1, 1, 1.0, 9).unwrap();
    let batch = lqr_batch(32, 2);
    let y = agent.critic_target(&batch, 0.1).unwrap();
    agent.critic_update(&batch, &y).unwrap();
    let flat = |n: &mabn::nn::DenseNet| n.params().concat();
    let before = flat(&agent.target_critics[0]);
    let live = flat(&agent.critics[0]);
    assert_ne!(before, live);

    let mut frozen = agent.clone();
    frozen.soft_update_with(0.0).unwrap();
    assert_eq!(frozen.target_critics, agent.target_critics);
    let mut probe = agent.clone();
    probe.tau = 0.01;
    probe.soft_update().unwrap();
    let after = flat(&probe.target_critics[0]);
    for ((a, b), c) in after.iter().zip(&before).zip(&live) {
        assert!((a - (0.99 * b + 0.01 * c)).abs() < 1e-15);
    }
    let mut full = agent.clone();
    full.soft_update_with(1.0).unwrap();
    assert_eq!(flat(&full.target_critics[0]), live);
    for (t, c) in full.target_critics[1].batch_norms().zip(agent.critics[1].batch_norms()) {
        assert_eq!(t.run_mean, c.run_mean);
        assert_eq!(t.run_var, c.run_var);
    }
}

#[test]
fn evaluation_paths_leave_state_alone() {
    let mut agent = AgentState::new(&small("ETT/TT"), 1, 1, 1.0, 5).unwrap();
    let batch = lqr_batch(32, 3);
    let y = agent.critic_target(&batch, 0.1).unwrap();
    agent.critic_update(&batch, &y).unwrap();
    let snapshot = agent.clone();
    agent.policy(&[0.3]).unwrap();
    agent.min_q(&batch.states, &batch.actions, BnMode::Train).unwrap();
    let mut env = LqrEnv::new(LqrSpec::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let rollouts = agent.rollout(&mut env, 2, &mut rng).unwrap();
    agent.q_bias(&rollouts, 7).unwrap();
    assert_eq!(agent, snapshot);
}

#[test]
fn train_mode_target_touches_only_actor_stats() {
    let mut agent = AgentState::new(&small("ETT/TT"), 1, 1, 1.0, 5).unwrap();
    let before = agent.clone();
    agent.critic_target(&lqr_batch(32, 4), 0.1).unwrap();
    assert_eq!(agent.critics, before.critics);
    assert_eq!(agent.target_critics, before.target_critics);
    assert_ne!(agent.actor, before.actor);
    assert_eq!(agent.actor.params(), before.actor.params());
}

#[test]
fn twin_critics_stay_identical_from_equal_starts() {
    let mut agent = AgentState::new(&quiet("TTT/TT"), 1, 1, 1.0, 6).unwrap();
    agent.critics[1] = agent.critics[0].clone();
    agent.target_critics = [agent.critics[0].clone(), agent.critics[0].clone()];
    for k in 0..5 {
        let batch = lqr_batch(32, 10 + k);
        let y = agent.critic_target(&batch, 0.0).unwrap();
        agent.critic_update(&batch, &y).unwrap();
        agent.soft_update().unwrap();
    }
    assert_eq!(agent.critics[0], agent.critics[1]);
    assert_eq!(agent.target_critics[0], agent.target_critics[1]);
}

#[test]
fn critic_regression_reduces_loss() {
    let mut agent = AgentState::new(&small("Origin"), 1, 1, 1.0, 8).unwrap();
    let batch = lqr_batch(64, 5);
    let y: Vec<f64> = batch.rewards.clone();
    let first = agent.critic_update(&batch, &y).unwrap();
    let mut last = first;
    for _ in 0..300 {
        last = agent.critic_update(&batch, &y).unwrap();
    }
    assert!(last < 0.1 * first, "{first} -> {last}");
}

#[test]
fn flat_critic_gives_zero_actor_gradient() {
    let mut agent = AgentState::new(&quiet("Origin"), 1, 1, 1.0, 2).unwrap();
    for critic in agent.critics.iter_mut() {
        for p in critic.params_mut() {
            p.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let actor = agent.actor.clone();
    let states = Matrix::column(&[-0.5, 0.1, 0.7, 0.2]);
    let step = agent.actor_update(&states, None, 0.0).unwrap();
    assert_eq!(step.loss, 0.0);
    assert_eq!(agent.actor.params(), actor.params());
}

#[test]
fn mixing_needs_the_buffer_and_reports_aux_actions() {
    let cfg = AgentConfig {
        mix_ratio: Some(2),
        ..quiet("TTT/TT")
    };
    let mut agent = AgentState::new(&cfg, 1, 1, 1.0, 3).unwrap();
    let states = Matrix::column(&[-0.5, 0.1, 0.7, 0.2, 0.9]);
    assert!(agent.actor_update(&states, None, 0.0).is_err());
    let mut buf = ReplayBuffer::new(50, 1).unwrap();
    for i in 0..50 {
        buf.push(Transition {
            s: vec![0.0],
            a: vec![0.25 + i as f64 * 1e-3],
            r: 0.0,
            s_next: vec![0.0],
            done: false,
        })
        .unwrap();
    }
    let step = agent.actor_update(&states, Some(&mut buf), 0.0).unwrap();
    assert_eq!(step.stat_actions.rows(), 5 + 3);
    for i in 5..8 {
        assert!((step.stat_actions.get(i, 0) - 0.25).abs() < 0.06);
    }
}

#[test]
fn clipped_noise_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let n = 100_000;
    for (sigma, clip) in [(0.05, 0.3), (0.1, 0.3)] {
        let xs: Vec<f64> = (0..n).map(|_| clipped_gaussian(&mut rng, sigma, clip)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!((sd / sigma - 1.0).abs() < 0.02, "sd {sd} for σ {sigma}");
        assert!(xs.iter().all(|x| x.abs() <= clip));
    }
    let wide: Vec<f64> = (0..1000).map(|_| clipped_gaussian(&mut rng, 5.0, 0.3)).collect();
    assert!(wide.iter().all(|x| x.abs() <= 0.3));
    assert!(wide.iter().filter(|x| x.abs() == 0.3).count() > 900);
}

fn episode(rewards: &[f64], end: StepEnd) -> Rollout {
    Rollout {
        states: rewards.iter().map(|_| vec![0.0]).collect(),
        actions: rewards.iter().map(|_| vec![0.0]).collect(),
        rewards: rewards.to_vec(),
        end,
        last_state: vec![0.0],
    }
}

fn returns_to_go(rewards: &[f64], gamma: f64, tail: f64) -> Vec<f64> {
    let mut g = tail;
    let mut out = vec![0.0; rewards.len()];
    for i in (0..rewards.len()).rev() {
        g = rewards[i] + gamma * g;
        out[i] = g;
    }
    out
}

#[test]
fn q_bias_of_exact_and_offset_critics() {
    let rewards = [-3.0, -2.0, -0.5, -0.1];
    let g = returns_to_go(&rewards, 0.9, 0.0);
    let eps = [episode(&rewards, StepEnd::Terminal)];
    let exact = q_bias_with(&eps, 0.9, |_, _| Ok(g.clone()), |_| Ok(0.0)).unwrap();
    assert_eq!((exact.mean_bias, exact.std_bias, exact.samples), (0.0, 0.0, 4));

    let shifted = q_bias_with(&eps, 0.9, |_, _| Ok(g.iter().map(|v| v + 1.0).collect()), |_| Ok(0.0)).unwrap();
    let b: Vec<f64> = g.iter().map(|v| 1.0 / v.abs().max(1.0)).collect();
    let mean = b.iter().sum::<f64>() / 4.0;
    let sd = (b.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
    assert!((shifted.mean_bias - mean).abs() < 1e-15);
    assert!((shifted.std_bias - sd).abs() < 1e-15);
}

#[test]
fn q_bias_bootstraps_truncated_episodes() {
    let rewards = [-1.0, -1.0];
    let eps = [episode(&rewards, StepEnd::Truncated)];
    let g = returns_to_go(&rewards, 0.5, -4.0);
    let r = q_bias_with(&eps, 0.5, |_, _| Ok(g.clone()), |_| Ok(-4.0)).unwrap();
    assert_eq!(r.mean_bias, 0.0);
    let unbooted = q_bias_with(&eps, 0.5, |_, _| Ok(g.clone()), |_| Ok(0.0)).unwrap();
    assert!(unbooted.mean_bias < 0.0);
}

#[test]
fn lqr_optimal_critic_has_no_bias() {
    let spec = LqrSpec::default();
    let sol = spec.solve().unwrap();
    let k = sol.optimal_gain();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let eps: Vec<Rollout> = (0..4)
        .map(|_| {
            let mut s = rng.random_range(-1.0..1.0);
            let mut ep = episode(&[], StepEnd::Truncated);
            for _ in 0..spec.horizon {
                let a = k * s;
                let (next, r) = spec.step(s, a);
                ep.states.push(vec![s]);
                ep.actions.push(vec![a]);
                ep.rewards.push(r);
                s = next;
            }
            ep.last_state = vec![s];
            ep
        })
        .collect();
    let q = |s: &Matrix, a: &Matrix| {
        Ok((0..s.rows()).map(|i| sol.optimal_q(s.get(i, 0), a.get(i, 0))).collect())
    };
    let r = q_bias_with(&eps, spec.discount, q, |s| Ok(sol.value(s[0]))).unwrap();
    assert!(r.mean_bias.abs() < 0.02 && r.std_bias < 0.02, "{r:?}");
    assert!(r.mean_bias.abs() < 1e-9);
}

#[test]
fn checkpoint_round_trip_and_version_gate() {
    let mut agent = AgentState::new(&small("ETT/TT"), 1, 1, 1.0, 13).unwrap();
    let batch = lqr_batch(32, 6);
    let y = agent.critic_target(&batch, 0.1).unwrap();
    agent.critic_update(&batch, &y).unwrap();
    let mut buf = ReplayBuffer::new(10, 3).unwrap();
    buf.push(Transition {
        s: vec![0.1],
        a: vec![0.2],
        r: -0.3,
        s_next: vec![0.4],
        done: false,
    })
    .unwrap();
    let ck = Checkpoint::new(42, agent.clone(), Some(buf));
    let text = ck.to_json().unwrap();
    let back = Checkpoint::from_json(&text).unwrap();
    assert_eq!(back.step, 42);
    assert_eq!(back.agent, agent);
    assert_eq!(back.to_json().unwrap(), text);

    let mut a1 = agent.clone();
    let mut a2 = back.agent;
    assert_eq!(
        a1.select_action(&[0.2], 0.3, true, BnMode::Eval).unwrap(),
        a2.select_action(&[0.2], 0.3, true, BnMode::Eval).unwrap()
    );

    let bumped = text.replacen(
        &format!("\"version\":{CHECKPOINT_VERSION}"),
        &format!("\"version\":{}", CHECKPOINT_VERSION + 1),
        1,
    );
    assert_ne!(bumped, text);
    assert!(Checkpoint::from_json(&bumped).is_err());
}

fn lqr_settings(total_steps: u64, seed: u64) -> TrainSettings {
    TrainSettings {
        total_steps,
        eval_every: 100,
        eval_episodes: 2,
        warmup_steps: 50,
        batch_size: 32,
        seed,
    }
}

fn short_run(mode: &str, total_steps: u64, seed: u64) -> RunMetrics {
    let spec = LqrSpec {
        horizon: 50,
        action_bound: 1.0,
        state_bound: Some(5.0),
        ..LqrSpec::default()
    };
    let mut env = LqrEnv::new(spec).unwrap();
    let mut eval_env = LqrEnv::new(spec).unwrap();
    let mut agent = AgentState::for_env(&small(mode), &env, seed).unwrap();
    let mut buf = ReplayBuffer::new(1000, seed).unwrap();
    train(&mut agent, &mut env, &mut eval_env, &mut buf, &lqr_settings(total_steps, seed), |_| Ok(()))
        .unwrap()
}

#[test]
fn zero_step_run_is_empty() {
    let m = short_run("ETT/TT", 0, 0);
    assert!(m.rows.is_empty() && m.fault.is_none());
}

#[test]
fn short_runs_repeat_exactly() {
    for mode in ["ETT/TT", "Origin", "LN"] {
        let a = short_run(mode, 400, 3);
        let b = short_run(mode, 400, 3);
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 4);
        assert!(a.fault.is_none());
        let r = &a.rows[3];
        assert!(r.critic_loss.is_some() && r.q_bias_mean.is_some() && r.coverage.is_none());
        assert_ne!(a, short_run(mode, 400, 4));
    }
}
