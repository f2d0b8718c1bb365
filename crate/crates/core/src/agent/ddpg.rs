use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::modes::{parse_mode_label, ModeConfig, TargetBnStrategy};
use super::noise::{clipped_gaussian, NoiseSchedule};
use crate::envs::{Environment, StepEnd};
use crate::error::{Error, Result};
use crate::nn::{Activation, BnMode, DenseNet, Matrix, NetSpec, NormPlacement, Optimizer, OptimizerKind};
use crate::replay::{aux_count, Batch, ReplayBuffer};

/// Agent hyperparameters as they appear in an experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub hidden: Vec<usize>,
    pub tau: f64,
    pub discount: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub warmup_steps: u64,
    pub noise: NoiseSchedule,
    /// `critic/actor` letters (`ETT/TT`), `MA-BN`, `Origin` or `LN`.
    pub mode: String,
    pub mix_ratio: Option<u32>,
    pub target_strategy: TargetBnStrategy,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    /// Overrides `learning_rate` for the critics.
    pub critic_learning_rate: Option<f64>,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
    pub eval_episodes: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256],
            tau: 0.01,
            discount: 0.99,
            batch_size: 256,
            buffer_capacity: 100_000,
            warmup_steps: 1000,
            noise: NoiseSchedule::default(),
            mode: "ETT/TT".into(),
            mix_ratio: None,
            target_strategy: TargetBnStrategy::default(),
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            critic_learning_rate: None,
            bn_momentum: crate::nn::DEFAULT_MOMENTUM,
            bn_epsilon: crate::nn::DEFAULT_EPSILON,
            eval_episodes: 5,
        }
    }
}

impl AgentConfig {
    pub fn modes(&self) -> Result<ModeConfig> {
        let modes = parse_mode_label(&self.mode)?.with_mix_ratio(self.mix_ratio)?;
        self.target_strategy.validate(&modes)?;
        Ok(modes)
    }

    pub fn validate(&self) -> Result<()> {
        self.modes()?;
        self.noise.validate()?;
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::config("agent.tau", "must lie in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::config("agent.discount", "must lie in [0, 1)"));
        }
        if self.batch_size < 2 {
            return Err(Error::config("agent.batch_size", "batch norm needs at least 2 rows"));
        }
        if self.buffer_capacity < self.batch_size {
            return Err(Error::config("agent.buffer_capacity", "must hold at least one batch"));
        }
        let lr_ok = |v: f64| v > 0.0 && v.is_finite();
        if !lr_ok(self.learning_rate) {
            return Err(Error::config("agent.learning_rate", "must be a positive number"));
        }
        if let Some(lr) = self.critic_learning_rate {
            if !lr_ok(lr) {
                return Err(Error::config("agent.critic_learning_rate", "must be a positive number"));
            }
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("agent.hidden", "layer widths must be positive"));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) || !(self.bn_epsilon > 0.0) {
            return Err(Error::config("agent.bn_momentum", "momentum in (0, 1], epsilon > 0"));
        }
        if self.eval_episodes == 0 {
            return Err(Error::config("agent.eval_episodes", "must be positive"));
        }
        Ok(())
    }
}

/// Actor, twin critics, their targets and optimizers, plus the noise rng.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub modes: ModeConfig,
    pub target_strategy: TargetBnStrategy,
    pub tau: f64,
    pub discount: f64,
    pub noise: NoiseSchedule,
    pub batch_size: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_bound: f64,
    pub actor: DenseNet,
    pub critics: [DenseNet; 2],
    pub target_critics: [DenseNet; 2],
    pub actor_opt: Optimizer,
    pub critic_opts: [Optimizer; 2],
    pub rng: ChaCha8Rng,
}

/// Outcome of one actor update.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorStep {
    pub loss: f64,
    /// Actions seen by the critic-I statistics: actor rows, then buffer rows.
    pub stat_actions: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QBiasReport {
    pub mean_bias: f64,
    pub std_bias: f64,
    pub samples: usize,
}

/// One deterministic-policy episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub end: StepEnd,
    /// State reached after the final action.
    pub last_state: Vec<f64>,
}

impl Rollout {
    pub fn total_return(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

impl AgentState {
    pub fn new(
        cfg: &AgentConfig,
        state_dim: usize,
        action_dim: usize,
        action_bound: f64,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let modes = cfg.modes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = |input, output, norm, act| NetSpec {
            input,
            hidden: cfg.hidden.clone(),
            output,
            norm,
            placement: NormPlacement::AfterLinear,
            hidden_activation: Activation::Relu,
            output_activation: act,
            bn_momentum: cfg.bn_momentum,
            bn_epsilon: cfg.bn_epsilon,
        };
        let actor_spec = net(
            state_dim,
            action_dim,
            modes.actor_norm(),
            Activation::ScaledTanh(action_bound),
        );
        let critic_spec = net(
            state_dim + action_dim,
            1,
            modes.critic_norm(),
            Activation::Identity,
        );
        let actor = DenseNet::new(&actor_spec, &mut rng)?;
        let critics = [
            DenseNet::new(&critic_spec, &mut rng)?,
            DenseNet::new(&critic_spec, &mut rng)?,
        ];
        let critic_lr = cfg.critic_learning_rate.unwrap_or(cfg.learning_rate);
        Ok(Self {
            modes,
            target_strategy: cfg.target_strategy,
            tau: cfg.tau,
            discount: cfg.discount,
            noise: cfg.noise,
            batch_size: cfg.batch_size,
            state_dim,
            action_dim,
            action_bound,
            actor,
            target_critics: critics.clone(),
            critics,
            actor_opt: Optimizer::new(cfg.optimizer, cfg.learning_rate)?,
            critic_opts: [
                Optimizer::new(cfg.optimizer, critic_lr)?,
                Optimizer::new(cfg.optimizer, critic_lr)?,
            ],
            // distinct stream from the one used for initialization
            rng: {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                r.set_stream(1);
                r
            },
        })
    }

    pub fn for_env(cfg: &AgentConfig, env: &dyn Environment, seed: u64) -> Result<Self> {
        Self::new(cfg, env.state_dim(), env.action_dim(), env.action_bound(), seed)
    }

    /// Actor output for one state under `mode`, plus clipped Gaussian noise
    /// when exploring, clipped to the action box.
    pub fn select_action(
        &mut self,
        s: &[f64],
        sigma: f64,
        explore: bool,
        mode: BnMode,
    ) -> Result<Vec<f64>> {
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("state".into()));
        }
        let pi = self.actor.predict(&Matrix::row_vector(s), mode)?;
        let noise = explore.then_some((sigma, self.noise.clip));
        let (a, _) = perturb(&mut self.rng, &pi, noise, self.action_bound);
        Ok(a.into_vec())
    }

    /// Deterministic action with the actor in Eval mode. Leaves all state
    /// untouched.
    pub fn policy(&self, s: &[f64]) -> Result<Vec<f64>> {
        let pi = self.actor.predict(&Matrix::row_vector(s), BnMode::Eval)?;
        let b = self.action_bound;
        Ok(pi.data().iter().map(|v| v.clamp(-b, b)).collect())
    }

    fn actor_forward_untaped(&mut self, states: &Matrix, mode: BnMode) -> Result<Matrix> {
        if mode.uses_batch_stats() && self.modes.bn_enabled_actor {
            self.actor.forward(states, mode, None).map(|(y, _)| y)
        } else {
            self.actor.predict(states, mode)
        }
    }

    /// Bootstrap targets `y = r + γ(1 − done)·min_k Q̄_k(s', a')`.
    pub fn critic_target(&mut self, batch: &Batch, sigma: f64) -> Result<Vec<f64>> {
        let pi = self.actor_forward_untaped(&batch.next_states, self.modes.actor_ii())?;
        let noise = self.noise.target_noise.then_some((sigma, self.noise.clip));
        let (a_next, _) = perturb(&mut self.rng, &pi, noise, self.action_bound);
        let x = batch.next_states.hstack(&a_next)?;
        let mode = self.modes.critic_iii();
        let q0 = self.target_critics[0].predict(&x, mode)?;
        let q1 = self.target_critics[1].predict(&x, mode)?;
        let y: Vec<f64> = (0..batch.len())
            .map(|i| {
                if batch.dones[i] {
                    batch.rewards[i]
                } else {
                    batch.rewards[i] + self.discount * q0.data()[i].min(q1.data()[i])
                }
            })
            .collect();
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("critic target".into()));
        }
        Ok(y)
    }

    /// Regression of both critics onto `y`; returns the summed losses.
    pub fn critic_update(&mut self, batch: &Batch, y: &[f64]) -> Result<f64> {
        let x = batch.states.hstack(&batch.actions)?;
        let n = x.rows();
        if y.len() != n {
            return Err(Error::Shape(format!("{} targets for {n} rows", y.len())));
        }
        let mode = self.modes.critic_ii();
        let mut total = 0.0;
        for k in 0..2 {
            let (q, tape) = self.critics[k].forward(&x, mode, None)?;
            let diff: Vec<f64> = q.data().iter().zip(y).map(|(q, y)| q - y).collect();
            let loss = diff.iter().map(|d| d * d).sum::<f64>() / n as f64;
            if !loss.is_finite() {
                return Err(Error::NonFinite("critic loss".into()));
            }
            let dy = Matrix::column(&diff.iter().map(|d| 2.0 * d / n as f64).collect::<Vec<_>>());
            let (_, grads) = self.critics[k].backward(tape, &dy, true)?;
            let grads = grads.expect("parameter gradients requested");
            self.critic_opts[k].apply(self.critics[k].params_mut(), grads.slices())?;
            total += loss;
        }
        Ok(total)
    }

    /// One actor step maximizing `min_k Q_k(s, π(s) + ε)`. With mixing, the
    /// critic batch-norm sites also see buffer rows drawn from `buf`.
    pub fn actor_update(
        &mut self,
        states: &Matrix,
        buf: Option<&mut ReplayBuffer>,
        sigma: f64,
    ) -> Result<ActorStep> {
        let aux = match self.modes.effective_mix() {
            Some(x) => {
                let buf = buf.ok_or_else(|| {
                    Error::Invalid("buffer mixing needs access to the replay buffer".into())
                })?;
                Some(buf.sample_state_actions(aux_count(states.rows(), Some(x)))?)
            }
            None => None,
        };
        let mode = if aux.is_some() {
            BnMode::StatsOnlyMixed
        } else {
            self.modes.critic_i()
        };
        let sd = self.state_dim;
        let critics = &mut self.critics;
        let (loss, actions) = actor_step(
            &mut self.actor,
            &mut self.actor_opt,
            &mut self.rng,
            self.modes.actor_i(),
            self.noise.actor_loss_noise.then_some((sigma, self.noise.clip)),
            self.action_bound,
            states,
            |s, a| twin_min_objective(critics, mode, aux.as_ref(), sd, s, a),
        )?;
        let stat_actions = match &aux {
            Some(rows) => actions.vstack(&rows.slice_cols(sd, rows.cols()))?,
            None => actions,
        };
        Ok(ActorStep { loss, stat_actions })
    }

    /// Actor step against an arbitrary differentiable objective returning
    /// `(loss, ∂loss/∂a)` for the given states and actions.
    pub fn actor_update_with<F>(&mut self, states: &Matrix, sigma: f64, objective: F) -> Result<f64>
    where
        F: FnOnce(&Matrix, &Matrix) -> Result<(f64, Matrix)>,
    {
        actor_step(
            &mut self.actor,
            &mut self.actor_opt,
            &mut self.rng,
            self.modes.actor_i(),
            self.noise.actor_loss_noise.then_some((sigma, self.noise.clip)),
            self.action_bound,
            states,
            objective,
        )
        .map(|(loss, _)| loss)
    }

    pub fn soft_update(&mut self) -> Result<()> {
        self.soft_update_with(self.tau)
    }

    /// `θ̄ ← (1 − τ)θ̄ + τθ` for every parameter; running statistics follow
    /// the target strategy.
    pub fn soft_update_with(&mut self, tau: f64) -> Result<()> {
        for (critic, target) in self.critics.iter().zip(self.target_critics.iter_mut()) {
            if !critic.same_structure(target) {
                return Err(Error::Shape("target and critic differ in structure".into()));
            }
            for (t, c) in target.params_mut().into_iter().zip(critic.params()) {
                blend(t, c, tau);
            }
            for (tb, cb) in target.batch_norms_mut().zip(critic.batch_norms()) {
                match self.target_strategy {
                    TargetBnStrategy::Bn0 => {}
                    TargetBnStrategy::BnCritic => {
                        tb.run_mean.copy_from_slice(&cb.run_mean);
                        tb.run_var.copy_from_slice(&cb.run_var);
                    }
                    TargetBnStrategy::TargetUsesTrainMode | TargetBnStrategy::BnSoft => {
                        blend(&mut tb.run_mean, &cb.run_mean, tau);
                        blend(&mut tb.run_var, &cb.run_var, tau);
                    }
                }
            }
        }
        Ok(())
    }

    /// `min_k Q_k(s, a)` for each row, evaluated without touching any state.
    pub fn min_q(&self, states: &Matrix, actions: &Matrix, mode: BnMode) -> Result<Vec<f64>> {
        let x = states.hstack(actions)?;
        let q0 = self.critics[0].predict(&x, mode)?;
        let q1 = self.critics[1].predict(&x, mode)?;
        Ok(q0.data().iter().zip(q1.data()).map(|(a, b)| a.min(*b)).collect())
    }

    /// Deterministic-policy episodes.
    pub fn rollout(
        &self,
        env: &mut dyn Environment,
        episodes: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<Rollout>> {
        let mut out = Vec::with_capacity(episodes);
        for _ in 0..episodes {
            let mut s = env.reset(rng);
            let mut ep = Rollout {
                states: Vec::new(),
                actions: Vec::new(),
                rewards: Vec::new(),
                end: StepEnd::Continue,
                last_state: Vec::new(),
            };
            loop {
                let a = self.policy(&s)?;
                let step = env.step(&a);
                ep.states.push(std::mem::take(&mut s));
                ep.actions.push(a);
                ep.rewards.push(step.reward);
                let (done, end) = (step.done(), step.end);
                s = step.next_state;
                if done {
                    ep.end = end;
                    ep.last_state = s;
                    break;
                }
            }
            out.push(ep);
        }
        Ok(out)
    }

    /// Normalized Q-bias of the twin-min critic at the critic-I site on
    /// recorded rollouts. Truncated episodes bootstrap from the target
    /// critics. Batch-statistics modes evaluate in shuffled chunks of the
    /// training batch size, shuffled with `seed`.
    pub fn q_bias(&self, rollouts: &[Rollout], seed: u64) -> Result<QBiasReport> {
        let mode = self.modes.critic_i();
        let chunk = self.batch_size;
        let q_fn = |s: &Matrix, a: &Matrix| -> Result<Vec<f64>> {
            if !mode.uses_batch_stats() {
                return self.min_q(s, a, mode);
            }
            let n = s.rows();
            let mut order: Vec<usize> = (0..n).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            shuffle(&mut order, &mut rng);
            let mut q = vec![0.0; n];
            let mut start = 0;
            while start < n {
                let mut end = (start + chunk).min(n);
                // fold a trailing single row into this chunk
                if n - end < 2 {
                    end = n;
                }
                let idx = &order[start..end];
                let pick = |m: &Matrix| {
                    Matrix::from_rows(&idx.iter().map(|&i| m.row(i)).collect::<Vec<_>>())
                };
                let vals = if idx.len() < 2 {
                    self.min_q(&pick(s)?, &pick(a)?, BnMode::Eval)?
                } else {
                    self.min_q(&pick(s)?, &pick(a)?, mode)?
                };
                for (&i, v) in idx.iter().zip(vals) {
                    q[i] = v;
                }
                start = end;
            }
            Ok(q)
        };
        let v_fn = |s: &[f64]| -> Result<f64> {
            let a = self.policy(s)?;
            let x = Matrix::row_vector(&[s, a.as_slice()].concat());
            let q0 = self.target_critics[0].predict(&x, BnMode::Eval)?;
            let q1 = self.target_critics[1].predict(&x, BnMode::Eval)?;
            Ok(q0.data()[0].min(q1.data()[0]))
        };
        q_bias_with(rollouts, self.discount, q_fn, v_fn)
    }
}

fn blend(target: &mut [f64], source: &[f64], tau: f64) {
    for (t, s) in target.iter_mut().zip(source) {
        *t = (1.0 - tau) * *t + tau * s;
    }
}

fn shuffle(v: &mut [usize], rng: &mut ChaCha8Rng) {
    use rand::Rng;
    for i in (1..v.len()).rev() {
        let j = rng.random_range(0..=i);
        v.swap(i, j);
    }
}

/// Add clipped noise (if any) and clip to the box. The mask marks entries
/// left unclipped by the box, through which gradient still flows.
fn perturb(
    rng: &mut ChaCha8Rng,
    pi: &Matrix,
    noise: Option<(f64, f64)>,
    bound: f64,
) -> (Matrix, Vec<bool>) {
    let mut out = pi.clone();
    let mut pass = vec![true; out.data().len()];
    for (v, p) in out.data_mut().iter_mut().zip(pass.iter_mut()) {
        let raw = match noise {
            Some((sigma, clip)) => *v + clipped_gaussian(rng, sigma, clip),
            None => *v,
        };
        *p = raw.abs() <= bound;
        *v = raw.clamp(-bound, bound);
    }
    (out, pass)
}

#[allow(clippy::too_many_arguments)]
fn actor_step<F>(
    actor: &mut DenseNet,
    opt: &mut Optimizer,
    rng: &mut ChaCha8Rng,
    mode: BnMode,
    noise: Option<(f64, f64)>,
    bound: f64,
    states: &Matrix,
    objective: F,
) -> Result<(f64, Matrix)>
where
    F: FnOnce(&Matrix, &Matrix) -> Result<(f64, Matrix)>,
{
    let (pi, tape) = actor.forward(states, mode, None)?;
    let (actions, pass) = perturb(rng, &pi, noise, bound);
    let (loss, mut grad) = objective(states, &actions)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("actor loss".into()));
    }
    if grad.shape() != actions.shape() {
        return Err(Error::Shape("objective gradient does not match the actions".into()));
    }
    for (g, p) in grad.data_mut().iter_mut().zip(&pass) {
        if !p {
            *g = 0.0;
        }
    }
    let (_, grads) = actor.backward(tape, &grad, true)?;
    let grads = grads.expect("parameter gradients requested");
    opt.apply(actor.params_mut(), grads.slices())?;
    Ok((loss, actions))
}

/// `−mean_i min_k Q_k(s_i, a_i)` and its gradient with respect to the
/// actions. Critic parameters are not updated.
fn twin_min_objective(
    critics: &mut [DenseNet; 2],
    mode: BnMode,
    aux: Option<&Matrix>,
    state_dim: usize,
    states: &Matrix,
    actions: &Matrix,
) -> Result<(f64, Matrix)> {
    let x = states.hstack(actions)?;
    let n = x.rows() as f64;
    let (q0, t0) = critics[0].forward(&x, mode, aux)?;
    let (q1, t1) = critics[1].forward(&x, mode, aux)?;
    let mut loss = 0.0;
    let mut d0 = Matrix::zeros(x.rows(), 1);
    let mut d1 = Matrix::zeros(x.rows(), 1);
    for i in 0..x.rows() {
        let (a, b) = (q0.data()[i], q1.data()[i]);
        if a <= b {
            loss -= a;
            d0.data_mut()[i] = -1.0 / n;
        } else {
            loss -= b;
            d1.data_mut()[i] = -1.0 / n;
        }
    }
    let (dx0, _) = critics[0].backward(t0, &d0, false)?;
    let (dx1, _) = critics[1].backward(t1, &d1, false)?;
    let mut dx = dx0;
    for (a, b) in dx.data_mut().iter_mut().zip(dx1.data()) {
        *a += b;
    }
    Ok((loss / n, dx.slice_cols(state_dim, x.cols())))
}

/// Normalized Q-bias `(Q(s, a) − G) / max(|G|, 1)` over every step of the
/// rollouts, where `G` is the discounted return to go. `q_fn` maps state and
/// action matrices to predictions, `v_fn` bootstraps truncated episodes.
pub fn q_bias_with<Q, V>(rollouts: &[Rollout], discount: f64, q_fn: Q, mut v_fn: V) -> Result<QBiasReport>
where
    Q: FnOnce(&Matrix, &Matrix) -> Result<Vec<f64>>,
    V: FnMut(&[f64]) -> Result<f64>,
{
    let mut states = Vec::new();
    let mut actions = Vec::new();
    let mut returns = Vec::new();
    for ep in rollouts {
        let mut g = if ep.end == StepEnd::Truncated {
            v_fn(&ep.last_state)?
        } else {
            0.0
        };
        let mut rev = Vec::with_capacity(ep.rewards.len());
        for r in ep.rewards.iter().rev() {
            g = r + discount * g;
            rev.push(g);
        }
        rev.reverse();
        returns.extend(rev);
        states.extend(ep.states.iter().map(Vec::as_slice));
        actions.extend(ep.actions.iter().map(Vec::as_slice));
    }
    if returns.is_empty() {
        return Err(Error::Invalid("q-bias needs at least one recorded step".into()));
    }
    let q = q_fn(&Matrix::from_rows(&states)?, &Matrix::from_rows(&actions)?)?;
    if q.len() != returns.len() {
        return Err(Error::Shape("one prediction per step expected".into()));
    }
    let bias: Vec<f64> = q
        .iter()
        .zip(&returns)
        .map(|(q, g)| (q - g) / g.abs().max(1.0))
        .collect();
    let n = bias.len() as f64;
    let mean = bias.iter().sum::<f64>() / n;
    let var = bias.iter().map(|b| (b - mean) * (b - mean)).sum::<f64>() / n;
    if !mean.is_finite() || !var.is_finite() {
        return Err(Error::NonFinite("q-bias".into()));
    }
    Ok(QBiasReport {
        mean_bias: mean,
        std_bias: var.sqrt(),
        samples: bias.len(),
    })
}
