use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ddpg::AgentState;
use super::noise::noise_sigma;
use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::nn::BnMode;
use crate::replay::{action_dist_diff, ReplayBuffer, Transition};

/// One evaluation point. Empty cells mean "not available yet".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub episode_return: Option<f64>,
    pub eval_return: Option<f64>,
    pub critic_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub q_bias_mean: Option<f64>,
    pub q_bias_std: Option<f64>,
    pub a_mean_diff: Option<f64>,
    pub a_var_diff: Option<f64>,
    pub coverage: Option<f64>,
    pub sigma_t: f64,
}

impl MetricsRow {
    /// Value of a metric column by its CSV name; `step` included.
    pub fn value(&self, column: &str) -> Option<f64> {
        match column {
            "step" => Some(self.step as f64),
            "episode_return" => self.episode_return,
            "eval_return" => self.eval_return,
            "critic_loss" => self.critic_loss,
            "actor_loss" => self.actor_loss,
            "q_bias_mean" => self.q_bias_mean,
            "q_bias_std" => self.q_bias_std,
            "a_mean_diff" => self.a_mean_diff,
            "a_var_diff" => self.a_var_diff,
            "coverage" => self.coverage,
            "sigma_t" => Some(self.sigma_t),
            _ => None,
        }
    }
}

pub const CSV_COLUMNS: [&str; 11] = [
    "step",
    "episode_return",
    "eval_return",
    "critic_loss",
    "actor_loss",
    "q_bias_mean",
    "q_bias_std",
    "a_mean_diff",
    "a_var_diff",
    "coverage",
    "sigma_t",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fault {
    pub step: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunMetrics {
    pub rows: Vec<MetricsRow>,
    pub fault: Option<Fault>,
}

impl RunMetrics {
    pub fn last(&self) -> Option<&MetricsRow> {
        self.rows.last()
    }

    /// Mean of a column over rows with `step > (1 − frac)·total_steps`,
    /// skipping empty cells.
    pub fn tail_mean(&self, total_steps: u64, frac: f64, col: fn(&MetricsRow) -> Option<f64>) -> Option<f64> {
        let cutoff = (1.0 - frac) * total_steps as f64;
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.step as f64 > cutoff)
            .filter_map(col)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub total_steps: u64,
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub warmup_steps: u64,
    pub batch_size: usize,
    pub seed: u64,
}

/// Seeded rng on its own stream.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

const ENV_STREAM: u64 = 2;
const EVAL_STREAM: u64 = 3;
const QBIAS_STREAM: u64 = 4;

/// Off-policy training loop with one critic update, one actor update and
/// one soft update per environment step after warmup.
///
/// Evaluation rows are emitted every `eval_every` steps, each passed to
/// `on_row` as soon as it exists. A failing update stops the run and is
/// reported in [`RunMetrics::fault`] alongside the rows so far.
pub fn train(
    agent: &mut AgentState,
    env: &mut dyn Environment,
    eval_env: &mut dyn Environment,
    buf: &mut ReplayBuffer,
    settings: &TrainSettings,
    mut on_row: impl FnMut(&MetricsRow) -> Result<()>,
) -> Result<RunMetrics> {
    if settings.eval_every == 0 {
        return Err(Error::config("run.eval_every", "must be positive"));
    }
    let mut metrics = RunMetrics::default();
    if settings.total_steps == 0 {
        return Ok(metrics);
    }
    let t_decay = agent.noise.horizon(settings.total_steps);
    let mut env_rng = stream_rng(settings.seed, ENV_STREAM);
    let bound = agent.action_bound;
    let action_dim = agent.action_dim;

    let mut s = env.reset(&mut env_rng);
    let mut ep_return = 0.0;
    let mut finished: Vec<f64> = Vec::new();
    let mut window = Window::default();

    for t in 0..settings.total_steps {
        let sigma = noise_sigma(t, t_decay, &agent.noise);
        let step = t + 1;
        let a = if t < settings.warmup_steps {
            (0..action_dim).map(|_| env_rng.random_range(-bound..=bound)).collect()
        } else {
            match agent.select_action(&s, sigma, true, BnMode::Eval) {
                Ok(a) => a,
                Err(e) => return Ok(faulted(metrics, step, e)),
            }
        };
        let out = env.step(&a);
        ep_return += out.reward;
        let transition = Transition {
            s: std::mem::take(&mut s),
            a,
            r: out.reward,
            s_next: out.next_state.clone(),
            done: out.terminal(),
        };
        if let Err(e) = buf.push(transition) {
            return Ok(faulted(metrics, step, e));
        }
        if out.done() {
            finished.push(ep_return);
            ep_return = 0.0;
            s = env.reset(&mut env_rng);
        } else {
            s = out.next_state;
        }

        if t >= settings.warmup_steps && buf.len() >= settings.batch_size {
            if let Err(e) = update(agent, buf, settings.batch_size, sigma, &mut window) {
                return Ok(faulted(metrics, step, e));
            }
        }

        if step % settings.eval_every == 0 {
            let row = match evaluate_row(agent, eval_env, settings, step, sigma, &finished, &window) {
                Ok(mut row) => {
                    row.coverage = env.coverage();
                    row
                }
                Err(e) => return Ok(faulted(metrics, step, e)),
            };
            finished.clear();
            window = Window::default();
            on_row(&row)?;
            metrics.rows.push(row);
        }
    }
    Ok(metrics)
}

#[derive(Default)]
struct Window {
    critic_loss: f64,
    actor_loss: f64,
    a_mean_diff: f64,
    a_var_diff: f64,
    updates: u64,
}

impl Window {
    fn mean(&self, v: f64) -> Option<f64> {
        (self.updates > 0).then(|| v / self.updates as f64)
    }
}

fn update(
    agent: &mut AgentState,
    buf: &mut ReplayBuffer,
    batch_size: usize,
    sigma: f64,
    window: &mut Window,
) -> Result<()> {
    let batch = buf.sample(batch_size)?;
    let y = agent.critic_target(&batch, sigma)?;
    let closs = agent.critic_update(&batch, &y)?;
    let step = agent.actor_update(&batch.states, Some(buf), sigma)?;
    agent.soft_update()?;
    let (dm, dv) = action_dist_diff(&step.stat_actions, &batch.actions)?;
    window.critic_loss += closs;
    window.actor_loss += step.loss;
    window.a_mean_diff += dm;
    window.a_var_diff += dv;
    window.updates += 1;
    Ok(())
}

fn evaluate_row(
    agent: &AgentState,
    eval_env: &mut dyn Environment,
    settings: &TrainSettings,
    step: u64,
    sigma: f64,
    finished: &[f64],
    window: &Window,
) -> Result<MetricsRow> {
    // identical start states at every evaluation
    let mut rng = stream_rng(settings.seed, EVAL_STREAM);
    let rollouts = agent.rollout(eval_env, settings.eval_episodes, &mut rng as &mut dyn RngCore)?;
    let eval_return =
        rollouts.iter().map(|r| r.total_return()).sum::<f64>() / rollouts.len() as f64;
    let qb = agent.q_bias(&rollouts, settings.seed ^ QBIAS_STREAM.wrapping_mul(step))?;
    Ok(MetricsRow {
        step,
        episode_return: (!finished.is_empty())
            .then(|| finished.iter().sum::<f64>() / finished.len() as f64),
        eval_return: Some(eval_return),
        critic_loss: window.mean(window.critic_loss),
        actor_loss: window.mean(window.actor_loss),
        q_bias_mean: Some(qb.mean_bias),
        q_bias_std: Some(qb.std_bias),
        a_mean_diff: window.mean(window.a_mean_diff),
        a_var_diff: window.mean(window.a_var_diff),
        coverage: None,
        sigma_t: sigma,
    })
}

fn faulted(mut metrics: RunMetrics, step: u64, e: Error) -> RunMetrics {
    metrics.fault = Some(Fault {
        step,
        reason: e.to_string(),
    });
    metrics
}

/// Write rows as CSV with the fixed header.
pub fn write_metrics_csv<W: std::io::Write>(out: W, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::Invalid(format!("csv flush: {e}")))?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Schema {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != CSV_COLUMNS {
        return Err(Error::Schema {
            path: path.to_path_buf(),
            reason: format!("unexpected header {}", header.join(",")),
        });
    }
    rdr.deserialize()
        .map(|r| {
            r.map_err(|e| Error::Schema {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })
        })
        .collect()
}
