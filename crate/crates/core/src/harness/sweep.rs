use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use super::run::{prepare, RunOutcome};
use crate::agent::{parse_mode_label, AgentConfig};
use crate::error::{Error, Result};
use crate::nn::OptimizerKind;
use crate::parallel::{map_slice, with_workers, Exec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SweepAxis {
    LearningRate,
    ModeString,
    MixRatio,
    Optimizer,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::LearningRate => "learning_rate",
            SweepAxis::ModeString => "mode_string",
            SweepAxis::MixRatio => "mix_ratio",
            SweepAxis::Optimizer => "optimizer",
        }
    }

    /// Set this axis to `value` on `agent`.
    ///
    /// A learning-rate value sets the actor rate; an explicit critic rate
    /// keeps its ratio to the actor rate.
    pub fn apply(self, agent: &mut AgentConfig, value: &str) -> Result<()> {
        let bad = |reason: String| Error::config(format!("sweep.{}", self.name()), reason);
        match self {
            SweepAxis::LearningRate => {
                let lr: f64 = value.parse().map_err(|_| bad(format!("{value:?} is not a number")))?;
                if let Some(c) = agent.critic_learning_rate {
                    agent.critic_learning_rate = Some(c * lr / agent.learning_rate);
                }
                agent.learning_rate = lr;
            }
            SweepAxis::ModeString => {
                parse_mode_label(value)?;
                agent.mode = value.to_string();
            }
            SweepAxis::MixRatio => {
                agent.mix_ratio = match value {
                    "none" | "0" => None,
                    v => Some(
                        v.trim_start_matches("1:")
                            .parse()
                            .map_err(|_| bad(format!("{value:?} is not `none` or a ratio")))?,
                    ),
                };
            }
            SweepAxis::Optimizer => {
                agent.optimizer = match value.to_ascii_lowercase().as_str() {
                    "sgd" => OptimizerKind::Sgd,
                    "adam" => OptimizerKind::Adam,
                    _ => return Err(bad(format!("{value:?} is not sgd or adam"))),
                };
            }
        }
        Ok(())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "learning_rate" | "lr" => SweepAxis::LearningRate,
            "mode_string" | "mode" => SweepAxis::ModeString,
            "mix_ratio" => SweepAxis::MixRatio,
            "optimizer" => SweepAxis::Optimizer,
            _ => {
                return Err(Error::config(
                    "sweep.axis",
                    format!("{s:?} is not one of learning_rate, mode_string, mix_ratio, optimizer"),
                ))
            }
        })
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AxisValues {
    pub axis: SweepAxis,
    pub values: Vec<String>,
}

/// One point of the Cartesian product.
#[derive(Debug, Clone)]
pub struct SweepCell {
    /// `(axis, value)` in axis order.
    pub coords: Vec<(SweepAxis, String)>,
    pub config: ExperimentConfig,
}

/// Cartesian product of the axes applied to `base`, first axis slowest.
/// Every cell is validated before anything runs.
pub fn expand_grid(base: &ExperimentConfig, axes: &[AxisValues]) -> Result<Vec<SweepCell>> {
    let mut cells = vec![SweepCell {
        coords: Vec::new(),
        config: base.clone(),
    }];
    for ax in axes {
        if ax.values.is_empty() {
            return Err(Error::config(format!("sweep.{}", ax.axis), "no values given"));
        }
        let mut next = Vec::with_capacity(cells.len() * ax.values.len());
        for cell in &cells {
            for v in &ax.values {
                let mut c = cell.clone();
                ax.axis.apply(&mut c.config.agent, v)?;
                c.coords.push((ax.axis, v.clone()));
                next.push(c);
            }
        }
        cells = next;
    }
    for c in &cells {
        c.config.validate()?;
    }
    Ok(cells)
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub coords: Vec<(SweepAxis, String)>,
    pub run: RunOutcome,
    /// Seed mean of the mean evaluation return over the final 10% of steps;
    /// `None` when any seed faulted or produced no evaluation there.
    pub final_return: Option<f64>,
    pub normalized: f64,
}

impl CellResult {
    pub fn faulted(&self) -> bool {
        self.run.faulted() > 0
    }

    pub fn coord(&self, axis: SweepAxis) -> Option<&str> {
        self.coords.iter().find(|(a, _)| *a == axis).map(|(_, v)| v.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub axes: Vec<SweepAxis>,
    pub cells: Vec<CellResult>,
    pub summary: PathBuf,
}

pub const FINAL_FRACTION: f64 = 0.1;

/// Run every cell for every seed, concurrently up to `run.workers` jobs,
/// and write the normalized-reward summary.
pub fn sweep(base: &ExperimentConfig, axes: &[AxisValues], exec: Exec) -> Result<SweepOutcome> {
    base.validate()?;
    let cells = expand_grid(base, axes)?;
    let prepared = cells.iter().map(|c| prepare(&c.config)).collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, u64)> = cells
        .iter()
        .enumerate()
        .flat_map(|(i, c)| c.config.run.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let mut outcomes = with_workers(base.run.workers.unwrap_or(0), || {
        map_slice(exec, &jobs, |&(i, seed)| prepared[i].run_seed(&cells[i].config, seed))
    })
    .into_iter();

    let mut results = Vec::with_capacity(cells.len());
    for (cell, prep) in cells.into_iter().zip(prepared) {
        let seeds = outcomes
            .by_ref()
            .take(cell.config.run.seeds.len())
            .collect::<Result<Vec<_>>>()?;
        let run = prep.finish(seeds)?;
        let final_return = cell_final_return(&run, cell.config.run.total_steps);
        results.push(CellResult {
            coords: cell.coords,
            run,
            final_return,
            normalized: 0.0,
        });
    }
    let finals: Vec<Option<f64>> = results.iter().map(|r| r.final_return).collect();
    for (r, n) in results.iter_mut().zip(normalize(&finals)) {
        r.normalized = n;
    }

    let summary = base
        .output_dir()
        .join(format!("sweep_{}.csv", sweep_id(base, axes)));
    let f = std::fs::File::create(&summary).map_err(|e| Error::io(&summary, e))?;
    write_summary(std::io::BufWriter::new(f), &results)?;
    Ok(SweepOutcome {
        axes: axes.iter().map(|a| a.axis).collect(),
        cells: results,
        summary,
    })
}

fn cell_final_return(run: &RunOutcome, total_steps: u64) -> Option<f64> {
    if run.faulted() > 0 {
        return None;
    }
    let per_seed: Option<Vec<f64>> = run
        .seeds
        .iter()
        .map(|s| s.metrics.tail_mean(total_steps, FINAL_FRACTION, |r| r.eval_return))
        .collect();
    let v = per_seed?;
    Some(v.iter().sum::<f64>() / v.len() as f64)
}

/// Scale final returns so the best cell scores 1 and faulted cells 0.
///
/// With all returns ≤ 0 a cell scores `best / cell`, otherwise
/// `max(cell, 0) / best`.
pub fn normalize(finals: &[Option<f64>]) -> Vec<f64> {
    let best = finals
        .iter()
        .flatten()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    finals
        .iter()
        .map(|f| match *f {
            None => 0.0,
            Some(_) if !best.is_finite() => 0.0,
            Some(v) if best > 0.0 => v.max(0.0) / best,
            Some(v) if v == 0.0 => 1.0,
            Some(v) => best / v,
        })
        .collect()
}

fn sweep_id(base: &ExperimentConfig, axes: &[AxisValues]) -> String {
    let mut h = Sha256::new();
    h.update(base.hash().as_bytes());
    for a in axes {
        h.update(b"\n");
        h.update(a.axis.name().as_bytes());
        for v in &a.values {
            h.update(b"\x1f");
            h.update(v.as_bytes());
        }
    }
    h.finalize().iter().take(6).map(|b| format!("{b:02x}")).collect()
}

pub fn write_summary<W: Write>(out: W, cells: &[CellResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = cells
        .first()
        .map(|c| c.coords.iter().map(|(a, _)| a.name().to_string()).collect())
        .unwrap_or_default();
    header.extend(
        ["config_hash", "seeds", "faulted_seeds", "final_return", "normalized"].map(String::from),
    );
    w.write_record(&header)?;
    for c in cells {
        let mut rec: Vec<String> = c.coords.iter().map(|(_, v)| v.clone()).collect();
        rec.push(c.run.hash.clone());
        rec.push(c.run.seeds.len().to_string());
        rec.push(c.run.faulted().to_string());
        rec.push(c.final_return.map(|v| v.to_string()).unwrap_or_default());
        rec.push(c.normalized.to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::Invalid(format!("csv flush: {e}")))?;
    Ok(())
}
