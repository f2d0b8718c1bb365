use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use super::config::ExperimentConfig;
use crate::agent::{stream_rng, train, AgentState, Checkpoint, MetricsRow, RunMetrics, TrainSettings, CSV_COLUMNS};
use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::parallel::{map_slice, with_workers, Exec};
use crate::replay::ReplayBuffer;

const BUFFER_STREAM: u64 = 5;

/// Everything one seed of an experiment owns.
pub struct SeedRun {
    pub agent: AgentState,
    pub env: Box<dyn Environment>,
    pub eval_env: Box<dyn Environment>,
    pub buffer: ReplayBuffer,
    pub settings: TrainSettings,
}

impl SeedRun {
    pub fn new(cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let env = cfg.env.build()?;
        let eval_env = cfg.env.build()?;
        let agent = AgentState::for_env(&cfg.agent, env.as_ref(), seed)?;
        let buffer = ReplayBuffer::with_rng(cfg.agent.buffer_capacity, stream_rng(seed, BUFFER_STREAM))?;
        let settings = TrainSettings {
            total_steps: cfg.run.total_steps,
            eval_every: cfg.run.eval_every,
            eval_episodes: cfg.agent.eval_episodes,
            warmup_steps: cfg.agent.warmup_steps,
            batch_size: cfg.agent.batch_size,
            seed,
        };
        Ok(Self {
            agent,
            env,
            eval_env,
            buffer,
            settings,
        })
    }

    pub fn train(&mut self, on_row: impl FnMut(&MetricsRow) -> Result<()>) -> Result<RunMetrics> {
        train(
            &mut self.agent,
            self.env.as_mut(),
            self.eval_env.as_mut(),
            &mut self.buffer,
            &self.settings,
            on_row,
        )
    }
}

/// Train one seed in memory.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<RunMetrics> {
    SeedRun::new(cfg, seed)?.train(|_| Ok(()))
}

#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    pub csv: PathBuf,
    pub metrics: RunMetrics,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub hash: String,
    pub dir: PathBuf,
    pub config_file: PathBuf,
    pub seeds: Vec<SeedOutcome>,
}

impl RunOutcome {
    pub fn csv_files(&self) -> Vec<PathBuf> {
        self.seeds.iter().map(|s| s.csv.clone()).collect()
    }

    pub fn faulted(&self) -> usize {
        self.seeds.iter().filter(|s| s.metrics.fault.is_some()).count()
    }
}

pub fn seed_csv_path(dir: &Path, hash: &str, seed: u64) -> PathBuf {
    dir.join(format!("{hash}_seed{seed}.csv"))
}

/// Train every seed of `cfg`, streaming one CSV per seed into the output
/// directory next to the fully materialized config.
///
/// Files are named from the config hash and the seed, so rerunning an
/// identical config overwrites its own files and nothing else. A training
/// fault ends that seed only; it is listed in `{hash}_faults.txt`.
pub fn run(cfg: &ExperimentConfig, exec: Exec) -> Result<RunOutcome> {
    let prepared = prepare(cfg)?;
    let seeds = with_workers(cfg.run.workers.unwrap_or(0), || {
        map_slice(exec, &cfg.run.seeds, |&seed| prepared.run_seed(cfg, seed))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    prepared.finish(seeds)
}

/// Output directory created and config materialized; seeds not yet run.
pub(crate) struct Prepared {
    hash: String,
    dir: PathBuf,
    config_file: PathBuf,
}

pub(crate) fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let dir = cfg.output_dir();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let hash = cfg.hash();
    let config_file = dir.join(format!("{hash}.toml"));
    std::fs::write(&config_file, cfg.to_toml()?).map_err(|e| Error::io(&config_file, e))?;
    Ok(Prepared {
        hash,
        dir,
        config_file,
    })
}

impl Prepared {
    pub(crate) fn run_seed(&self, cfg: &ExperimentConfig, seed: u64) -> Result<SeedOutcome> {
        let csv = seed_csv_path(&self.dir, &self.hash, seed);
        let ckpt = cfg
            .run
            .checkpoint
            .then(|| self.dir.join(format!("{}_seed{seed}.ckpt.json", self.hash)));
        let metrics = run_to_csv(cfg, seed, &csv, ckpt.as_deref())?;
        Ok(SeedOutcome { seed, csv, metrics })
    }

    pub(crate) fn finish(self, seeds: Vec<SeedOutcome>) -> Result<RunOutcome> {
        write_faults(&self.dir.join(format!("{}_faults.txt", self.hash)), &seeds)?;
        Ok(RunOutcome {
            hash: self.hash,
            dir: self.dir,
            config_file: self.config_file,
            seeds,
        })
    }
}

fn run_to_csv(cfg: &ExperimentConfig, seed: u64, path: &Path, ckpt: Option<&Path>) -> Result<RunMetrics> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(BufWriter::new(file));
    w.write_record(CSV_COLUMNS)?;
    let mut seed_run = SeedRun::new(cfg, seed)?;
    let metrics = seed_run.train(|row| {
        w.serialize(row)?;
        w.flush().map_err(|e| Error::io(path, e))
    })?;
    w.flush().map_err(|e| Error::io(path, e))?;
    if let Some(p) = ckpt {
        let step = metrics.last().map_or(0, |r| r.step);
        Checkpoint::new(step, seed_run.agent, None).save(p)?;
    }
    Ok(metrics)
}

fn write_faults(path: &Path, seeds: &[SeedOutcome]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["seed", "step", "reason"])?;
    for s in seeds {
        if let Some(f) = &s.metrics.fault {
            w.write_record([s.seed.to_string(), f.step.to_string(), f.reason.clone()])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
