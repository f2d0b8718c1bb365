use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::AgentConfig;
use crate::envs::EnvSpec;
use crate::error::{Error, Result};

/// Environment variable naming the default output root.
pub const OUT_DIR_ENV: &str = "MABN_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "runs";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub total_steps: u64,
    pub eval_every: u64,
    pub seeds: Vec<u64>,
    /// Falls back to `$MABN_OUT_DIR`, then `./runs`.
    pub output_dir: Option<PathBuf>,
    /// Concurrent seeds or sweep cells; `None` uses every core.
    pub workers: Option<usize>,
    /// Save the final agent of each seed next to its CSV.
    pub checkpoint: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            total_steps: 20_000,
            eval_every: 1000,
            seeds: vec![0],
            output_dir: None,
            workers: None,
            checkpoint: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    #[serde(default)]
    pub agent: AgentConfig,
    #[serde(default)]
    pub run: RunConfig,
}

/// The fields that determine results; location, scheduling and
/// checkpointing are left out.
#[derive(Serialize)]
struct Hashed<'a> {
    env: &'a EnvSpec,
    agent: &'a AgentConfig,
    total_steps: u64,
    eval_every: u64,
    seeds: &'a [u64],
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Every field spelled out, defaults included.
    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.agent.validate()?;
        if self.run.seeds.is_empty() {
            return Err(Error::config("run.seeds", "at least one seed is required"));
        }
        if self.run.eval_every == 0 {
            return Err(Error::config("run.eval_every", "must be positive"));
        }
        if self.run.workers == Some(0) {
            return Err(Error::config("run.workers", "must be positive"));
        }
        if let Some(g) = self.env.discount() {
            if g != self.agent.discount {
                return Err(Error::config(
                    "agent.discount",
                    format!("must equal the environment discount {g}"),
                ));
            }
        }
        Ok(())
    }

    /// First 12 hex digits of the SHA-256 of the canonical JSON form of the
    /// result-determining fields.
    pub fn hash(&self) -> String {
        let h = Hashed {
            env: &self.env,
            agent: &self.agent,
            total_steps: self.run.total_steps,
            eval_every: self.run.eval_every,
            seeds: &self.run.seeds,
        };
        let json = serde_json::to_vec(&h).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    pub fn output_dir(&self) -> PathBuf {
        self.run.output_dir.clone().unwrap_or_else(default_output_root)
    }
}

pub fn default_output_root() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}
