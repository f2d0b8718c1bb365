use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ddpg::AgentState;
use crate::error::{Error, Result};
use crate::replay::ReplayBuffer;

pub const CHECKPOINT_FORMAT: &str = "mabn-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Networks with their batch-norm statistics, optimizer moments and rng
/// state, optionally with the replay buffer. Stored as one JSON document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub step: u64,
    pub agent: AgentState,
    pub buffer: Option<ReplayBuffer>,
}

impl Checkpoint {
    pub fn new(step: u64, agent: AgentState, buffer: Option<ReplayBuffer>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            step,
            agent,
            buffer,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Head {
            format: String,
            version: u32,
        }
        let head: Head = serde_json::from_str(text)?;
        if head.format != CHECKPOINT_FORMAT {
            return Err(Error::Invalid(format!("not a checkpoint: format {:?}", head.format)));
        }
        if head.version != CHECKPOINT_VERSION {
            return Err(Error::Invalid(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                head.version
            )));
        }
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
