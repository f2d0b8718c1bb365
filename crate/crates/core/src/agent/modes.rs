use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{BnMode, NormKind};

/// Batch-norm mode letter at one call site.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Site {
    T,
    E,
}

impl Site {
    pub fn bn_mode(self) -> BnMode {
        match self {
            Site::T => BnMode::Train,
            Site::E => BnMode::Eval,
        }
    }

    fn letter(self) -> char {
        match self {
            Site::T => 'T',
            Site::E => 'E',
        }
    }
}

/// Batch-norm mode at each of the five call sites of the update.
///
/// * critic I: critic forward inside the actor loss
/// * critic II: critic forward in the regression loss
/// * critic III: target-critic forward for the bootstrap target
/// * actor I: actor forward inside the actor loss
/// * actor II: actor forward producing target actions
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModeConfig {
    pub critic_modes: [Site; 3],
    pub actor_modes: [Site; 2],
    pub bn_enabled_actor: bool,
    pub bn_enabled_critic: bool,
    /// Layer norm on hidden layers of networks without batch norm.
    pub layer_norm: bool,
    /// `1:x` buffer mixing at critic I.
    pub mix_ratio_x: Option<u32>,
}

impl ModeConfig {
    /// Actor `TT`, critic `ETT`.
    pub fn ma_bn() -> Self {
        Self {
            critic_modes: [Site::E, Site::T, Site::T],
            actor_modes: [Site::T, Site::T],
            bn_enabled_actor: true,
            bn_enabled_critic: true,
            layer_norm: false,
            mix_ratio_x: None,
        }
    }

    /// No normalization anywhere.
    pub fn origin() -> Self {
        Self {
            bn_enabled_actor: false,
            bn_enabled_critic: false,
            ..Self::ma_bn()
        }
    }

    pub fn layer_norm() -> Self {
        Self {
            layer_norm: true,
            ..Self::origin()
        }
    }

    pub fn with_mix_ratio(mut self, x: Option<u32>) -> Result<Self> {
        self.mix_ratio_x = x;
        self.validate()?;
        Ok(self)
    }

    pub fn critic_i(&self) -> BnMode {
        self.critic_modes[0].bn_mode()
    }
    pub fn critic_ii(&self) -> BnMode {
        self.critic_modes[1].bn_mode()
    }
    pub fn critic_iii(&self) -> BnMode {
        self.critic_modes[2].bn_mode()
    }
    pub fn actor_i(&self) -> BnMode {
        self.actor_modes[0].bn_mode()
    }
    pub fn actor_ii(&self) -> BnMode {
        self.actor_modes[1].bn_mode()
    }

    pub fn actor_norm(&self) -> NormKind {
        norm_kind(self.bn_enabled_actor, self.layer_norm)
    }

    pub fn critic_norm(&self) -> NormKind {
        norm_kind(self.bn_enabled_critic, self.layer_norm)
    }

    /// Mixing applies only while the critics carry batch norm.
    pub fn effective_mix(&self) -> Option<u32> {
        if self.bn_enabled_critic {
            self.mix_ratio_x
        } else {
            None
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bn_enabled_actor && self.actor_modes == [Site::E, Site::E] {
            return Err(Error::InvalidMode {
                input: "EE".into(),
                reason: "actor modes EE never update batch-norm statistics, which \
                         degenerates the layer"
                    .into(),
            });
        }
        match self.mix_ratio_x {
            Some(0) => {
                return Err(Error::config("agent.mix_ratio", "ratio must be a positive integer"))
            }
            Some(_) if self.critic_modes[0] != Site::T => {
                return Err(Error::config(
                    "agent.mix_ratio",
                    "buffer mixing requires critic I in T mode",
                ))
            }
            _ => {}
        }
        Ok(())
    }

    /// `critic/actor` label such as `ETT/TT`, or `Origin` / `LN`.
    pub fn label(&self) -> String {
        if !self.bn_enabled_actor && !self.bn_enabled_critic {
            return if self.layer_norm { "LN" } else { "Origin" }.into();
        }
        let c: String = self.critic_modes.iter().map(|s| s.letter()).collect();
        let a: String = self.actor_modes.iter().map(|s| s.letter()).collect();
        format!("{c}/{a}")
    }
}

impl fmt::Display for ModeConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())?;
        if let Some(x) = self.mix_ratio_x {
            write!(f, "+mix1:{x}")?;
        }
        Ok(())
    }
}

fn norm_kind(bn: bool, ln: bool) -> NormKind {
    if bn {
        NormKind::Batch
    } else if ln {
        NormKind::Layer
    } else {
        NormKind::None
    }
}

fn letters<const N: usize>(s: &str) -> Result<[Site; N]> {
    let chars: Vec<char> = s.chars().collect();
    if chars.len() != N {
        return Err(Error::InvalidMode {
            input: s.into(),
            reason: format!("expected {N} mode letters"),
        });
    }
    let mut out = [Site::T; N];
    for (o, c) in out.iter_mut().zip(chars) {
        *o = match c {
            'T' => Site::T,
            'E' => Site::E,
            other => {
                return Err(Error::InvalidMode {
                    input: s.into(),
                    reason: format!("invalid mode letter '{other}'"),
                })
            }
        };
    }
    Ok(out)
}

/// Positional mapping of a 3-letter critic string and a 2-letter actor
/// string. `Origin` in either position disables batch norm entirely.
pub fn parse_mode_string(critic: &str, actor: &str) -> Result<ModeConfig> {
    if critic == "Origin" || actor == "Origin" {
        return Ok(ModeConfig::origin());
    }
    let cfg = ModeConfig {
        critic_modes: letters::<3>(critic)?,
        actor_modes: letters::<2>(actor)?,
        bn_enabled_actor: true,
        bn_enabled_critic: true,
        layer_norm: false,
        mix_ratio_x: None,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Parse `ETT/TT`, `MA-BN`, `Origin` or `LN`.
pub fn parse_mode_label(label: &str) -> Result<ModeConfig> {
    match label.trim() {
        "Origin" => Ok(ModeConfig::origin()),
        "LN" => Ok(ModeConfig::layer_norm()),
        "MA-BN" => Ok(ModeConfig::ma_bn()),
        other => match other.split_once('/') {
            Some((c, a)) => parse_mode_string(c.trim(), a.trim()),
            None => Err(Error::InvalidMode {
                input: other.into(),
                reason: "expected `critic/actor` letters, MA-BN, Origin or LN".into(),
            }),
        },
    }
}

/// How the target critics' batch-norm running statistics evolve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetBnStrategy {
    /// Critic III runs in T mode; the target's own statistics are unused at
    /// that site but still blended for checkpoint consistency.
    #[default]
    TargetUsesTrainMode,
    /// Statistics frozen at initialization.
    Bn0,
    /// Blended with the same coefficient as the parameters.
    BnSoft,
    /// Copied from the live critic on every update.
    BnCritic,
}

impl TargetBnStrategy {
    pub fn validate(self, modes: &ModeConfig) -> Result<()> {
        if self != TargetBnStrategy::TargetUsesTrainMode && modes.critic_modes[2] != Site::E {
            return Err(Error::config(
                "agent.target_strategy",
                "bn0, bn_soft and bn_critic require critic III in E mode",
            ));
        }
        Ok(())
    }
}
