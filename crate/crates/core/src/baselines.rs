//! Ablation variants and the config transform selecting each one.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    /// Teacher forcing on reference plans only.
    Bc,
    /// Greedy routing with the proficient branch disabled.
    RectOnly,
    /// Greedy routing with the hard-sample branch disabled.
    GrpoOnly,
    /// Correction from the error state with the full erroneous history.
    Dagger,
    Full,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 5] =
        [Self::Bc, Self::RectOnly, Self::GrpoOnly, Self::Dagger, Self::Full];

    pub fn name(self) -> &'static str {
        match self {
            Self::Bc => "bc",
            Self::RectOnly => "rect_only",
            Self::GrpoOnly => "grpo_only",
            Self::Dagger => "dagger",
            Self::Full => "full",
        }
    }

    /// Whether probes are routed at all (false for BC and DAgger).
    pub fn is_routed(self) -> bool {
        matches!(self, Self::RectOnly | Self::GrpoOnly | Self::Full)
    }

    pub fn grpo_enabled(self) -> bool {
        matches!(self, Self::GrpoOnly | Self::Full)
    }

    pub fn rect_enabled(self) -> bool {
        matches!(self, Self::RectOnly | Self::Full)
    }
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let s = s.to_ascii_lowercase().replace('-', "_");
        match s.as_str() {
            "gro" => Ok(Self::Full),
            _ => Self::ALL
                .into_iter()
                .find(|v| v.name() == s)
                .ok_or_else(|| Error::Config(format!("unknown variant {s:?}"))),
        }
    }
}

/// The base config with only the variant switched; every other knob,
/// including triggers and the episode stream, is shared.
pub fn variant_config(base: &TrainConfig, variant: AblationVariant) -> TrainConfig {
    TrainConfig { variant, ..base.clone() }
}
