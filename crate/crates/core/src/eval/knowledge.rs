use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::contrastive::{Algorithm, Architecture};
use crate::data::AugmentationPipeline;
use crate::error::{Error, Result};

/// What the inferrer knows about the target: its pre-training data
/// distribution (`p`), encoder architecture (`e`) and training algorithm
/// including its augmentation (`t`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BackgroundKnowledge {
    pub p: bool,
    pub e: bool,
    pub t: bool,
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

impl BackgroundKnowledge {
    pub const FULL: Self = Self { p: true, e: true, t: true };
    pub const NONE: Self = Self { p: false, e: false, t: false };

    /// All eight settings, from full knowledge down to none.
    pub fn all() -> [Self; 8] {
        let mut out = [Self::NONE; 8];
        for (i, slot) in out.iter_mut().enumerate() {
            let bits = 7 - i;
            *slot = Self { p: bits & 4 != 0, e: bits & 2 != 0, t: bits & 1 != 0 };
        }
        out
    }

    /// The shadow configuration an inferrer with this knowledge uses.
    pub fn shadow_plan(&self, target: &TargetSetup) -> ShadowPlan {
        let dataset = if self.p { target.dataset.clone() } else { target.alternate_dataset.clone() };
        let arch = if self.e { target.arch } else { other_arch(target.arch) };
        let (algorithm, pipeline) = if self.t {
            (target.algorithm, target.pipeline.clone())
        } else {
            (other_algorithm(target.algorithm), AugmentationPipeline::crop_only())
        };
        ShadowPlan { dataset, arch, algorithm, pretrain_pipeline: pipeline.clone(), query_pipeline: pipeline }
    }

    /// Short label such as `yes-no-yes`.
    pub fn label(&self) -> String {
        format!("{}-{}-{}", yes_no(self.p), yes_no(self.e), yes_no(self.t))
    }
}

impl fmt::Display for BackgroundKnowledge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(P={}, E={}, T={})", yes_no(self.p), yes_no(self.e), yes_no(self.t))
    }
}

impl FromStr for BackgroundKnowledge {
    type Err = Error;

    /// Accepts `yes-no-yes`, `yny`, `101` and similar.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("background knowledge must be three yes/no flags, got `{s}`"));
        let flag = |t: &str| match t.to_ascii_lowercase().as_str() {
            "yes" | "y" | "1" | "true" => Ok(true),
            "no" | "n" | "0" | "false" => Ok(false),
            _ => Err(bad()),
        };
        let parts: Vec<&str> = s.split([',', '-', ' ']).filter(|t| !t.is_empty()).collect();
        let flags: Vec<bool> = if parts.len() == 3 {
            parts.into_iter().map(flag).collect::<Result<_>>()?
        } else if s.chars().count() == 3 {
            s.chars().map(|c| flag(&c.to_string())).collect::<Result<_>>()?
        } else {
            return Err(bad());
        };
        Ok(Self { p: flags[0], e: flags[1], t: flags[2] })
    }
}

pub fn other_arch(a: Architecture) -> Architecture {
    match a {
        Architecture::SmallResnet => Architecture::SmallVgg,
        Architecture::SmallVgg => Architecture::SmallResnet,
    }
}

pub fn other_algorithm(a: Algorithm) -> Algorithm {
    match a {
        Algorithm::Moco => Algorithm::Simclr,
        Algorithm::Simclr => Algorithm::Moco,
    }
}

/// The facts about a target that background knowledge refers to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetSetup {
    /// Source the target was pre-trained on.
    pub dataset: String,
    /// Differently distributed source used when the distribution is unknown.
    pub alternate_dataset: String,
    pub arch: Architecture,
    pub algorithm: Algorithm,
    /// Pre-training augmentation of the target.
    pub pipeline: AugmentationPipeline,
}

/// Resolved shadow configuration for one knowledge setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShadowPlan {
    pub dataset: String,
    pub arch: Architecture,
    pub algorithm: Algorithm,
    pub pretrain_pipeline: AugmentationPipeline,
    /// Augmentation used when querying shadow and target encoders.
    pub query_pipeline: AugmentationPipeline,
}
