//! Run configuration, dataset profiles and layered overrides.
//!
//! Resolution order, later wins: built-in defaults, dataset profile, config
//! file, command-line flags.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::miner::{MiningConfig, MiningMode, Threshold};
use crate::mosaic::{CompositorConfig, CrossPointPolicy, Grid};

pub const DEFAULT_GAMMA: f64 = 0.6;
pub const DEFAULT_SEED: u64 = 0;

/// `(tau, k)` for the text-to-image-only mode, where scores live on a
/// much narrower range than image-to-image similarities.
pub const T2I_DEFAULTS: (f64, usize) = (0.25, 300);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Profile {
    #[serde(rename = "gref")]
    Gref,
    #[serde(rename = "refcoco")]
    Refcoco,
    #[serde(rename = "refcoco+")]
    RefcocoPlus,
}

impl Profile {
    /// Image-to-image upper bound `(tau, k)` tuned per dataset family.
    pub fn tau_k(&self) -> (f64, usize) {
        match self {
            Profile::Gref => (0.75, 200),
            Profile::Refcoco | Profile::RefcocoPlus => (0.85, 800),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Profile::Gref => "gref",
            Profile::Refcoco => "refcoco",
            Profile::RefcocoPlus => "refcoco+",
        }
    }
}

impl std::str::FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gref" | "g-ref" => Ok(Profile::Gref),
            "refcoco" => Ok(Profile::Refcoco),
            "refcoco+" => Ok(Profile::RefcocoPlus),
            _ => Err(format!(
                "unknown profile {s:?} (expected gref, refcoco or refcoco+)"
            )),
        }
    }
}

/// Fully resolved settings for one augmentation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub gamma: f64,
    #[serde(rename = "seed")]
    pub master_seed: u64,
    pub workers: usize,
    pub mining: MiningConfig,
    pub compositor: CompositorConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            master_seed: DEFAULT_SEED,
            workers: 1,
            mining: MiningConfig::default(),
            compositor: CompositorConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!(
                "gamma = {} is outside [0, 1]",
                self.gamma
            )));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        self.mining.validate()?;
        self.compositor.validate()?;
        let needed = self.compositor.grid.negatives();
        if self.mining.mode != MiningMode::Uniform && self.mining.k < needed {
            return Err(Error::Config(format!(
                "k = {} cannot supply the {needed} negatives of a {} grid",
                self.mining.k,
                self.compositor.grid.as_str()
            )));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MiningOverrides {
    pub tau: Option<Threshold>,
    pub k: Option<usize>,
    pub mode: Option<MiningMode>,
    pub tau_t2i: Option<Threshold>,
    pub tau_i2i: Option<Threshold>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompositorOverrides {
    pub grid: Option<Grid>,
    pub cross_point: Option<CrossPointPolicy>,
    pub constraints: Option<bool>,
}

/// A partial configuration: a config file or a set of flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    pub profile: Option<Profile>,
    pub gamma: Option<f64>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    #[serde(default)]
    pub mining: MiningOverrides,
    #[serde(default)]
    pub compositor: CompositorOverrides,
}

fn pick<T>(high: Option<T>, low: Option<T>) -> Option<T> {
    high.or(low)
}

impl ConfigOverrides {
    /// Parse a TOML or JSON config file, chosen by extension.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_json = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            crate::dataset::parse_json(path, &text)
        } else {
            Self::from_toml(&text)
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Layer `self` over `lower`; fields set in `self` win.
    pub fn over(self, lower: ConfigOverrides) -> ConfigOverrides {
        ConfigOverrides {
            profile: pick(self.profile, lower.profile),
            gamma: pick(self.gamma, lower.gamma),
            seed: pick(self.seed, lower.seed),
            workers: pick(self.workers, lower.workers),
            mining: MiningOverrides {
                tau: pick(self.mining.tau, lower.mining.tau),
                k: pick(self.mining.k, lower.mining.k),
                mode: pick(self.mining.mode, lower.mining.mode),
                tau_t2i: pick(self.mining.tau_t2i, lower.mining.tau_t2i),
                tau_i2i: pick(self.mining.tau_i2i, lower.mining.tau_i2i),
            },
            compositor: CompositorOverrides {
                grid: pick(self.compositor.grid, lower.compositor.grid),
                cross_point: pick(self.compositor.cross_point, lower.compositor.cross_point),
                constraints: pick(self.compositor.constraints, lower.compositor.constraints),
            },
        }
    }

    /// Fill every unset field from the profile and built-in defaults.
    pub fn resolve(&self) -> Result<PipelineConfig> {
        let mode = self.mining.mode.unwrap_or(MiningMode::I2iUpper);
        let (base_tau, base_k) = match mode {
            MiningMode::T2i => T2I_DEFAULTS,
            _ => self.profile.unwrap_or(Profile::Gref).tau_k(),
        };
        let config = PipelineConfig {
            gamma: self.gamma.unwrap_or(DEFAULT_GAMMA),
            master_seed: self.seed.unwrap_or(DEFAULT_SEED),
            workers: self.workers.unwrap_or(1),
            mining: MiningConfig {
                tau: self.mining.tau.unwrap_or(Threshold::at(base_tau)),
                k: self.mining.k.unwrap_or(base_k),
                mode,
                tau_t2i: self.mining.tau_t2i,
                tau_i2i: self.mining.tau_i2i,
            },
            compositor: CompositorConfig {
                grid: self.compositor.grid.unwrap_or_default(),
                cross_point: self.compositor.cross_point.unwrap_or_default(),
                constraints: self.compositor.constraints.unwrap_or(false),
            },
        };
        config.validate()?;
        Ok(config)
    }
}

impl From<&PipelineConfig> for ConfigOverrides {
    fn from(c: &PipelineConfig) -> Self {
        ConfigOverrides {
            profile: None,
            gamma: Some(c.gamma),
            seed: Some(c.master_seed),
            workers: Some(c.workers),
            mining: MiningOverrides {
                tau: Some(c.mining.tau),
                k: Some(c.mining.k),
                mode: Some(c.mining.mode),
                tau_t2i: c.mining.tau_t2i,
                tau_i2i: c.mining.tau_i2i,
            },
            compositor: CompositorOverrides {
                grid: Some(c.compositor.grid),
                cross_point: Some(c.compositor.cross_point),
                constraints: Some(c.compositor.constraints),
            },
        }
    }
}
