//! Negative image mining.
//!
//! Candidates that are too relevant to the query (score at or above the upper
//! bound `tau`) are dropped as likely false negatives. The survivors are
//! ranked by text-to-image relevance and the top `k` form the pool from which
//! the mosaic negatives are drawn uniformly.
//!
//! Ranking ties are broken by ascending image id.

use std::cmp::Ordering;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::ReferringSample;
use crate::embedding::{EmbeddingStore, RelevanceScore};
use crate::error::{Error, Result};
use crate::rng::SampleRng;

/// Negatives needed for a 2x2 mosaic.
pub const NEGATIVES_PER_MOSAIC: usize = 3;

/// Upper-bound relevance cutoff. `None` disables the bound.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Threshold(pub Option<f64>);

impl Threshold {
    pub const UNBOUNDED: Threshold = Threshold(None);

    pub fn at(value: f64) -> Self {
        Threshold(Some(value))
    }

    /// True when `score` is too relevant and must be excluded.
    #[inline]
    pub fn excludes(&self, score: f64) -> bool {
        matches!(self.0, Some(tau) if score >= tau)
    }

    fn validate(&self, name: &str) -> Result<()> {
        match self.0 {
            Some(t) if !(-1.0..=1.0).contains(&t) => Err(Error::Config(format!(
                "{name} = {t} is outside [-1, 1]; use \"none\" to disable the bound"
            ))),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(t) => write!(f, "{t}"),
            None => f.write_str("none"),
        }
    }
}

impl std::str::FromStr for Threshold {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("none") {
            return Ok(Threshold::UNBOUNDED);
        }
        s.parse::<f64>()
            .map(Threshold::at)
            .map_err(|_| format!("expected a number or \"none\", got {s:?}"))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ThresholdRepr {
    Value(f64),
    Keyword(String),
}

impl Serialize for Threshold {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.0 {
            Some(t) => ThresholdRepr::Value(t),
            None => ThresholdRepr::Keyword("none".into()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match ThresholdRepr::deserialize(d)? {
            ThresholdRepr::Value(t) => Ok(Threshold::at(t)),
            ThresholdRepr::Keyword(k) => k.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Which relevance drives the upper bound. The lower bound (top-K ranking)
/// always uses text-to-image relevance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MiningMode {
    /// Text-to-image relevance for both bounds.
    T2i,
    /// Image-to-image similarity against the positive image for the upper
    /// bound, text-to-image for ranking.
    I2iUpper,
    /// Drop a candidate when either its text-to-image score reaches
    /// `tau_t2i` or its image-to-image score reaches `tau_i2i`.
    Dual,
    /// Every other image is a candidate; the baseline with no bounds.
    Uniform,
}

impl MiningMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            MiningMode::T2i => "t2i",
            MiningMode::I2iUpper => "i2i-upper",
            MiningMode::Dual => "dual",
            MiningMode::Uniform => "uniform",
        }
    }
}

impl std::str::FromStr for MiningMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "t2i" => Ok(MiningMode::T2i),
            "i2i-upper" => Ok(MiningMode::I2iUpper),
            "dual" => Ok(MiningMode::Dual),
            "uniform" => Ok(MiningMode::Uniform),
            _ => Err(format!(
                "unknown mode {s:?} (expected t2i, i2i-upper, dual or uniform)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MiningConfig {
    pub tau: Threshold,
    pub k: usize,
    pub mode: MiningMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_t2i: Option<Threshold>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_i2i: Option<Threshold>,
}

impl Default for MiningConfig {
    /// Image-to-image upper bound with `(tau, k) = (0.75, 200)`.
    fn default() -> Self {
        Self {
            tau: Threshold::at(0.75),
            k: 200,
            mode: MiningMode::I2iUpper,
            tau_t2i: None,
            tau_i2i: None,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < NEGATIVES_PER_MOSAIC {
            return Err(Error::Config(format!(
                "k = {} but at least {NEGATIVES_PER_MOSAIC} candidates are needed",
                self.k
            )));
        }
        self.tau.validate("tau")?;
        match self.mode {
            MiningMode::Dual => {
                let (Some(t2i), Some(i2i)) = (self.tau_t2i, self.tau_i2i) else {
                    return Err(Error::Config(
                        "dual mode needs both tau_t2i and tau_i2i".into(),
                    ));
                };
                t2i.validate("tau_t2i")?;
                i2i.validate("tau_i2i")?;
            }
            _ => {
                if self.tau_t2i.is_some() || self.tau_i2i.is_some() {
                    return Err(Error::Config(format!(
                        "tau_t2i / tau_i2i only apply to dual mode, not {}",
                        self.mode.as_str()
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NegativePool {
    pub sample_id: u64,
    /// Top-ranked survivors, best first.
    pub pool: Vec<u64>,
    /// Candidates removed by the upper bound.
    pub excluded_upper: usize,
    /// Candidates left after the upper bound, before truncation to `k`.
    pub survivors: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegativeSelection {
    pub sample_id: u64,
    pub negatives: Vec<u64>,
    pub rng_seed_used: u64,
}

/// Descending score, then ascending image id.
pub fn rank_order(a: &RelevanceScore, b: &RelevanceScore) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.image_id.cmp(&b.image_id))
}

/// Candidates surviving the upper bound, with their text-to-image scores,
/// in store order. The positive image is never a candidate.
pub fn upper_bound_survivors(
    store: &EmbeddingStore,
    sample: &ReferringSample,
    config: &MiningConfig,
) -> Result<(Vec<RelevanceScore>, usize)> {
    let positive = sample.image_id;
    if config.mode == MiningMode::Uniform {
        let all: Vec<RelevanceScore> = store
            .image_ids()
            .iter()
            .filter(|&&id| id != positive)
            .map(|&image_id| RelevanceScore {
                image_id,
                score: 0.0,
            })
            .collect();
        return Ok((all, 0));
    }

    let t2i = store.text_to_image_scores(sample.sample_id)?;
    let i2i = match config.mode {
        MiningMode::I2iUpper | MiningMode::Dual => Some(store.image_to_image_scores(positive)?),
        _ => None,
    };

    let mut survivors = Vec::with_capacity(t2i.len());
    let mut excluded = 0;
    for (row, text) in t2i.iter().enumerate() {
        if text.image_id == positive {
            continue;
        }
        let image_score = i2i.as_ref().map(|s| s[row].score);
        let drop = match config.mode {
            MiningMode::T2i => config.tau.excludes(text.score),
            MiningMode::I2iUpper => config.tau.excludes(image_score.unwrap_or_default()),
            MiningMode::Dual => {
                let t = config.tau_t2i.unwrap_or(config.tau);
                let i = config.tau_i2i.unwrap_or(config.tau);
                t.excludes(text.score) || i.excludes(image_score.unwrap_or_default())
            }
            MiningMode::Uniform => unreachable!(),
        };
        if drop {
            excluded += 1;
        } else {
            survivors.push(*text);
        }
    }
    Ok((survivors, excluded))
}

/// Build the ranked negative pool for one sample.
pub fn build_pool(
    store: &EmbeddingStore,
    sample: &ReferringSample,
    config: &MiningConfig,
) -> Result<NegativePool> {
    let (mut survivors, excluded_upper) = upper_bound_survivors(store, sample, config)?;
    let survivor_count = survivors.len();
    if survivor_count < NEGATIVES_PER_MOSAIC {
        return Err(Error::PoolTooSmall {
            survivors: survivor_count,
            required: NEGATIVES_PER_MOSAIC,
        });
    }

    let pool = if config.mode == MiningMode::Uniform {
        let mut ids: Vec<u64> = survivors.into_iter().map(|s| s.image_id).collect();
        ids.sort_unstable();
        ids
    } else {
        let k = config.k.min(survivor_count);
        if k < survivor_count {
            survivors.select_nth_unstable_by(k - 1, rank_order);
            survivors.truncate(k);
        }
        survivors.sort_unstable_by(rank_order);
        survivors.into_iter().map(|s| s.image_id).collect()
    };

    Ok(NegativePool {
        sample_id: sample.sample_id,
        pool,
        excluded_upper,
        survivors: survivor_count,
    })
}

/// Draw `count` distinct pool entries uniformly with a partial Fisher-Yates
/// shuffle.
pub fn select_n(
    pool: &NegativePool,
    count: usize,
    rng: &mut SampleRng,
) -> Result<NegativeSelection> {
    if pool.pool.len() < count {
        return Err(Error::PoolTooSmall {
            survivors: pool.pool.len(),
            required: count,
        });
    }
    let mut ids = pool.pool.clone();
    for i in 0..count {
        let j = rng.random_range(i..ids.len());
        ids.swap(i, j);
    }
    ids.truncate(count);
    Ok(NegativeSelection {
        sample_id: pool.sample_id,
        negatives: ids,
        rng_seed_used: rng.seed(),
    })
}

/// Draw the three negatives of a 2x2 mosaic.
pub fn select_negatives(pool: &NegativePool, rng: &mut SampleRng) -> Result<NegativeSelection> {
    select_n(pool, NEGATIVES_PER_MOSAIC, rng)
}
