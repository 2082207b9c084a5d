//! Mosaic augmentation with mined negative images for referring segmentation data.
//!
//! For each training sample the engine mines moderately hard negative images
//! by embedding relevance, tiles them with the positive image into a mosaic,
//! remaps the target mask into the positive cell and writes an augmented
//! COCO-style dataset with per-record provenance.
//!
//! Modules, bottom-up:
//!
//! - [`mask`]: bitmaps, COCO RLE, polygon rasterization.
//! - [`dataset`]: loading referring datasets.
//! - [`embedding`]: the `NEMOEMB1` embedding store and exact scoring.
//! - [`miner`]: upper-bound filtering, top-K pools, negative selection.
//! - [`mosaic`]: grid planning, keyword constraints, composition.
//! - [`pipeline`]: seeded, parallel end-to-end runs.
//! - [`output`]: augmented dataset writer and manifest.
//! - [`analyzer`]: difficulty statistics.

pub mod analyzer;
pub mod config;
pub mod dataset;
pub mod embedding;
pub mod error;
pub mod images;
pub mod keywords;
pub mod mask;
pub mod miner;
pub mod mosaic;
pub mod output;
pub mod pipeline;
pub mod rng;

pub use config::{ConfigOverrides, PipelineConfig, Profile};
pub use dataset::{load_dataset, Dataset, ImageRecord, ReferringSample};
pub use embedding::{EmbeddingStore, RelevanceScore};
pub use error::{Error, Result};
pub use miner::{build_pool, select_negatives, MiningConfig, MiningMode, NegativePool, Threshold};
pub use mosaic::{compose, plan_mosaic, CompositorConfig, CrossPointPolicy, Grid, MosaicPlan};
pub use output::{write_augmented, AugmentedSample, OutputRecord};
pub use pipeline::{Pipeline, RunReport};
