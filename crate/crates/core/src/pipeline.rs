//! End-to-end augmentation run.
//!
//! Each sample draws from its own generator: first the augmentation gate
//! `u < gamma`, then the negative selection, then the mosaic layout. Samples
//! are processed in parallel chunks and handed to the sink in dataset order,
//! so output bytes do not depend on the worker count.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::dataset::{Dataset, ImageRecord, ReferringSample};
use crate::embedding::EmbeddingStore;
use crate::error::{Error, Result};
use crate::images::ImageSource;
use crate::miner;
use crate::mosaic;
use crate::output::{AugmentedSample, DatasetWriter, OutputRecord, Provenance};
use crate::rng::derive_sample_rng;

/// Samples processed in parallel before their outputs are flushed.
const CHUNK_PER_WORKER: usize = 32;

/// Share of failed samples above which a run is reported as failed.
pub const MAX_ERROR_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Totals {
    pub samples: usize,
    pub augmented: usize,
    /// Gate said no.
    pub passed_through: usize,
    /// Fewer than the required negatives survived mining.
    pub pool_too_small: usize,
    /// The target vanished when resized into its cell.
    pub degenerate: usize,
    pub errored: usize,
    /// Augmented samples whose keywords contradicted each other.
    pub constraint_fallbacks: usize,
}

impl Totals {
    /// Every sample lands in exactly one outcome bucket.
    pub fn is_consistent(&self) -> bool {
        self.augmented + self.passed_through + self.pool_too_small + self.degenerate + self.errored
            == self.samples
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageTimes {
    pub mine_ms: f64,
    pub plan_ms: f64,
    pub compose_ms: f64,
    pub write_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SampleError {
    pub sample_id: u64,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub totals: Totals,
    pub wall_time_ms: f64,
    pub stage_times: StageTimes,
    pub config: PipelineConfig,
    pub errors: Vec<SampleError>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
}

impl RunReport {
    pub fn error_fraction(&self) -> f64 {
        if self.totals.samples == 0 {
            0.0
        } else {
            self.totals.errored as f64 / self.totals.samples as f64
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Augmented { constraint_fallback: bool },
    PassedThrough,
    PoolTooSmall,
    Degenerate,
    Errored,
}

/// Result of processing one sample.
#[derive(Debug)]
pub struct SampleResult {
    pub record: OutputRecord,
    pub outcome: Outcome,
    pub error: Option<String>,
    mine: Duration,
    plan: Duration,
    compose: Duration,
}

pub struct Pipeline<'a> {
    dataset: &'a Dataset,
    store: &'a EmbeddingStore,
    images: &'a dyn ImageSource,
    config: PipelineConfig,
    records: HashMap<u64, &'a ImageRecord>,
}

impl<'a> Pipeline<'a> {
    pub fn new(
        dataset: &'a Dataset,
        store: &'a EmbeddingStore,
        images: &'a dyn ImageSource,
        config: PipelineConfig,
    ) -> Result<Self> {
        config.validate()?;
        if config.mining.mode == miner::MiningMode::Uniform {
            store.check_coverage(dataset.images.iter().map(|r| r.image_id), [])?;
        } else {
            store.check_coverage(
                dataset.images.iter().map(|r| r.image_id),
                dataset.samples.iter().map(|s| s.sample_id),
            )?;
        }
        Ok(Self {
            dataset,
            store,
            images,
            config,
            records: dataset.image_index(),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    /// Decide and, if the gate opens, build the mosaic for one sample.
    pub fn process_sample(&self, sample: &ReferringSample) -> SampleResult {
        let mut result = SampleResult {
            record: OutputRecord::PassThrough(sample.clone()),
            outcome: Outcome::PassedThrough,
            error: None,
            mine: Duration::ZERO,
            plan: Duration::ZERO,
            compose: Duration::ZERO,
        };
        let mut rng = derive_sample_rng(self.config.master_seed, sample.sample_id);
        let u: f64 = rng.random();
        if u >= self.config.gamma {
            return result;
        }

        let t = Instant::now();
        let mined = miner::build_pool(self.store, sample, &self.config.mining).and_then(|pool| {
            miner::select_n(&pool, self.config.compositor.grid.negatives(), &mut rng)
                .map(|sel| (pool, sel))
        });
        result.mine = t.elapsed();
        let (pool, selection) = match mined {
            Ok(v) => v,
            Err(Error::PoolTooSmall { .. }) => {
                result.outcome = Outcome::PoolTooSmall;
                return result;
            }
            Err(e) => return errored(result, e),
        };

        let t = Instant::now();
        let Some(record) = self.records.get(&sample.image_id) else {
            return errored(
                result,
                Error::Integrity(format!("image {} not in dataset", sample.image_id)),
            );
        };
        let plan = mosaic::plan_mosaic(
            &sample.expression,
            (record.height, record.width),
            &selection.negatives,
            &self.config.compositor,
            &mut rng,
        );
        result.plan = t.elapsed();
        let plan = match plan {
            Ok(p) => p,
            Err(e) => return errored(result, e),
        };

        let t = Instant::now();
        let composite = self.compose(sample, &plan);
        result.compose = t.elapsed();
        let (composite, source_foreground) = match composite {
            Ok(c) => c,
            Err(e) => return errored(result, e),
        };
        if source_foreground > 0 && composite.mask.foreground_count() == 0 {
            result.outcome = Outcome::Degenerate;
            return result;
        }

        let provenance = Provenance::new(
            sample,
            &plan,
            &self.config,
            pool.pool.len(),
            pool.excluded_upper,
            selection.rng_seed_used,
        );
        result.outcome = Outcome::Augmented {
            constraint_fallback: plan.constraint_fallback,
        };
        result.record = OutputRecord::Augmented(Box::new(AugmentedSample {
            sample_id: sample.sample_id,
            expression: sample.expression.clone(),
            category_id: sample.category_id,
            composite,
            plan,
            provenance,
        }));
        result
    }

    fn compose(
        &self,
        sample: &ReferringSample,
        plan: &mosaic::MosaicPlan,
    ) -> Result<(mosaic::Composite, u64)> {
        let positive = self.images.load(sample.image_id)?;
        let mask = sample.decode_mask()?;
        let negatives = plan
            .negative_ids
            .iter()
            .map(|&id| {
                self.images
                    .load(id)
                    .map_err(|e| Error::Compose(format!("negative image {id} unreadable: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&image::RgbImage> = negatives.iter().map(|a| a.as_ref()).collect();
        let composite = mosaic::compose(&positive, &mask, &refs, plan)?;
        Ok((composite, mask.foreground_count()))
    }

    /// Process every sample and hand each record to `sink` in dataset order.
    pub fn run_with<F>(&self, mut sink: F) -> Result<RunReport>
    where
        F: FnMut(&OutputRecord) -> Result<()>,
    {
        let start = Instant::now();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
        let mut totals = Totals::default();
        let mut stages = StageTimes::default();
        let mut errors = Vec::new();
        let chunk = CHUNK_PER_WORKER * self.config.workers;

        for samples in self.dataset.samples.chunks(chunk.max(1)) {
            let results: Vec<SampleResult> =
                pool.install(|| samples.par_iter().map(|s| self.process_sample(s)).collect());
            let t = Instant::now();
            for r in &results {
                sink(&r.record)?;
            }
            stages.write_ms += ms(t.elapsed());
            for r in results {
                totals.samples += 1;
                stages.mine_ms += ms(r.mine);
                stages.plan_ms += ms(r.plan);
                stages.compose_ms += ms(r.compose);
                match r.outcome {
                    Outcome::Augmented {
                        constraint_fallback,
                    } => {
                        totals.augmented += 1;
                        totals.constraint_fallbacks += usize::from(constraint_fallback);
                    }
                    Outcome::PassedThrough => totals.passed_through += 1,
                    Outcome::PoolTooSmall => totals.pool_too_small += 1,
                    Outcome::Degenerate => totals.degenerate += 1,
                    Outcome::Errored => {
                        totals.errored += 1;
                        errors.push(SampleError {
                            sample_id: r.record.sample_id(),
                            message: r.error.unwrap_or_default(),
                        });
                    }
                }
            }
        }
        debug_assert!(totals.is_consistent());
        Ok(RunReport {
            totals,
            wall_time_ms: ms(start.elapsed()),
            stage_times: stages,
            config: self.config.clone(),
            errors,
            manifest: None,
        })
    }

    /// Full run writing the augmented dataset to `out_dir`.
    ///
    /// Fails after writing everything when more than 1% of samples errored;
    /// the error carries the report.
    pub fn run(&self, out_dir: impl AsRef<Path>, previews: usize) -> Result<RunReport> {
        let mut writer = DatasetWriter::for_dataset(out_dir, self.dataset, self.images, previews)?;
        let mut report = self.run_with(|r| writer.write(r))?;
        let t = Instant::now();
        report.manifest = Some(writer.finish()?);
        report.stage_times.write_ms += ms(t.elapsed());
        if report.error_fraction() > MAX_ERROR_FRACTION {
            return Err(Error::RunFailed(Box::new(report)));
        }
        Ok(report)
    }
}

fn errored(mut result: SampleResult, e: Error) -> SampleResult {
    result.outcome = Outcome::Errored;
    result.error = Some(e.to_string());
    result
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Convenience wrapper around [`Pipeline::run`].
pub fn run(
    dataset: &Dataset,
    store: &EmbeddingStore,
    images: &dyn ImageSource,
    config: PipelineConfig,
    out_dir: impl AsRef<Path>,
) -> Result<RunReport> {
    Pipeline::new(dataset, store, images, config)?.run(out_dir, 0)
}
