//! Augmented dataset output.
//!
//! Layout of an output directory:
//!
//! ```text
//! annotations.json   COCO-style, one annotation per output record
//! images/            composed mosaics (PNG) and copied pass-through images
//! previews/          optional mask overlays
//! manifest.json      every file above with its SHA-256 digest
//! ```
//!
//! A `_INCOMPLETE` marker exists while writing and is removed only after the
//! manifest is in place.

use std::collections::HashSet;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::dataset::{
    CocoAnnotation, CocoFile, CocoImage, CocoSegmentation, Dataset, ImageRecord, ReferringSample,
    RleCounts,
};
use crate::error::{Error, Result};
use crate::images::ImageSource;
use crate::mask::Bitmap;
use crate::miner::{MiningMode, Threshold};
use crate::mosaic::{self, Composite, CrossPointPolicy, Grid, MosaicPlan};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const ANNOTATIONS_FILE: &str = "annotations.json";
pub const INCOMPLETE_MARKER: &str = "_INCOMPLETE";

/// Everything needed to trace an augmented record back to its inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_sample_id: u64,
    pub source_image_id: u64,
    pub source_annotation_id: u64,
    pub negative_image_ids: Vec<u64>,
    pub positive_cell: usize,
    pub grid: Grid,
    pub cross_point_policy: CrossPointPolicy,
    pub cross_point: (u32, u32),
    pub constraints: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub matched_keywords: Vec<String>,
    pub constraint_fallback: bool,
    pub mode: MiningMode,
    pub tau: Threshold,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_t2i: Option<Threshold>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_i2i: Option<Threshold>,
    pub k: usize,
    pub gamma: f64,
    pub pool_size: usize,
    pub excluded_upper: usize,
    pub master_seed: u64,
    pub sample_seed: u64,
}

impl Provenance {
    pub(crate) fn new(
        sample: &ReferringSample,
        plan: &MosaicPlan,
        config: &PipelineConfig,
        pool_size: usize,
        excluded_upper: usize,
        sample_seed: u64,
    ) -> Self {
        Self {
            source_sample_id: sample.sample_id,
            source_image_id: sample.image_id,
            source_annotation_id: sample.annotation_id,
            negative_image_ids: plan.negative_ids.clone(),
            positive_cell: plan.positive_cell,
            grid: plan.grid,
            cross_point_policy: config.compositor.cross_point,
            cross_point: plan.cross_point(),
            constraints: config.compositor.constraints,
            matched_keywords: plan.matched_keywords.clone(),
            constraint_fallback: plan.constraint_fallback,
            mode: config.mining.mode,
            tau: config.mining.tau,
            tau_t2i: config.mining.tau_t2i,
            tau_i2i: config.mining.tau_i2i,
            k: config.mining.k,
            gamma: config.gamma,
            pool_size,
            excluded_upper,
            master_seed: config.master_seed,
            sample_seed,
        }
    }
}

/// A mosaic built around one referring sample.
#[derive(Debug, Clone)]
pub struct AugmentedSample {
    pub sample_id: u64,
    pub expression: String,
    pub category_id: i64,
    pub composite: Composite,
    pub plan: MosaicPlan,
    pub provenance: Provenance,
}

#[derive(Debug, Clone)]
pub enum OutputRecord {
    Augmented(Box<AugmentedSample>),
    PassThrough(ReferringSample),
}

impl OutputRecord {
    pub fn sample_id(&self) -> u64 {
        match self {
            OutputRecord::Augmented(a) => a.sample_id,
            OutputRecord::PassThrough(s) => s.sample_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        crate::dataset::parse_json(path, &text)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn encode_png(image: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    image
        .write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| Error::Compose(format!("PNG encoding failed: {e}")))?;
    Ok(buf.into_inner())
}

fn rle_segmentation(bitmap: &Bitmap) -> CocoSegmentation {
    CocoSegmentation::Rle {
        size: [bitmap.height(), bitmap.width()],
        counts: RleCounts::Uncompressed(bitmap.to_rle_counts()),
    }
}

fn bbox_and_area(bitmap: &Bitmap) -> ([f64; 4], f64) {
    let bbox = bitmap.bbox().map(|b| b.to_array()).unwrap_or([0.0; 4]);
    (bbox, bitmap.foreground_count() as f64)
}

/// Streams output records to disk in the order they are given.
pub struct DatasetWriter<'a> {
    out_dir: PathBuf,
    source: Option<&'a dyn ImageSource>,
    source_images: std::collections::HashMap<u64, &'a ImageRecord>,
    next_image_id: u64,
    copied: HashSet<u64>,
    coco: CocoFile,
    files: Vec<ManifestEntry>,
    previews_left: usize,
}

impl<'a> DatasetWriter<'a> {
    /// Writer for a full run. Composite images get ids above every source
    /// image id so they never collide with pass-through images.
    pub fn for_dataset(
        out_dir: impl AsRef<Path>,
        dataset: &'a Dataset,
        source: &'a dyn ImageSource,
        previews: usize,
    ) -> Result<Self> {
        let first = dataset
            .images
            .iter()
            .map(|r| r.image_id)
            .max()
            .map_or(1, |m| m + 1);
        let mut w = Self::create(out_dir, first, previews)?;
        w.source = Some(source);
        w.source_images = dataset.images.iter().map(|r| (r.image_id, r)).collect();
        w.coco.categories = dataset.categories.clone();
        Ok(w)
    }

    /// Writer that only accepts augmented records.
    pub fn create(out_dir: impl AsRef<Path>, first_image_id: u64, previews: usize) -> Result<Self> {
        let out_dir = out_dir.as_ref().to_path_buf();
        let images = out_dir.join("images");
        std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
        let marker = out_dir.join(INCOMPLETE_MARKER);
        std::fs::write(&marker, b"output incomplete\n").map_err(|e| Error::io(&marker, e))?;
        Ok(Self {
            out_dir,
            source: None,
            source_images: Default::default(),
            next_image_id: first_image_id,
            copied: HashSet::new(),
            coco: CocoFile {
                images: Vec::new(),
                annotations: Vec::new(),
                categories: Vec::new(),
            },
            files: Vec::new(),
            previews_left: previews,
        })
    }

    fn put(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.out_dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.files.push(ManifestEntry {
            path: rel.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    pub fn write(&mut self, record: &OutputRecord) -> Result<()> {
        match record {
            OutputRecord::Augmented(a) => self.write_augmented(a),
            OutputRecord::PassThrough(s) => self.write_pass_through(s),
        }
    }

    fn write_augmented(&mut self, a: &AugmentedSample) -> Result<()> {
        let image_id = self.next_image_id;
        self.next_image_id += 1;
        let file_name = format!("images/mosaic_{:012}.png", a.sample_id);
        self.put(&file_name, &encode_png(&a.composite.image)?)?;
        if self.previews_left > 0 {
            self.previews_left -= 1;
            let preview = mosaic::preview(&a.composite, &a.plan);
            self.put(
                &format!("previews/preview_{:012}.png", a.sample_id),
                &encode_png(&preview)?,
            )?;
        }
        self.coco.images.push(CocoImage {
            id: image_id,
            file_name,
            height: a.composite.image.height(),
            width: a.composite.image.width(),
        });
        let (bbox, area) = bbox_and_area(&a.composite.mask);
        let provenance = serde_json::json!({
            "augmented": true,
            "mosaic": a.provenance,
        });
        self.coco.annotations.push(CocoAnnotation {
            id: self.coco.annotations.len() as u64 + 1,
            image_id,
            category_id: a.category_id,
            segmentation: rle_segmentation(&a.composite.mask),
            bbox: Some(bbox),
            area: Some(area),
            iscrowd: 0,
            expressions: vec![a.expression.clone()],
            expression_ids: Some(vec![a.sample_id]),
            provenance: Some(provenance),
        });
        Ok(())
    }

    fn write_pass_through(&mut self, s: &ReferringSample) -> Result<()> {
        let record = *self.source_images.get(&s.image_id).ok_or_else(|| {
            Error::Integrity(format!(
                "pass-through sample {} references image {} outside the dataset",
                s.sample_id, s.image_id
            ))
        })?;
        let source = self
            .source
            .ok_or_else(|| Error::Integrity("writer has no image source".into()))?;
        let ext = Path::new(&record.file_name)
            .extension()
            .and_then(|e| e.to_str())
            .unwrap_or("png")
            .to_ascii_lowercase();
        let file_name = match source.original_file(s.image_id) {
            Some(_) => format!("images/orig_{:012}.{ext}", s.image_id),
            None => format!("images/orig_{:012}.png", s.image_id),
        };
        if self.copied.insert(s.image_id) {
            let bytes = match source.original_file(s.image_id) {
                Some(path) => std::fs::read(&path).map_err(|e| Error::io(&path, e))?,
                None => encode_png(source.load(s.image_id)?.as_ref())?,
            };
            self.put(&file_name, &bytes)?;
            self.coco.images.push(CocoImage {
                id: s.image_id,
                file_name: file_name.clone(),
                height: record.height,
                width: record.width,
            });
        }
        let bitmap = s.decode_mask()?;
        let (bbox, area) = bbox_and_area(&bitmap);
        self.coco.annotations.push(CocoAnnotation {
            id: self.coco.annotations.len() as u64 + 1,
            image_id: s.image_id,
            category_id: s.category_id,
            segmentation: rle_segmentation(&bitmap),
            bbox: Some(bbox),
            area: Some(area),
            iscrowd: 0,
            expressions: vec![s.expression.clone()],
            expression_ids: Some(vec![s.sample_id]),
            provenance: Some(serde_json::json!({
                "augmented": false,
                "source_sample_id": s.sample_id,
                "source_annotation_id": s.annotation_id,
            })),
        });
        Ok(())
    }

    /// Write annotations and the manifest; returns the manifest path.
    pub fn finish(mut self) -> Result<PathBuf> {
        let mut annotations = serde_json::to_vec_pretty(&self.coco)
            .map_err(|e| Error::Integrity(format!("annotation serialization: {e}")))?;
        annotations.push(b'\n');
        self.put(ANNOTATIONS_FILE, &annotations)?;

        self.files.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = Manifest { files: self.files };
        let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        bytes.push(b'\n');
        let path = self.out_dir.join(MANIFEST_FILE);
        std::fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;

        let marker = self.out_dir.join(INCOMPLETE_MARKER);
        std::fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
        Ok(path)
    }
}

/// Write augmented samples alone (no pass-through records).
pub fn write_augmented(samples: &[AugmentedSample], out_dir: impl AsRef<Path>) -> Result<PathBuf> {
    let mut writer = DatasetWriter::create(out_dir, 1, 0)?;
    for s in samples {
        writer.write_augmented(s)?;
    }
    writer.finish()
}
