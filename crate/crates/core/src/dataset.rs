//! COCO-style referring segmentation datasets.
//!
//! The annotation file is ordinary COCO JSON where every annotation also
//! carries an `expressions` array. Each `(annotation, expression)` pair is
//! one [`ReferringSample`]. An optional parallel `expression_ids` array fixes
//! the sample ids; without it samples are numbered by their position in file
//! order, starting at zero.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{self, BBox, Bitmap, SegmentationMask};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRecord {
    pub image_id: u64,
    /// `file_name` exactly as written in the annotation file.
    pub file_name: String,
    /// `file_name` resolved against the dataset root.
    pub path: PathBuf,
    pub height: u32,
    pub width: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferringSample {
    pub sample_id: u64,
    pub annotation_id: u64,
    pub image_id: u64,
    pub expression: String,
    /// Shared between all expressions of one annotation. Always RLE after
    /// loading; polygons are rasterized first.
    pub mask: Arc<SegmentationMask>,
    pub category_id: i64,
    /// Tight box around the decoded mask foreground.
    pub bbox: BBox,
}

impl ReferringSample {
    pub fn decode_mask(&self) -> Result<Bitmap> {
        mask::decode_mask(&self.mask)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    /// Directory image paths are resolved against.
    pub root: PathBuf,
    pub images: Vec<ImageRecord>,
    pub samples: Vec<ReferringSample>,
    /// Category entries, carried through to the output untouched.
    pub categories: Vec<serde_json::Value>,
}

impl Dataset {
    pub fn image_index(&self) -> HashMap<u64, &ImageRecord> {
        self.images.iter().map(|r| (r.image_id, r)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    /// Directory `file_name` entries are relative to. Defaults to the
    /// directory holding the annotation file.
    pub image_root: Option<PathBuf>,
    pub check_files: bool,
    pub allow_empty_masks: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            image_root: None,
            check_files: true,
            allow_empty_masks: false,
        }
    }
}

// ---- on-disk schema ----

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct CocoFile {
    #[serde(default)]
    pub images: Vec<CocoImage>,
    #[serde(default)]
    pub annotations: Vec<CocoAnnotation>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<serde_json::Value>,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct CocoImage {
    pub id: u64,
    pub file_name: String,
    pub height: u32,
    pub width: u32,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct CocoAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: i64,
    pub segmentation: CocoSegmentation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub area: Option<f64>,
    #[serde(default)]
    pub iscrowd: u8,
    pub expressions: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expression_ids: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub(crate) enum CocoSegmentation {
    Polygons(Vec<Vec<f64>>),
    Rle { size: [u32; 2], counts: RleCounts },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub(crate) enum RleCounts {
    Uncompressed(Vec<u32>),
    Compressed(String),
}

/// Load with default options.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    load_dataset_with(path, &LoadOptions::default())
}

pub fn load_dataset_with(path: impl AsRef<Path>, options: &LoadOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CocoFile = parse_json(path, &text)?;
    let root = options.image_root.clone().unwrap_or_else(|| {
        path.parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."))
    });
    build_dataset(file, root, options)
}

pub(crate) fn parse_json<T: serde::de::DeserializeOwned>(path: &Path, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| {
        let (line, column) = (e.line(), e.column());
        Error::Parse {
            path: path.to_path_buf(),
            offset: byte_offset(text, line, column),
            line,
            column,
            message: e.to_string(),
        }
    })
}

/// Convert serde_json's 1-based line / byte column into an absolute offset.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

fn build_dataset(file: CocoFile, root: PathBuf, options: &LoadOptions) -> Result<Dataset> {
    let mut images = Vec::with_capacity(file.images.len());
    let mut seen = HashSet::new();
    let mut problems = Vec::new();
    for img in file.images {
        if !seen.insert(img.id) {
            problems.push(format!("duplicate image id {}", img.id));
        }
        if img.height == 0 || img.width == 0 {
            problems.push(format!("image {} has zero size", img.id));
        }
        let path = root.join(&img.file_name);
        if options.check_files && !path.is_file() {
            problems.push(format!("image {} file missing: {}", img.id, path.display()));
        }
        images.push(ImageRecord {
            image_id: img.id,
            file_name: img.file_name,
            path,
            height: img.height,
            width: img.width,
        });
    }
    if !problems.is_empty() {
        return Err(Error::Integrity(problems.join("; ")));
    }

    let dims: HashMap<u64, (u32, u32)> = images
        .iter()
        .map(|r| (r.image_id, (r.height, r.width)))
        .collect();
    let dangling: Vec<String> = file
        .annotations
        .iter()
        .filter(|a| !dims.contains_key(&a.image_id))
        .map(|a| format!("annotation {} -> image {}", a.id, a.image_id))
        .collect();
    if !dangling.is_empty() {
        return Err(Error::Integrity(format!(
            "dangling image_id references: {}",
            dangling.join(", ")
        )));
    }

    let mut samples = Vec::new();
    let mut sample_ids = HashSet::new();
    let mut next_id = 0u64;
    for ann in file.annotations {
        let (h, w) = dims[&ann.image_id];
        let segmentation = to_mask(&ann.segmentation, h, w)
            .map_err(|e| Error::Integrity(format!("annotation {}: {e}", ann.id)))?;
        if segmentation.height != h || segmentation.width != w {
            problems.push(format!(
                "annotation {}: mask is {}x{} but image {} is {}x{}",
                ann.id, segmentation.height, segmentation.width, ann.image_id, h, w
            ));
            continue;
        }
        let bitmap = mask::decode_mask(&segmentation)
            .map_err(|e| Error::Integrity(format!("annotation {}: {e}", ann.id)))?;
        let bbox = match bitmap.bbox() {
            Some(b) => b,
            None if options.allow_empty_masks => BBox::new(0.0, 0.0, 0.0, 0.0),
            None => {
                problems.push(format!("annotation {} has an empty mask", ann.id));
                continue;
            }
        };
        let shared = Arc::new(mask::encode_rle(&bitmap));
        if let Some(ids) = &ann.expression_ids {
            if ids.len() != ann.expressions.len() {
                problems.push(format!(
                    "annotation {}: {} expression_ids for {} expressions",
                    ann.id,
                    ids.len(),
                    ann.expressions.len()
                ));
                continue;
            }
        }
        for (i, expression) in ann.expressions.iter().enumerate() {
            let sample_id = match &ann.expression_ids {
                Some(ids) => ids[i],
                None => next_id,
            };
            next_id += 1;
            if !sample_ids.insert(sample_id) {
                problems.push(format!("duplicate sample id {sample_id}"));
            }
            samples.push(ReferringSample {
                sample_id,
                annotation_id: ann.id,
                image_id: ann.image_id,
                expression: expression.clone(),
                mask: Arc::clone(&shared),
                category_id: ann.category_id,
                bbox,
            });
        }
    }
    if !problems.is_empty() {
        return Err(Error::Integrity(problems.join("; ")));
    }

    Ok(Dataset {
        root,
        images,
        samples,
        categories: file.categories,
    })
}

fn to_mask(seg: &CocoSegmentation, h: u32, w: u32) -> Result<SegmentationMask> {
    Ok(match seg {
        CocoSegmentation::Polygons(rings) => {
            let bitmap = mask::rasterize_polygons(h, w, rings)?;
            SegmentationMask::dense(bitmap)
        }
        CocoSegmentation::Rle { size, counts } => {
            let counts = match counts {
                RleCounts::Uncompressed(c) => c.clone(),
                RleCounts::Compressed(s) => mask::rle_counts_from_string(s)?,
            };
            SegmentationMask::rle(size[0], size[1], counts)
        }
    })
}

/// Whitespace tokenization shared by the analyzer and keyword matching.
pub fn tokenize(expression: &str) -> impl Iterator<Item = &str> {
    expression.split_whitespace()
}
