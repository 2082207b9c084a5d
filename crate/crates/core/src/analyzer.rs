//! Dataset difficulty statistics: distractor counts, object scale,
//! expression length and positional wording.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{tokenize, Dataset, ReferringSample};
use crate::error::{Error, Result};
use crate::keywords::detect_positional_keywords;
use crate::mask::BBox;

/// IoU at or above which a same-class detection is taken to be the target
/// itself (or a duplicate of it) rather than a distractor.
pub const DEFAULT_IOU_FLOOR: f64 = 0.5;

/// Expression length bins, inclusive token ranges.
pub const LENGTH_BINS: [(usize, usize); 4] = [(1, 5), (6, 7), (8, 10), (11, 20)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: u64,
    pub category_id: i64,
    #[serde(with = "bbox_array")]
    pub bbox: BBox,
    pub score: f64,
}

mod bbox_array {
    use super::BBox;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(b: &BBox, s: S) -> Result<S::Ok, S::Error> {
        b.to_array().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BBox, D::Error> {
        <[f64; 4]>::deserialize(d).map(BBox::from_array)
    }
}

/// Load detections in COCO results format (a JSON array of records).
pub fn load_detections(path: impl AsRef<Path>) -> Result<Vec<DetectionRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let dets: Vec<DetectionRecord> = crate::dataset::parse_json(path, &text)?;
    if let Some((i, d)) = dets
        .iter()
        .enumerate()
        .find(|(_, d)| !(0.0..=1.0).contains(&d.score))
    {
        return Err(Error::Integrity(format!(
            "detection {i} on image {} has score {} outside [0, 1]",
            d.image_id, d.score
        )));
    }
    Ok(dets)
}

pub fn index_detections(dets: &[DetectionRecord]) -> HashMap<u64, Vec<DetectionRecord>> {
    let mut map: HashMap<u64, Vec<DetectionRecord>> = HashMap::new();
    for d in dets {
        map.entry(d.image_id).or_default().push(d.clone());
    }
    map
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct NegativeObjectCount {
    pub count: usize,
    /// A detection overlapped the target at or above the IoU floor.
    pub target_matched: bool,
    /// No detections at all for the image; the count is then 0.
    pub no_detections: bool,
}

/// Count same-class distractors around the target.
///
/// A same-class detection counts when its IoU with the target box is below
/// `iou_floor`; detections at or above it are the target or duplicates of
/// it. `detections` may include other images; they are ignored.
pub fn count_negative_objects(
    sample: &ReferringSample,
    detections: &[DetectionRecord],
    iou_floor: f64,
) -> NegativeObjectCount {
    let on_image: Vec<&DetectionRecord> = detections
        .iter()
        .filter(|d| d.image_id == sample.image_id)
        .collect();
    if on_image.is_empty() {
        return NegativeObjectCount {
            count: 0,
            target_matched: false,
            no_detections: true,
        };
    }
    let mut count = 0;
    let mut target_matched = false;
    for d in on_image
        .iter()
        .filter(|d| d.category_id == sample.category_id)
    {
        if d.bbox.iou(&sample.bbox) >= iou_floor {
            target_matched = true;
        } else {
            count += 1;
        }
    }
    NegativeObjectCount {
        count,
        target_matched,
        no_detections: false,
    }
}

pub fn expression_length(expression: &str) -> usize {
    tokenize(expression).count()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LengthBin {
    pub label: String,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LengthHistogram {
    pub bins: Vec<LengthBin>,
    /// Expressions with 0 or more than 20 tokens.
    pub overflow: usize,
}

impl LengthHistogram {
    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum::<usize>() + self.overflow
    }
}

pub fn length_bin(tokens: usize) -> Option<usize> {
    LENGTH_BINS
        .iter()
        .position(|&(lo, hi)| (lo..=hi).contains(&tokens))
}

pub fn bin_by_sentence_length<'a>(
    samples: impl IntoIterator<Item = &'a ReferringSample>,
) -> LengthHistogram {
    let mut bins: Vec<LengthBin> = LENGTH_BINS
        .iter()
        .map(|&(lo, hi)| LengthBin {
            label: format!("{lo}-{hi}"),
            min_tokens: lo,
            max_tokens: hi,
            count: 0,
        })
        .collect();
    let mut overflow = 0;
    for s in samples {
        match length_bin(expression_length(&s.expression)) {
            Some(i) => bins[i].count += 1,
            None => overflow += 1,
        }
    }
    LengthHistogram { bins, overflow }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub n_images: usize,
    pub n_expressions: usize,
    /// Mean whitespace token count per expression.
    pub mean_query_length: f64,
    /// Mean, over expressions, of the number of annotated objects in the
    /// expression's image.
    pub mean_objects_per_query: f64,
}

pub fn corpus_stats(dataset: &Dataset) -> CorpusStats {
    let n = dataset.samples.len();
    if n == 0 {
        return CorpusStats {
            n_images: dataset.images.len(),
            n_expressions: 0,
            mean_query_length: 0.0,
            mean_objects_per_query: 0.0,
        };
    }
    let mut objects: HashMap<u64, std::collections::HashSet<u64>> = HashMap::new();
    for s in &dataset.samples {
        objects
            .entry(s.image_id)
            .or_default()
            .insert(s.annotation_id);
    }
    let total_len: usize = dataset
        .samples
        .iter()
        .map(|s| expression_length(&s.expression))
        .sum();
    let total_objects: usize = dataset
        .samples
        .iter()
        .map(|s| objects[&s.image_id].len())
        .sum();
    CorpusStats {
        n_images: dataset.images.len(),
        n_expressions: n,
        mean_query_length: total_len as f64 / n as f64,
        mean_objects_per_query: total_objects as f64 / n as f64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyProfile {
    pub sample_id: u64,
    pub negative_object_count: usize,
    pub target_area_fraction: f64,
    pub expression_length: usize,
    pub has_positional_keyword: bool,
    /// The image had no detections, so the count is a default 0.
    pub no_detections: bool,
}

/// Per-sample difficulty profile. Detections below `min_score` are ignored.
pub fn profile_samples(
    dataset: &Dataset,
    detections: &[DetectionRecord],
    iou_floor: f64,
    min_score: f64,
) -> Result<Vec<DifficultyProfile>> {
    let kept: Vec<DetectionRecord> = detections
        .iter()
        .filter(|d| d.score >= min_score)
        .cloned()
        .collect();
    let by_image = index_detections(&kept);
    let empty = Vec::new();
    dataset
        .samples
        .par_iter()
        .map(|s| {
            let dets = by_image.get(&s.image_id).unwrap_or(&empty);
            let neg = count_negative_objects(s, dets, iou_floor);
            let mask = s.decode_mask()?;
            let area =
                mask.foreground_count() as f64 / (mask.height() as f64 * mask.width() as f64);
            Ok(DifficultyProfile {
                sample_id: s.sample_id,
                negative_object_count: neg.count,
                target_area_fraction: area,
                expression_length: expression_length(&s.expression),
                has_positional_keyword: !detect_positional_keywords(&s.expression).is_empty(),
                no_detections: neg.no_detections,
            })
        })
        .collect::<Result<Vec<_>>>()
        .inspect(|profiles| {
            let missing = profiles.iter().filter(|p| p.no_detections).count();
            if missing > 0 {
                log::warn!("{missing} samples have no detections on their image; counted as 0");
            }
        })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleBin {
    pub min_fraction: f64,
    pub max_fraction: f64,
    pub count: usize,
}

/// Split target area fractions into `n_bins` equal-count bins (the first
/// `len % n_bins` bins take one extra sample).
pub fn bin_by_object_scale(profiles: &[DifficultyProfile], n_bins: usize) -> Vec<ScaleBin> {
    let mut areas: Vec<f64> = profiles.iter().map(|p| p.target_area_fraction).collect();
    if areas.is_empty() || n_bins == 0 {
        return Vec::new();
    }
    areas.sort_by(f64::total_cmp);
    let n_bins = n_bins.min(areas.len());
    let (base, extra) = (areas.len() / n_bins, areas.len() % n_bins);
    let mut bins = Vec::with_capacity(n_bins);
    let mut start = 0;
    for i in 0..n_bins {
        let len = base + usize::from(i < extra);
        let slice = &areas[start..start + len];
        bins.push(ScaleBin {
            min_fraction: slice[0],
            max_fraction: slice[len - 1],
            count: len,
        });
        start += len;
    }
    bins
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisSummary {
    pub corpus: CorpusStats,
    pub sentence_lengths: LengthHistogram,
    /// Distractor count -> number of samples.
    pub negative_objects: BTreeMap<usize, usize>,
    pub object_scale_deciles: Vec<ScaleBin>,
    pub with_positional_keyword: usize,
    pub without_positional_keyword: usize,
    pub samples_without_detections: usize,
    pub iou_floor: f64,
    pub min_detection_score: f64,
}

pub fn summarize(
    dataset: &Dataset,
    profiles: &[DifficultyProfile],
    iou_floor: f64,
    min_detection_score: f64,
) -> AnalysisSummary {
    let mut negative_objects = BTreeMap::new();
    for p in profiles {
        *negative_objects.entry(p.negative_object_count).or_default() += 1;
    }
    let with = profiles.iter().filter(|p| p.has_positional_keyword).count();
    AnalysisSummary {
        corpus: corpus_stats(dataset),
        sentence_lengths: bin_by_sentence_length(&dataset.samples),
        negative_objects,
        object_scale_deciles: bin_by_object_scale(profiles, 10),
        with_positional_keyword: with,
        without_positional_keyword: profiles.len() - with,
        samples_without_detections: profiles.iter().filter(|p| p.no_detections).count(),
        iou_floor,
        min_detection_score,
    }
}

pub fn write_profiles_csv(profiles: &[DifficultyProfile], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |e: csv::Error| Error::Integrity(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for p in profiles {
        w.serialize(p).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Markdown table of the sentence-length bins.
pub fn length_table_markdown(hist: &LengthHistogram) -> String {
    let mut out = String::from("| tokens |");
    for b in &hist.bins {
        let _ = write!(out, " {} |", b.label);
    }
    out.push_str(" other |\n|---|");
    for _ in 0..=hist.bins.len() {
        out.push_str("---|");
    }
    out.push_str("\n| samples |");
    for b in &hist.bins {
        let _ = write!(out, " {} |", b.count);
    }
    let _ = writeln!(out, " {} |", hist.overflow);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::SegmentationMask;
    use std::sync::Arc;

    fn sample_with(expr: &str, bbox: BBox) -> ReferringSample {
        ReferringSample {
            sample_id: 1,
            annotation_id: 1,
            image_id: 7,
            expression: expr.into(),
            mask: Arc::new(SegmentationMask::rle(2, 2, vec![0, 4])),
            category_id: 3,
            bbox,
        }
    }

    fn det(cat: i64, bbox: [f64; 4], score: f64) -> DetectionRecord {
        DetectionRecord {
            image_id: 7,
            category_id: cat,
            bbox: BBox::from_array(bbox),
            score,
        }
    }

    #[test]
    fn single_matching_detection_is_zero() {
        let s = sample_with("x", BBox::new(10.0, 10.0, 20.0, 20.0));
        let c = count_negative_objects(&s, &[det(3, [10.0, 10.0, 20.0, 20.0], 0.9)], 0.5);
        assert_eq!(c.count, 0);
        assert!(c.target_matched);
    }

    #[test]
    fn no_detections_flagged() {
        let s = sample_with("x", BBox::new(10.0, 10.0, 20.0, 20.0));
        let c = count_negative_objects(&s, &[], 0.5);
        assert_eq!((c.count, c.no_detections), (0, true));
    }

    #[test]
    fn length_bins() {
        assert_eq!(length_bin(expression_length("red cup")), Some(0));
        assert_eq!(length_bin(8), Some(2));
        assert_eq!(length_bin(0), None);
        assert_eq!(length_bin(21), None);
        assert_eq!(length_bin(20), Some(3));
    }

    #[test]
    fn markdown_table_shape() {
        let s = [sample_with("a b", BBox::new(0.0, 0.0, 1.0, 1.0))];
        let md = length_table_markdown(&bin_by_sentence_length(&s));
        assert!(md.contains("| 1-5 | 6-7 | 8-10 | 11-20 | other |"), "{md}");
        assert!(md.contains("| samples | 1 | 0 | 0 | 0 | 0 |"), "{md}");
    }

    #[test]
    fn scale_bins_equal_count() {
        let profiles: Vec<DifficultyProfile> = (1..=25)
            .map(|i| DifficultyProfile {
                sample_id: i,
                negative_object_count: 0,
                target_area_fraction: i as f64 / 25.0,
                expression_length: 1,
                has_positional_keyword: false,
                no_detections: false,
            })
            .collect();
        let bins = bin_by_object_scale(&profiles, 10);
        assert_eq!(bins.len(), 10);
        assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), 25);
        assert_eq!(bins[0].count, 3);
        assert_eq!(bins[9].count, 2);
        assert!(bins
            .windows(2)
            .all(|w| w[0].max_fraction <= w[1].min_fraction));
    }
}
