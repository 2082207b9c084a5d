//! Fixtures and independent oracles shared by the integration tests.
//!
//! Oracles here deliberately avoid the library's own helpers.
#![allow(dead_code)]

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use image::{Rgb, RgbImage};
use nemo_forge_core::dataset::{Dataset, ImageRecord, ReferringSample};
use nemo_forge_core::images::MemoryImages;
use nemo_forge_core::mask::{BBox, Bitmap, SegmentationMask};
use nemo_forge_core::EmbeddingStore;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random unit vector, normalized in f64 then stored as f32.
pub fn unit_vector(rng: &mut impl Rng, dim: usize) -> Vec<f32> {
    loop {
        let raw: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return raw.iter().map(|x| (x / n) as f32).collect();
        }
    }
}

pub fn naive_dot(a: &[f32], b: &[f32]) -> f64 {
    let mut s = 0.0f64;
    for i in 0..a.len() {
        s += f64::from(a[i]) * f64::from(b[i]);
    }
    s
}

/// Images `1..=n_images` and texts `0..n_texts` with random unit rows.
pub struct Embeddings {
    pub dim: usize,
    pub images: HashMap<u64, Vec<f32>>,
    pub texts: HashMap<u64, Vec<f32>>,
    pub store: EmbeddingStore,
}

pub fn random_embeddings(seed: u64, dim: usize, n_images: u64, n_texts: u64) -> Embeddings {
    let mut r = rng(seed);
    let image_ids: Vec<u64> = (1..=n_images).collect();
    let text_ids: Vec<u64> = (0..n_texts).collect();
    let images: Vec<Vec<f32>> = image_ids.iter().map(|_| unit_vector(&mut r, dim)).collect();
    let texts: Vec<Vec<f32>> = text_ids.iter().map(|_| unit_vector(&mut r, dim)).collect();
    let store = EmbeddingStore::new(
        dim,
        image_ids.clone(),
        images.concat(),
        text_ids.clone(),
        texts.concat(),
    )
    .unwrap();
    Embeddings {
        dim,
        images: image_ids.into_iter().zip(images).collect(),
        texts: text_ids.into_iter().zip(texts).collect(),
        store,
    }
}

/// In-memory sample whose target is a box-shaped mask.
pub fn sample(sample_id: u64, image_id: u64, h: u32, w: u32, expression: &str) -> ReferringSample {
    let bitmap = Bitmap::from_fn(h, w, |y, x| {
        y >= h / 4 && y < h / 2 && x >= w / 4 && x < w / 2
    });
    ReferringSample {
        sample_id,
        annotation_id: sample_id + 1000,
        image_id,
        expression: expression.into(),
        mask: Arc::new(SegmentationMask::rle(h, w, bitmap.to_rle_counts())),
        category_id: 1,
        bbox: bitmap.bbox().unwrap_or(BBox::new(0.0, 0.0, 0.0, 0.0)),
    }
}

pub fn noise_image(rng: &mut impl Rng, h: u32, w: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |_, _| Rgb([rng.random(), rng.random(), rng.random()]))
}

/// `n_images` noise images of `h x w` and `n_samples` samples spread over them
/// round-robin, with matching random embeddings.
pub struct Synthetic {
    pub dataset: Dataset,
    pub images: MemoryImages,
    pub embeddings: Embeddings,
}

pub fn synthetic(seed: u64, n_images: u64, n_samples: u64, h: u32, w: u32) -> Synthetic {
    let mut r = rng(seed ^ 0x5eed);
    let mut images = MemoryImages::new();
    let mut records = Vec::new();
    for id in 1..=n_images {
        images.insert(id, noise_image(&mut r, h, w));
        records.push(ImageRecord {
            image_id: id,
            file_name: format!("{id}.png"),
            path: format!("{id}.png").into(),
            height: h,
            width: w,
        });
    }
    let samples = (0..n_samples)
        .map(|i| {
            sample(
                i,
                1 + i % n_images,
                h,
                w,
                EXPRESSIONS[i as usize % EXPRESSIONS.len()],
            )
        })
        .collect();
    Synthetic {
        dataset: Dataset {
            root: ".".into(),
            images: records,
            samples,
            categories: vec![],
        },
        images,
        embeddings: random_embeddings(seed, 16, n_images, n_samples),
    }
}

pub const EXPRESSIONS: &[&str] = &[
    "the man on the left",
    "red car",
    "top right corner of the table",
    "giraffe eating leaves",
    "bottom cup",
    "person in a blue shirt standing next to a bike",
];

/// Write a COCO-style dataset to `dir` with noise PNGs and random
/// rectangular targets, returning the annotation path.
pub fn write_disk_fixture(
    dir: &Path,
    seed: u64,
    n_images: u64,
    per_image: u64,
) -> std::path::PathBuf {
    let mut r = rng(seed);
    let mut images = Vec::new();
    let mut annotations = Vec::new();
    let mut next_sample = 0u64;
    for id in 1..=n_images {
        let (h, w) = (r.random_range(20..40u32), r.random_range(20..40u32));
        let name = format!("img_{id:03}.png");
        noise_image(&mut r, h, w).save(dir.join(&name)).unwrap();
        images.push(json!({"id": id, "file_name": name, "height": h, "width": w}));
        for a in 0..per_image {
            let (y0, x0) = (r.random_range(0..h / 2), r.random_range(0..w / 2));
            let (y1, x1) = (r.random_range(y0 + 2..h), r.random_range(x0 + 2..w));
            let bitmap = Bitmap::from_fn(h, w, |y, x| y >= y0 && y < y1 && x >= x0 && x < x1);
            let exprs = [
                EXPRESSIONS[r.random_range(0..EXPRESSIONS.len())],
                EXPRESSIONS[r.random_range(0..EXPRESSIONS.len())],
            ];
            annotations.push(json!({
                "id": id * 100 + a,
                "image_id": id,
                "category_id": 1 + a as i64 % 3,
                "segmentation": {"size": [h, w], "counts": bitmap.to_rle_counts()},
                "iscrowd": 0,
                "expressions": exprs,
                "expression_ids": [next_sample, next_sample + 1],
            }));
            next_sample += 2;
        }
    }
    let coco = json!({"images": images, "annotations": annotations, "categories": [{"id": 1, "name": "thing"}]});
    let path = dir.join("refs.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&coco).unwrap()).unwrap();
    let emb = random_embeddings(seed, 16, n_images, next_sample);
    emb.store.save(dir.join("emb.bin")).unwrap();
    path
}

pub fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

// ---- oracles ----

/// Column-major RLE decoder; background run first.
pub fn oracle_rle_decode(counts: &[u32], h: usize, w: usize) -> Vec<Vec<bool>> {
    let mut out = vec![vec![false; w]; h];
    let mut pos = 0usize;
    let mut fg = false;
    for &c in counts {
        for _ in 0..c {
            assert!(pos < h * w, "RLE overruns {h}x{w}");
            out[pos % h][pos / h] = fg;
            pos += 1;
        }
        fg = !fg;
    }
    assert_eq!(pos, h * w, "RLE underruns {h}x{w}");
    out
}

pub fn oracle_count(grid: &[Vec<bool>]) -> usize {
    grid.iter().flatten().filter(|&&b| b).count()
}

pub fn bitmap_to_grid(b: &Bitmap) -> Vec<Vec<bool>> {
    (0..b.height())
        .map(|y| (0..b.width()).map(|x| b.get(y, x)).collect())
        .collect()
}

/// Nearest-neighbour resize sampling the source at pixel centres, in f64.
pub fn oracle_nn_resize(src: &[Vec<bool>], dst_h: usize, dst_w: usize) -> Vec<Vec<bool>> {
    let (sh, sw) = (src.len(), src[0].len());
    (0..dst_h)
        .map(|y| {
            let sy = ((y as f64 + 0.5) * sh as f64 / dst_h as f64).floor() as usize;
            (0..dst_w)
                .map(|x| {
                    let sx = ((x as f64 + 0.5) * sw as f64 / dst_w as f64).floor() as usize;
                    src[sy.min(sh - 1)][sx.min(sw - 1)]
                })
                .collect()
        })
        .collect()
}

/// Box IoU on `[x, y, w, h]` arrays.
pub fn oracle_iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let ix = (a[0] + a[2]).min(b[0] + b[2]) - a[0].max(b[0]);
    let iy = (a[1] + a[3]).min(b[1] + b[3]) - a[1].max(b[1]);
    let inter = ix.max(0.0) * iy.max(0.0);
    let union = a[2] * a[3] + b[2] * b[3] - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMode {
    T2i,
    I2iUpper,
}

/// Survivors of the upper bound, in image-id order, as `(id, t2i score)`.
pub fn oracle_survivors(
    emb: &Embeddings,
    sample_id: u64,
    positive: u64,
    tau: Option<f64>,
    mode: OracleMode,
) -> Vec<(u64, f64)> {
    let text = &emb.texts[&sample_id];
    let pos = &emb.images[&positive];
    let mut ids: Vec<u64> = emb.images.keys().copied().collect();
    ids.sort();
    ids.into_iter()
        .filter(|&id| id != positive)
        .filter(|&id| {
            let bound_score = match mode {
                OracleMode::T2i => naive_dot(text, &emb.images[&id]),
                OracleMode::I2iUpper => naive_dot(pos, &emb.images[&id]),
            };
            tau.is_none_or(|t| bound_score < t)
        })
        .map(|id| (id, naive_dot(text, &emb.images[&id])))
        .collect()
}

/// Filter, full sort by (score desc, id asc), take `k`.
pub fn oracle_pool(
    emb: &Embeddings,
    sample_id: u64,
    positive: u64,
    tau: Option<f64>,
    k: usize,
    mode: OracleMode,
) -> Vec<u64> {
    let mut s = oracle_survivors(emb, sample_id, positive, tau, mode);
    s.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    s.into_iter().take(k).map(|(id, _)| id).collect()
}

/// Allowed cells for an expression, from the keyword table written out
/// independently with a regex.
pub fn oracle_keywords(expression: &str) -> std::collections::BTreeSet<String> {
    let re = regex::Regex::new(
        r"(?i)(?:^|\s)[[:punct:]]*(top|high|above|left|right|bottom|low|below|o'clock|corner)[[:punct:]]*(?:$|\s)",
    )
    .unwrap();
    let mut found = std::collections::BTreeSet::new();
    // Overlapping matches share a separating space; scan token by token.
    for token in expression.split_whitespace() {
        if let Some(c) = re.captures(token) {
            found.insert(c[1].to_lowercase());
        }
    }
    found
}

pub fn oracle_allowed(expression: &str) -> Vec<usize> {
    let mut allowed: Vec<usize> = (0..4).collect();
    for k in oracle_keywords(expression) {
        let cells: &[usize] = match k.as_str() {
            "top" | "high" | "above" => &[0, 1],
            "bottom" | "low" | "below" => &[2, 3],
            "left" => &[0, 2],
            "right" => &[1, 3],
            _ => continue,
        };
        allowed.retain(|c| cells.contains(c));
    }
    allowed
}
