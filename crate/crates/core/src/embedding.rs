//! Image and text embeddings and exact relevance scoring.
//!
//! File layout, all little-endian:
//!
//! ```text
//! "NEMOEMB1" | u32 dim | u32 n_images | u32 n_texts
//! | n_images x u64 image_id | n_texts x u64 sample_id
//! | n_images x dim f32 | n_texts x dim f32
//! ```
//!
//! Every row must already be L2-normalized; rows that are off by more than
//! [`UNIT_NORM_TOLERANCE`] are rejected rather than fixed.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"NEMOEMB1";
pub const UNIT_NORM_TOLERANCE: f64 = 1e-5;
const HEADER_LEN: usize = 8 + 4 * 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelevanceScore {
    pub image_id: u64,
    pub score: f64,
}

/// Immutable store of unit-norm image and text vectors.
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    dim: usize,
    image_ids: Vec<u64>,
    image_rows: HashMap<u64, usize>,
    images: Vec<f32>,
    text_ids: Vec<u64>,
    text_rows: HashMap<u64, usize>,
    texts: Vec<f32>,
}

/// Dot product of two f32 rows, accumulated sequentially in f64.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        acc += *x as f64 * *y as f64;
    }
    acc
}

fn norm(row: &[f32]) -> f64 {
    dot(row, row).sqrt()
}

/// Scale a raw vector to unit length in place; zero vectors are left alone.
pub fn normalize(row: &mut [f32]) {
    let n = norm(row);
    if n > 0.0 {
        for v in row.iter_mut() {
            *v = (*v as f64 / n) as f32;
        }
    }
}

impl EmbeddingStore {
    /// Build a store from row-major matrices, validating every invariant.
    pub fn new(
        dim: usize,
        image_ids: Vec<u64>,
        images: Vec<f32>,
        text_ids: Vec<u64>,
        texts: Vec<f32>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::EmbeddingFormat("dim must be positive".into()));
        }
        if images.len() != image_ids.len() * dim || texts.len() != text_ids.len() * dim {
            return Err(Error::EmbeddingFormat(
                "matrix sizes do not match id counts".into(),
            ));
        }
        let image_rows = index_ids(&image_ids, "image")?;
        let text_rows = index_ids(&text_ids, "text")?;
        validate_rows(&images, dim, &image_ids, "image")?;
        validate_rows(&texts, dim, &text_ids, "text")?;
        Ok(Self {
            dim,
            image_ids,
            image_rows,
            images,
            text_ids,
            text_rows,
            texts,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::EmbeddingFormat(format!(
                "file is {} bytes, shorter than the {HEADER_LEN}-byte header",
                bytes.len()
            )));
        }
        if &bytes[..8] != MAGIC {
            return Err(Error::EmbeddingFormat("magic mismatch".into()));
        }
        let mut reader = Reader { bytes, pos: 8 };
        let dim = reader.u32()? as usize;
        let n_images = reader.u32()? as usize;
        let n_texts = reader.u32()? as usize;
        if dim == 0 {
            return Err(Error::EmbeddingFormat("dim must be positive".into()));
        }
        let expected = (n_images as u128 + n_texts as u128) * 8
            + (n_images as u128 + n_texts as u128) * dim as u128 * 4
            + HEADER_LEN as u128;
        if (bytes.len() as u128) < expected {
            return Err(Error::EmbeddingFormat(format!(
                "truncated payload: {} bytes, expected {expected}",
                bytes.len()
            )));
        }
        if (bytes.len() as u128) > expected {
            return Err(Error::EmbeddingFormat(format!(
                "{} trailing bytes after payload",
                bytes.len() as u128 - expected
            )));
        }
        let image_ids = (0..n_images).map(|_| reader.u64()).collect::<Result<_>>()?;
        let text_ids = (0..n_texts).map(|_| reader.u64()).collect::<Result<_>>()?;
        let images = (0..n_images * dim)
            .map(|_| reader.f32())
            .collect::<Result<_>>()?;
        let texts = (0..n_texts * dim)
            .map(|_| reader.f32())
            .collect::<Result<_>>()?;
        Self::new(dim, image_ids, images, text_ids, texts)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(
            HEADER_LEN
                + 8 * (self.image_ids.len() + self.text_ids.len())
                + 4 * (self.images.len() + self.texts.len()),
        );
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.image_ids.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.text_ids.len() as u32).to_le_bytes());
        for id in self.image_ids.iter().chain(&self.text_ids) {
            out.extend_from_slice(&id.to_le_bytes());
        }
        for v in self.images.iter().chain(&self.texts) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn image_ids(&self) -> &[u64] {
        &self.image_ids
    }

    pub fn text_ids(&self) -> &[u64] {
        &self.text_ids
    }

    pub fn image_vector(&self, image_id: u64) -> Option<&[f32]> {
        self.image_rows
            .get(&image_id)
            .map(|&r| &self.images[r * self.dim..(r + 1) * self.dim])
    }

    pub fn text_vector(&self, sample_id: u64) -> Option<&[f32]> {
        self.text_rows
            .get(&sample_id)
            .map(|&r| &self.texts[r * self.dim..(r + 1) * self.dim])
    }

    pub fn has_image(&self, image_id: u64) -> bool {
        self.image_rows.contains_key(&image_id)
    }

    fn image_row(&self, row: usize) -> &[f32] {
        &self.images[row * self.dim..(row + 1) * self.dim]
    }

    /// Score `query` against every image row, in stored order.
    pub fn scores_for(&self, query: &[f32]) -> Vec<RelevanceScore> {
        self.image_ids
            .iter()
            .enumerate()
            .map(|(row, &image_id)| RelevanceScore {
                image_id,
                score: dot(query, self.image_row(row)),
            })
            .collect()
    }

    /// Text-to-image relevance `t . v_i` for one expression.
    pub fn text_to_image_scores(&self, sample_id: u64) -> Result<Vec<RelevanceScore>> {
        let query = self.text_vector(sample_id).ok_or(Error::UnknownId {
            kind: "text",
            id: sample_id,
        })?;
        Ok(self.scores_for(query))
    }

    /// Image-to-image similarity `v . v_i`; the query's own row is included.
    pub fn image_to_image_scores(&self, image_id: u64) -> Result<Vec<RelevanceScore>> {
        let query = self.image_vector(image_id).ok_or(Error::UnknownId {
            kind: "image",
            id: image_id,
        })?;
        Ok(self.scores_for(query))
    }

    /// Check that every listed image and sample has a row.
    pub fn check_coverage(
        &self,
        image_ids: impl IntoIterator<Item = u64>,
        sample_ids: impl IntoIterator<Item = u64>,
    ) -> Result<()> {
        let missing_images: Vec<u64> = image_ids
            .into_iter()
            .filter(|id| !self.image_rows.contains_key(id))
            .collect();
        let missing_texts: Vec<u64> = sample_ids
            .into_iter()
            .filter(|id| !self.text_rows.contains_key(id))
            .collect();
        if missing_images.is_empty() && missing_texts.is_empty() {
            return Ok(());
        }
        Err(Error::EmbeddingValidation(format!(
            "missing image rows {:?}, missing text rows {:?}",
            truncate(&missing_images),
            truncate(&missing_texts)
        )))
    }
}

fn truncate(ids: &[u64]) -> &[u64] {
    &ids[..ids.len().min(20)]
}

fn index_ids(ids: &[u64], kind: &str) -> Result<HashMap<u64, usize>> {
    let mut map = HashMap::with_capacity(ids.len());
    for (row, &id) in ids.iter().enumerate() {
        if map.insert(id, row).is_some() {
            return Err(Error::EmbeddingValidation(format!(
                "duplicate {kind} id {id}"
            )));
        }
    }
    Ok(map)
}

fn validate_rows(matrix: &[f32], dim: usize, ids: &[u64], kind: &str) -> Result<()> {
    for (row, (values, id)) in matrix.chunks_exact(dim).zip(ids).enumerate() {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::EmbeddingValidation(format!(
                "{kind} row {row} (id {id}) has a non-finite value"
            )));
        }
        let n = norm(values);
        if (n - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::EmbeddingValidation(format!(
                "{kind} row {row} (id {id}) has norm {n:.8}, expected 1"
            )));
        }
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let slice = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::EmbeddingFormat("truncated payload".into()))?;
        self.pos = end;
        Ok(slice.try_into().expect("slice length"))
    }

    fn u32(&mut self) -> Result<u32> {
        self.take::<4>().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> Result<u64> {
        self.take::<8>().map(u64::from_le_bytes)
    }

    fn f32(&mut self) -> Result<f32> {
        self.take::<4>().map(f32::from_le_bytes)
    }
}
