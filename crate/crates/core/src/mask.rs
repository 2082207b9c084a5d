//! Segmentation masks: dense bitmaps, COCO run-length encoding and polygon
//! rasterization.
//!
//! Run-length counts follow the COCO convention: pixels are visited in
//! column-major order (down each column, then to the next column) and the
//! first run counts background pixels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in pixel units, `(x, y)` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    /// Intersection over union; zero when either box is degenerate.
    pub fn iou(&self, other: &BBox) -> f64 {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = (self.x + self.w).min(other.x + other.w);
        let y1 = (self.y + self.h).min(other.y + other.h);
        let inter = (x1 - x0).max(0.0) * (y1 - y0).max(0.0);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

/// Binary mask stored row-major, one byte per pixel (0 or 1).
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Bitmap {
    height: u32,
    width: u32,
    data: Vec<u8>,
}

impl std::fmt::Debug for Bitmap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Bitmap")
            .field("height", &self.height)
            .field("width", &self.width)
            .field("foreground", &self.foreground_count())
            .finish()
    }
}

impl Bitmap {
    pub fn new(height: u32, width: u32) -> Self {
        Self {
            height,
            width,
            data: vec![0; height as usize * width as usize],
        }
    }

    pub fn filled(height: u32, width: u32) -> Self {
        Self {
            height,
            width,
            data: vec![1; height as usize * width as usize],
        }
    }

    /// Build from row-major data; any non-zero byte is foreground.
    pub fn from_row_major(height: u32, width: u32, data: Vec<u8>) -> Result<Self> {
        if data.len() != height as usize * width as usize {
            return Err(Error::Mask(format!(
                "bitmap payload has {} cells, expected {}x{}",
                data.len(),
                height,
                width
            )));
        }
        let data = data.into_iter().map(|v| u8::from(v != 0)).collect();
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: u32, width: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut data = Vec::with_capacity(height as usize * width as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(u8::from(f(y, x)));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn as_row_major(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    fn index(&self, y: u32, x: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    #[inline]
    pub fn get(&self, y: u32, x: u32) -> bool {
        self.data[self.index(y, x)] != 0
    }

    #[inline]
    pub fn set(&mut self, y: u32, x: u32, value: bool) {
        let i = self.index(y, x);
        self.data[i] = u8::from(value);
    }

    pub fn foreground_count(&self) -> u64 {
        self.data.iter().map(|&v| v as u64).sum()
    }

    /// Tight bounding box of the foreground, `None` for an empty mask.
    pub fn bbox(&self) -> Option<BBox> {
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0u32, 0u32);
        let mut any = false;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(y, x) {
                    any = true;
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        any.then(|| {
            BBox::new(
                x0 as f64,
                y0 as f64,
                (x1 - x0 + 1) as f64,
                (y1 - y0 + 1) as f64,
            )
        })
    }

    /// Copy `src` into this bitmap with its top-left corner at `(top, left)`.
    pub fn blit(&mut self, src: &Bitmap, top: u32, left: u32) {
        assert!(top + src.height <= self.height && left + src.width <= self.width);
        for y in 0..src.height {
            let dst = self.index(top + y, left);
            let s = src.index(y, 0);
            self.data[dst..dst + src.width as usize]
                .copy_from_slice(&src.data[s..s + src.width as usize]);
        }
    }

    /// COCO uncompressed run-length counts (column-major, background first).
    pub fn to_rle_counts(&self) -> Vec<u32> {
        let mut counts = Vec::new();
        let mut current = 0u8;
        let mut run = 0u32;
        for x in 0..self.width {
            for y in 0..self.height {
                let v = self.data[self.index(y, x)];
                if v != current {
                    counts.push(run);
                    run = 0;
                    current = v;
                }
                run += 1;
            }
        }
        counts.push(run);
        counts
    }

    pub fn from_rle_counts(height: u32, width: u32, counts: &[u32]) -> Result<Self> {
        let expected = height as u64 * width as u64;
        let sum: u64 = counts.iter().map(|&c| c as u64).sum();
        if sum != expected {
            return Err(Error::RleCorrupt {
                sum,
                expected,
                height,
                width,
            });
        }
        let mut bitmap = Bitmap::new(height, width);
        let h = height as u64;
        let mut pos = 0u64;
        for (i, &c) in counts.iter().enumerate() {
            if i % 2 == 1 {
                for p in pos..pos + c as u64 {
                    bitmap.set((p % h) as u32, (p / h) as u32, true);
                }
            }
            pos += c as u64;
        }
        Ok(bitmap)
    }

    /// Nearest-neighbour resample to `height` x `width`.
    ///
    /// Destination pixel `(y, x)` samples the source pixel containing the
    /// destination pixel's centre, `floor((y + 0.5) * src_h / dst_h)`.
    pub fn resize_nearest(&self, height: u32, width: u32) -> Bitmap {
        let (sh, sw) = (self.height as u64, self.width as u64);
        let (dh, dw) = (height as u64, width as u64);
        let cols: Vec<u32> = (0..dw)
            .map(|x| (((2 * x + 1) * sw) / (2 * dw)) as u32)
            .collect();
        let mut out = Bitmap::new(height, width);
        if sh == 0 || sw == 0 {
            return out;
        }
        for y in 0..height {
            let sy = (((2 * y as u64 + 1) * sh) / (2 * dh)) as u32;
            let row = out.index(y, 0);
            for (x, &sx) in cols.iter().enumerate() {
                out.data[row + x] = self.data[self.index(sy, sx)];
            }
        }
        out
    }
}

/// Encoded payload of a [`SegmentationMask`].
#[derive(Debug, Clone, PartialEq)]
pub enum MaskEncoding {
    /// Uncompressed COCO run lengths.
    Rle(Vec<u32>),
    /// One or more flat `[x0, y0, x1, y1, ...]` rings.
    Polygon(Vec<Vec<f64>>),
    Dense(Bitmap),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationMask {
    pub height: u32,
    pub width: u32,
    pub encoding: MaskEncoding,
}

impl SegmentationMask {
    pub fn rle(height: u32, width: u32, counts: Vec<u32>) -> Self {
        Self {
            height,
            width,
            encoding: MaskEncoding::Rle(counts),
        }
    }

    pub fn polygon(height: u32, width: u32, rings: Vec<Vec<f64>>) -> Self {
        Self {
            height,
            width,
            encoding: MaskEncoding::Polygon(rings),
        }
    }

    pub fn dense(bitmap: Bitmap) -> Self {
        Self {
            height: bitmap.height(),
            width: bitmap.width(),
            encoding: MaskEncoding::Dense(bitmap),
        }
    }

    pub fn decode(&self) -> Result<Bitmap> {
        decode_mask(self)
    }
}

/// Decode any mask encoding to a dense bitmap of exactly `height` x `width`.
pub fn decode_mask(mask: &SegmentationMask) -> Result<Bitmap> {
    match &mask.encoding {
        MaskEncoding::Rle(counts) => Bitmap::from_rle_counts(mask.height, mask.width, counts),
        MaskEncoding::Polygon(rings) => rasterize_polygons(mask.height, mask.width, rings),
        MaskEncoding::Dense(bitmap) => {
            if bitmap.height() != mask.height || bitmap.width() != mask.width {
                return Err(Error::Mask(format!(
                    "dense payload is {}x{}, header says {}x{}",
                    bitmap.height(),
                    bitmap.width(),
                    mask.height,
                    mask.width
                )));
            }
            Ok(bitmap.clone())
        }
    }
}

/// Encode a bitmap as an uncompressed RLE mask.
pub fn encode_rle(bitmap: &Bitmap) -> SegmentationMask {
    SegmentationMask::rle(bitmap.height(), bitmap.width(), bitmap.to_rle_counts())
}

/// Rasterize polygon rings with the even-odd rule, sampling pixel centres.
///
/// Each ring is filled on its own and the results are unioned, which matches
/// how COCO treats multi-part objects.
pub fn rasterize_polygons(height: u32, width: u32, rings: &[Vec<f64>]) -> Result<Bitmap> {
    let mut out = Bitmap::new(height, width);
    let mut crossings = Vec::new();
    for ring in rings {
        if ring.len() < 6 || ring.len() % 2 != 0 {
            return Err(Error::Mask(format!(
                "polygon ring needs an even number of at least 6 coordinates, got {}",
                ring.len()
            )));
        }
        if ring.iter().any(|v| !v.is_finite()) {
            return Err(Error::Mask("polygon has non-finite coordinate".into()));
        }
        let points: Vec<(f64, f64)> = ring.chunks_exact(2).map(|p| (p[0], p[1])).collect();
        for y in 0..height {
            let yc = y as f64 + 0.5;
            crossings.clear();
            for i in 0..points.len() {
                let (x0, y0) = points[i];
                let (x1, y1) = points[(i + 1) % points.len()];
                if (y0 <= yc) != (y1 <= yc) {
                    crossings.push(x0 + (yc - y0) * (x1 - x0) / (y1 - y0));
                }
            }
            crossings.sort_by(f64::total_cmp);
            for pair in crossings.chunks_exact(2) {
                // pixel x is inside when pair[0] <= x + 0.5 < pair[1]
                let start = (pair[0] - 0.5).ceil().max(0.0);
                let end = (pair[1] - 0.5).ceil().min(width as f64);
                let mut x = start;
                while x < end {
                    out.set(y, x as u32, true);
                    x += 1.0;
                }
            }
        }
    }
    Ok(out)
}

/// Parse the compact string form of COCO RLE counts.
pub fn rle_counts_from_string(s: &str) -> Result<Vec<u32>> {
    let bytes = s.as_bytes();
    let mut counts: Vec<i64> = Vec::new();
    let mut p = 0;
    while p < bytes.len() {
        let mut x: i64 = 0;
        let mut k = 0;
        loop {
            if p >= bytes.len() {
                return Err(Error::Mask("truncated compressed RLE string".into()));
            }
            let c = bytes[p] as i64 - 48;
            if !(0..64).contains(&c) || k > 12 {
                return Err(Error::Mask(format!(
                    "invalid character {:?} in compressed RLE string",
                    bytes[p] as char
                )));
            }
            x |= (c & 0x1f) << (5 * k);
            p += 1;
            k += 1;
            if c & 0x20 == 0 {
                if c & 0x10 != 0 {
                    x |= -1i64 << (5 * k);
                }
                break;
            }
        }
        if counts.len() > 2 {
            x += counts[counts.len() - 2];
        }
        counts.push(x);
    }
    counts
        .into_iter()
        .map(|c| u32::try_from(c).map_err(|_| Error::Mask(format!("RLE count {c} out of range"))))
        .collect()
}

/// Render RLE counts in the compact COCO string form.
pub fn rle_counts_to_string(counts: &[u32]) -> String {
    let mut out = String::new();
    for (i, &c) in counts.iter().enumerate() {
        let mut x = c as i64;
        if i > 2 {
            x -= counts[i - 2] as i64;
        }
        loop {
            let mut c = x & 0x1f;
            x >>= 5;
            let more = if c & 0x10 != 0 { x != -1 } else { x != 0 };
            if more {
                c |= 0x20;
            }
            out.push((c as u8 + 48) as char);
            if !more {
                break;
            }
        }
    }
    out
}
