//! Mosaic planning and composition.
//!
//! The canvas keeps the positive image's size. Grid lines split it into
//! cells; the positive image and mask go into one cell, negatives fill the
//! remaining cells in row-major order, and the composed mask is zero outside
//! the positive cell.

use image::imageops::{self, FilterType};
use image::{Rgb, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::keywords::CellConstraint;
use crate::mask::Bitmap;
use crate::rng::SampleRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Grid {
    #[default]
    #[serde(rename = "2x2")]
    G2x2,
    #[serde(rename = "3x3")]
    G3x3,
}

impl Grid {
    pub fn side(&self) -> usize {
        match self {
            Grid::G2x2 => 2,
            Grid::G3x3 => 3,
        }
    }

    pub fn cells(&self) -> usize {
        self.side() * self.side()
    }

    pub fn negatives(&self) -> usize {
        self.cells() - 1
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Grid::G2x2 => "2x2",
            Grid::G3x3 => "3x3",
        }
    }
}

impl std::str::FromStr for Grid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "2x2" => Ok(Grid::G2x2),
            "3x3" => Ok(Grid::G3x3),
            _ => Err(format!("unknown grid {s:?} (expected 2x2 or 3x3)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CrossPointPolicy {
    /// Canvas centre, `(floor(H/2), floor(W/2))`.
    #[default]
    Fixed,
    /// Uniform over interior points, so every cell keeps at least one pixel.
    Anywhere,
    /// Uniform over the central `H/4 x W/4` block.
    CentralQuarter,
}

impl CrossPointPolicy {
    pub fn as_str(&self) -> &'static str {
        match self {
            CrossPointPolicy::Fixed => "fixed",
            CrossPointPolicy::Anywhere => "anywhere",
            CrossPointPolicy::CentralQuarter => "central-quarter",
        }
    }
}

impl std::str::FromStr for CrossPointPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fixed" => Ok(CrossPointPolicy::Fixed),
            "anywhere" => Ok(CrossPointPolicy::Anywhere),
            "central-quarter" => Ok(CrossPointPolicy::CentralQuarter),
            _ => Err(format!(
                "unknown cross-point policy {s:?} (expected fixed, anywhere or central-quarter)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompositorConfig {
    pub grid: Grid,
    pub cross_point: CrossPointPolicy,
    /// Restrict the positive cell using positional keywords.
    pub constraints: bool,
}

impl Default for CompositorConfig {
    fn default() -> Self {
        Self {
            grid: Grid::G2x2,
            cross_point: CrossPointPolicy::Fixed,
            constraints: false,
        }
    }
}

impl CompositorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid == Grid::G3x3 {
            if self.cross_point != CrossPointPolicy::Fixed {
                return Err(Error::Config(
                    "the 3x3 grid only supports the fixed cross-point policy".into(),
                ));
            }
            if self.constraints {
                return Err(Error::Config(
                    "positional constraints are defined for 2x2 quadrants only; \
                     they cannot be combined with the 3x3 grid"
                        .into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellRect {
    pub top: u32,
    pub left: u32,
    pub height: u32,
    pub width: u32,
}

impl CellRect {
    pub fn contains(&self, y: u32, x: u32) -> bool {
        y >= self.top && y < self.top + self.height && x >= self.left && x < self.left + self.width
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MosaicPlan {
    pub canvas_h: u32,
    pub canvas_w: u32,
    pub grid: Grid,
    /// Horizontal grid lines including 0 and `canvas_h`.
    pub row_bounds: Vec<u32>,
    /// Vertical grid lines including 0 and `canvas_w`.
    pub col_bounds: Vec<u32>,
    /// Row-major cell index of the positive image.
    pub positive_cell: usize,
    /// Negatives in the order they fill the other cells (row-major).
    pub negative_ids: Vec<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub matched_keywords: Vec<String>,
    /// Set when keyword constraints contradicted each other and the cell
    /// was drawn without them.
    #[serde(default)]
    pub constraint_fallback: bool,
}

impl MosaicPlan {
    /// The point where the 2x2 cells meet.
    pub fn cross_point(&self) -> (u32, u32) {
        (self.row_bounds[1], self.col_bounds[1])
    }

    /// Cell rectangles in row-major order.
    pub fn cells(&self) -> Vec<CellRect> {
        let mut cells = Vec::with_capacity(self.grid.cells());
        for r in self.row_bounds.windows(2) {
            for c in self.col_bounds.windows(2) {
                cells.push(CellRect {
                    top: r[0],
                    left: c[0],
                    height: r[1] - r[0],
                    width: c[1] - c[0],
                });
            }
        }
        cells
    }

    pub fn positive_rect(&self) -> CellRect {
        self.cells()[self.positive_cell]
    }

    /// Cell index for every negative, aligned with `negative_ids`.
    pub fn negative_cells(&self) -> Vec<usize> {
        (0..self.grid.cells())
            .filter(|&c| c != self.positive_cell)
            .collect()
    }
}

fn even_bounds(extent: u32, side: usize) -> Vec<u32> {
    let step = extent / side as u32;
    let mut b: Vec<u32> = (0..side as u32).map(|i| i * step).collect();
    b.push(extent);
    b
}

fn draw_split(extent: u32, policy: CrossPointPolicy, rng: &mut SampleRng) -> u32 {
    match policy {
        CrossPointPolicy::Fixed => extent / 2,
        CrossPointPolicy::Anywhere => rng.random_range(1..extent),
        CrossPointPolicy::CentralQuarter => {
            let len = (extent / 4).max(1);
            let lo = (extent / 2 - len / 2).max(1);
            let hi = (lo + len).min(extent);
            rng.random_range(lo..hi.max(lo + 1))
        }
    }
}

/// Decide the layout for one mosaic.
///
/// `canvas` is the positive image size `(height, width)`. Random draws, in
/// order: the cross point (unless fixed), then the positive cell.
pub fn plan_mosaic(
    expression: &str,
    canvas: (u32, u32),
    negatives: &[u64],
    config: &CompositorConfig,
    rng: &mut SampleRng,
) -> Result<MosaicPlan> {
    config.validate()?;
    let grid = config.grid;
    if negatives.len() != grid.negatives() {
        return Err(Error::Arity {
            expected: grid.negatives(),
            got: negatives.len(),
        });
    }
    let (h, w) = canvas;
    let side = grid.side() as u32;
    if h < side || w < side {
        return Err(Error::Compose(format!(
            "canvas {h}x{w} is too small for a {} grid",
            grid.as_str()
        )));
    }

    let (row_bounds, col_bounds) = match grid {
        Grid::G2x2 => {
            let cy = draw_split(h, config.cross_point, rng);
            let cx = draw_split(w, config.cross_point, rng);
            (vec![0, cy, h], vec![0, cx, w])
        }
        Grid::G3x3 => (even_bounds(h, 3), even_bounds(w, 3)),
    };

    let mut matched_keywords = Vec::new();
    let mut constraint_fallback = false;
    let mut allowed: Vec<usize> = (0..grid.cells()).collect();
    if config.constraints {
        let c = CellConstraint::from_expression(expression);
        matched_keywords = c.matched.iter().map(|s| s.to_string()).collect();
        match c.allowed {
            Some(cells) if cells.is_empty() => constraint_fallback = true,
            Some(cells) => allowed = cells,
            None => {}
        }
    }
    let positive_cell = allowed[rng.random_range(0..allowed.len())];

    Ok(MosaicPlan {
        canvas_h: h,
        canvas_w: w,
        grid,
        row_bounds,
        col_bounds,
        positive_cell,
        negative_ids: negatives.to_vec(),
        matched_keywords,
        constraint_fallback,
    })
}

/// Composed image and mask.
#[derive(Debug, Clone)]
pub struct Composite {
    pub image: RgbImage,
    pub mask: Bitmap,
}

fn resize_rgb(src: &RgbImage, height: u32, width: u32) -> RgbImage {
    if src.height() == height && src.width() == width {
        src.clone()
    } else {
        imageops::resize(src, width, height, FilterType::Triangle)
    }
}

/// Assemble the mosaic described by `plan`.
///
/// Images are resampled bilinearly and the mask with nearest-neighbour.
pub fn compose(
    positive_image: &RgbImage,
    positive_mask: &Bitmap,
    negative_images: &[&RgbImage],
    plan: &MosaicPlan,
) -> Result<Composite> {
    let (h, w) = (plan.canvas_h, plan.canvas_w);
    if positive_image.height() != h || positive_image.width() != w {
        return Err(Error::Compose(format!(
            "positive image is {}x{}, plan canvas is {h}x{w}",
            positive_image.height(),
            positive_image.width()
        )));
    }
    if positive_mask.height() != h || positive_mask.width() != w {
        return Err(Error::Compose(format!(
            "positive mask is {}x{}, plan canvas is {h}x{w}",
            positive_mask.height(),
            positive_mask.width()
        )));
    }
    if negative_images.len() != plan.grid.negatives() {
        return Err(Error::Arity {
            expected: plan.grid.negatives(),
            got: negative_images.len(),
        });
    }

    let cells = plan.cells();
    let mut canvas = RgbImage::new(w, h);
    let mut mask = Bitmap::new(h, w);

    let pos = cells[plan.positive_cell];
    let tile = resize_rgb(positive_image, pos.height, pos.width);
    imageops::replace(&mut canvas, &tile, pos.left as i64, pos.top as i64);
    let tile_mask = positive_mask.resize_nearest(pos.height, pos.width);
    mask.blit(&tile_mask, pos.top, pos.left);

    let placements = plan
        .negative_cells()
        .into_iter()
        .zip(negative_images)
        .zip(&plan.negative_ids);
    for ((cell, neg), id) in placements {
        if neg.width() == 0 || neg.height() == 0 {
            return Err(Error::Compose(format!("negative image {id} is empty")));
        }
        let rect = cells[cell];
        let tile = resize_rgb(neg, rect.height, rect.width);
        imageops::replace(&mut canvas, &tile, rect.left as i64, rect.top as i64);
    }

    Ok(Composite {
        image: canvas,
        mask,
    })
}

/// Image with the mask tinted red and the grid lines drawn, for eyeballing.
pub fn preview(composite: &Composite, plan: &MosaicPlan) -> RgbImage {
    let mut out = composite.image.clone();
    for (x, y, px) in out.enumerate_pixels_mut() {
        if composite.mask.get(y, x) {
            let Rgb([r, g, b]) = *px;
            *px = Rgb([
                ((r as u16 + 255) / 2) as u8,
                (g as u16 / 2) as u8,
                (b as u16 / 2) as u8,
            ]);
        }
    }
    let white = Rgb([255, 255, 255]);
    for &y in &plan.row_bounds[1..plan.row_bounds.len() - 1] {
        for x in 0..out.width() {
            out.put_pixel(x, y, white);
        }
    }
    for &x in &plan.col_bounds[1..plan.col_bounds.len() - 1] {
        for y in 0..out.height() {
            out.put_pixel(x, y, white);
        }
    }
    out
}
