//! Overlapping tile grid: plan, extract context tiles, stitch center crops.
//!
//! A slide is covered by `output_size` cores laid out row-major on a canvas
//! padded up to a multiple of `output_size`. Each core is read with a ring of
//! `context` extra pixels on every side, so a tile is `input_size` square.
//! Anything outside the slide, both the right/bottom canvas padding and the
//! context ring, is filled by mirror reflection of the slide.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{crop, paste_into, reflect_index, ImageError, RasterImage, Region};

#[derive(Debug, Error)]
pub enum TilingError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("tile ({row}, {col}) out of range for {rows}x{cols} plan")]
    IndexOutOfRange {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },
    #[error("slide {width}x{height} too small to reflect a {context}-pixel context ring")]
    SlideTooSmall {
        width: usize,
        height: usize,
        context: usize,
    },
    #[error("missing/duplicate tile at ({row}, {col})")]
    MissingOrDuplicate { row: usize, col: usize },
    #[error("wrong core size at ({row}, {col}): {width}x{height}, expected {expected}")]
    WrongCoreSize {
        row: usize,
        col: usize,
        width: usize,
        height: usize,
        expected: usize,
    },
    #[error(transparent)]
    Image(#[from] ImageError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileGeometry {
    input_size: usize,
    output_size: usize,
}

impl Default for TileGeometry {
    fn default() -> Self {
        Self {
            input_size: 256,
            output_size: 192,
        }
    }
}

impl TileGeometry {
    pub fn new(input_size: usize, output_size: usize) -> Result<Self, TilingError> {
        if output_size == 0 || input_size <= output_size {
            return Err(TilingError::InvalidGeometry(format!(
                "input {input_size} must exceed output {output_size} > 0"
            )));
        }
        if !(input_size - output_size).is_multiple_of(2) {
            return Err(TilingError::InvalidGeometry(format!(
                "input - output = {} is odd",
                input_size - output_size
            )));
        }
        Ok(Self {
            input_size,
            output_size,
        })
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn output_size(&self) -> usize {
        self.output_size
    }

    pub fn context(&self) -> usize {
        (self.input_size - self.output_size) / 2
    }

    /// The centered `output_size` square inside an `input_size` tile.
    pub fn center_region(&self) -> Region {
        let c = self.context();
        Region::new(c, c, self.output_size, self.output_size)
    }
}

impl std::str::FromStr for TileGeometry {
    type Err = TilingError;

    /// Parses `"256:192"`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| TilingError::InvalidGeometry(format!("expected IN:OUT, got {s:?}")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|e| TilingError::InvalidGeometry(format!("{v:?}: {e}")))
        };
        Self::new(parse(a)?, parse(b)?)
    }
}

/// An `input_size` window in padded-canvas coordinates; may start left of
/// or above the canvas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceWindow {
    pub x: isize,
    pub y: isize,
    pub size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileRef {
    pub row: usize,
    pub col: usize,
    pub core: Region,
    pub source: SourceWindow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilePlan {
    pub slide_width: usize,
    pub slide_height: usize,
    pub rows: usize,
    pub cols: usize,
    pub geometry: TileGeometry,
    pub padded_width: usize,
    pub padded_height: usize,
}

pub fn plan_tiles(
    slide_width: usize,
    slide_height: usize,
    geometry: TileGeometry,
) -> Result<TilePlan, TilingError> {
    // Re-validate: geometry may have been deserialized.
    let geometry = TileGeometry::new(geometry.input_size, geometry.output_size)?;
    if slide_width == 0 || slide_height == 0 {
        return Err(TilingError::InvalidGeometry(format!(
            "empty slide {slide_width}x{slide_height}"
        )));
    }
    let out = geometry.output_size;
    let rows = slide_height.div_ceil(out);
    let cols = slide_width.div_ceil(out);
    Ok(TilePlan {
        slide_width,
        slide_height,
        rows,
        cols,
        geometry,
        padded_width: cols * out,
        padded_height: rows * out,
    })
}

impl TilePlan {
    pub fn tile_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn tile(&self, row: usize, col: usize) -> Result<TileRef, TilingError> {
        if row >= self.rows || col >= self.cols {
            return Err(TilingError::IndexOutOfRange {
                row,
                col,
                rows: self.rows,
                cols: self.cols,
            });
        }
        let out = self.geometry.output_size;
        let ctx = self.geometry.context() as isize;
        let core = Region::new(col * out, row * out, out, out);
        Ok(TileRef {
            row,
            col,
            core,
            source: SourceWindow {
                x: core.x as isize - ctx,
                y: core.y as isize - ctx,
                size: self.geometry.input_size,
            },
        })
    }

    /// Row-major iteration over every tile.
    pub fn tiles(&self) -> impl Iterator<Item = TileRef> + '_ {
        (0..self.rows).flat_map(move |r| {
            (0..self.cols).map(move |c| self.tile(r, c).expect("indices in range"))
        })
    }

    /// Interior core boundaries as (vertical seam columns, horizontal seam rows).
    pub fn seam_positions(&self) -> (Vec<usize>, Vec<usize>) {
        let out = self.geometry.output_size;
        (
            (1..self.cols).map(|c| c * out).collect(),
            (1..self.rows).map(|r| r * out).collect(),
        )
    }
}

pub fn extract_tile(
    slide: &RasterImage,
    plan: &TilePlan,
    row: usize,
    col: usize,
) -> Result<RasterImage, TilingError> {
    if slide.width() != plan.slide_width || slide.height() != plan.slide_height {
        return Err(ImageError::DimensionMismatch {
            expected: (plan.slide_width, plan.slide_height),
            actual: (slide.width(), slide.height()),
        }
        .into());
    }
    let tile = plan.tile(row, col)?;
    let context = plan.geometry.context();
    if slide.width() <= context || slide.height() <= context {
        return Err(TilingError::SlideTooSmall {
            width: slide.width(),
            height: slide.height(),
            context,
        });
    }
    let SourceWindow { x, y, size } = tile.source;
    let inside = x >= 0
        && y >= 0
        && x as usize + size <= slide.width()
        && y as usize + size <= slide.height();
    if inside {
        return Ok(crop(
            slide,
            Region::new(x as usize, y as usize, size, size),
        )?);
    }
    let cols: Vec<usize> = (0..size as isize)
        .map(|dx| reflect_index(x + dx, slide.width()))
        .collect();
    let mut samples = Vec::with_capacity(size * size * 3);
    for dy in 0..size as isize {
        let sy = reflect_index(y + dy, slide.height());
        for &sx in &cols {
            samples.extend_from_slice(&slide.pixel(sx, sy));
        }
    }
    Ok(RasterImage::new(size, size, samples)?)
}

/// Take the centered `output_size` crop of a translated tile.
pub fn center_crop(
    tile: &RasterImage,
    geometry: &TileGeometry,
) -> Result<RasterImage, TilingError> {
    if tile.width() != geometry.input_size || tile.height() != geometry.input_size {
        return Err(ImageError::DimensionMismatch {
            expected: (geometry.input_size, geometry.input_size),
            actual: (tile.width(), tile.height()),
        }
        .into());
    }
    Ok(crop(tile, geometry.center_region())?)
}

/// Assemble cores (in any order) into a slide of the plan's original size.
pub fn stitch(
    cores: impl IntoIterator<Item = (usize, usize, RasterImage)>,
    plan: &TilePlan,
) -> Result<RasterImage, TilingError> {
    let out = plan.geometry.output_size;
    let mut canvas = RasterImage::filled(plan.padded_width, plan.padded_height, [0, 0, 0])?;
    let mut seen = HashMap::with_capacity(plan.tile_count());
    for (row, col, core) in cores {
        let tile = plan.tile(row, col)?;
        if core.width() != out || core.height() != out {
            return Err(TilingError::WrongCoreSize {
                row,
                col,
                width: core.width(),
                height: core.height(),
                expected: out,
            });
        }
        if seen.insert((row, col), ()).is_some() {
            return Err(TilingError::MissingOrDuplicate { row, col });
        }
        paste_into(&core, &mut canvas, tile.core)?;
    }
    if let Some(t) = plan.tiles().find(|t| !seen.contains_key(&(t.row, t.col))) {
        return Err(TilingError::MissingOrDuplicate {
            row: t.row,
            col: t.col,
        });
    }
    Ok(crop(
        &canvas,
        Region::new(0, 0, plan.slide_width, plan.slide_height),
    )?)
}
