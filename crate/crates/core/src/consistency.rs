//! Composite tiles (synthetic center, ground-truth border) and a seam
//! discontinuity index for stitched slides.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{crop, paste_into, ImageError, RasterImage, Region, CHANNELS};
use crate::tiling::TilePlan;

pub const DEFAULT_BASELINE_OFFSET: usize = 3;

#[derive(Debug, Error)]
pub enum ConsistencyError {
    #[error("invalid composite spec: {0}")]
    InvalidSpec(String),
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error(transparent)]
    Image(#[from] ImageError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompositeSpec {
    pub tile_size: usize,
    pub center_size: usize,
}

impl Default for CompositeSpec {
    fn default() -> Self {
        Self {
            tile_size: 256,
            center_size: 192,
        }
    }
}

impl CompositeSpec {
    pub fn center_region(&self) -> Result<Region, ConsistencyError> {
        if self.center_size == 0
            || self.center_size >= self.tile_size
            || !(self.tile_size - self.center_size).is_multiple_of(2)
        {
            return Err(ConsistencyError::InvalidSpec(format!(
                "center {} inside tile {}",
                self.center_size, self.tile_size
            )));
        }
        let off = (self.tile_size - self.center_size) / 2;
        Ok(Region::new(off, off, self.center_size, self.center_size))
    }
}

/// `synth` inside the centered square, `truth` everywhere else.
pub fn make_composite(
    synth: &RasterImage,
    truth: &RasterImage,
    spec: &CompositeSpec,
) -> Result<RasterImage, ConsistencyError> {
    let center = spec.center_region()?;
    for (name, img) in [("synth", synth), ("truth", truth)] {
        if img.width() != spec.tile_size || img.height() != spec.tile_size {
            return Err(ConsistencyError::SizeMismatch(format!(
                "{name} is {}x{}, expected {}",
                img.width(),
                img.height(),
                spec.tile_size
            )));
        }
    }
    let mut out = truth.clone();
    paste_into(&crop(synth, center)?, &mut out, center)?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeamValue {
    /// Column (vertical seam) or row (horizontal seam) of the boundary.
    pub position: usize,
    /// Excess discontinuity, averaged over channels.
    pub value: f64,
    pub per_channel: [f64; 3],
    pub raw: f64,
    pub baseline: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeamReport {
    pub vertical_seams: Vec<SeamValue>,
    pub horizontal_seams: Vec<SeamValue>,
    pub global_index: f64,
    pub global_per_channel: [f64; 3],
    /// Mean baseline discontinuity over all seams.
    pub baseline: f64,
}

pub fn seam_discontinuity(
    stitched: &RasterImage,
    plan: &TilePlan,
) -> Result<SeamReport, ConsistencyError> {
    seam_discontinuity_with(stitched, plan, DEFAULT_BASELINE_OFFSET)
}

pub fn seam_discontinuity_with(
    stitched: &RasterImage,
    plan: &TilePlan,
    baseline_offset: usize,
) -> Result<SeamReport, ConsistencyError> {
    if (stitched.width(), stitched.height()) != (plan.slide_width, plan.slide_height) {
        return Err(ConsistencyError::SizeMismatch(format!(
            "image {}x{} vs plan {}x{}",
            stitched.width(),
            stitched.height(),
            plan.slide_width,
            plan.slide_height
        )));
    }
    let (cols, rows) = plan.seam_positions();
    Ok(seam_report_at(stitched, &cols, &rows, baseline_offset))
}

/// Seam statistics at explicit boundary positions. A vertical seam at `c`
/// compares columns `c - 1` and `c`.
pub fn seam_report_at(
    img: &RasterImage,
    seam_cols: &[usize],
    seam_rows: &[usize],
    baseline_offset: usize,
) -> SeamReport {
    let vertical: Vec<SeamValue> = seam_cols
        .iter()
        .filter(|&&c| c >= 1 && c < img.width())
        .map(|&c| seam_value(c, img.width(), baseline_offset, |p| column_step(img, p)))
        .collect();
    let horizontal: Vec<SeamValue> = seam_rows
        .iter()
        .filter(|&&r| r >= 1 && r < img.height())
        .map(|&r| seam_value(r, img.height(), baseline_offset, |p| row_step(img, p)))
        .collect();

    let all: Vec<&SeamValue> = vertical.iter().chain(&horizontal).collect();
    let n = all.len() as f64;
    let (global_index, baseline, global_per_channel) = if all.is_empty() {
        (0.0, 0.0, [0.0; 3])
    } else {
        let mut per = [0.0; 3];
        for s in &all {
            for (acc, v) in per.iter_mut().zip(s.per_channel) {
                *acc += v;
            }
        }
        (
            all.iter().map(|s| s.value).sum::<f64>() / n,
            all.iter().map(|s| s.baseline).sum::<f64>() / n,
            per.map(|v| v / n),
        )
    };
    SeamReport {
        vertical_seams: vertical,
        horizontal_seams: horizontal,
        global_index,
        global_per_channel,
        baseline,
    }
}

fn seam_value(
    position: usize,
    extent: usize,
    offset: usize,
    step: impl Fn(usize) -> [f64; 3],
) -> SeamValue {
    // Steps are defined for boundaries 1..extent-1.
    let lo = position.saturating_sub(offset).max(1);
    let hi = (position + offset).min(extent - 1);
    let at = step(position);
    let (a, b) = (step(lo), step(hi));
    let mut per_channel = [0.0; 3];
    let mut base = [0.0; 3];
    for c in 0..CHANNELS {
        base[c] = 0.5 * (a[c] + b[c]);
        per_channel[c] = (at[c] - base[c]).max(0.0);
    }
    SeamValue {
        position,
        value: per_channel.iter().sum::<f64>() / 3.0,
        per_channel,
        raw: at.iter().sum::<f64>() / 3.0,
        baseline: base.iter().sum::<f64>() / 3.0,
    }
}

/// Mean |I(r, c) - I(r, c-1)| over rows, per channel.
fn column_step(img: &RasterImage, c: usize) -> [f64; 3] {
    let mut sums = [0u64; 3];
    for y in 0..img.height() {
        let (p, q) = (img.pixel(c, y), img.pixel(c - 1, y));
        for ch in 0..CHANNELS {
            sums[ch] += u64::from(p[ch].abs_diff(q[ch]));
        }
    }
    sums.map(|s| s as f64 / img.height() as f64)
}

fn row_step(img: &RasterImage, r: usize) -> [f64; 3] {
    let mut sums = [0u64; 3];
    for x in 0..img.width() {
        let (p, q) = (img.pixel(x, r), img.pixel(x, r - 1));
        for ch in 0..CHANNELS {
            sums[ch] += u64::from(p[ch].abs_diff(q[ch]));
        }
    }
    sums.map(|s| s as f64 / img.width() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tiling::{plan_tiles, TileGeometry};

    #[test]
    fn composite_black_white_counts() {
        let synth = RasterImage::filled(256, 256, [0, 0, 0]).unwrap();
        let truth = RasterImage::filled(256, 256, [255, 255, 255]).unwrap();
        let out = make_composite(&synth, &truth, &CompositeSpec::default()).unwrap();
        let black = out.pixels().filter(|p| *p == [0, 0, 0]).count();
        let white = out.pixels().filter(|p| *p == [255, 255, 255]).count();
        assert_eq!(black, 192 * 192);
        assert_eq!(white, 28672);
        assert_eq!(out.pixel(0, 0), [255, 255, 255]);
        assert_eq!(out.pixel(128, 128), [0, 0, 0]);
    }

    #[test]
    fn composite_identity_and_errors() {
        let t = RasterImage::from_fn(256, 256, |x, y| [x as u8, y as u8, 3]).unwrap();
        assert_eq!(
            make_composite(&t, &t, &CompositeSpec::default()).unwrap(),
            t
        );
        let small = RasterImage::filled(10, 10, [0; 3]).unwrap();
        assert!(make_composite(&small, &t, &CompositeSpec::default()).is_err());
        let bad = CompositeSpec {
            tile_size: 256,
            center_size: 191,
        };
        assert!(make_composite(&t, &t, &bad).is_err());
    }

    #[test]
    fn constant_image_has_no_seams() {
        let img = RasterImage::filled(500, 400, [80, 90, 100]).unwrap();
        let plan = plan_tiles(500, 400, TileGeometry::default()).unwrap();
        let r = seam_discontinuity(&img, &plan).unwrap();
        assert_eq!(r.vertical_seams.len(), 2);
        assert_eq!(r.horizontal_seams.len(), 2);
        assert_eq!(r.global_index, 0.0);
    }

    #[test]
    fn stepped_blocks_measure_step() {
        let plan = plan_tiles(576, 384, TileGeometry::default()).unwrap();
        let img = RasterImage::from_fn(576, 384, |x, y| {
            let (r, c) = (y / 192, x / 192);
            [(10 * (r * plan.cols + c)) as u8; 3]
        })
        .unwrap();
        let rep = seam_discontinuity(&img, &plan).unwrap();
        for s in &rep.vertical_seams {
            assert_eq!(s.value, 10.0);
        }
        for s in &rep.horizontal_seams {
            assert_eq!(s.value, 30.0);
        }
    }

    #[test]
    fn single_tile_report_is_empty() {
        let img = RasterImage::filled(100, 100, [1, 2, 3]).unwrap();
        let plan = plan_tiles(100, 100, TileGeometry::default()).unwrap();
        let r = seam_discontinuity(&img, &plan).unwrap();
        assert!(r.vertical_seams.is_empty() && r.horizontal_seams.is_empty());
        assert_eq!(r.global_index, 0.0);
        let other = plan_tiles(101, 100, TileGeometry::default()).unwrap();
        assert!(seam_discontinuity(&img, &other).is_err());
    }

    #[test]
    fn color_only_step_registers() {
        let plan = plan_tiles(384, 192, TileGeometry::default()).unwrap();
        let img = RasterImage::from_fn(384, 192, |x, _| {
            if x < 192 {
                [100, 100, 100]
            } else {
                [100, 130, 100]
            }
        })
        .unwrap();
        let r = seam_discontinuity(&img, &plan).unwrap();
        assert_eq!(r.global_per_channel, [0.0, 30.0, 0.0]);
        assert_eq!(r.global_index, 10.0);
    }
}
