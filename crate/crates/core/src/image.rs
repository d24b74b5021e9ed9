//! 8-bit RGB rasters, region arithmetic, file I/O and tissue estimation.
//!
//! Everything downstream (tiling, histograms, translators, metrics) works on
//! [`RasterImage`], a plain row-major `RGB8` buffer. PNG and binary PPM are the
//! only on-disk formats.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageFormat, ImageReader, RgbImage};
use thiserror::Error;

pub const CHANNELS: usize = 3;

/// Largest accepted width or height. Anything bigger is treated as a
/// corrupt header rather than allocated.
pub const MAX_DIMENSION: usize = 1 << 20;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("unreadable file {path}: {reason}")]
    Unreadable { path: String, reason: String },
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("dimension overflow: {width}x{height}")]
    DimensionOverflow { width: usize, height: usize },
    #[error("invalid raster: {0}")]
    InvalidRaster(String),
    #[error("region {region:?} out of bounds for {width}x{height} image")]
    OutOfBounds {
        region: Region,
        width: usize,
        height: usize,
    },
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("pad {pad} >= dimension {dim}")]
    PadTooLarge { pad: usize, dim: usize },
    #[error("write failed for {path}: {reason}")]
    Write { path: String, reason: String },
}

/// Row-major 8-bit RGB raster.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct RasterImage {
    width: usize,
    height: usize,
    samples: Vec<u8>,
}

impl std::fmt::Debug for RasterImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RasterImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl RasterImage {
    pub fn new(width: usize, height: usize, samples: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::InvalidRaster(format!(
                "zero dimension {width}x{height}"
            )));
        }
        if width > MAX_DIMENSION || height > MAX_DIMENSION {
            return Err(ImageError::DimensionOverflow { width, height });
        }
        let expected = width * height * CHANNELS;
        if samples.len() != expected {
            return Err(ImageError::InvalidRaster(format!(
                "expected {expected} samples, got {}",
                samples.len()
            )));
        }
        Ok(Self {
            width,
            height,
            samples,
        })
    }

    /// A raster where every pixel is `rgb`.
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self, ImageError> {
        let samples = rgb
            .iter()
            .copied()
            .cycle()
            .take(width * height * CHANNELS)
            .collect();
        Self::new(width, height, samples)
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [u8; 3],
    ) -> Result<Self, ImageError> {
        let mut samples = Vec::with_capacity(width * height * CHANNELS);
        for y in 0..height {
            for x in 0..width {
                samples.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, samples)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        CHANNELS
    }

    pub fn samples(&self) -> &[u8] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<u8> {
        self.samples
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn full_region(&self) -> Region {
        Region::new(0, 0, self.width, self.height)
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * CHANNELS;
        [self.samples[i], self.samples[i + 1], self.samples[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * CHANNELS;
        self.samples[i..i + CHANNELS].copy_from_slice(&rgb);
    }

    pub fn pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.samples
            .chunks_exact(CHANNELS)
            .map(|p| [p[0], p[1], p[2]])
    }

    fn row(&self, y: usize) -> &[u8] {
        let stride = self.width * CHANNELS;
        &self.samples[y * stride..(y + 1) * stride]
    }

    fn to_rgb_image(&self) -> RgbImage {
        RgbImage::from_raw(self.width as u32, self.height as u32, self.samples.clone())
            .expect("sample length checked at construction")
    }

    /// Encode as PNG into memory.
    pub fn encode_png(&self) -> Result<Vec<u8>, ImageError> {
        let mut out = Cursor::new(Vec::new());
        self.to_rgb_image()
            .write_to(&mut out, ImageFormat::Png)
            .map_err(|e| ImageError::Write {
                path: "<memory>".into(),
                reason: e.to_string(),
            })?;
        Ok(out.into_inner())
    }
}

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Region {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Region {
    pub const fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.w && y >= self.y && y < self.y + self.h
    }

    fn check_within(&self, width: usize, height: usize) -> Result<(), ImageError> {
        let fits = self.w >= 1
            && self.h >= 1
            && self.x.checked_add(self.w).is_some_and(|r| r <= width)
            && self.y.checked_add(self.h).is_some_and(|b| b <= height);
        if fits {
            Ok(())
        } else {
            Err(ImageError::OutOfBounds {
                region: *self,
                width,
                height,
            })
        }
    }
}

/// Per-pixel tissue flag, `true` = tissue.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TissueMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl TissueMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self, ImageError> {
        if bits.len() != width * height {
            return Err(ImageError::InvalidRaster(format!(
                "mask needs {} bits, got {}",
                width * height,
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Thresholds of the saturation/luminance tissue rule.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TissueThresholds {
    pub sat_min: f64,
    pub lum_max: f64,
}

impl Default for TissueThresholds {
    fn default() -> Self {
        Self {
            sat_min: 0.05,
            lum_max: 0.95,
        }
    }
}

impl TissueThresholds {
    /// HSV saturation above `sat_min` and mean-RGB luminance below `lum_max`.
    #[inline]
    pub fn is_tissue(&self, rgb: [u8; 3]) -> bool {
        let max = rgb.iter().copied().max().unwrap_or(0);
        let min = rgb.iter().copied().min().unwrap_or(0);
        let saturation = if max == 0 {
            0.0
        } else {
            f64::from(max - min) / f64::from(max)
        };
        let luminance = (f64::from(rgb[0]) + f64::from(rgb[1]) + f64::from(rgb[2])) / (3.0 * 255.0);
        saturation > self.sat_min && luminance < self.lum_max
    }
}

pub fn load_image(path: impl AsRef<Path>) -> Result<RasterImage, ImageError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let reader = ImageReader::open(path)
        .map_err(|e| ImageError::Unreadable {
            path: shown.clone(),
            reason: e.to_string(),
        })?
        .with_guessed_format()
        .map_err(|e| ImageError::Unreadable {
            path: shown.clone(),
            reason: e.to_string(),
        })?;
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Pnm) => {}
        Some(other) => return Err(ImageError::UnsupportedFormat(format!("{other:?}"))),
        None => return Err(ImageError::UnsupportedFormat(shown)),
    }
    let decoded = reader.decode().map_err(|e| match e {
        image::ImageError::Limits(_) => ImageError::DimensionOverflow {
            width: usize::MAX,
            height: usize::MAX,
        },
        image::ImageError::Unsupported(u) => ImageError::UnsupportedFormat(u.to_string()),
        other => ImageError::Unreadable {
            path: shown.clone(),
            reason: other.to_string(),
        },
    })?;
    from_dynamic(decoded)
}

/// Decode PNG or PPM bytes already in memory.
pub fn decode_image(bytes: &[u8]) -> Result<RasterImage, ImageError> {
    let decoded = image::load_from_memory(bytes).map_err(|e| ImageError::Unreadable {
        path: "<memory>".into(),
        reason: e.to_string(),
    })?;
    from_dynamic(decoded)
}

fn from_dynamic(decoded: DynamicImage) -> Result<RasterImage, ImageError> {
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    if w > MAX_DIMENSION || h > MAX_DIMENSION {
        return Err(ImageError::DimensionOverflow {
            width: w,
            height: h,
        });
    }
    // Gray is replicated, alpha dropped.
    let rgb = decoded.into_rgb8();
    RasterImage::new(w, h, rgb.into_raw())
}

/// Writes PNG or PPM chosen by the file extension.
pub fn save_image(img: &RasterImage, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let path = path.as_ref();
    let format = image_format_for(path)?;
    img.to_rgb_image()
        .save_with_format(path, format)
        .map_err(|e| ImageError::Write {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
}

pub(crate) fn image_format_for(path: &Path) -> Result<ImageFormat, ImageError> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    match ext.as_str() {
        "png" => Ok(ImageFormat::Png),
        "ppm" | "pnm" => Ok(ImageFormat::Pnm),
        _ => Err(ImageError::UnsupportedFormat(format!(
            "output extension {ext:?}"
        ))),
    }
}

/// Write to `path` through a sibling temporary file and an atomic rename.
pub fn save_image_atomic(img: &RasterImage, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let path = path.as_ref();
    let format = image_format_for(path)?;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let werr = |reason: String| ImageError::Write {
        path: path.display().to_string(),
        reason,
    };
    let mut tmp = tempfile::Builder::new()
        .prefix(".ccwsi-")
        .tempfile_in(dir)
        .map_err(|e| werr(e.to_string()))?;
    {
        let mut buffered = std::io::BufWriter::new(tmp.as_file_mut());
        img.to_rgb_image()
            .write_to(&mut buffered, format)
            .map_err(|e| werr(e.to_string()))?;
        std::io::Write::flush(&mut buffered).map_err(|e| werr(e.to_string()))?;
    }
    tmp.as_file().sync_all().map_err(|e| werr(e.to_string()))?;
    tmp.persist(path).map_err(|e| werr(e.to_string()))?;
    Ok(())
}

pub fn crop(img: &RasterImage, r: Region) -> Result<RasterImage, ImageError> {
    r.check_within(img.width, img.height)?;
    let mut samples = Vec::with_capacity(r.area() * CHANNELS);
    for y in r.y..r.y + r.h {
        let row = img.row(y);
        samples.extend_from_slice(&row[r.x * CHANNELS..(r.x + r.w) * CHANNELS]);
    }
    RasterImage::new(r.w, r.h, samples)
}

pub fn paste(src: &RasterImage, dst: &RasterImage, at: Region) -> Result<RasterImage, ImageError> {
    let mut out = dst.clone();
    paste_into(src, &mut out, at)?;
    Ok(out)
}

/// In-place variant of [`paste`].
pub fn paste_into(src: &RasterImage, dst: &mut RasterImage, at: Region) -> Result<(), ImageError> {
    if at.w != src.width || at.h != src.height {
        return Err(ImageError::DimensionMismatch {
            expected: (at.w, at.h),
            actual: (src.width, src.height),
        });
    }
    at.check_within(dst.width, dst.height)?;
    let dst_stride = dst.width * CHANNELS;
    for (sy, y) in (at.y..at.y + at.h).enumerate() {
        let start = y * dst_stride + at.x * CHANNELS;
        dst.samples[start..start + at.w * CHANNELS].copy_from_slice(src.row(sy));
    }
    Ok(())
}

/// Mirror index into `0..n` without repeating the edge sample, folding as
/// many times as needed. `n` must be at least 2 unless `i` is already inside.
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    if (0..n).contains(&i) {
        return i as usize;
    }
    debug_assert!(n >= 2, "reflection needs at least two samples");
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - m }) as usize
}

pub fn reflect_pad(
    img: &RasterImage,
    left: usize,
    right: usize,
    top: usize,
    bottom: usize,
) -> Result<RasterImage, ImageError> {
    for (pad, dim) in [
        (left, img.width),
        (right, img.width),
        (top, img.height),
        (bottom, img.height),
    ] {
        if pad > 0 && pad >= dim {
            return Err(ImageError::PadTooLarge { pad, dim });
        }
    }
    let w = img.width + left + right;
    let h = img.height + top + bottom;
    RasterImage::from_fn(w, h, |x, y| {
        let sx = reflect_index(x as isize - left as isize, img.width);
        let sy = reflect_index(y as isize - top as isize, img.height);
        img.pixel(sx, sy)
    })
}

pub fn compute_tissue_mask(img: &RasterImage, sat_min: f64, lum_max: f64) -> TissueMask {
    let rule = TissueThresholds { sat_min, lum_max };
    let bits = img.pixels().map(|p| rule.is_tissue(p)).collect();
    TissueMask {
        width: img.width,
        height: img.height,
        bits,
    }
}

pub fn tissue_portion(mask: &TissueMask) -> f64 {
    if mask.bits.is_empty() {
        return 0.0;
    }
    mask.count() as f64 / mask.bits.len() as f64
}

/// Box-filter downsampling. Partial edge blocks average the pixels present;
/// means round half up.
pub fn downsample(img: &RasterImage, factor: usize) -> Result<RasterImage, ImageError> {
    if factor == 0 {
        return Err(ImageError::InvalidRaster("downsample factor 0".into()));
    }
    if factor == 1 {
        return Ok(img.clone());
    }
    let w = img.width.div_ceil(factor);
    let h = img.height.div_ceil(factor);
    RasterImage::from_fn(w, h, |bx, by| {
        let x0 = bx * factor;
        let y0 = by * factor;
        let x1 = (x0 + factor).min(img.width);
        let y1 = (y0 + factor).min(img.height);
        let mut sums = [0u64; 3];
        for y in y0..y1 {
            for x in x0..x1 {
                let p = img.pixel(x, y);
                for c in 0..CHANNELS {
                    sums[c] += u64::from(p[c]);
                }
            }
        }
        let n = ((x1 - x0) * (y1 - y0)) as u64;
        // floor(sum/n + 1/2) in integers
        sums.map(|s| ((2 * s + n) / (2 * n)) as u8)
    })
}
