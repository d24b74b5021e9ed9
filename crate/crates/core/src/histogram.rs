//! Intensity-weighted 2-D log-chroma histograms.
//!
//! For a pixel with channels scaled to `[0, 1]` and an anchor channel `c`
//! with companions `c1`, `c2`:
//!
//! ```text
//! u = ln((c + eps) / (c1 + eps))      v = ln((c + eps) / (c2 + eps))
//! ```
//!
//! The pixel adds its intensity `sqrt(R^2 + G^2 + B^2)` to the nearest bin of
//! the anchor's plane, one plane per anchor. Planes are normalized jointly so
//! that the whole histogram sums to 1.
//!
//! Accumulation is done in 2^-40 fixed point, which makes the result
//! independent of pixel order and of how the work is split across threads.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{RasterImage, TissueMask};

pub const DEFAULT_BINS: usize = 64;
pub const DEFAULT_EPSILON: f64 = 1e-6;
pub const DEFAULT_AXIS_LIMIT: f64 = 3.0;
pub const PLANES: usize = 3;

const SIDECAR_MAGIC: &[u8; 4] = b"CCH1";
const SIDECAR_HEADER_LEN: usize = 16;
const FIXED_POINT_SCALE: f64 = (1u64 << 40) as f64;
const ROWS_PER_CHUNK: usize = 64;

#[derive(Debug, Error)]
pub enum HistogramError {
    #[error("empty histogram source")]
    EmptySource,
    #[error("invalid histogram parameters: {0}")]
    InvalidParameters(String),
    #[error("mask {mask:?} does not match image {image:?}")]
    MaskMismatch {
        mask: (usize, usize),
        image: (usize, usize),
    },
    #[error("malformed sidecar: {0}")]
    MalformedSidecar(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Channel whose ratio to the other two defines a plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Anchor {
    #[default]
    Red,
    Green,
    Blue,
}

impl Anchor {
    pub const ALL: [Anchor; 3] = [Anchor::Red, Anchor::Green, Anchor::Blue];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Companion channels in fixed order: G,B for R; R,B for G; R,G for B.
    pub fn companions(self) -> (usize, usize) {
        match self {
            Anchor::Red => (1, 2),
            Anchor::Green => (0, 2),
            Anchor::Blue => (0, 1),
        }
    }
}

/// Bin layout shared by construction, statistics and the translator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramParams {
    pub bins: usize,
    pub epsilon: f64,
    /// Axes span `[-axis_limit, +axis_limit]`.
    pub axis_limit: f64,
}

impl Default for HistogramParams {
    fn default() -> Self {
        Self {
            bins: DEFAULT_BINS,
            epsilon: DEFAULT_EPSILON,
            axis_limit: DEFAULT_AXIS_LIMIT,
        }
    }
}

impl HistogramParams {
    pub fn with_bins(bins: usize) -> Self {
        Self {
            bins,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), HistogramError> {
        if self.bins < 2 || self.bins > u16::MAX as usize {
            return Err(HistogramError::InvalidParameters(format!(
                "bins {} outside [2, 65535]",
                self.bins
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(HistogramError::InvalidParameters(format!(
                "epsilon {} must be positive",
                self.epsilon
            )));
        }
        if !(self.axis_limit > 0.0 && self.axis_limit.is_finite()) {
            return Err(HistogramError::InvalidParameters(format!(
                "axis limit {} must be positive",
                self.axis_limit
            )));
        }
        Ok(())
    }

    pub fn bin_width(&self) -> f64 {
        2.0 * self.axis_limit / self.bins as f64
    }

    /// Nearest bin after clamping to the axis range.
    #[inline]
    pub fn bin_of(&self, value: f64) -> usize {
        let clamped = value.clamp(-self.axis_limit, self.axis_limit);
        let k = ((clamped + self.axis_limit) / self.bin_width()).floor() as usize;
        k.min(self.bins - 1)
    }

    pub fn bin_center(&self, k: usize) -> f64 {
        -self.axis_limit + (k as f64 + 0.5) * self.bin_width()
    }

    pub fn plane_len(&self) -> usize {
        self.bins * self.bins
    }
}

/// Log-chroma coordinates `(u, v)` of an 8-bit pixel for one anchor.
#[inline]
pub fn log_chroma(rgb: [u8; 3], anchor: Anchor, epsilon: f64) -> (f64, f64) {
    let f = |v: u8| f64::from(v) / 255.0 + epsilon;
    let (c1, c2) = anchor.companions();
    let a = f(rgb[anchor.index()]);
    ((a / f(rgb[c1])).ln(), (a / f(rgb[c2])).ln())
}

/// Euclidean norm of the pixel scaled to `[0, 1]`.
#[inline]
pub fn intensity(rgb: [u8; 3]) -> f64 {
    let sq: u32 = rgb.iter().map(|&v| u32::from(v) * u32::from(v)).sum();
    f64::from(sq).sqrt() / 255.0
}

/// Normalized 3-plane histogram, laid out `[plane][u_bin][v_bin]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChromaHistogram {
    params: HistogramParams,
    values: Vec<f64>,
}

impl ChromaHistogram {
    /// Wraps values that are already normalized.
    pub fn from_values(params: HistogramParams, values: Vec<f64>) -> Result<Self, HistogramError> {
        params.validate()?;
        let expected = PLANES * params.plane_len();
        if values.len() != expected {
            return Err(HistogramError::InvalidParameters(format!(
                "expected {expected} values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(HistogramError::InvalidParameters(
                "values must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > 1e-5 {
            return Err(HistogramError::InvalidParameters(format!(
                "values sum to {sum}, expected 1"
            )));
        }
        Ok(Self { params, values })
    }

    /// Normalizes arbitrary non-negative weights.
    pub fn from_weights(
        params: HistogramParams,
        weights: Vec<f64>,
    ) -> Result<Self, HistogramError> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(HistogramError::EmptySource);
        }
        Self::from_values(params, weights.into_iter().map(|w| w / total).collect())
    }

    pub fn params(&self) -> &HistogramParams {
        &self.params
    }

    pub fn bins(&self) -> usize {
        self.params.bins
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn plane(&self, anchor: Anchor) -> &[f64] {
        let n = self.params.plane_len();
        &self.values[anchor.index() * n..(anchor.index() + 1) * n]
    }

    pub fn get(&self, anchor: Anchor, u_bin: usize, v_bin: usize) -> f64 {
        self.plane(anchor)[u_bin * self.params.bins + v_bin]
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn to_sidecar_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(SIDECAR_HEADER_LEN + 4 * self.values.len());
        out.extend_from_slice(SIDECAR_MAGIC);
        out.extend_from_slice(&(self.params.bins as u32).to_le_bytes());
        out.extend_from_slice(&[0u8; 8]);
        for v in &self.values {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    /// Parses a sidecar. Epsilon and axis range are not stored and take
    /// their defaults.
    pub fn from_sidecar_bytes(bytes: &[u8]) -> Result<Self, HistogramError> {
        if bytes.len() < SIDECAR_HEADER_LEN {
            return Err(HistogramError::MalformedSidecar("short header".into()));
        }
        if &bytes[..4] != SIDECAR_MAGIC {
            return Err(HistogramError::MalformedSidecar("bad magic".into()));
        }
        let bins = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        if bytes[8..16].iter().any(|&b| b != 0) {
            return Err(HistogramError::MalformedSidecar(
                "reserved bytes not zero".into(),
            ));
        }
        let params = HistogramParams::with_bins(bins);
        params
            .validate()
            .map_err(|e| HistogramError::MalformedSidecar(e.to_string()))?;
        let body = &bytes[SIDECAR_HEADER_LEN..];
        if body.len() != 4 * PLANES * params.plane_len() {
            return Err(HistogramError::MalformedSidecar(format!(
                "body is {} bytes, expected {}",
                body.len(),
                4 * PLANES * params.plane_len()
            )));
        }
        let values = body
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        Self::from_values(params, values)
            .map_err(|e| HistogramError::MalformedSidecar(e.to_string()))
    }

    pub fn write_sidecar(&self, path: impl AsRef<Path>) -> Result<(), HistogramError> {
        let path = path.as_ref();
        let io = |source| HistogramError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut f = std::fs::File::create(path).map_err(io)?;
        f.write_all(&self.to_sidecar_bytes()).map_err(io)?;
        f.sync_all().map_err(io)
    }

    pub fn read_sidecar(path: impl AsRef<Path>) -> Result<Self, HistogramError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| HistogramError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_sidecar_bytes(&bytes)
    }

    /// Flat JSON array of the values, for debugging.
    pub fn to_json_array(&self) -> String {
        serde_json::to_string(&self.values).expect("f64 slice serializes")
    }
}

/// Per-anchor plane lookup tables for 8-bit input.
struct ChromaTables {
    log: [f64; 256],
}

impl ChromaTables {
    fn new(epsilon: f64) -> Self {
        let mut log = [0.0; 256];
        for (i, l) in log.iter_mut().enumerate() {
            *l = (i as f64 / 255.0 + epsilon).ln();
        }
        Self { log }
    }

    #[inline]
    fn uv(&self, rgb: [u8; 3], anchor: Anchor) -> (f64, f64) {
        let (c1, c2) = anchor.companions();
        let a = self.log[rgb[anchor.index()] as usize];
        (
            a - self.log[rgb[c1] as usize],
            a - self.log[rgb[c2] as usize],
        )
    }
}

#[inline]
fn fixed_weight(rgb: [u8; 3]) -> u128 {
    (intensity(rgb) * FIXED_POINT_SCALE).round() as u128
}

pub fn compute_histogram(
    img: &RasterImage,
    params: HistogramParams,
    mask: Option<&TissueMask>,
) -> Result<ChromaHistogram, HistogramError> {
    params.validate()?;
    if let Some(m) = mask {
        if (m.width(), m.height()) != (img.width(), img.height()) {
            return Err(HistogramError::MaskMismatch {
                mask: (m.width(), m.height()),
                image: (img.width(), img.height()),
            });
        }
    }
    let tables = ChromaTables::new(params.epsilon);
    let plane_len = params.plane_len();
    let len = PLANES * plane_len;
    let width = img.width();
    let row_bytes = width * 3;

    let acc = img
        .samples()
        .par_chunks(row_bytes * ROWS_PER_CHUNK)
        .enumerate()
        .fold(
            || vec![0u128; len],
            |mut acc, (chunk_idx, chunk)| {
                let first = chunk_idx * ROWS_PER_CHUNK * width;
                for (i, p) in chunk.chunks_exact(3).enumerate() {
                    if let Some(m) = mask {
                        if !m.bits()[first + i] {
                            continue;
                        }
                    }
                    let rgb = [p[0], p[1], p[2]];
                    let w = fixed_weight(rgb);
                    if w == 0 {
                        continue;
                    }
                    for anchor in Anchor::ALL {
                        let (u, v) = tables.uv(rgb, anchor);
                        let idx = anchor.index() * plane_len
                            + params.bin_of(u) * params.bins
                            + params.bin_of(v);
                        acc[idx] += w;
                    }
                }
                acc
            },
        )
        .reduce(
            || vec![0u128; len],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );

    let total: u128 = acc.iter().sum();
    if total == 0 {
        return Err(HistogramError::EmptySource);
    }
    let total = total as f64;
    let values = acc.into_iter().map(|a| a as f64 / total).collect();
    Ok(ChromaHistogram { params, values })
}

/// Mass-weighted moments of one plane over bin centers.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlaneStats {
    pub mass: f64,
    pub mean_u: f64,
    pub mean_v: f64,
    pub sd_u: f64,
    pub sd_v: f64,
}

pub fn chroma_stats(h: &ChromaHistogram) -> [PlaneStats; PLANES] {
    Anchor::ALL.map(|a| plane_stats(h, a))
}

pub fn plane_stats(h: &ChromaHistogram, anchor: Anchor) -> PlaneStats {
    let p = h.params();
    let plane = h.plane(anchor);
    let mut mass = 0.0;
    let (mut su, mut sv) = (0.0, 0.0);
    for (i, row) in plane.chunks_exact(p.bins).enumerate() {
        let cu = p.bin_center(i);
        for (j, &m) in row.iter().enumerate() {
            mass += m;
            su += m * cu;
            sv += m * p.bin_center(j);
        }
    }
    if mass <= 0.0 {
        return PlaneStats::default();
    }
    let (mean_u, mean_v) = (su / mass, sv / mass);
    let (mut vu, mut vv) = (0.0, 0.0);
    for (i, row) in plane.chunks_exact(p.bins).enumerate() {
        let du = p.bin_center(i) - mean_u;
        for (j, &m) in row.iter().enumerate() {
            let dv = p.bin_center(j) - mean_v;
            vu += m * du * du;
            vv += m * dv * dv;
        }
    }
    PlaneStats {
        mass,
        mean_u,
        mean_v,
        sd_u: (vu / mass).sqrt(),
        sd_v: (vv / mass).sqrt(),
    }
}
