use serde::{Deserialize, Serialize};

use super::{TranslateError, TranslationRequest, TranslationResult, Translator};
use crate::histogram::{
    compute_histogram, intensity, log_chroma, plane_stats, Anchor, HistogramError, HistogramParams,
    DEFAULT_EPSILON,
};
use crate::image::{RasterImage, TissueMask, TissueThresholds};

const MIN_SOURCE_SD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChromaMatchConfig {
    pub anchor: Anchor,
    pub epsilon: f64,
    pub tissue: TissueThresholds,
}

impl Default for ChromaMatchConfig {
    fn default() -> Self {
        Self {
            anchor: Anchor::Red,
            epsilon: DEFAULT_EPSILON,
            tissue: TissueThresholds::default(),
        }
    }
}

/// Moves the log-chroma distribution of a tile's tissue pixels onto the
/// condition histogram's anchor plane by mean/sd matching, keeping each
/// pixel's intensity. Background pixels pass through untouched.
///
/// Source moments are read from the tile's own tissue histogram, built with
/// the condition's binning, so a tile conditioned on itself maps to itself.
#[derive(Debug, Clone, Default)]
pub struct ChromaMatchTranslator {
    config: ChromaMatchConfig,
}

impl ChromaMatchTranslator {
    pub fn new(config: ChromaMatchConfig) -> Self {
        Self { config }
    }

    pub fn config(&self) -> &ChromaMatchConfig {
        &self.config
    }
}

impl Translator for ChromaMatchTranslator {
    fn name(&self) -> &'static str {
        "chroma"
    }

    fn translate(&self, req: &TranslationRequest) -> Result<TranslationResult, TranslateError> {
        let condition = req
            .condition
            .as_ref()
            .ok_or(TranslateError::EmptyCondition)?;
        let target = plane_stats(condition, self.config.anchor);
        if target.mass.is_nan() || target.mass <= 0.0 {
            return Err(TranslateError::EmptyCondition);
        }
        let ChromaMatchConfig {
            anchor,
            epsilon,
            tissue,
        } = self.config;

        let tile = &req.tile;
        let is_tissue: Vec<bool> = tile.pixels().map(|p| tissue.is_tissue(p)).collect();
        if !is_tissue.iter().any(|&t| t) {
            return Ok(TranslationResult {
                tile_id: req.tile_id,
                tile: tile.clone(),
            });
        }
        let mask = TissueMask::new(tile.width(), tile.height(), is_tissue.clone())
            .map_err(|e| TranslateError::InvalidRequest(e.to_string()))?;
        let params = HistogramParams {
            epsilon,
            ..*condition.params()
        };
        let source = match compute_histogram(tile, params, Some(&mask)) {
            Ok(h) => plane_stats(&h, anchor),
            // all-black tissue carries no intensity mass
            Err(HistogramError::EmptySource) => {
                return Ok(TranslationResult {
                    tile_id: req.tile_id,
                    tile: tile.clone(),
                })
            }
            Err(e) => return Err(TranslateError::InvalidRequest(e.to_string())),
        };
        let (mean_u, mean_v) = (source.mean_u, source.mean_v);
        let (sd_u, sd_v) = (source.sd_u, source.sd_v);
        let gain_u = target.sd_u / sd_u.max(MIN_SOURCE_SD);
        let gain_v = target.sd_v / sd_v.max(MIN_SOURCE_SD);

        let (c1, c2) = anchor.companions();
        let mut samples = Vec::with_capacity(tile.samples().len());
        for (p, &t) in tile.pixels().zip(&is_tissue) {
            if !t {
                samples.extend_from_slice(&p);
                continue;
            }
            let (u, v) = log_chroma(p, anchor, epsilon);
            let u2 = (u - mean_u) * gain_u + target.mean_u;
            let v2 = (v - mean_v) * gain_v + target.mean_v;
            let mut rgb = [0.0f64; 3];
            rgb[anchor.index()] = 1.0;
            rgb[c1] = (-u2).exp();
            rgb[c2] = (-v2).exp();
            let norm = (rgb[0] * rgb[0] + rgb[1] * rgb[1] + rgb[2] * rgb[2]).sqrt();
            let scale = intensity(p) / norm;
            samples.extend(rgb.iter().map(|&c| quantize(c * scale)));
        }
        let tile = RasterImage::new(tile.width(), tile.height(), samples)
            .map_err(|e| TranslateError::InvalidRequest(e.to_string()))?;
        Ok(TranslationResult {
            tile_id: req.tile_id,
            tile,
        })
    }
}

#[inline]
fn quantize(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}
