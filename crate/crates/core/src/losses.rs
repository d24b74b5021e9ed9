//! Objective terms of the restaining model as plain value functions.
//!
//! Nothing here is differentiable; these evaluate the adversarial term, the
//! feature-matching and detection terms, the Hellinger-style histogram loss,
//! its tissue-adaptive weight and the combined objective, so that trained
//! models and test fixtures can be checked against exact numbers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::histogram::ChromaHistogram;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("discriminator output {value} at index {index} outside (0, 1)")]
    LogSingularity { index: usize, value: f64 },
    #[error("tissue portion {0} outside [0, 1]")]
    TissuePortionOutOfRange(f64),
    #[error("negative loss component {name} = {value}")]
    NegativeComponent { name: &'static str, value: f64 },
    #[error("non-finite input {name} = {value}")]
    NonFinite { name: &'static str, value: f64 },
}

/// One probability per discriminator scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorOutputs {
    pub per_scale: [f64; 2],
}

impl DiscriminatorOutputs {
    pub fn new(scale1: f64, scale2: f64) -> Self {
        Self {
            per_scale: [scale1, scale2],
        }
    }

    fn check(&self) -> Result<(), LossError> {
        for (index, &value) in self.per_scale.iter().enumerate() {
            if !(value > 0.0 && value < 1.0) {
                return Err(LossError::LogSingularity { index, value });
            }
        }
        Ok(())
    }
}

/// A real-valued tensor flattened row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, LossError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(LossError::ShapeMismatch(format!(
                "shape {shape:?} holds {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureMapSet {
    pub layers: Vec<FeatureMap>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureReduction {
    /// Mean over layers of per-layer mean absolute difference.
    #[default]
    LayerMean,
    /// Sum over layers of per-layer mean absolute difference.
    LayerSum,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectionLossComponents {
    pub classification: f64,
    pub localization: f64,
    pub segmentation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_feat: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_feat: 10.0 }
    }
}

/// `0.5 * || sqrt(a) - sqrt(b) ||_2` over raw, equally long vectors.
pub fn hellinger_distance(a: &[f64], b: &[f64]) -> Result<f64, LossError> {
    if a.len() != b.len() {
        return Err(LossError::ShapeMismatch(format!(
            "{} vs {} entries",
            a.len(),
            b.len()
        )));
    }
    let sq: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x.max(0.0).sqrt() - y.max(0.0).sqrt();
            d * d
        })
        .sum();
    Ok(0.5 * sq.sqrt())
}

pub fn histogram_loss(h_g: &ChromaHistogram, h_s: &ChromaHistogram) -> Result<f64, LossError> {
    if h_g.bins() != h_s.bins() {
        return Err(LossError::ShapeMismatch(format!(
            "{} bins vs {} bins",
            h_g.bins(),
            h_s.bins()
        )));
    }
    hellinger_distance(h_g.values(), h_s.values())
}

/// Logistic sigmoid of the tissue portion; maps `[0, 1]` onto `[0.5, 0.731]`.
pub fn adaptive_weight(tissue_portion: f64) -> Result<f64, LossError> {
    if !(0.0..=1.0).contains(&tissue_portion) {
        return Err(LossError::TissuePortionOutOfRange(tissue_portion));
    }
    Ok(1.0 / (1.0 + (-tissue_portion).exp()))
}

/// `sum_i ln(real_i) + ln(1 - fake_i)`. No clamping.
pub fn gan_value(
    real_outputs: &DiscriminatorOutputs,
    fake_outputs: &DiscriminatorOutputs,
) -> Result<f64, LossError> {
    real_outputs.check()?;
    fake_outputs.check()?;
    Ok(real_outputs
        .per_scale
        .iter()
        .zip(&fake_outputs.per_scale)
        .map(|(r, f)| r.ln() + (1.0 - f).ln())
        .sum())
}

pub fn feature_matching_value(
    real: &FeatureMapSet,
    fake: &FeatureMapSet,
    reduction: FeatureReduction,
) -> Result<f64, LossError> {
    if real.layers.len() != fake.layers.len() {
        return Err(LossError::ShapeMismatch(format!(
            "{} layers vs {} layers",
            real.layers.len(),
            fake.layers.len()
        )));
    }
    if real.layers.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (i, (r, f)) in real.layers.iter().zip(&fake.layers).enumerate() {
        if r.shape != f.shape || r.data.len() != f.data.len() {
            return Err(LossError::ShapeMismatch(format!(
                "layer {i}: {:?} vs {:?}",
                r.shape, f.shape
            )));
        }
        if r.data.is_empty() {
            continue;
        }
        let l1: f64 = r.data.iter().zip(&f.data).map(|(a, b)| (a - b).abs()).sum();
        total += l1 / r.data.len() as f64;
    }
    Ok(match reduction {
        FeatureReduction::LayerMean => total / real.layers.len() as f64,
        FeatureReduction::LayerSum => total,
    })
}

pub fn detection_value(c: &DetectionLossComponents) -> Result<f64, LossError> {
    for (name, value) in [
        ("classification", c.classification),
        ("localization", c.localization),
        ("segmentation", c.segmentation),
    ] {
        if !value.is_finite() {
            return Err(LossError::NonFinite { name, value });
        }
        if value < 0.0 {
            return Err(LossError::NegativeComponent { name, value });
        }
    }
    Ok(c.classification + c.localization + c.segmentation)
}

/// `gan + lambda * feat + det + adaptive_weight(tissue) * hist`.
pub fn combined_objective(
    gan: f64,
    feat: f64,
    det: f64,
    hist: f64,
    tissue_portion: f64,
    weights: &LossWeights,
) -> Result<f64, LossError> {
    for (name, value) in [
        ("gan", gan),
        ("feat", feat),
        ("det", det),
        ("hist", hist),
        ("tissue_portion", tissue_portion),
        ("lambda_feat", weights.lambda_feat),
    ] {
        if !value.is_finite() {
            return Err(LossError::NonFinite { name, value });
        }
    }
    if weights.lambda_feat < 0.0 {
        return Err(LossError::NegativeComponent {
            name: "lambda_feat",
            value: weights.lambda_feat,
        });
    }
    Ok(gan + weights.lambda_feat * feat + det + adaptive_weight(tissue_portion)? * hist)
}
