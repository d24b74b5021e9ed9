//! Image-quality metrics (RMSE, PSNR) and detection matching (P/R/F1).

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::RasterImage;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dimension mismatch: {a:?} vs {b:?}")]
    DimensionMismatch {
        a: (usize, usize),
        b: (usize, usize),
    },
    #[error("invalid IoU threshold {0}")]
    InvalidThreshold(f64),
    #[error("invalid detection box: {0}")]
    InvalidBox(String),
    #[error("malformed detections: {0}")]
    Malformed(String),
}

fn check_dims(a: &RasterImage, b: &RasterImage) -> Result<(), EvalError> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(EvalError::DimensionMismatch {
            a: (a.width(), a.height()),
            b: (b.width(), b.height()),
        });
    }
    Ok(())
}

fn squared_error_sum(a: &RasterImage, b: &RasterImage) -> u64 {
    a.samples()
        .iter()
        .zip(b.samples())
        .map(|(&x, &y)| {
            let d = u64::from(x.abs_diff(y));
            d * d
        })
        .sum()
}

/// Root mean squared difference over all samples, in 8-bit units.
pub fn rmse(a: &RasterImage, b: &RasterImage) -> Result<f64, EvalError> {
    check_dims(a, b)?;
    let n = a.samples().len() as f64;
    Ok((squared_error_sum(a, b) as f64 / n).sqrt())
}

/// PSNR in dB. Identical inputs give [`Psnr::Infinite`] rather than a cap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    Finite(f64),
    Infinite,
}

impl Psnr {
    pub fn value(&self) -> f64 {
        match self {
            Psnr::Finite(v) => *v,
            Psnr::Infinite => f64::INFINITY,
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, Psnr::Infinite)
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Finite(v) => write!(f, "{v:.4} dB"),
            Psnr::Infinite => f.write_str("∞"),
        }
    }
}

// JSON has no infinity; the marker is the string "inf".
impl Serialize for Psnr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Psnr::Finite(v) => s.serialize_f64(*v),
            Psnr::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Psnr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Psnr::Finite(v)),
            Raw::Str(s) if s == "inf" => Ok(Psnr::Infinite),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("bad PSNR marker {s:?}"))),
        }
    }
}

pub fn psnr(a: &RasterImage, b: &RasterImage, peak: f64) -> Result<Psnr, EvalError> {
    check_dims(a, b)?;
    if squared_error_sum(a, b) == 0 {
        return Ok(Psnr::Infinite);
    }
    Ok(Psnr::Finite(20.0 * (peak / rmse(a, b)?).log10()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    #[serde(default = "default_score")]
    pub score: f64,
}

fn default_score() -> f64 {
    1.0
}

impl DetectionBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64, score: f64) -> Self {
        Self { x, y, w, h, score }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let finite = [self.x, self.y, self.w, self.h, self.score]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.w < 1.0 || self.h < 1.0 || !(0.0..=1.0).contains(&self.score) {
            return Err(EvalError::InvalidBox(format!("{self:?}")));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

pub fn iou(a: &DetectionBox, b: &DetectionBox) -> f64 {
    let ix = ((a.x + a.w).min(b.x + b.w) - a.x.max(b.x)).max(0.0);
    let iy = ((a.y + a.h).min(b.y + b.h) - a.y.max(b.y)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub n_pred: usize,
    pub n_gt: usize,
}

impl DetectionMetrics {
    /// P, R and F1 from counts. Both lists empty scores 1; one side empty
    /// makes the undefined ratio 0.
    pub fn from_counts(true_positives: usize, n_pred: usize, n_gt: usize) -> Self {
        if n_pred == 0 && n_gt == 0 {
            return Self {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0,
                true_positives,
                n_pred,
                n_gt,
            };
        }
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let precision = ratio(true_positives, n_pred);
        let recall = ratio(true_positives, n_gt);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
            true_positives,
            n_pred,
            n_gt,
        }
    }
}

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

/// Greedy score-ordered matching: each prediction, highest score first,
/// takes the unmatched ground truth with the largest IoU at or above the
/// threshold. Ties in score keep input order.
pub fn match_and_score(
    preds: &[DetectionBox],
    gts: &[DetectionBox],
    iou_threshold: f64,
) -> Result<DetectionMetrics, EvalError> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(EvalError::InvalidThreshold(iou_threshold));
    }
    for b in preds.iter().chain(gts) {
        b.validate()?;
    }
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score));

    let mut taken = vec![false; gts.len()];
    let mut tp = 0;
    for &p in &order {
        let best = gts
            .iter()
            .enumerate()
            .filter(|(g, _)| !taken[*g])
            .map(|(g, gt)| (g, iou(&preds[p], gt)))
            .filter(|(_, v)| *v >= iou_threshold)
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
        if let Some((g, _)) = best {
            taken[g] = true;
            tp += 1;
        }
    }
    Ok(DetectionMetrics::from_counts(tp, preds.len(), gts.len()))
}

pub fn parse_detections(json: &str) -> Result<Vec<DetectionBox>, EvalError> {
    let boxes: Vec<DetectionBox> =
        serde_json::from_str(json).map_err(|e| EvalError::Malformed(e.to_string()))?;
    for b in &boxes {
        b.validate()?;
    }
    Ok(boxes)
}

/// Metrics for one synthetic/truth pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchEvaluation {
    pub name: String,
    pub psnr: Psnr,
    pub rmse: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detection: Option<DetectionMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub patches: usize,
    /// Mean over finite PSNR values; identical pairs are counted separately.
    pub mean_psnr: Option<f64>,
    pub infinite_psnr: usize,
    pub mean_rmse: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_recall: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_f1: Option<f64>,
}

pub fn summarize(patches: &[PatchEvaluation]) -> BatchSummary {
    let mean = |xs: &[f64]| {
        if xs.is_empty() {
            None
        } else {
            Some(xs.iter().sum::<f64>() / xs.len() as f64)
        }
    };
    let finite: Vec<f64> = patches
        .iter()
        .filter_map(|p| match p.psnr {
            Psnr::Finite(v) => Some(v),
            Psnr::Infinite => None,
        })
        .collect();
    let rmses: Vec<f64> = patches.iter().map(|p| p.rmse).collect();
    let dets: Vec<DetectionMetrics> = patches.iter().filter_map(|p| p.detection).collect();
    let pick = |f: fn(&DetectionMetrics) -> f64| mean(&dets.iter().map(f).collect::<Vec<_>>());
    BatchSummary {
        patches: patches.len(),
        mean_psnr: mean(&finite),
        infinite_psnr: patches.len() - finite.len(),
        mean_rmse: mean(&rmses).unwrap_or(0.0),
        mean_precision: pick(|d| d.precision),
        mean_recall: pick(|d| d.recall),
        mean_f1: pick(|d| d.f1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn offset_pair() -> (RasterImage, RasterImage) {
        let a = RasterImage::from_fn(10, 6, |x, y| [(x * 20) as u8, (y * 30) as u8, 100]).unwrap();
        let b = RasterImage::from_fn(10, 6, |x, y| [(x * 20 + 1) as u8, (y * 30 + 1) as u8, 101])
            .unwrap();
        (a, b)
    }

    fn half_pair() -> (RasterImage, RasterImage) {
        let a = RasterImage::filled(4, 4, [0, 0, 0]).unwrap();
        let b = RasterImage::from_fn(4, 4, |x, _| if x < 2 { [255; 3] } else { [0; 3] }).unwrap();
        (a, b)
    }

    #[test]
    fn rmse_examples() {
        let (a, b) = offset_pair();
        assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        assert!((rmse(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        let (a, b) = half_pair();
        assert!((rmse(&a, &b).unwrap() - 180.312_229_2).abs() < 1e-6);
        let small = RasterImage::filled(2, 2, [0; 3]).unwrap();
        assert!(rmse(&a, &small).is_err());
    }

    #[test]
    fn psnr_examples() {
        let (a, b) = offset_pair();
        assert_eq!(psnr(&a, &a, 255.0).unwrap(), Psnr::Infinite);
        assert!((psnr(&a, &b, 255.0).unwrap().value() - 48.130_803_6).abs() < 1e-6);
        let (a, b) = half_pair();
        assert!((psnr(&a, &b, 255.0).unwrap().value() - 3.010_299_96).abs() < 1e-6);
        assert_eq!(Psnr::Infinite.to_string(), "∞");
        assert_eq!(serde_json::to_string(&Psnr::Infinite).unwrap(), "\"inf\"");
        let back: Psnr = serde_json::from_str("\"inf\"").unwrap();
        assert!(back.is_infinite());
    }

    #[test]
    fn iou_examples() {
        let a = DetectionBox::new(0.0, 0.0, 1.0, 1.0, 1.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &DetectionBox::new(5.0, 5.0, 1.0, 1.0, 1.0)), 0.0);
        let half = DetectionBox::new(0.5, 0.0, 1.0, 1.0, 1.0);
        assert!((iou(&a, &half) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn matching_examples() {
        let gts = vec![
            DetectionBox::new(0.0, 0.0, 10.0, 10.0, 1.0),
            DetectionBox::new(50.0, 50.0, 10.0, 10.0, 1.0),
        ];
        let m = match_and_score(&gts, &gts, 0.5).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));

        let preds = vec![
            DetectionBox::new(1.0, 0.0, 10.0, 10.0, 0.9),
            DetectionBox::new(200.0, 200.0, 10.0, 10.0, 0.8),
        ];
        let m = match_and_score(&preds, &gts, 0.5).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.5, 0.5, 0.5));
        assert_eq!(m.true_positives, 1);
    }

    #[test]
    fn empty_conventions() {
        let m = match_and_score(&[], &[], 0.5).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        let b = [DetectionBox::new(0.0, 0.0, 4.0, 4.0, 0.5)];
        let m = match_and_score(&b, &[], 0.5).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        let m = match_and_score(&[], &b, 0.5).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            match_and_score(&[], &[], 0.0),
            Err(EvalError::InvalidThreshold(_))
        ));
        assert!(match_and_score(&[], &[], 1.5).is_err());
        let bad = [DetectionBox::new(0.0, 0.0, 0.5, 4.0, 0.5)];
        assert!(match_and_score(&bad, &[], 0.5).is_err());
        assert!(parse_detections("[{\"x\":1}]").is_err());
        let ok = parse_detections(r#"[{"x":1,"y":2,"w":3,"h":4,"score":0.5}]"#).unwrap();
        assert_eq!(ok[0], DetectionBox::new(1.0, 2.0, 3.0, 4.0, 0.5));
    }

    #[test]
    fn summary_skips_infinite_psnr() {
        let p = |psnr, rmse| PatchEvaluation {
            name: String::new(),
            psnr,
            rmse,
            detection: None,
        };
        let s = summarize(&[
            p(Psnr::Finite(10.0), 2.0),
            p(Psnr::Infinite, 0.0),
            p(Psnr::Finite(20.0), 4.0),
        ]);
        assert_eq!(s.mean_psnr, Some(15.0));
        assert_eq!(s.infinite_psnr, 1);
        assert_eq!(s.mean_rmse, 2.0);
        assert_eq!(s.mean_f1, None);
    }
}
