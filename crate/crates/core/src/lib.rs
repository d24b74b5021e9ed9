//! Seamless whole-slide virtual staining: overlapping tiles with reflected
//! context, color-histogram conditioning, center-crop stitching, training
//! objectives and evaluation metrics.

pub mod consistency;
pub mod eval;
pub mod histogram;
pub mod image;
pub mod losses;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod tiling;
pub mod translators;

pub use consistency::{SeamReport, SeamValue};
pub use eval::{DetectionBox, DetectionMetrics, Psnr};
pub use histogram::{Anchor, ChromaHistogram, HistogramParams};
pub use image::{RasterImage, Region, TissueMask, TissueThresholds};
pub use pipeline::{PipelineConfig, PipelineError, RestainReport, TranslatorKind};
pub use rng::SplitMix64;
pub use tiling::{TileGeometry, TilePlan};
pub use translators::{TranslateError, TranslationRequest, TranslationResult, Translator};
