//! Patch translators: identity, deterministic chroma matching, and external
//! models reached over a framed stdin/stdout protocol.

use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use crate::histogram::ChromaHistogram;
use crate::image::RasterImage;

mod chroma;
mod external;
pub mod protocol;

pub use chroma::{ChromaMatchConfig, ChromaMatchTranslator};
pub use external::{ExternalTranslator, DEFAULT_TIMEOUT};
pub use protocol::{serve_echo, EchoFault, ProtocolViolation};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum TranslateError {
    #[error("protocol violation: {0}")]
    ProtocolViolation(ProtocolViolation),
    #[error("tile_id mismatch: {}, got {got}", match expected {
        Some(id) => format!("expected {id}"),
        None => "no matching request in flight".to_string(),
    })]
    TileIdMismatch { expected: Option<u32>, got: u32 },
    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("timeout after {0:?}")]
    Timeout(Duration),
    #[error("translator process exited: {0}")]
    ProcessExited(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("empty histogram condition")]
    EmptyCondition,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl From<ProtocolViolation> for TranslateError {
    fn from(v: ProtocolViolation) -> Self {
        TranslateError::ProtocolViolation(v)
    }
}

#[derive(Debug, Clone)]
pub struct TranslationRequest {
    pub tile_id: u32,
    pub tile: RasterImage,
    /// Color condition. Translators that need one fail with
    /// [`TranslateError::EmptyCondition`] when it is absent.
    pub condition: Option<Arc<ChromaHistogram>>,
    pub noise_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranslationResult {
    pub tile_id: u32,
    pub tile: RasterImage,
}

pub trait Translator: Send + Sync {
    fn name(&self) -> &'static str;

    fn translate(&self, req: &TranslationRequest) -> Result<TranslationResult, TranslateError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityTranslator;

impl Translator for IdentityTranslator {
    fn name(&self) -> &'static str {
        "identity"
    }

    fn translate(&self, req: &TranslationRequest) -> Result<TranslationResult, TranslateError> {
        Ok(TranslationResult {
            tile_id: req.tile_id,
            tile: req.tile.clone(),
        })
    }
}
