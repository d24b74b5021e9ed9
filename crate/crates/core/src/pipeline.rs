//! End-to-end runs: tile a slide, condition, translate tiles in parallel,
//! stitch the center crops and report.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consistency::{seam_discontinuity, SeamReport};
use crate::eval::{
    match_and_score, parse_detections, psnr, rmse, summarize, BatchSummary, DetectionMetrics,
    PatchEvaluation, Psnr,
};
use crate::histogram::{compute_histogram, ChromaHistogram, HistogramParams};
use crate::image::{downsample, load_image, save_image_atomic, RasterImage, TissueThresholds};
use crate::rng::derive_seed;
use crate::tiling::{center_crop, extract_tile, plan_tiles, stitch, TileGeometry, TilePlan};
use crate::translators::{
    ChromaMatchConfig, ChromaMatchTranslator, ExternalTranslator, IdentityTranslator,
    TranslationRequest, Translator, DEFAULT_TIMEOUT,
};

pub const REPORT_VERSION: u32 = 1;
pub const DEFAULT_CONDITION_FACTOR: usize = 4;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{} of {} tiles failed; first at ({}, {}): {}", .failures.len(), .report.tile_count,
            .failures[0].row, .failures[0].col, .failures[0].error)]
    TileFailures {
        failures: Vec<TileFailure>,
        report: Box<RestainReport>,
    },
}

impl PipelineError {
    /// Process exit code: 2 for bad input or configuration, 3 for failures
    /// while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Validation(_) => 2,
            PipelineError::Runtime(_) | PipelineError::TileFailures { .. } => 3,
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Validation(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Runtime(e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TranslatorKind {
    Identity,
    Chroma,
    External {
        command: Vec<String>,
        timeout_secs: f64,
    },
}

impl TranslatorKind {
    pub fn external(command: Vec<String>) -> Self {
        TranslatorKind::External {
            command,
            timeout_secs: DEFAULT_TIMEOUT.as_secs_f64(),
        }
    }

    fn label(&self) -> &'static str {
        match self {
            TranslatorKind::Identity => "identity",
            TranslatorKind::Chroma => "chroma",
            TranslatorKind::External { .. } => "external",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub geometry: TileGeometry,
    pub translator: TranslatorKind,
    pub histogram: HistogramParams,
    /// Slide whose downsampled histogram conditions every tile.
    pub condition_image: Option<PathBuf>,
    /// Precomputed condition; wins over `condition_image`.
    pub condition_hist: Option<PathBuf>,
    pub condition_factor: usize,
    pub workers: usize,
    pub tissue: TissueThresholds,
    pub seed: u64,
    /// Ground truth slide for PSNR/RMSE in the report.
    pub truth: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            geometry: TileGeometry::default(),
            translator: TranslatorKind::Identity,
            histogram: HistogramParams::default(),
            condition_image: None,
            condition_hist: None,
            condition_factor: DEFAULT_CONDITION_FACTOR,
            workers: 1,
            tissue: TissueThresholds::default(),
            seed: 0,
            truth: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.workers == 0 {
            return Err(invalid("worker count must be at least 1"));
        }
        if self.condition_factor == 0 {
            return Err(invalid("condition factor must be at least 1"));
        }
        self.histogram.validate().map_err(invalid)?;
        TileGeometry::new(self.geometry.input_size(), self.geometry.output_size())
            .map_err(invalid)?;
        if let TranslatorKind::External {
            command,
            timeout_secs,
        } = &self.translator
        {
            if command.is_empty() {
                return Err(invalid("external translator needs a command"));
            }
            if !(*timeout_secs > 0.0 && timeout_secs.is_finite()) {
                return Err(invalid("external timeout must be positive"));
            }
        }
        if self.translator == TranslatorKind::Chroma
            && self.condition_hist.is_none()
            && self.condition_image.is_none()
        {
            return Err(invalid(
                "chroma translator needs --condition-image or --condition-hist",
            ));
        }
        Ok(())
    }
}

/// Histogram of `slide` after box downsampling by `factor`, background included.
pub fn condition_from_image(
    slide: &RasterImage,
    factor: usize,
    params: HistogramParams,
) -> Result<ChromaHistogram, PipelineError> {
    let small = downsample(slide, factor).map_err(invalid)?;
    compute_histogram(&small, params, None).map_err(invalid)
}

fn resolve_condition(
    config: &PipelineConfig,
) -> Result<Option<(ChromaHistogram, String)>, PipelineError> {
    if let Some(path) = &config.condition_hist {
        if config.condition_image.is_some() {
            warn!(
                "both condition sources given; using sidecar {}",
                path.display()
            );
        }
        let h = ChromaHistogram::read_sidecar(path).map_err(invalid)?;
        return Ok(Some((h, format!("sidecar:{}", path.display()))));
    }
    if let Some(path) = &config.condition_image {
        let img = load_image(path).map_err(invalid)?;
        let h = condition_from_image(&img, config.condition_factor, config.histogram)?;
        return Ok(Some((
            h,
            format!("image:{}@1/{}", path.display(), config.condition_factor),
        )));
    }
    Ok(None)
}

fn build_translator(config: &PipelineConfig) -> Result<Box<dyn Translator>, PipelineError> {
    Ok(match &config.translator {
        TranslatorKind::Identity => Box::new(IdentityTranslator),
        TranslatorKind::Chroma => Box::new(ChromaMatchTranslator::new(ChromaMatchConfig {
            epsilon: config.histogram.epsilon,
            tissue: config.tissue,
            ..ChromaMatchConfig::default()
        })),
        TranslatorKind::External {
            command,
            timeout_secs,
        } => Box::new(
            ExternalTranslator::spawn(command, Duration::from_secs_f64(*timeout_secs))
                .map_err(runtime)?,
        ),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileTiming {
    pub row: usize,
    pub col: usize,
    pub tile_id: u32,
    pub millis: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileFailure {
    pub row: usize,
    pub col: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestainReport {
    pub report_version: u32,
    pub status: RunStatus,
    pub input: String,
    pub output: String,
    pub translator: String,
    pub geometry: TileGeometry,
    pub slide_width: usize,
    pub slide_height: usize,
    pub rows: usize,
    pub cols: usize,
    pub tile_count: usize,
    pub workers: usize,
    pub condition: Option<String>,
    /// Completed tiles, row-major.
    pub tiles: Vec<TileTiming>,
    pub failures: Vec<TileFailure>,
    pub seam: Option<SeamReport>,
    pub psnr: Option<Psnr>,
    pub rmse: Option<f64>,
    pub total_millis: f64,
}

pub type TileOutcome = Result<(RasterImage, TileTiming), TileFailure>;

/// Translate the tiles of `slide` and stitch them back. Cores come back in
/// row-major order whatever the worker count.
pub fn restain_slide(
    slide: &RasterImage,
    plan: &TilePlan,
    translator: &dyn Translator,
    condition: Option<Arc<ChromaHistogram>>,
    seed: u64,
    workers: usize,
) -> Result<Vec<TileOutcome>, PipelineError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .thread_name(|i| format!("ccwsi-tile-{i}"))
        .build()
        .map_err(runtime)?;
    let tiles: Vec<_> = plan.tiles().collect();
    Ok(pool.install(|| {
        tiles
            .par_iter()
            .map(|t| {
                let started = Instant::now();
                let fail = |e: String| TileFailure {
                    row: t.row,
                    col: t.col,
                    error: e,
                };
                let tile_id = u32::try_from(t.row * plan.cols + t.col)
                    .map_err(|_| fail("tile index exceeds u32".into()))?;
                let tile =
                    extract_tile(slide, plan, t.row, t.col).map_err(|e| fail(e.to_string()))?;
                let req = TranslationRequest {
                    tile_id,
                    tile,
                    condition: condition.clone(),
                    noise_seed: derive_seed(seed, u64::from(tile_id)),
                };
                let out = translator
                    .translate(&req)
                    .map_err(|e| fail(e.to_string()))?;
                if out.tile_id != tile_id {
                    return Err(fail(format!(
                        "tile_id mismatch: {} vs {tile_id}",
                        out.tile_id
                    )));
                }
                let core =
                    center_crop(&out.tile, &plan.geometry).map_err(|e| fail(e.to_string()))?;
                Ok((
                    core,
                    TileTiming {
                        row: t.row,
                        col: t.col,
                        tile_id,
                        millis: started.elapsed().as_secs_f64() * 1e3,
                    },
                ))
            })
            .collect()
    }))
}

pub fn run_restain(
    config: &PipelineConfig,
    input: &Path,
    output: &Path,
) -> Result<RestainReport, PipelineError> {
    let started = Instant::now();
    config.validate()?;
    crate::image::image_format_for(output).map_err(invalid)?;
    let slide = load_image(input).map_err(invalid)?;
    let plan = plan_tiles(slide.width(), slide.height(), config.geometry).map_err(invalid)?;
    let context = plan.geometry.context();
    if slide.width() <= context || slide.height() <= context {
        return Err(invalid(format!(
            "slide {}x{} must exceed the {context}-pixel context in both dimensions",
            slide.width(),
            slide.height()
        )));
    }
    let truth = match &config.truth {
        Some(p) => {
            let t = load_image(p).map_err(invalid)?;
            if (t.width(), t.height()) != (slide.width(), slide.height()) {
                return Err(invalid(format!(
                    "truth {}x{} does not match slide {}x{}",
                    t.width(),
                    t.height(),
                    slide.width(),
                    slide.height()
                )));
            }
            Some(t)
        }
        None => None,
    };
    let condition = resolve_condition(config)?;
    let (condition, condition_label) = match condition {
        Some((h, label)) => (Some(Arc::new(h)), Some(label)),
        None => (None, None),
    };
    let translator = build_translator(config)?;
    info!(
        "restaining {} ({}x{}, {} tiles) with {} on {} workers",
        input.display(),
        slide.width(),
        slide.height(),
        plan.tile_count(),
        translator.name(),
        config.workers
    );

    let results = restain_slide(
        &slide,
        &plan,
        translator.as_ref(),
        condition,
        config.seed,
        config.workers,
    )?;
    drop(translator);

    let mut report = RestainReport {
        report_version: REPORT_VERSION,
        status: RunStatus::Ok,
        input: input.display().to_string(),
        output: output.display().to_string(),
        translator: config.translator.label().to_string(),
        geometry: plan.geometry,
        slide_width: plan.slide_width,
        slide_height: plan.slide_height,
        rows: plan.rows,
        cols: plan.cols,
        tile_count: plan.tile_count(),
        workers: config.workers,
        condition: condition_label,
        tiles: Vec::new(),
        failures: Vec::new(),
        seam: None,
        psnr: None,
        rmse: None,
        total_millis: 0.0,
    };
    let mut cores = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok((core, timing)) => {
                cores.push((timing.row, timing.col, core));
                report.tiles.push(timing);
            }
            Err(f) => report.failures.push(f),
        }
    }
    if !report.failures.is_empty() {
        report.status = RunStatus::Failed;
        report.total_millis = started.elapsed().as_secs_f64() * 1e3;
        return Err(PipelineError::TileFailures {
            failures: report.failures.clone(),
            report: Box::new(report),
        });
    }

    let stitched = stitch(cores, &plan).map_err(runtime)?;
    report.seam = Some(seam_discontinuity(&stitched, &plan).map_err(runtime)?);
    if let Some(t) = &truth {
        report.psnr = Some(psnr(&stitched, t, 255.0).map_err(runtime)?);
        report.rmse = Some(rmse(&stitched, t).map_err(runtime)?);
    }
    save_image_atomic(&stitched, output).map_err(runtime)?;
    report.total_millis = started.elapsed().as_secs_f64() * 1e3;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub report_version: u32,
    pub patches: Vec<PatchEvaluation>,
    pub summary: BatchSummary,
}

#[derive(Debug, Clone, Default)]
pub struct EvalInputs {
    pub synthetic: PathBuf,
    pub truth: PathBuf,
    pub detections_pred: Option<PathBuf>,
    pub detections_gt: Option<PathBuf>,
    pub iou_threshold: Option<f64>,
}

fn read_detections(path: &Path) -> Result<Vec<crate::eval::DetectionBox>, PipelineError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    parse_detections(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn evaluate_pair(
    name: String,
    synthetic: &Path,
    truth: &Path,
    dets: Option<(&Path, &Path)>,
    iou_threshold: f64,
) -> Result<PatchEvaluation, PipelineError> {
    let a = load_image(synthetic).map_err(invalid)?;
    let b = load_image(truth).map_err(invalid)?;
    let detection: Option<DetectionMetrics> = match dets {
        Some((p, g)) => Some(
            match_and_score(&read_detections(p)?, &read_detections(g)?, iou_threshold)
                .map_err(invalid)?,
        ),
        None => None,
    };
    Ok(PatchEvaluation {
        name,
        psnr: psnr(&a, &b, 255.0).map_err(invalid)?,
        rmse: rmse(&a, &b).map_err(invalid)?,
        detection,
    })
}

/// Evaluate a single pair of files, or two directories paired by file name.
/// In directory mode detection files are looked up as `<stem>.json` in the
/// detection directories.
pub fn run_eval(inputs: &EvalInputs) -> Result<EvalReport, PipelineError> {
    let iou = inputs
        .iou_threshold
        .unwrap_or(crate::eval::DEFAULT_IOU_THRESHOLD);
    if inputs.detections_pred.is_some() != inputs.detections_gt.is_some() {
        return Err(invalid(
            "detections need both predicted and ground-truth files",
        ));
    }
    let dets = inputs
        .detections_pred
        .as_deref()
        .zip(inputs.detections_gt.as_deref());

    let patches = if inputs.synthetic.is_dir() {
        if !inputs.truth.is_dir() {
            return Err(invalid("synthetic is a directory but truth is not"));
        }
        let mut names: Vec<_> = std::fs::read_dir(&inputs.synthetic)
            .map_err(invalid)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| {
                matches!(
                    p.extension()
                        .and_then(|e| e.to_str())
                        .map(str::to_ascii_lowercase)
                        .as_deref(),
                    Some("png" | "ppm")
                )
            })
            .collect();
        names.sort();
        if names.is_empty() {
            return Err(invalid("no images in synthetic directory"));
        }
        let mut out = Vec::with_capacity(names.len());
        for syn in names {
            let file = syn.file_name().unwrap().to_owned();
            let stem = syn.file_stem().unwrap().to_string_lossy().to_string();
            let truth = inputs.truth.join(&file);
            let det_paths = dets.map(|(p, g)| {
                (
                    p.join(format!("{stem}.json")),
                    g.join(format!("{stem}.json")),
                )
            });
            out.push(evaluate_pair(
                file.to_string_lossy().into_owned(),
                &syn,
                &truth,
                det_paths.as_ref().map(|(p, g)| (p.as_path(), g.as_path())),
                iou,
            )?);
        }
        out
    } else {
        vec![evaluate_pair(
            inputs.synthetic.display().to_string(),
            &inputs.synthetic,
            &inputs.truth,
            dets,
            iou,
        )?]
    };
    Ok(EvalReport {
        report_version: REPORT_VERSION,
        summary: summarize(&patches),
        patches,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramReport {
    pub report_version: u32,
    pub image: String,
    pub factor: usize,
    pub bins: usize,
    pub sum: f64,
    pub sidecar: String,
}

/// Downsample `image` by `factor`, histogram it and write the sidecar (and
/// optionally a JSON array next to it).
pub fn run_histogram(
    image: &Path,
    params: HistogramParams,
    factor: usize,
    out: &Path,
    json_out: Option<&Path>,
) -> Result<HistogramReport, PipelineError> {
    if factor == 0 {
        return Err(invalid("factor must be at least 1"));
    }
    let img = load_image(image).map_err(invalid)?;
    let h = condition_from_image(&img, factor, params)?;
    h.write_sidecar(out).map_err(runtime)?;
    if let Some(j) = json_out {
        std::fs::write(j, h.to_json_array()).map_err(runtime)?;
    }
    Ok(HistogramReport {
        report_version: REPORT_VERSION,
        image: image.display().to_string(),
        factor,
        bins: h.bins(),
        sum: h.total(),
        sidecar: out.display().to_string(),
    })
}

pub fn run_seam(image: &Path, geometry: TileGeometry) -> Result<SeamReport, PipelineError> {
    let img = load_image(image).map_err(invalid)?;
    let plan = plan_tiles(img.width(), img.height(), geometry).map_err(invalid)?;
    seam_discontinuity(&img, &plan).map_err(runtime)
}
