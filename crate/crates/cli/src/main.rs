//! `ccwsi`: seamless whole-slide virtual staining from the command line.
//!
//! Exit codes: 0 success, 2 invalid input or configuration, 3 failure while
//! running. Log verbosity comes from `CC_WSI_LOG` (e.g. `CC_WSI_LOG=debug`).

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use ccwsi_core::consistency::seam_discontinuity_with;
use ccwsi_core::histogram::HistogramParams;
use ccwsi_core::image::{load_image, TissueThresholds};
use ccwsi_core::pipeline::{
    run_eval, run_histogram, run_restain, EvalInputs, PipelineConfig, PipelineError,
    TranslatorKind, DEFAULT_CONDITION_FACTOR,
};
use ccwsi_core::tiling::{plan_tiles, TileGeometry};
use ccwsi_core::translators::protocol::FrameError;
use ccwsi_core::translators::{serve_echo, EchoFault, DEFAULT_TIMEOUT};
use ccwsi_study::{
    compute_stats, generate_schedule, ResponseLog, Study, StudyDefinition, StudyError,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{error, info};
use serde::Serialize;

const ADMIN_TOKEN_ENV: &str = "CC_WSI_ADMIN_TOKEN";

#[derive(Parser)]
#[command(
    name = "ccwsi",
    version,
    about = "Seamless whole-slide virtual staining toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tile, condition, translate and stitch a slide.
    Restain(RestainArgs),
    /// PSNR/RMSE and optional detection metrics for an image pair or two
    /// directories of patches.
    Eval(EvalArgs),
    /// Write the log-chroma histogram sidecar of a downsampled slide.
    Histogram(HistogramArgs),
    /// Seam discontinuity index of a stitched slide.
    Seam(SeamArgs),
    /// Blinded reader study.
    #[command(subcommand)]
    Study(StudyCommand),
    /// Reference translator process: echoes every tile back.
    #[command(hide = true)]
    EchoTranslator {
        #[arg(long, default_value = "none")]
        fault: EchoFault,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TranslatorArg {
    Identity,
    Chroma,
    External,
}

#[derive(Args)]
struct HistogramOpts {
    /// Bins per chroma axis.
    #[arg(long, default_value_t = 64)]
    bins: usize,
    #[arg(long, default_value_t = 1e-6)]
    epsilon: f64,
}

impl HistogramOpts {
    fn params(&self) -> HistogramParams {
        HistogramParams {
            bins: self.bins,
            epsilon: self.epsilon,
            ..HistogramParams::default()
        }
    }
}

#[derive(Args)]
struct RestainArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, value_enum, default_value = "identity")]
    translator: TranslatorArg,
    /// Seconds to wait for each external reply.
    #[arg(long, default_value_t = DEFAULT_TIMEOUT.as_secs_f64())]
    external_timeout: f64,
    /// Slide whose downsampled histogram conditions every tile.
    #[arg(long)]
    condition_image: Option<PathBuf>,
    /// Precomputed histogram sidecar; takes precedence over --condition-image.
    #[arg(long)]
    condition_hist: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_CONDITION_FACTOR)]
    condition_factor: usize,
    #[command(flatten)]
    histogram: HistogramOpts,
    /// Tile input and output sizes as INPUT:OUTPUT.
    #[arg(long, default_value = "256:192")]
    geometry: TileGeometry,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = TissueThresholds::default().sat_min)]
    sat_min: f64,
    #[arg(long, default_value_t = TissueThresholds::default().lum_max)]
    lum_max: f64,
    /// Ground-truth slide for PSNR/RMSE in the report.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Where to write the JSON report (default: stdout).
    #[arg(long)]
    report: Option<PathBuf>,
    /// External translator command, after `--`.
    #[arg(last = true)]
    external_cmd: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    synthetic: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Predicted detections (JSON array of {x, y, w, h, score}).
    #[arg(long)]
    pred: Option<PathBuf>,
    /// Ground-truth detections.
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    iou: Option<f64>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct HistogramArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_CONDITION_FACTOR)]
    factor: usize,
    #[command(flatten)]
    histogram: HistogramOpts,
    /// Also write the histogram as a flat JSON array.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct SeamArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long, default_value = "256:192")]
    geometry: TileGeometry,
    /// Distance of the baseline rows/columns from each seam.
    #[arg(long, default_value_t = 3)]
    offset: usize,
}

#[derive(Subcommand)]
enum StudyCommand {
    /// Run the review API.
    Serve {
        #[arg(long)]
        definition: PathBuf,
        /// Append-only response log (NDJSON).
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Token for /api/stats; falls back to $CC_WSI_ADMIN_TOKEN.
        #[arg(long)]
        admin_token: Option<String>,
        /// Directory of client assets served for non-API paths.
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
    /// Print the full (unblinded) schedule as JSON.
    Schedule {
        #[arg(long)]
        definition: PathBuf,
    },
    /// Print statistics computed from a response log.
    Stats {
        #[arg(long)]
        definition: PathBuf,
        #[arg(long)]
        log: PathBuf,
    },
}

/// Error carrying its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn invalid(e: impl Into<anyhow::Error>) -> Self {
        Self {
            code: 2,
            error: e.into(),
        }
    }

    fn runtime(e: impl Into<anyhow::Error>) -> Self {
        Self {
            code: 3,
            error: e.into(),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Self {
            code: e.exit_code() as u8,
            error: e.into(),
        }
    }
}

impl From<StudyError> for Failure {
    fn from(e: StudyError) -> Self {
        let code = match e {
            StudyError::Io(_) | StudyError::Image(_) => 3,
            _ => 2,
        };
        Self {
            code,
            error: e.into(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn emit(value: &impl Serialize, to: Option<&Path>) -> CmdResult {
    let text = serde_json::to_string_pretty(value).map_err(Failure::runtime)?;
    match to {
        Some(p) => std::fs::write(p, text + "\n")
            .with_context(|| format!("writing {}", p.display()))
            .map_err(Failure::runtime),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn restain(a: RestainArgs) -> CmdResult {
    let translator = match a.translator {
        TranslatorArg::Identity => TranslatorKind::Identity,
        TranslatorArg::Chroma => TranslatorKind::Chroma,
        TranslatorArg::External => TranslatorKind::External {
            command: a.external_cmd.clone(),
            timeout_secs: a.external_timeout,
        },
    };
    if !a.external_cmd.is_empty() && !matches!(a.translator, TranslatorArg::External) {
        return Err(Failure::invalid(anyhow::anyhow!(
            "a command after `--` needs --translator external"
        )));
    }
    let config = PipelineConfig {
        geometry: a.geometry,
        translator,
        histogram: a.histogram.params(),
        condition_image: a.condition_image,
        condition_hist: a.condition_hist,
        condition_factor: a.condition_factor,
        workers: a.workers,
        tissue: TissueThresholds {
            sat_min: a.sat_min,
            lum_max: a.lum_max,
        },
        seed: a.seed,
        truth: a.truth,
    };
    match run_restain(&config, &a.input, &a.output) {
        Ok(report) => {
            info!(
                "wrote {} ({} tiles, {:.0} ms)",
                a.output.display(),
                report.tile_count,
                report.total_millis
            );
            emit(&report, a.report.as_deref())
        }
        Err(PipelineError::TileFailures { failures, report }) => {
            emit(&report, a.report.as_deref())?;
            Err(PipelineError::TileFailures { failures, report }.into())
        }
        Err(e) => Err(e.into()),
    }
}

fn eval(a: EvalArgs) -> CmdResult {
    let report = run_eval(&EvalInputs {
        synthetic: a.synthetic,
        truth: a.truth,
        detections_pred: a.pred,
        detections_gt: a.gt,
        iou_threshold: a.iou,
    })?;
    emit(&report, a.report.as_deref())
}

fn histogram(a: HistogramArgs) -> CmdResult {
    let report = run_histogram(
        &a.image,
        a.histogram.params(),
        a.factor,
        &a.out,
        a.json.as_deref(),
    )?;
    emit(&report, None)
}

fn seam(a: SeamArgs) -> CmdResult {
    let img = load_image(&a.image).map_err(Failure::invalid)?;
    let plan = plan_tiles(img.width(), img.height(), a.geometry).map_err(Failure::invalid)?;
    let report = seam_discontinuity_with(&img, &plan, a.offset).map_err(Failure::runtime)?;
    emit(&report, None)
}

fn study(cmd: StudyCommand) -> CmdResult {
    match cmd {
        StudyCommand::Serve {
            definition,
            log,
            addr,
            admin_token,
            static_dir,
        } => {
            let token = admin_token
                .or_else(|| std::env::var(ADMIN_TOKEN_ENV).ok())
                .filter(|t| !t.is_empty())
                .ok_or_else(|| {
                    Failure::invalid(anyhow::anyhow!(
                        "an admin token is required (--admin-token or ${ADMIN_TOKEN_ENV})"
                    ))
                })?;
            let study = Arc::new(Study::open(StudyDefinition::load(&definition)?, &log)?);
            info!(
                "study with {} cases, {} reviewers, log {}",
                study.definition().cases.len(),
                study.definition().reviewers.len(),
                log.display()
            );
            let app = ccwsi_study::http::router(study, &token, static_dir);
            let rt = tokio::runtime::Runtime::new().map_err(Failure::runtime)?;
            rt.block_on(ccwsi_study::http::serve(app, addr))
                .with_context(|| format!("serving on {addr}"))
                .map_err(Failure::runtime)
        }
        StudyCommand::Schedule { definition } => {
            let def = StudyDefinition::load(&definition)?;
            let schedule = ccwsi_study::generate_schedule(&def.case_ids(), def.seed)?;
            emit(&schedule, None)
        }
        StudyCommand::Stats { definition, log } => {
            let def = StudyDefinition::load(&definition)?;
            let schedule = generate_schedule(&def.case_ids(), def.seed)?;
            let responses = ResponseLog::read(&log)?;
            if let Some(r) = responses
                .iter()
                .find(|r| !def.reviewers.contains(&r.reviewer_id))
            {
                return Err(StudyError::UnknownReviewer(r.reviewer_id.clone()).into());
            }
            emit(&compute_stats(&responses, &schedule)?, None)
        }
    }
}

fn echo_translator(fault: EchoFault) -> CmdResult {
    let stdin = std::io::stdin().lock();
    let stdout = std::io::stdout().lock();
    match serve_echo(stdin, stdout, fault) {
        // the client hung up; nothing left to answer
        Err(FrameError::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => r.map_err(|e| Failure::runtime(anyhow::anyhow!("{e}"))),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CC_WSI_LOG", "info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Restain(a) => restain(a),
        Command::Eval(a) => eval(a),
        Command::Histogram(a) => histogram(a),
        Command::Seam(a) => seam(a),
        Command::Study(c) => study(c),
        Command::EchoTranslator { fault } => echo_translator(fault),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            error!("{:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
