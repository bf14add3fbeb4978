//! `cpdewarp` command-line entry points.
//!
//! Each subcommand has a `cmd_*` function returning a serializable report, so the
//! binary and the tests share one code path. The binary prints the report as one
//! JSON line on stdout; failures print `{"error", "message", ...}` on stderr and
//! exit with [`EXIT_USAGE`], [`EXIT_DATA`] or [`EXIT_IO`].

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use cpdewarp_core::{
    common_valid_steps, dewarp, rescale_points, subsample_grid_rc, AnnotationRecord, BackwardMap, DewarpOptions,
    ImageBuffer, Method, Steps, Timings,
};
use cpdewarp_metrics::{map_endpoint_error, ms_ssim, SsimParams};
use cpdewarp_synth::{synthesize_dataset, SynthConfig, SynthError};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "cpdewarp", version, about = "Control-point document dewarping")]
pub struct Cli {
    /// Master seed for randomized subcommands.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Suppress log output.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rectify an image with its annotation.
    Dewarp(DewarpArgs),
    /// Generate a synthetic distorted dataset from flat scans.
    Synth(SynthArgs),
    /// Compare a rectified image (and optionally its map) with ground truth.
    Eval(EvalArgs),
    /// Inspect or subsample an annotation grid.
    #[command(subcommand)]
    Grid(GridCommand),
    /// Run the annotation HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DewarpArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub annotation: PathBuf,
    #[arg(long, default_value = "tps")]
    pub method: Method,
    /// Vertex step along both grid axes.
    #[arg(long, default_value_t = 1)]
    pub step: usize,
    /// Column step, when it should differ from `--step`.
    #[arg(long)]
    pub col_step: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Output size as WxH; defaults to the reference lattice span.
    #[arg(long)]
    pub out_size: Option<Size>,
    /// Fill for samples outside the image: `R,G,B` or a single gray level.
    #[arg(long, default_value = "255,255,255")]
    pub fill: Fill,
    /// Also write the backward map (CPBM) here.
    #[arg(long)]
    pub map_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub scans: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub count: usize,
    /// JSON synthesis config; missing fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, requires = "gt_map")]
    pub pred_map: Option<PathBuf>,
    #[arg(long, requires = "pred_map")]
    pub gt_map: Option<PathBuf>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum GridCommand {
    /// Print grid shape and valid vertex steps.
    Info {
        #[arg(long)]
        annotation: PathBuf,
    },
    /// Keep every `step`-th vertex along both axes.
    Subsample {
        #[arg(long)]
        annotation: PathBuf,
        #[arg(long)]
        step: usize,
        #[arg(long)]
        col_step: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long, env = "CPD_PORT", default_value_t = cpdewarp_service::DEFAULT_PORT)]
    pub port: u16,
    #[arg(long, env = "CPD_ROOT", default_value = "cpd-data")]
    pub root: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Size(pub u32, pub u32);

impl FromStr for Size {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (w, h) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("expected WxH, got {s:?}"))?;
        let parse = |v: &str| v.trim().parse::<u32>().ok().filter(|&v| v > 0);
        match (parse(w), parse(h)) {
            (Some(w), Some(h)) => Ok(Size(w, h)),
            _ => Err(format!("expected positive WxH, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fill(pub [u8; 3]);

impl FromStr for Fill {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Result<Vec<u8>, _> = s.split(',').map(|v| v.trim().parse::<u8>()).collect();
        match parts.as_deref() {
            Ok([g]) => Ok(Fill([*g; 3])),
            Ok([r, g, b]) => Ok(Fill([*r, *g, *b])),
            _ => Err(format!("expected R,G,B or a gray level in 0..=255, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Usage,
    Data,
    Io,
}

#[derive(Debug, Clone)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
    /// Extra fields merged into the JSON error.
    pub details: Value,
}

impl CliError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
            details: Value::Null,
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Usage, message)
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Usage => EXIT_USAGE,
            ErrorKind::Data => EXIT_DATA,
            ErrorKind::Io => EXIT_IO,
        }
    }

    pub fn to_json(&self) -> Value {
        let mut v = json!({ "error": self.kind, "message": self.message });
        if let Value::Object(extra) = &self.details {
            for (k, x) in extra {
                v[k] = x.clone();
            }
        }
        v
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<cpdewarp_core::Error> for CliError {
    fn from(e: cpdewarp_core::Error) -> Self {
        let kind = if e.is_data_error() { ErrorKind::Data } else { ErrorKind::Io };
        let details = match &e {
            cpdewarp_core::Error::InvalidStep { step, side, valid } => {
                json!({ "step": step, "side": side, "valid_steps": valid })
            }
            _ => Value::Null,
        };
        Self {
            kind,
            message: e.to_string(),
            details,
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Core(core) => core.into(),
            e if e.is_io() => Self::new(ErrorKind::Io, e.to_string()),
            e => Self::new(ErrorKind::Data, e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::new(ErrorKind::Io, format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DewarpReport {
    pub fit_ms: f64,
    pub eval_ms: f64,
    pub remap_ms: f64,
    pub total_ms: f64,
    pub method: Method,
    pub sites: usize,
    pub width: u32,
    pub height: u32,
}

/// Rectifies `--image` and writes the PNG.
///
/// An annotation made at a different resolution than the image is rescaled to the
/// image first (control points and reference lattice together).
pub fn cmd_dewarp(args: &DewarpArgs) -> CliResult<DewarpReport> {
    let record = AnnotationRecord::load(&args.annotation)?;
    record.validate()?;
    let image = ImageBuffer::load(&args.image)?;
    let mut control = record.control_grid()?;
    let mut reference = record.reference_spec()?;
    let (w, h) = image.dimensions();
    if (w, h) != record.image_size() {
        let (aw, ah) = record.image_size();
        control = rescale_points(&control, (aw, ah), (w, h))?;
        reference = reference.scaled(w as f64 / aw as f64, h as f64 / ah as f64);
    }
    let steps = Steps {
        rows: args.step,
        cols: args.col_step.unwrap_or(args.step),
    };
    let opts = DewarpOptions {
        method: args.method,
        steps,
        out_size: args.out_size.map(|s| (s.0, s.1)),
        fill: args.fill.0,
        ..DewarpOptions::default()
    };
    let out = dewarp(&image, &control, &reference, &opts)?;
    out.image.save_png(&args.out)?;
    if let Some(path) = &args.map_out {
        out.map.save(path)?;
    }
    let sites = subsample_grid_rc(&control, steps.rows, steps.cols)?.len();
    let Timings {
        fit_ms,
        eval_ms,
        remap_ms,
        total_ms,
    } = out.timings;
    Ok(DewarpReport {
        fit_ms,
        eval_ms,
        remap_ms,
        total_ms,
        method: args.method,
        sites,
        width: out.image.width(),
        height: out.image.height(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthReport {
    pub count: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub manifest: PathBuf,
}

/// Loads the synthesis config, applying `seed` over the file's value.
pub fn load_synth_config(path: Option<&Path>, seed: Option<u64>) -> CliResult<SynthConfig> {
    let mut config = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| io_error(p, e))?;
            serde_json::from_str::<SynthConfig>(&text)
                .map_err(|e| CliError::new(ErrorKind::Data, format!("{}: {e}", p.display())))?
        }
        None => SynthConfig::default(),
    };
    if let Some(seed) = seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

pub fn cmd_synth(args: &SynthArgs, seed: Option<u64>) -> CliResult<SynthReport> {
    let config = load_synth_config(args.config.as_deref(), seed)?;
    if !args.scans.is_dir() {
        return Err(CliError::new(
            ErrorKind::Io,
            format!("{}: not a readable directory", args.scans.display()),
        ));
    }
    let entries = synthesize_dataset(&args.scans, &config, args.count, &args.out)?;
    Ok(SynthReport {
        count: entries.len(),
        seed: config.seed,
        out: args.out.clone(),
        manifest: args.out.join(cpdewarp_synth::MANIFEST_FILE),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ms_ssim: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint_mean_px: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint_max_px: Option<f64>,
}

pub fn cmd_eval(args: &EvalArgs) -> CliResult<EvalReport> {
    let pred = ImageBuffer::load(&args.pred)?;
    let gt = ImageBuffer::load(&args.gt)?;
    let ms_ssim = ms_ssim(&pred, &gt, &SsimParams::default())?;
    let endpoint = match (&args.pred_map, &args.gt_map) {
        (Some(p), Some(g)) => Some(map_endpoint_error(&BackwardMap::load(p)?, &BackwardMap::load(g)?)?),
        (None, None) => None,
        _ => return Err(CliError::usage("--pred-map and --gt-map must be given together")),
    };
    Ok(EvalReport {
        ms_ssim,
        endpoint_mean_px: endpoint.map(|e| e.mean_px),
        endpoint_max_px: endpoint.map(|e| e.max_px),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridInfo {
    pub rows: usize,
    pub cols: usize,
    pub valid_steps: Vec<usize>,
}

pub fn cmd_grid_info(annotation: &Path) -> CliResult<GridInfo> {
    let record = AnnotationRecord::load(annotation)?;
    record.validate()?;
    Ok(GridInfo {
        rows: record.grid.rows,
        cols: record.grid.cols,
        valid_steps: common_valid_steps(record.grid.rows, record.grid.cols),
    })
}

/// Annotation keeping every `row_step`-th row and `col_step`-th column of vertices.
pub fn subsample_annotation(record: &AnnotationRecord, row_step: usize, col_step: usize) -> CliResult<AnnotationRecord> {
    let control = subsample_grid_rc(&record.control_grid()?, row_step, col_step)?;
    let reference = record.reference_spec()?.subsample(row_step, col_step)?;
    Ok(AnnotationRecord::new(
        record.image.clone(),
        record.image_size(),
        &control,
        &reference,
        record.provenance.clone(),
    )?)
}

pub fn cmd_grid_subsample(annotation: &Path, step: usize, col_step: Option<usize>, out: &Path) -> CliResult<GridInfo> {
    let record = AnnotationRecord::load(annotation)?;
    record.validate()?;
    let sub = subsample_annotation(&record, step, col_step.unwrap_or(step))?;
    sub.save(out)?;
    Ok(GridInfo {
        rows: sub.grid.rows,
        cols: sub.grid.cols,
        valid_steps: common_valid_steps(sub.grid.rows, sub.grid.cols),
    })
}

/// Binds the listener and serves until Ctrl-C or SIGTERM.
pub fn cmd_serve(args: &ServeArgs, threads: Option<usize>) -> CliResult<Value> {
    let store = cpdewarp_service::Store::open(&args.root).map_err(|e| CliError::new(ErrorKind::Io, e.to_string()))?;
    let mut builder = tokio::runtime::Builder::new_multi_thread();
    builder.enable_all();
    if let Some(n) = threads {
        builder.worker_threads(n.max(1));
    }
    let runtime = builder.build().map_err(|e| CliError::new(ErrorKind::Io, e.to_string()))?;
    runtime.block_on(async {
        let addr = format!("{}:{}", args.host, args.port);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| CliError::new(ErrorKind::Io, format!("bind {addr}: {e}")))?;
        let local = listener.local_addr().map_err(|e| CliError::new(ErrorKind::Io, e.to_string()))?;
        eprintln!("{}", json!({ "listening": local.to_string(), "root": args.root }));
        cpdewarp_service::serve(listener, Arc::new(store), cpdewarp_service::shutdown_signal())
            .await
            .map_err(|e| CliError::new(ErrorKind::Io, e.to_string()))?;
        Ok(json!({ "stopped": true }))
    })
}

fn to_value<T: Serialize>(v: CliResult<T>) -> CliResult<Value> {
    v.map(|v| serde_json::to_value(v).expect("report serializes"))
}

/// Runs a parsed command and returns its JSON report.
pub fn run(cli: &Cli) -> CliResult<Value> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::usage("--threads must be at least 1"));
        }
        // a second call in one process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::Dewarp(a) => to_value(cmd_dewarp(a)),
        Command::Synth(a) => to_value(cmd_synth(a, cli.seed)),
        Command::Eval(a) => to_value(cmd_eval(a)),
        Command::Grid(GridCommand::Info { annotation }) => to_value(cmd_grid_info(annotation)),
        Command::Grid(GridCommand::Subsample {
            annotation,
            step,
            col_step,
            out,
        }) => to_value(cmd_grid_subsample(annotation, *step, *col_step, out)),
        Command::Serve(a) => cmd_serve(a, cli.threads),
    }
}
