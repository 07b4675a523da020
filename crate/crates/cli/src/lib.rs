//! The `xalign` command line.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

pub use commands::{RunRecord, SweepFile, HUMAN_PARAMS_FILE, RUN_FILE, SWEEP_FILE};

/// Exit status for usage errors.
pub const EXIT_USAGE: i32 = 2;
/// Exit status for data and runtime errors.
pub const EXIT_DATA: i32 = 1;

/// Bad flags, grid specs or config keys; reported with exit status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Parser)]
#[command(name = "xalign", version, about = "Compare detector saliency maps with human attention")]
pub struct Cli {
    /// Worker threads for explain and sweep (default: logical cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// TOML settings file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a manifest and build a corpus directory.
    Ingest(IngestArgs),
    /// Compute native saliency masks for every corpus image.
    Explain(ExplainArgs),
    /// Import externally computed masks laid out as <detector>/<method>/<image>.{csv,pgm}.
    ImportMasks(ImportArgs),
    /// Build the human and per-category masks.
    Humanmask(HumanMaskArgs),
    /// Similarity, clustering, alignment and category analyses.
    Analyze(AnalyzeArgs),
    /// Mean best score over a grid of radius and skew values.
    Sweep(SweepArgs),
    /// Run the survey service.
    Serve(ServeArgs),
    /// Write the CSV and JSON report files.
    Report(ReportArgs),
    /// Generate the synthetic demo corpus.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    pub manifest: PathBuf,
    /// Corpus directory (default: `corpus` next to the manifest).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Downscale images whose longer side exceeds this many pixels.
    #[arg(long)]
    pub max_side: Option<u32>,
    /// Keyword rules JSON replacing the built-in ones.
    #[arg(long)]
    pub rules: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    pub corpus: PathBuf,
    /// os, lime or shap.
    #[arg(long)]
    pub method: Option<String>,
    /// `toy` or `http:<url>`.
    #[arg(long)]
    pub classifier: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory name for the detector (default: `toy` or `http`).
    #[arg(long)]
    pub detector_id: Option<String>,
    /// Superpixel count for lime and shap.
    #[arg(long)]
    pub segments: Option<usize>,
    /// Perturbation samples for lime and shap.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Occlusion window side.
    #[arg(long)]
    pub patch: Option<usize>,
    /// Occlusion window step.
    #[arg(long)]
    pub stride: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ImportArgs {
    pub dir: PathBuf,
    /// Corpus receiving the masks.
    #[arg(long)]
    pub corpus: PathBuf,
}

#[derive(Debug, Args)]
pub struct HumanMaskArgs {
    pub corpus: PathBuf,
    /// Disc radius as a fraction of the shorter image side.
    #[arg(long = "R")]
    pub radius_frac: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    pub corpus: PathBuf,
    /// Clustering threshold.
    #[arg(long)]
    pub tau: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    pub corpus: PathBuf,
    /// Radius fractions as a:b:step or a comma list.
    #[arg(long = "R-grid")]
    pub r_grid: Option<String>,
    /// Skew values as a:b:step or a comma list.
    #[arg(long = "alpha-grid")]
    pub alpha_grid: Option<String>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Corpus to serve (overrides the survey config).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub port: Option<u16>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    pub corpus: PathBuf,
    /// Output directory (default: `<corpus>/report`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write long-format plot data.
    #[arg(long)]
    pub plot_data: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    pub dir: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub images: Option<usize>,
    #[arg(long)]
    pub participants: Option<usize>,
    /// Side length of the square images.
    #[arg(long)]
    pub size: Option<u32>,
}

/// Structured error printed to stderr as one JSON object.
pub fn error_json(err: &anyhow::Error) -> (i32, serde_json::Value) {
    use xalign_core::analysis::AnalysisError;
    if let Some(u) = err.downcast_ref::<UsageError>() {
        return (EXIT_USAGE, json!({ "error": { "kind": "usage", "message": u.0 } }));
    }
    let chain: Vec<String> = err.chain().map(|e| e.to_string()).collect();
    let mut body = json!({ "kind": "data", "message": chain.join(": ") });
    for cause in err.chain() {
        if let Some(AnalysisError::MissingArtifact { what, hint }) = cause.downcast_ref::<AnalysisError>() {
            body = json!({ "kind": "missing_artifact", "message": chain.join(": "), "artifact": what, "hint": hint });
            break;
        }
    }
    (EXIT_DATA, json!({ "error": body }))
}

/// Parses `args`, runs the command and returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init();
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match commands::run(cli, argv) {
        Ok(()) => 0,
        Err(e) => {
            let (code, body) = error_json(&e);
            eprintln!("{body}");
            code
        }
    }
}
