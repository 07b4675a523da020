use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use xalign_core::analysis::report::{read_report, write_report, REPORT_JSON};
use xalign_core::analysis::{
    self, build_corpus_human_masks, build_corpus_text_masks, load_human_masks, load_text_masks, AnalysisError,
    AnalysisInputs, MaskTable, SweepCell, DEFAULT_TAU,
};
use xalign_core::corpus::{ingest_manifest, write_file_atomic, CategorySelector, Corpus, IngestOptions, KeywordRules};
use xalign_core::explain::http::{HttpClassifier, HttpClassifierConfig};
use xalign_core::explain::import::{default_pipeline, import_mask};
use xalign_core::explain::{
    default_samples, explain, Classifier, ExplainerConfig, ExplainerMethod, RegionClassifier,
};
use xalign_core::human::HumanMaskParams;
use xalign_core::mask::io::{write_pgm, MaskMeta, META_VERSION};
use xalign_core::mask::apply_pipeline;
use xalign_core::synthetic::{generate, SyntheticConfig};
use xalign_survey::SurveyConfig;

use crate::config::{parse_grid, FileConfig};
use crate::{Cli, Command, UsageError};

pub const RUN_FILE: &str = "run.json";
/// Parameters used by the last `humanmask`, under `masks/`.
pub const HUMAN_PARAMS_FILE: &str = "human_params.json";
/// Sweep output, under `analysis/`.
pub const SWEEP_FILE: &str = "sweep.json";

const DEFAULT_SEGMENTS: usize = 16;
const DEFAULT_PATCH: usize = 8;
const DEFAULT_STRIDE: usize = 4;

/// Provenance written by every command.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub argv: Vec<String>,
    pub version: String,
    pub core_version: String,
    pub started_at: String,
    pub finished_at: String,
    pub jobs: usize,
    pub seed: Option<u64>,
    pub config_file: Option<PathBuf>,
    /// Effective settings after merging defaults, the config file and flags.
    pub config: Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepFile {
    pub version: u32,
    pub r_grid: Vec<f64>,
    pub alpha_grid: Vec<f64>,
    pub base: HumanMaskParams,
    pub cells: Vec<SweepCell>,
}

struct Ctx {
    argv: Vec<String>,
    file: FileConfig,
    config_file: Option<PathBuf>,
    jobs: usize,
    started_at: String,
}

struct Outcome {
    record_dir: Option<PathBuf>,
    seed: Option<u64>,
    config: Value,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

pub(crate) fn run(cli: Cli, argv: Vec<String>) -> Result<()> {
    let file = match &cli.config {
        Some(p) if !matches!(cli.command, Command::Serve(_)) => FileConfig::load(p)?,
        _ => FileConfig::default(),
    };
    let jobs = cli.jobs.or(file.jobs).unwrap_or(0);
    if jobs > 0 {
        // Fails only if a pool already exists, e.g. in tests running several commands.
        if rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global().is_err() {
            log::debug!("rayon pool already initialized");
        }
    }
    let ctx = Ctx {
        argv,
        file,
        config_file: cli.config.clone(),
        jobs: rayon::current_num_threads(),
        started_at: now(),
    };
    let name = command_name(&cli.command);
    let outcome = match cli.command {
        Command::Ingest(a) => ingest(&ctx, a)?,
        Command::Explain(a) => explain_cmd(&ctx, a)?,
        Command::ImportMasks(a) => import_masks(&ctx, a)?,
        Command::Humanmask(a) => humanmask(&ctx, a)?,
        Command::Analyze(a) => analyze(&ctx, a)?,
        Command::Sweep(a) => sweep(&ctx, a)?,
        Command::Serve(a) => serve(&ctx, a)?,
        Command::Report(a) => report(&ctx, a)?,
        Command::Synth(a) => synth(&ctx, a)?,
    };
    if let Some(dir) = &outcome.record_dir {
        let record = RunRecord {
            command: name.to_string(),
            argv: ctx.argv.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            core_version: xalign_core::VERSION.to_string(),
            started_at: ctx.started_at.clone(),
            finished_at: now(),
            jobs: ctx.jobs,
            seed: outcome.seed,
            config_file: ctx.config_file.clone(),
            config: outcome.config,
            inputs: outcome.inputs,
            outputs: outcome.outputs,
        };
        let mut text = serde_json::to_string_pretty(&record)?;
        text.push('\n');
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_file_atomic(&dir.join(RUN_FILE), text.as_bytes())?;
    }
    Ok(())
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Ingest(_) => "ingest",
        Command::Explain(_) => "explain",
        Command::ImportMasks(_) => "import-masks",
        Command::Humanmask(_) => "humanmask",
        Command::Analyze(_) => "analyze",
        Command::Sweep(_) => "sweep",
        Command::Serve(_) => "serve",
        Command::Report(_) => "report",
        Command::Synth(_) => "synth",
    }
}

fn runs_dir(corpus: &Path, command: &str) -> PathBuf {
    corpus.join("runs").join(command)
}

fn open_corpus(dir: &Path) -> Result<Corpus> {
    Corpus::load(dir).with_context(|| format!("opening corpus {}", dir.display()))
}

fn log_config(command: &str, config: &Value) {
    log::info!("{command}: {config}");
}

fn ingest(ctx: &Ctx, a: crate::IngestArgs) -> Result<Outcome> {
    let out = a.out.unwrap_or_else(|| a.manifest.parent().unwrap_or(Path::new(".")).join("corpus"));
    let max_side = a.max_side.or(ctx.file.max_side);
    let rules = match &a.rules {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            KeywordRules::from_json(&text).with_context(|| format!("rules {}", p.display()))?
        }
        None => KeywordRules::default_rules(),
    };
    let config = json!({ "manifest": a.manifest, "out": out, "max_side": max_side, "rules": a.rules });
    log_config("ingest", &config);
    let corpus = ingest_manifest(&a.manifest, &out, &IngestOptions { rules, max_side })?;
    log::info!(
        "ingested {} images and {} responses into {}",
        corpus.images().len(),
        corpus.responses().len(),
        out.display()
    );
    let mut inputs = vec![a.manifest.clone()];
    inputs.extend(a.rules);
    Ok(Outcome {
        record_dir: Some(runs_dir(&out, "ingest")),
        seed: None,
        config,
        inputs,
        outputs: vec![out],
    })
}

fn build_classifier(spec: &str) -> Result<(Box<dyn Classifier>, String)> {
    if spec == "toy" {
        return Ok((Box::new(RegionClassifier::toy()), "toy".into()));
    }
    if let Some(url) = spec.strip_prefix("http:") {
        // Accept both `http:<url>` and a bare `http://…`.
        let url = if url.starts_with("//") { format!("http:{url}") } else { url.to_string() };
        let c = HttpClassifier::new(HttpClassifierConfig::new(url))?;
        return Ok((Box::new(c), "http".into()));
    }
    Err(UsageError(format!("unknown classifier {spec:?}; expected `toy` or `http:<url>`")).into())
}

/// Per-image seed, so images do not share perturbation patterns.
fn image_seed(seed: u64, image_id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in image_id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    seed ^ h
}

fn explain_cmd(ctx: &Ctx, a: crate::ExplainArgs) -> Result<Outcome> {
    let f = &ctx.file;
    let method = a.method.or(f.method.clone()).ok_or_else(|| UsageError("--method is required".into()))?;
    let classifier_spec = a.classifier.or(f.classifier.clone()).unwrap_or_else(|| "toy".into());
    let seed = a.seed.or(f.seed).unwrap_or(0);
    let segments = a.segments.or(f.segments).unwrap_or(DEFAULT_SEGMENTS);
    let samples = a.samples.or(f.samples);
    let patch = a.patch.or(f.patch).unwrap_or(DEFAULT_PATCH);
    let stride = a.stride.or(f.stride).unwrap_or(DEFAULT_STRIDE);
    let mut cfg = match method.as_str() {
        "os" | "occlusion" => ExplainerConfig::occlusion(patch, stride),
        "lime" => ExplainerConfig::lime(segments),
        "shap" => ExplainerConfig::kernel_shap(segments),
        other => return Err(UsageError(format!("unknown method {other:?}; expected os, lime or shap")).into()),
    };
    match &mut cfg.method {
        ExplainerMethod::Lime { samples: s, .. } | ExplainerMethod::KernelShap { samples: s, .. } => {
            *s = Some(samples.unwrap_or_else(|| default_samples(segments)));
        }
        ExplainerMethod::OcclusionSensitivity { .. } => {}
    }
    cfg = cfg.with_seed(seed);
    let (classifier, default_id) = build_classifier(&classifier_spec)?;
    let detector = a.detector_id.or(f.detector_id.clone()).unwrap_or(default_id);
    let corpus = open_corpus(&a.corpus)?;
    let method_id = cfg.method.id();
    let pipeline = default_pipeline(method_id);
    let config = json!({
        "corpus": a.corpus,
        "classifier": classifier_spec,
        "detector_id": detector,
        "explainer": cfg,
        "pipeline": pipeline,
        "seed_derivation": "seed xor fnv1a64(image_id)",
    });
    log_config("explain", &config);

    let run_one = |img: &xalign_core::corpus::ImageRecord| -> Result<PathBuf> {
        let rgb = corpus.load_image(&img.image_id)?;
        let c = cfg.clone().with_seed(image_seed(seed, &img.image_id));
        let ex = explain(classifier.as_ref(), &rgb, &c)
            .with_context(|| format!("explaining {}", img.image_id))?;
        let mask = apply_pipeline(&ex.mask, &pipeline)?;
        let path = corpus.xai_mask_path(&detector, method_id, &img.image_id);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        write_pgm(&path, &mask)?;
        MaskMeta {
            version: META_VERSION,
            image_id: img.image_id.clone(),
            method_id: method_id.to_string(),
            detector_id: detector.clone(),
            width: mask.width(),
            height: mask.height(),
            pipeline: pipeline.clone(),
        }
        .write(&MaskMeta::sidecar_path(&path))?;
        Ok(path)
    };
    let outputs: Vec<PathBuf> = if classifier.supports_concurrency() {
        corpus.images().par_iter().map(run_one).collect::<Result<_>>()?
    } else {
        corpus.images().iter().map(run_one).collect::<Result<_>>()?
    };
    log::info!("wrote {} {method_id} masks for detector {detector}", outputs.len());
    Ok(Outcome {
        record_dir: Some(runs_dir(&a.corpus, "explain").join(&detector).join(method_id)),
        seed: Some(seed),
        config,
        inputs: vec![a.corpus.clone()],
        outputs: vec![corpus.masks_dir().join("xai").join(&detector).join(method_id)],
    })
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        out.push(e?.path());
    }
    out.sort();
    Ok(out)
}

fn import_masks(_ctx: &Ctx, a: crate::ImportArgs) -> Result<Outcome> {
    let corpus = open_corpus(&a.corpus)?;
    if !a.dir.is_dir() {
        bail!("{} is not a directory", a.dir.display());
    }
    let config = json!({ "dir": a.dir, "corpus": a.corpus });
    log_config("import-masks", &config);
    let mut count = 0usize;
    let mut outputs = Vec::new();
    for det_dir in sorted_entries(&a.dir)?.into_iter().filter(|p| p.is_dir()) {
        let detector = det_dir.file_name().unwrap().to_string_lossy().into_owned();
        for method_dir in sorted_entries(&det_dir)?.into_iter().filter(|p| p.is_dir()) {
            let method = method_dir.file_name().unwrap().to_string_lossy().into_owned();
            for file in sorted_entries(&method_dir)? {
                let ext = file.extension().and_then(|e| e.to_str()).unwrap_or("");
                if ext != "csv" && ext != "pgm" {
                    continue;
                }
                let image_id = file.file_stem().unwrap().to_string_lossy().into_owned();
                let rec = corpus
                    .image(&image_id)
                    .ok_or_else(|| anyhow::anyhow!("{} refers to unknown image {image_id:?}", file.display()))?;
                let dims = (rec.width as usize, rec.height as usize);
                let sidecar = MaskMeta::sidecar_path(&file);
                let meta = if sidecar.is_file() {
                    let m = MaskMeta::read(&sidecar)?;
                    if m.image_id != image_id || m.method_id != method || m.detector_id != detector {
                        bail!("{} does not match its location", sidecar.display());
                    }
                    m
                } else {
                    MaskMeta {
                        version: META_VERSION,
                        image_id: image_id.clone(),
                        method_id: method.clone(),
                        detector_id: detector.clone(),
                        width: dims.0,
                        height: dims.1,
                        pipeline: Vec::new(),
                    }
                };
                let (_, mask) =
                    import_mask(&file, &meta, Some(dims)).with_context(|| format!("importing {}", file.display()))?;
                let dest = corpus.xai_mask_path(&detector, &method, &image_id);
                if let Some(parent) = dest.parent() {
                    fs::create_dir_all(parent)?;
                }
                write_pgm(&dest, &mask)?;
                let pipeline = if meta.pipeline.is_empty() && ext == "csv" {
                    default_pipeline(&method)
                } else {
                    meta.pipeline.clone()
                };
                MaskMeta { pipeline, ..meta }.write(&MaskMeta::sidecar_path(&dest))?;
                count += 1;
            }
            outputs.push(corpus.masks_dir().join("xai").join(&detector).join(&method));
        }
    }
    if count == 0 {
        bail!("no masks found under {} (expected <detector>/<method>/<image>.csv|pgm)", a.dir.display());
    }
    log::info!("imported {count} masks");
    Ok(Outcome {
        record_dir: Some(runs_dir(&a.corpus, "import-masks")),
        seed: None,
        config,
        inputs: vec![a.dir.clone(), a.corpus.clone()],
        outputs,
    })
}

fn human_params(ctx: &Ctx, r: Option<f64>, alpha: Option<f64>) -> Result<HumanMaskParams> {
    let d = HumanMaskParams::default();
    let p = HumanMaskParams {
        radius_frac: r.or(ctx.file.radius_frac).unwrap_or(d.radius_frac),
        alpha: alpha.or(ctx.file.alpha).unwrap_or(d.alpha),
        ..d
    };
    p.validate().map_err(|e| UsageError(e.to_string()))?;
    Ok(p)
}

fn reset_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        fs::remove_dir_all(dir).with_context(|| format!("clearing {}", dir.display()))?;
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

fn humanmask(ctx: &Ctx, a: crate::HumanMaskArgs) -> Result<Outcome> {
    let params = human_params(ctx, a.radius_frac, a.alpha)?;
    let corpus = open_corpus(&a.corpus)?;
    let config = json!({ "corpus": a.corpus, "params": params });
    log_config("humanmask", &config);
    let human = build_corpus_human_masks(&corpus, &params)?;
    let text = build_corpus_text_masks(&corpus, &params)?;
    let human_dir = corpus.masks_dir().join("human");
    let text_dir = corpus.masks_dir().join("text");
    reset_dir(&human_dir)?;
    reset_dir(&text_dir)?;
    for (image, mask) in &human {
        write_pgm(&corpus.human_mask_path(image), mask)?;
    }
    for selector in CategorySelector::table_rows() {
        let per_image = &text[selector.id()];
        if per_image.is_empty() {
            continue;
        }
        fs::create_dir_all(text_dir.join(selector.id()))?;
        for (image, mask) in per_image {
            write_pgm(&corpus.text_mask_path(selector, image), mask)?;
        }
    }
    let mut text_json = serde_json::to_string_pretty(&params)?;
    text_json.push('\n');
    write_file_atomic(&corpus.masks_dir().join(HUMAN_PARAMS_FILE), text_json.as_bytes())?;
    log::info!(
        "wrote {} human masks and {} category masks",
        human.len(),
        text.values().map(BTreeMap::len).sum::<usize>()
    );
    Ok(Outcome {
        record_dir: Some(runs_dir(&a.corpus, "humanmask")),
        seed: None,
        config,
        inputs: vec![a.corpus.clone()],
        outputs: vec![human_dir, text_dir],
    })
}

fn read_human_params(corpus: &Corpus) -> Result<HumanMaskParams> {
    let path = corpus.masks_dir().join(HUMAN_PARAMS_FILE);
    if !path.is_file() {
        return Err(AnalysisError::MissingArtifact {
            what: format!("human masks ({})", path.display()),
            hint: "run `xalign humanmask <corpus>` first".into(),
        }
        .into());
    }
    let text = fs::read_to_string(&path)?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn analyze(ctx: &Ctx, a: crate::AnalyzeArgs) -> Result<Outcome> {
    let tau = a.tau.or(ctx.file.tau).unwrap_or(DEFAULT_TAU);
    if !(0.0..=1.0).contains(&tau) {
        return Err(UsageError(format!("--tau must be in [0, 1], got {tau}")).into());
    }
    let corpus = open_corpus(&a.corpus)?;
    let human = load_human_masks(&corpus)?;
    let params = read_human_params(&corpus)?;
    let text = load_text_masks(&corpus)?;
    let xai = MaskTable::load(&corpus)?;
    let config = json!({ "corpus": a.corpus, "tau": tau, "human_params": params });
    log_config("analyze", &config);
    let report = analysis::analyze(&AnalysisInputs {
        corpus: &corpus,
        human: &human,
        text: &text,
        xai: &xai,
        params,
        tau,
    })?;
    let dir = a.corpus.join("analysis");
    fs::create_dir_all(&dir)?;
    let path = dir.join(REPORT_JSON);
    let mut body = serde_json::to_string_pretty(&report)?;
    body.push('\n');
    write_file_atomic(&path, body.as_bytes())?;
    log::info!("{} alignment results written to {}", report.alignment.len(), path.display());
    Ok(Outcome {
        record_dir: Some(runs_dir(&a.corpus, "analyze")),
        seed: None,
        config,
        inputs: vec![a.corpus.clone()],
        outputs: vec![path],
    })
}

fn sweep(ctx: &Ctx, a: crate::SweepArgs) -> Result<Outcome> {
    let r_spec = a
        .r_grid
        .or(ctx.file.r_grid.clone())
        .ok_or_else(|| UsageError("--R-grid is required".into()))?;
    let a_spec = a
        .alpha_grid
        .or(ctx.file.alpha_grid.clone())
        .ok_or_else(|| UsageError("--alpha-grid is required".into()))?;
    let r_grid = parse_grid(&r_spec)?;
    let alpha_grid = parse_grid(&a_spec)?;
    let base = HumanMaskParams::default();
    for &r in &r_grid {
        for &al in &alpha_grid {
            HumanMaskParams { radius_frac: r, alpha: al, ..base }
                .validate()
                .map_err(|e| UsageError(e.to_string()))?;
        }
    }
    let corpus = open_corpus(&a.corpus)?;
    let xai = MaskTable::load(&corpus)?;
    if xai.is_empty() {
        return Err(AnalysisError::MissingArtifact {
            what: "XAI masks".into(),
            hint: "run `xalign explain` or `xalign import-masks` first".into(),
        }
        .into());
    }
    let config = json!({ "corpus": a.corpus, "r_grid": r_grid, "alpha_grid": alpha_grid, "base": base });
    log_config("sweep", &config);
    let cells = analysis::sweep_params(&corpus, &xai, &r_grid, &alpha_grid, &base)?;
    let file = SweepFile {
        version: analysis::REPORT_VERSION,
        r_grid,
        alpha_grid,
        base,
        cells,
    };
    let dir = a.corpus.join("analysis");
    fs::create_dir_all(&dir)?;
    let path = dir.join(SWEEP_FILE);
    let mut body = serde_json::to_string_pretty(&file)?;
    body.push('\n');
    write_file_atomic(&path, body.as_bytes())?;
    log::info!("{} sweep cells written to {}", file.cells.len(), path.display());
    Ok(Outcome {
        record_dir: Some(runs_dir(&a.corpus, "sweep")),
        seed: None,
        config,
        inputs: vec![a.corpus.clone()],
        outputs: vec![path],
    })
}

fn serve(ctx: &Ctx, a: crate::ServeArgs) -> Result<Outcome> {
    let mut cfg = SurveyConfig::resolve(ctx.config_file.as_deref())?;
    if let Some(c) = a.corpus {
        cfg.corpus = Some(c);
    }
    if let Some(p) = a.port {
        cfg.port = p;
    }
    let config = serde_json::to_value(&cfg)?;
    log_config("serve", &config);
    if let Some(corpus) = &cfg.corpus {
        // Written at startup; the service runs until interrupted.
        let record = RunRecord {
            command: "serve".into(),
            argv: ctx.argv.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            core_version: xalign_core::VERSION.to_string(),
            started_at: ctx.started_at.clone(),
            finished_at: ctx.started_at.clone(),
            jobs: ctx.jobs,
            seed: Some(cfg.seed),
            config_file: ctx.config_file.clone(),
            config: config.clone(),
            inputs: vec![corpus.clone()],
            outputs: vec![corpus.join("responses.jsonl")],
        };
        let dir = runs_dir(corpus, "serve");
        fs::create_dir_all(&dir)?;
        write_file_atomic(&dir.join(RUN_FILE), serde_json::to_string_pretty(&record)?.as_bytes())?;
    }
    xalign_survey::run(cfg)?;
    Ok(Outcome {
        record_dir: None,
        seed: None,
        config,
        inputs: Vec::new(),
        outputs: Vec::new(),
    })
}

fn report(ctx: &Ctx, a: crate::ReportArgs) -> Result<Outcome> {
    let plot_data = a.plot_data || ctx.file.plot_data.unwrap_or(false);
    let out = a.out.unwrap_or_else(|| a.corpus.join("report"));
    let analysis_dir = a.corpus.join("analysis");
    let mut report = read_report(&analysis_dir.join(REPORT_JSON))?;
    let sweep_path = analysis_dir.join(SWEEP_FILE);
    let mut inputs = vec![analysis_dir.join(REPORT_JSON)];
    if sweep_path.is_file() {
        let sweep: SweepFile = serde_json::from_str(&fs::read_to_string(&sweep_path)?)
            .with_context(|| format!("parsing {}", sweep_path.display()))?;
        report.sweep = sweep.cells;
        inputs.push(sweep_path);
    }
    let config = json!({ "corpus": a.corpus, "out": out, "plot_data": plot_data });
    log_config("report", &config);
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let outputs = write_report(&out, &report, plot_data)?;
    log::info!("wrote {} report files to {}", outputs.len(), out.display());
    Ok(Outcome {
        record_dir: Some(out),
        seed: None,
        config,
        inputs,
        outputs,
    })
}

fn synth(ctx: &Ctx, a: crate::SynthArgs) -> Result<Outcome> {
    let d = SyntheticConfig::default();
    let cfg = SyntheticConfig {
        seed: a.seed.or(ctx.file.seed).unwrap_or(d.seed),
        images: a.images.unwrap_or(d.images),
        participants: a.participants.unwrap_or(d.participants),
        size: a.size.unwrap_or(d.size),
    };
    let config = serde_json::to_value(cfg)?;
    log_config("synth", &config);
    let out = generate(&a.dir, &cfg).map_err(|e| match e {
        xalign_core::synthetic::SyntheticError::Config(m) => anyhow::Error::new(UsageError(m)),
        other => other.into(),
    })?;
    log::info!(
        "wrote {} images and {} responses; manifest at {}",
        out.images,
        out.responses,
        out.manifest.display()
    );
    Ok(Outcome {
        record_dir: Some(a.dir.clone()),
        seed: Some(cfg.seed),
        config,
        inputs: Vec::new(),
        outputs: vec![out.manifest, out.external_masks],
    })
}
