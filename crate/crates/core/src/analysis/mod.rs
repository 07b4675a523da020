//! Quantitative comparisons between XAI masks and human masks.

mod alignment;
pub mod report;
mod selection;
mod similarity;
mod text;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use alignment::{
    best_method, build_corpus_human_masks, category_report, category_reports, run_alignment, summarize,
    sweep_params, AlignmentResult, CategoryReport, SweepCell,
};
pub use selection::{click_share_of, selection_stats, tagged_responses, ItemTag, SelectionStats};
pub use similarity::{cluster_methods, pairwise_method_similarity, MethodCluster, MethodSimilarityMatrix};
pub use text::{build_corpus_text_masks, text_category_scores, TextMasks, TextScoreRow};

use crate::corpus::{CategorySelector, Corpus, CorpusError, ImageLabels, Stratum};
use crate::human::{HumanMaskError, HumanMaskParams};
use crate::mask::io::{read_pgm, MaskIoError, MaskMeta};
use crate::mask::{cosine_similarity, Mask, MaskError, NormalizedMask};

pub const REPORT_VERSION: u32 = 1;
pub const DEFAULT_TAU: f64 = 0.8;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("missing mask for method {method:?}{} on image {image:?}", detector.as_ref().map(|d| format!(" (detector {d:?})")).unwrap_or_default())]
    MissingMask {
        detector: Option<String>,
        method: String,
        image: String,
    },
    #[error("missing {what}: {hint}")]
    MissingArtifact { what: String, hint: String },
    #[error("unknown item tag {0:?}")]
    UnknownTag(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    MaskIo(#[from] MaskIoError),
    #[error(transparent)]
    Human(#[from] HumanMaskError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl AnalysisError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        AnalysisError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Cosine similarity where an all-zero mask scores 0 against anything else.
pub(crate) fn pair_similarity(a: impl AsRef<Mask>, b: impl AsRef<Mask>) -> Result<f64, MaskError> {
    match cosine_similarity(a, b) {
        Err(MaskError::ZeroMask) => Ok(0.0),
        other => other,
    }
}

/// XAI masks by detector, method and image.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MaskTable {
    pub detectors: BTreeMap<String, BTreeMap<String, BTreeMap<String, NormalizedMask>>>,
}

impl MaskTable {
    pub fn insert(&mut self, detector: &str, method: &str, image: &str, mask: NormalizedMask) {
        self.detectors
            .entry(detector.to_string())
            .or_default()
            .entry(method.to_string())
            .or_default()
            .insert(image.to_string(), mask);
    }

    pub fn is_empty(&self) -> bool {
        self.detectors.is_empty()
    }

    pub fn method_ids(&self, detector: &str) -> Vec<String> {
        self.detectors
            .get(detector)
            .map(|m| m.keys().cloned().collect())
            .unwrap_or_default()
    }

    /// Reads `masks/xai/<detector>/<method>/<image>.pgm` under the corpus.
    /// Sidecars, when present, must agree with the path.
    pub fn load(corpus: &Corpus) -> Result<Self, AnalysisError> {
        let root = corpus.masks_dir().join("xai");
        let mut table = MaskTable::default();
        for detector in sorted_dirs(&root)? {
            for method in sorted_dirs(&root.join(&detector))? {
                let dir = root.join(&detector).join(&method);
                for (image, path) in pgm_files(&dir)? {
                    let rec = corpus.image(&image).ok_or_else(|| {
                        AnalysisError::InvalidInput(format!("{} refers to unknown image {image:?}", path.display()))
                    })?;
                    let mask = read_pgm(&path)?;
                    if mask.dims() != (rec.width as usize, rec.height as usize) {
                        return Err(AnalysisError::InvalidInput(format!(
                            "{} is {}x{} but image {image} is {}x{}",
                            path.display(),
                            mask.width(),
                            mask.height(),
                            rec.width,
                            rec.height
                        )));
                    }
                    let sidecar = MaskMeta::sidecar_path(&path);
                    if sidecar.is_file() {
                        let meta = MaskMeta::read(&sidecar)?;
                        if meta.image_id != image || meta.method_id != method || meta.detector_id != detector {
                            return Err(AnalysisError::InvalidInput(format!(
                                "{} does not match its location",
                                sidecar.display()
                            )));
                        }
                    }
                    table.insert(&detector, &method, &image, mask);
                }
            }
        }
        Ok(table)
    }
}

fn sorted_dirs(dir: &Path) -> Result<Vec<String>, AnalysisError> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| AnalysisError::io(dir, e))? {
        let entry = entry.map_err(|e| AnalysisError::io(dir, e))?;
        if entry.path().is_dir() {
            out.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    out.sort();
    Ok(out)
}

fn pgm_files(dir: &Path) -> Result<Vec<(String, PathBuf)>, AnalysisError> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| AnalysisError::io(dir, e))? {
        let path = entry.map_err(|e| AnalysisError::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "pgm") {
            let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            out.push((stem, path));
        }
    }
    out.sort();
    Ok(out)
}

/// Reads `masks/human/*.pgm`.
pub fn load_human_masks(corpus: &Corpus) -> Result<BTreeMap<String, NormalizedMask>, AnalysisError> {
    let dir = corpus.masks_dir().join("human");
    if !dir.is_dir() {
        return Err(AnalysisError::MissingArtifact {
            what: format!("human masks ({})", dir.display()),
            hint: "run `xalign humanmask <corpus>` first".into(),
        });
    }
    let mut out = BTreeMap::new();
    for (image, path) in pgm_files(&dir)? {
        if corpus.image(&image).is_none() {
            return Err(AnalysisError::InvalidInput(format!("{} refers to unknown image", path.display())));
        }
        out.insert(image, read_pgm(&path)?);
    }
    Ok(out)
}

/// Reads `masks/text/<selector>/*.pgm`.
pub fn load_text_masks(corpus: &Corpus) -> Result<TextMasks, AnalysisError> {
    let root = corpus.masks_dir().join("text");
    let mut out = TextMasks::new();
    for selector in CategorySelector::table_rows() {
        let mut per_image = BTreeMap::new();
        for (image, path) in pgm_files(&root.join(selector.id()))? {
            per_image.insert(image, read_pgm(&path)?);
        }
        out.insert(selector.id().to_string(), per_image);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorSimilarity {
    pub detector_id: String,
    pub matrix: MethodSimilarityMatrix,
    pub clusters: Vec<MethodCluster>,
}

/// Everything the analysis produces, serialized as `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub version: u32,
    pub tau: f64,
    pub human_params: HumanMaskParams,
    pub similarity: Vec<DetectorSimilarity>,
    pub alignment: Vec<AlignmentResult>,
    pub category_reports: Vec<CategoryReport>,
    pub sweep: Vec<SweepCell>,
    pub selection_stats: Vec<SelectionStats>,
    pub text_scores: Vec<TextScoreRow>,
}

pub struct AnalysisInputs<'a> {
    pub corpus: &'a Corpus,
    pub human: &'a BTreeMap<String, NormalizedMask>,
    pub text: &'a TextMasks,
    pub xai: &'a MaskTable,
    pub params: HumanMaskParams,
    pub tau: f64,
}

pub fn image_labels(corpus: &Corpus) -> BTreeMap<String, ImageLabels> {
    corpus
        .images()
        .iter()
        .map(|i| (i.image_id.clone(), i.labels))
        .collect()
}

/// Runs every analysis over the corpus.
pub fn analyze(inputs: &AnalysisInputs<'_>) -> Result<AlignmentReport, AnalysisError> {
    if inputs.xai.is_empty() {
        return Err(AnalysisError::MissingArtifact {
            what: "XAI masks".into(),
            hint: "run `xalign explain` or `xalign import-masks` first".into(),
        });
    }
    let image_ids: Vec<String> = inputs.corpus.images().iter().map(|i| i.image_id.clone()).collect();
    let mut similarity = Vec::new();
    for (detector, methods) in &inputs.xai.detectors {
        let method_ids: Vec<String> = methods.keys().cloned().collect();
        let matrix = pairwise_method_similarity(&method_ids, &image_ids, methods).map_err(|e| match e {
            AnalysisError::MissingMask { method, image, .. } => AnalysisError::MissingMask {
                detector: Some(detector.clone()),
                method,
                image,
            },
            other => other,
        })?;
        let clusters = cluster_methods(&matrix, inputs.tau)?;
        similarity.push(DetectorSimilarity {
            detector_id: detector.clone(),
            matrix,
            clusters,
        });
    }
    let alignment = run_alignment(&image_ids, inputs.human, inputs.xai)?;
    let labels = image_labels(inputs.corpus);
    let strata = Stratum::standard();
    Ok(AlignmentReport {
        version: REPORT_VERSION,
        tau: inputs.tau,
        human_params: inputs.params,
        similarity,
        category_reports: category_reports(&alignment, &labels, &strata)?,
        sweep: summarize(&alignment, inputs.params.radius_frac, inputs.params.alpha),
        selection_stats: selection_stats(inputs.corpus.responses(), &labels, &strata)?,
        text_scores: text_category_scores(inputs.text, inputs.xai)?,
        alignment,
    })
}
