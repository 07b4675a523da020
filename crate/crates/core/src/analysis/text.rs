//! Scores of XAI masks against text-category human masks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{pair_similarity, AnalysisError, MaskTable};
use crate::corpus::{CategorySelector, Corpus};
use crate::human::{build_text_category_mask, HumanMaskError, HumanMaskParams};
use crate::mask::io::quantize;
use crate::mask::NormalizedMask;

/// Text masks keyed by selector id, then image id.
pub type TextMasks = BTreeMap<String, BTreeMap<String, NormalizedMask>>;

/// Builds `H_C` for every row selector and image; categories without
/// support on an image are skipped.
pub fn build_corpus_text_masks(corpus: &Corpus, params: &HumanMaskParams) -> Result<TextMasks, AnalysisError> {
    let mut out = TextMasks::new();
    for selector in CategorySelector::table_rows() {
        let mut per_image = BTreeMap::new();
        for img in corpus.images() {
            let responses: Vec<_> = corpus.responses_for(&img.image_id).cloned().collect();
            match build_text_category_mask(&responses, selector, img.width as usize, img.height as usize, params) {
                Ok(m) => {
                    per_image.insert(img.image_id.clone(), quantize(&m));
                }
                Err(HumanMaskError::EmptyCategory(_)) => {}
                Err(e) => return Err(e.into()),
            }
        }
        out.insert(selector.id().to_string(), per_image);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextScoreRow {
    pub category: String,
    pub label: String,
    /// Whether this is one of the two umbrella rows.
    pub umbrella: bool,
    /// Best mean similarity over (detector, method); `None` when the
    /// category has no supporting responses.
    pub best_score: Option<f64>,
    pub best_detector: Option<String>,
    pub best_method: Option<String>,
    pub image_count: usize,
}

/// One row per category followed by the two umbrella rows. For each row the
/// score is the maximum over (detector, method) of the mean cosine
/// similarity between `H_C` and the method's mask over the images where
/// `H_C` exists. Ties go to the smallest (detector, method).
pub fn text_category_scores(text_masks: &TextMasks, table: &MaskTable) -> Result<Vec<TextScoreRow>, AnalysisError> {
    let mut rows = Vec::new();
    for selector in CategorySelector::table_rows() {
        let empty = BTreeMap::new();
        let per_image = text_masks.get(selector.id()).unwrap_or(&empty);
        let mut best: Option<(f64, &str, &str)> = None;
        if !per_image.is_empty() {
            for (detector, methods) in &table.detectors {
                for (method, masks) in methods {
                    let mut total = 0.0;
                    for (image, h) in per_image {
                        let m = masks.get(image).ok_or_else(|| AnalysisError::MissingMask {
                            detector: Some(detector.clone()),
                            method: method.clone(),
                            image: image.clone(),
                        })?;
                        total += pair_similarity(h, m)?;
                    }
                    let mean = total / per_image.len() as f64;
                    if best.is_none_or(|(b, _, _)| mean > b) {
                        best = Some((mean, detector, method));
                    }
                }
            }
        }
        rows.push(TextScoreRow {
            category: selector.id().to_string(),
            label: selector.label().to_string(),
            umbrella: matches!(selector, CategorySelector::Group(_)),
            best_score: best.map(|b| b.0),
            best_detector: best.map(|b| b.1.to_string()),
            best_method: best.map(|b| b.2.to_string()),
            image_count: per_image.len(),
        });
    }
    Ok(rows)
}
