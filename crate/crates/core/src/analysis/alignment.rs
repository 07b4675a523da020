//! Best-method selection against human masks, per-category aggregation and
//! parameter sweeps.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{pair_similarity, AnalysisError, MaskTable};
use crate::corpus::{Corpus, ImageLabels, Label, Stratum};
use crate::human::{build_human_mask, response_points, HumanMaskParams};
use crate::mask::io::quantize;
use crate::mask::{Mask, MaskError, NormalizedMask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub image_id: String,
    pub detector_id: String,
    /// `k*`: the most similar method.
    pub best_method: String,
    /// `s*`: its similarity.
    pub best_score: f64,
    pub all_scores: BTreeMap<String, f64>,
}

/// Scores every candidate against `h` and returns the argmax. Ties go to the
/// lexicographically smallest method id. All-zero candidates score 0.
pub fn best_method<M: AsRef<Mask>>(
    h: impl AsRef<Mask>,
    candidates: &BTreeMap<String, M>,
) -> Result<(String, f64, BTreeMap<String, f64>), AnalysisError> {
    let h = h.as_ref();
    if h.is_zero() {
        return Err(MaskError::ZeroMask.into());
    }
    let mut all = BTreeMap::new();
    let mut best: Option<(&String, f64)> = None;
    for (id, m) in candidates {
        let s = pair_similarity(h, m.as_ref())?;
        all.insert(id.clone(), s);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((id, s));
        }
    }
    let (id, s) = best.ok_or_else(|| AnalysisError::InvalidInput("no candidate masks".into()))?;
    Ok((id.clone(), s, all))
}

/// Runs best-method selection for every detector and every image with a
/// human mask. Results are ordered by detector, then by `image_ids`.
pub fn run_alignment(
    image_ids: &[String],
    human: &BTreeMap<String, NormalizedMask>,
    table: &MaskTable,
) -> Result<Vec<AlignmentResult>, AnalysisError> {
    let mut out = Vec::new();
    for (detector, methods) in &table.detectors {
        for image in image_ids {
            let Some(h) = human.get(image) else { continue };
            let mut candidates = BTreeMap::new();
            for (method, per_image) in methods {
                let m = per_image.get(image).ok_or_else(|| AnalysisError::MissingMask {
                    detector: Some(detector.clone()),
                    method: method.clone(),
                    image: image.clone(),
                })?;
                candidates.insert(method.clone(), m);
            }
            let (best_method, best_score, all_scores) = best_method(h, &candidates)?;
            out.push(AlignmentResult {
                image_id: image.clone(),
                detector_id: detector.clone(),
                best_method,
                best_score,
                all_scores,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    pub stratum: Stratum,
    pub detector_id: String,
    /// Method winning the most images; ties go to the smallest id.
    pub best_method: String,
    pub mean_best_score: f64,
    pub image_count: usize,
    /// Images won per method.
    pub wins: BTreeMap<String, usize>,
    /// Mean similarity of every method over the stratum.
    pub mean_scores: BTreeMap<String, f64>,
}

fn modal<'a>(counts: &'a BTreeMap<String, usize>) -> &'a String {
    let mut best: Option<(&String, usize)> = None;
    for (id, &n) in counts {
        if best.is_none_or(|(_, b)| n > b) {
            best = Some((id, n));
        }
    }
    best.expect("non-empty counts").0
}

/// Reports for the given strata, per detector. Empty strata are left out.
pub fn category_reports(
    results: &[AlignmentResult],
    labels: &BTreeMap<String, ImageLabels>,
    strata: &[Stratum],
) -> Result<Vec<CategoryReport>, AnalysisError> {
    let mut detectors: Vec<&str> = results.iter().map(|r| r.detector_id.as_str()).collect();
    detectors.sort_unstable();
    detectors.dedup();
    let mut out = Vec::new();
    for stratum in strata {
        for &detector in &detectors {
            let mut wins = BTreeMap::new();
            let mut sums: BTreeMap<String, f64> = BTreeMap::new();
            let mut total = 0.0;
            let mut n = 0usize;
            for r in results.iter().filter(|r| r.detector_id == detector) {
                let l = labels
                    .get(&r.image_id)
                    .ok_or_else(|| AnalysisError::InvalidInput(format!("no labels for image {}", r.image_id)))?;
                if !stratum.contains(l) {
                    continue;
                }
                *wins.entry(r.best_method.clone()).or_insert(0) += 1;
                for (m, s) in &r.all_scores {
                    *sums.entry(m.clone()).or_insert(0.0) += s;
                }
                total += r.best_score;
                n += 1;
            }
            if n == 0 {
                continue;
            }
            out.push(CategoryReport {
                stratum: *stratum,
                detector_id: detector.to_string(),
                best_method: modal(&wins).clone(),
                mean_best_score: total / n as f64,
                image_count: n,
                wins,
                mean_scores: sums.into_iter().map(|(m, s)| (m, s / n as f64)).collect(),
            });
        }
    }
    Ok(out)
}

/// The `(+)` and `(−)` reports for one label.
pub fn category_report(
    results: &[AlignmentResult],
    labels: &BTreeMap<String, ImageLabels>,
    label: Label,
) -> Result<Vec<CategoryReport>, AnalysisError> {
    category_reports(
        results,
        labels,
        &[
            Stratum::Label { label, positive: true },
            Stratum::Label { label, positive: false },
        ],
    )
}

/// Human masks for every image with at least one response, quantized the
/// same way as masks stored on disk.
pub fn build_corpus_human_masks(
    corpus: &Corpus,
    params: &HumanMaskParams,
) -> Result<BTreeMap<String, NormalizedMask>, AnalysisError> {
    let mut out = BTreeMap::new();
    for img in corpus.images() {
        let points = response_points(corpus.responses_for(&img.image_id));
        if points.is_empty() {
            continue;
        }
        let h = build_human_mask(&points, img.width as usize, img.height as usize, params)?;
        out.insert(img.image_id.clone(), quantize(&h));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub radius_frac: f64,
    pub alpha: f64,
    pub detector_id: String,
    pub mean_best_score: f64,
    pub best_method: String,
    pub image_count: usize,
}

/// Summary of one alignment run per detector: mean `s*` and modal `k*`.
pub fn summarize(results: &[AlignmentResult], radius_frac: f64, alpha: f64) -> Vec<SweepCell> {
    let mut per: BTreeMap<&str, (f64, usize, BTreeMap<String, usize>)> = BTreeMap::new();
    for r in results {
        let e = per.entry(&r.detector_id).or_default();
        e.0 += r.best_score;
        e.1 += 1;
        *e.2.entry(r.best_method.clone()).or_insert(0) += 1;
    }
    per.into_iter()
        .map(|(d, (total, n, wins))| SweepCell {
            radius_frac,
            alpha,
            detector_id: d.to_string(),
            mean_best_score: total / n as f64,
            best_method: modal(&wins).clone(),
            image_count: n,
        })
        .collect()
}

/// Rebuilds all human masks for every `(R, α)` pair and reruns best-method
/// selection. Cells are ordered by R, then α, then detector.
pub fn sweep_params(
    corpus: &Corpus,
    table: &MaskTable,
    r_grid: &[f64],
    alpha_grid: &[f64],
    base: &HumanMaskParams,
) -> Result<Vec<SweepCell>, AnalysisError> {
    if r_grid.is_empty() || alpha_grid.is_empty() {
        return Err(AnalysisError::InvalidInput("sweep grids must be non-empty".into()));
    }
    let points: Vec<(f64, f64)> = r_grid
        .iter()
        .flat_map(|&r| alpha_grid.iter().map(move |&a| (r, a)))
        .collect();
    let image_ids: Vec<String> = corpus.images().iter().map(|i| i.image_id.clone()).collect();
    let cells: Vec<Vec<SweepCell>> = points
        .par_iter()
        .map(|&(r, a)| {
            let params = HumanMaskParams {
                radius_frac: r,
                alpha: a,
                ..*base
            };
            let human = build_corpus_human_masks(corpus, &params)?;
            let results = run_alignment(&image_ids, &human, table)?;
            Ok(summarize(&results, r, a))
        })
        .collect::<Result<_, AnalysisError>>()?;
    Ok(cells.into_iter().flatten().collect())
}
