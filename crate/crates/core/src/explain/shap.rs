//! KernelSHAP over superpixels.
//!
//! Shapley values are the solution of a weighted least-squares problem over
//! coalitions `z ∈ {0,1}^S` (1 = segment kept, 0 = replaced by baseline)
//! with the Shapley kernel
//!
//! ```text
//! π(z) = (S - 1) / (C(S, |z|) · |z| · (S - |z|))
//! ```
//!
//! and the efficiency constraint `Σ φ = f(all kept) - f(none kept)`, which is
//! eliminated exactly by solving for the last segment's value. With every
//! proper coalition enumerated the solution equals the exact Shapley values;
//! otherwise coalitions are sampled from the kernel (size `k` with
//! probability ∝ `(S-1)/(k(S-k))`, then a uniform subset of that size).

use image::RgbImage;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::wls::weighted_ridge;
use super::{
    broadcast_segments, check_segment_dims, compose_segments, default_samples,
    predict_perturbations, Baseline, Classifier, ExplainError, SegmentMap,
};
use crate::mask::Mask;

/// Largest segment count for which all coalitions are enumerated in `Auto` mode.
pub const EXACT_MAX_SEGMENTS: usize = 12;
/// Hard cap for forced exact mode.
const EXACT_HARD_LIMIT: usize = 20;
const RETRY_RIDGE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ShapMode {
    /// Exact when `S <= 12`, sampled otherwise.
    #[default]
    Auto,
    Exact,
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct ShapConfig {
    /// Sampled-mode coalition count; `None` means `2·S + 64`.
    pub samples: Option<usize>,
    #[serde(default)]
    pub mode: ShapMode,
    #[serde(default)]
    pub baseline: Baseline,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapValues {
    /// Signed per-segment Shapley values.
    pub phi: Vec<f64>,
    /// Prediction with every segment replaced by the baseline.
    pub base_value: f64,
    /// Prediction on the unperturbed image.
    pub full_value: f64,
    pub exact: bool,
    /// Coalitions evaluated, excluding the empty and full ones.
    pub coalitions: usize,
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Shapley kernel weight of a coalition of size `k` among `s` players.
pub fn shapley_kernel(s: usize, k: usize) -> f64 {
    (s - 1) as f64 / (binomial(s, k) * k as f64 * (s - k) as f64)
}

fn all_proper_coalitions(s: usize) -> Vec<Vec<bool>> {
    (1u64..(1u64 << s) - 1)
        .map(|bits| (0..s).map(|j| bits >> j & 1 == 1).collect())
        .collect()
}

fn sampled_coalitions(s: usize, n: usize, seed: u64) -> Vec<Vec<bool>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size_weights: Vec<f64> = (1..s).map(|k| (s - 1) as f64 / (k * (s - k)) as f64).collect();
    let sizes = WeightedIndex::new(&size_weights).expect("positive kernel weights");
    (0..n)
        .map(|_| {
            let k = sizes.sample(&mut rng) + 1;
            let mut z = vec![false; s];
            for j in rand::seq::index::sample(&mut rng, s, k) {
                z[j] = true;
            }
            z
        })
        .collect()
}

pub fn kernel_shap_values(
    classifier: &dyn Classifier,
    img: &RgbImage,
    seg: &SegmentMap,
    cfg: &ShapConfig,
    seed: u64,
) -> Result<ShapValues, ExplainError> {
    check_segment_dims(img, seg)?;
    let s = seg.count();
    let exact = match cfg.mode {
        ShapMode::Auto => s <= EXACT_MAX_SEGMENTS,
        ShapMode::Exact => {
            if s > EXACT_HARD_LIMIT {
                return Err(ExplainError::InvalidConfig(format!(
                    "exact KernelSHAP enumerates 2^S coalitions; S = {s} exceeds {EXACT_HARD_LIMIT}"
                )));
            }
            true
        }
        ShapMode::Sampled => false,
    };
    let n = cfg.samples.unwrap_or_else(|| default_samples(s));
    if !exact && n < s + 2 {
        return Err(ExplainError::InvalidConfig(format!(
            "KernelSHAP needs at least S + 2 = {} samples, got {n}",
            s + 2
        )));
    }

    let baseline = cfg.baseline.materialize(img)?;
    let coalitions = if s < 2 {
        Vec::new()
    } else if exact {
        all_proper_coalitions(s)
    } else {
        sampled_coalitions(s, n, seed)
    };

    // index 0: nothing kept, 1: everything kept, then the coalitions
    let preds = predict_perturbations(classifier, coalitions.len() + 2, |i| match i {
        0 => baseline.clone(),
        1 => img.clone(),
        _ => compose_segments(img, &baseline, seg, &coalitions[i - 2]),
    })?;
    let base_value = preds[0];
    let full_value = preds[1];
    let delta = full_value - base_value;

    if s < 2 {
        return Ok(ShapValues {
            phi: vec![delta; s],
            base_value,
            full_value,
            exact: true,
            coalitions: 0,
        });
    }

    // Eliminate φ_last = Δ − Σ_{j<last} φ_j:
    //   y − f0 − z_last·Δ = Σ_{j<last} φ_j (z_j − z_last)
    let last = s - 1;
    let mut rows = Vec::with_capacity(coalitions.len());
    let mut targets = Vec::with_capacity(coalitions.len());
    let mut weights = Vec::with_capacity(coalitions.len());
    for (z, &y) in coalitions.iter().zip(&preds[2..]) {
        let zl = if z[last] { 1.0 } else { 0.0 };
        rows.push(
            z[..last]
                .iter()
                .map(|&b| if b { 1.0 } else { 0.0 } - zl)
                .collect::<Vec<f64>>(),
        );
        targets.push(y - base_value - zl * delta);
        let k = z.iter().filter(|&&b| b).count();
        weights.push(if exact { shapley_kernel(s, k) } else { 1.0 });
    }
    let penalized = vec![true; last];
    let beta = match weighted_ridge(&rows, &targets, &weights, 0.0, &penalized) {
        Some(b) => b,
        None => {
            log::warn!("KernelSHAP system singular; retrying with ridge {RETRY_RIDGE}");
            weighted_ridge(&rows, &targets, &weights, RETRY_RIDGE, &penalized)
                .ok_or(ExplainError::SingularFit { ridge: RETRY_RIDGE })?
        }
    };
    let mut phi = beta;
    phi.push(delta - phi.iter().sum::<f64>());
    Ok(ShapValues {
        phi,
        base_value,
        full_value,
        exact,
        coalitions: coalitions.len(),
    })
}

/// Shapley values broadcast to pixels, negatives clamped to zero.
pub fn kernel_shap(
    classifier: &dyn Classifier,
    img: &RgbImage,
    seg: &SegmentMap,
    cfg: &ShapConfig,
    seed: u64,
) -> Result<Mask, ExplainError> {
    let values = kernel_shap_values(classifier, img, seg, cfg, seed)?;
    Ok(broadcast_segments(seg, &values.phi)?)
}
