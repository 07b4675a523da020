//! LIME over superpixels: random on/off segment perturbations and a
//! locally weighted ridge surrogate.

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::wls::weighted_ridge;
use super::{
    broadcast_segments, check_segment_dims, compose_segments, default_samples,
    predict_perturbations, Baseline, Classifier, ExplainError, SegmentMap,
};
use crate::mask::Mask;

pub const DEFAULT_KERNEL_WIDTH: f64 = 0.25;
pub const DEFAULT_RIDGE: f64 = 1e-3;
/// Penalty multiplier for the single retry after a singular fit.
const RETRY_FACTOR: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimeConfig {
    /// Perturbation count; `None` means `2·S + 64`.
    pub samples: Option<usize>,
    pub kernel_width: f64,
    pub ridge: f64,
    #[serde(default)]
    pub baseline: Baseline,
}

impl Default for LimeConfig {
    fn default() -> Self {
        LimeConfig {
            samples: None,
            kernel_width: DEFAULT_KERNEL_WIDTH,
            ridge: DEFAULT_RIDGE,
            baseline: Baseline::Mean,
        }
    }
}

/// The fitted local surrogate.
#[derive(Debug, Clone, PartialEq)]
pub struct LimeFit {
    pub intercept: f64,
    /// Signed per-segment coefficients.
    pub weights: Vec<f64>,
    /// Prediction on the unperturbed image (sample 0 is always all-on).
    pub full_prediction: f64,
    pub samples: usize,
    /// Ridge penalty actually used (raised once if the first fit was singular).
    pub ridge: f64,
}

/// Exponential kernel on the cosine distance to the all-on vector.
pub fn proximity(on: &[bool], kernel_width: f64) -> f64 {
    let k = on.iter().filter(|&&b| b).count() as f64;
    let s = on.len() as f64;
    let d = if k == 0.0 { 1.0 } else { 1.0 - (k / s).sqrt() };
    (-(d * d) / (kernel_width * kernel_width)).exp()
}

/// Draws the perturbation set: row 0 is all-on, the rest are i.i.d. fair bits.
pub fn sample_coalitions(segments: usize, samples: usize, seed: u64) -> Vec<Vec<bool>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(samples);
    out.push(vec![true; segments]);
    for _ in 1..samples {
        out.push((0..segments).map(|_| rng.random::<bool>()).collect());
    }
    out
}

pub fn lime_segment_weights(
    classifier: &dyn Classifier,
    img: &RgbImage,
    seg: &SegmentMap,
    cfg: &LimeConfig,
    seed: u64,
) -> Result<LimeFit, ExplainError> {
    check_segment_dims(img, seg)?;
    let s = seg.count();
    let n = cfg.samples.unwrap_or_else(|| default_samples(s));
    if n < s + 2 {
        return Err(ExplainError::InvalidConfig(format!(
            "LIME needs at least S + 2 = {} samples, got {n}",
            s + 2
        )));
    }
    if !(cfg.kernel_width > 0.0) || !(cfg.ridge >= 0.0) {
        return Err(ExplainError::InvalidConfig(
            "kernel_width must be > 0 and ridge >= 0".into(),
        ));
    }
    let baseline = cfg.baseline.materialize(img)?;
    let coalitions = sample_coalitions(s, n, seed);
    let y = predict_perturbations(classifier, n, |i| {
        compose_segments(img, &baseline, seg, &coalitions[i])
    })?;

    let rows: Vec<Vec<f64>> = coalitions
        .iter()
        .map(|z| {
            std::iter::once(1.0)
                .chain(z.iter().map(|&b| if b { 1.0 } else { 0.0 }))
                .collect()
        })
        .collect();
    let weights: Vec<f64> = coalitions
        .iter()
        .map(|z| proximity(z, cfg.kernel_width))
        .collect();
    let mut penalized = vec![true; s + 1];
    penalized[0] = false;

    let mut ridge = cfg.ridge;
    let beta = match weighted_ridge(&rows, &y, &weights, ridge, &penalized) {
        Some(b) => b,
        None => {
            ridge = if cfg.ridge > 0.0 { cfg.ridge * RETRY_FACTOR } else { DEFAULT_RIDGE };
            log::warn!("LIME fit singular; retrying with ridge {ridge}");
            weighted_ridge(&rows, &y, &weights, ridge, &penalized)
                .ok_or(ExplainError::SingularFit { ridge })?
        }
    };
    Ok(LimeFit {
        intercept: beta[0],
        weights: beta[1..].to_vec(),
        full_prediction: y[0],
        samples: n,
        ridge,
    })
}

/// LIME segment weights broadcast to pixels, negatives clamped to zero.
pub fn lime_explain(
    classifier: &dyn Classifier,
    img: &RgbImage,
    seg: &SegmentMap,
    cfg: &LimeConfig,
    seed: u64,
) -> Result<Mask, ExplainError> {
    let fit = lime_segment_weights(classifier, img, seg, cfg, seed)?;
    Ok(broadcast_segments(seg, &fit.weights)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explain::{Classifier, SegmentAdditiveClassifier};
    use image::Rgb;

    fn textured(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| {
            let v = (60 + (x * 7 + y * 13) % 150) as u8;
            Rgb([v, v / 2 + 40, 255 - v])
        })
    }

    #[test]
    fn recovers_linear_weights() {
        let img = textured(32, 16);
        let seg = SegmentMap::grid(32, 16, 4, 2).unwrap();
        let w = vec![0.08, -0.05, 0.0, 0.12, 0.02, -0.01, 0.06, 0.03];
        let c = SegmentAdditiveClassifier::new(seg.clone(), w.clone(), 0.3).unwrap();
        let cfg = LimeConfig {
            baseline: Baseline::black(),
            ..LimeConfig::default()
        };
        let fit = lime_segment_weights(&c, &img, &seg, &cfg, 11).unwrap();

        // Oracle: with a black baseline the surrogate coefficient of segment s
        // is exactly w_s · mean_intensity_s / 255.
        let means = c.segment_means(&img);
        for s in 0..8 {
            let truth = w[s] * means[s];
            assert!(
                (fit.weights[s] - truth).abs() < 1e-3,
                "segment {s}: {} vs {truth}",
                fit.weights[s]
            );
        }
        assert!((fit.intercept - 0.3).abs() < 1e-3);
        assert_eq!(fit.full_prediction, c.predict(&[img]).unwrap()[0]);
    }

    #[test]
    fn irrelevant_segment_gets_near_zero_weight() {
        let img = textured(24, 24);
        let seg = SegmentMap::grid(24, 24, 3, 3).unwrap();
        let mut w = vec![0.05; 9];
        w[4] = 0.0;
        let c = SegmentAdditiveClassifier::new(seg.clone(), w, 0.1).unwrap();
        let fit = lime_segment_weights(&c, &img, &seg, &LimeConfig::default(), 5).unwrap();
        assert!(fit.weights[4].abs() < 1e-3);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let img = textured(16, 16);
        let seg = SegmentMap::grid(16, 16, 2, 2).unwrap();
        let c = SegmentAdditiveClassifier::new(seg.clone(), vec![0.1, 0.2, 0.0, 0.05], 0.0).unwrap();
        let cfg = LimeConfig::default();
        let a = lime_explain(&c, &img, &seg, &cfg, 9).unwrap();
        let b = lime_explain(&c, &img, &seg, &cfg, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_few_samples_rejected() {
        let img = textured(8, 8);
        let seg = SegmentMap::grid(8, 8, 2, 2).unwrap();
        let c = SegmentAdditiveClassifier::new(seg.clone(), vec![0.1; 4], 0.0).unwrap();
        let cfg = LimeConfig {
            samples: Some(5),
            ..LimeConfig::default()
        };
        assert!(matches!(
            lime_segment_weights(&c, &img, &seg, &cfg, 0),
            Err(ExplainError::InvalidConfig(_))
        ));
    }

    #[test]
    fn proximity_kernel() {
        assert_eq!(proximity(&[true, true], 0.25), 1.0);
        assert!((proximity(&[false, false], 0.25) - (-16.0f64).exp()).abs() < 1e-15);
        let half = proximity(&[true, false, true, false], 0.25);
        let d = 1.0 - 0.5f64.sqrt();
        assert!((half - (-(d * d) / 0.0625).exp()).abs() < 1e-15);
    }
}
