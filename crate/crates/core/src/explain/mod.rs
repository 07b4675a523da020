//! Perturbation-based explainers over a black-box fake/real classifier.
//!
//! Three methods are implemented natively: occlusion sensitivity, LIME on
//! superpixels, and KernelSHAP on superpixels. All of them only need
//! predictions, so any [`Classifier`] works. Gradient and CAM-family maps
//! are computed elsewhere and brought in with [`import::import_mask`].
//!
//! Attributions are sign-clamped: negative evidence is set to zero before
//! normalization, so every produced mask is comparable with click-based
//! human masks.

pub mod classifier;
pub mod http;
pub mod import;
pub mod lime;
pub mod occlusion;
pub mod shap;
pub mod slic;
mod wls;

use image::{Rgb, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::normalize::smooth_plane;
use crate::mask::{Mask, MaskError};

pub use classifier::{
    Classifier, ClassifierError, ConstantClassifier, RegionClassifier, SegmentAdditiveClassifier,
};
pub use lime::{lime_explain, lime_segment_weights, LimeConfig, LimeFit};
pub use occlusion::{occlusion_sensitivity, OcclusionConfig};
pub use shap::{kernel_shap, kernel_shap_values, ShapConfig, ShapMode, ShapValues};
pub use slic::{slic_segments, SegmentMap};

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("classifier failed on perturbation {index}: {source}")]
    ClassifierFailure {
        index: usize,
        #[source]
        source: ClassifierError,
    },
    #[error("invalid explainer configuration: {0}")]
    InvalidConfig(String),
    #[error("image is {image_w}x{image_h} but {what} is {other_w}x{other_h}")]
    DimensionMismatch {
        what: &'static str,
        image_w: u32,
        image_h: u32,
        other_w: u32,
        other_h: u32,
    },
    #[error("weighted least-squares system is singular even with ridge penalty {ridge}")]
    SingularFit { ridge: f64 },
    #[error(transparent)]
    Mask(#[from] MaskError),
}

/// What occluded or switched-off pixels are replaced with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Baseline {
    /// Per-image mean color.
    #[default]
    Mean,
    /// A constant gray level 0-255 (0 is black).
    Constant { value: u8 },
    /// The image blurred with a Gaussian of the given sigma.
    Blur { sigma: f64 },
}

impl Baseline {
    pub fn black() -> Self {
        Baseline::Constant { value: 0 }
    }

    /// A full-size image holding the replacement color of every pixel.
    pub fn materialize(&self, img: &RgbImage) -> Result<RgbImage, ExplainError> {
        let (w, h) = img.dimensions();
        match *self {
            Baseline::Mean => {
                let n = (w as f64) * (h as f64);
                let mut sums = [0.0f64; 3];
                for p in img.pixels() {
                    for c in 0..3 {
                        sums[c] += p[c] as f64;
                    }
                }
                let mean = sums.map(|s| (s / n).round().clamp(0.0, 255.0) as u8);
                Ok(RgbImage::from_pixel(w, h, Rgb(mean)))
            }
            Baseline::Constant { value } => Ok(RgbImage::from_pixel(w, h, Rgb([value; 3]))),
            Baseline::Blur { sigma } => {
                if !(sigma > 0.0 && sigma.is_finite()) {
                    return Err(ExplainError::InvalidConfig(format!(
                        "blur baseline needs sigma > 0, got {sigma}"
                    )));
                }
                let (wu, hu) = (w as usize, h as usize);
                let mut out = RgbImage::new(w, h);
                for c in 0..3 {
                    let plane: Vec<f64> = img.pixels().map(|p| p[c] as f64).collect();
                    let blurred = smooth_plane(&plane, wu, hu, sigma);
                    for (i, v) in blurred.into_iter().enumerate() {
                        let (x, y) = ((i % wu) as u32, (i / wu) as u32);
                        out.get_pixel_mut(x, y)[c] = v.round().clamp(0.0, 255.0) as u8;
                    }
                }
                Ok(out)
            }
        }
    }
}

/// Mean of the three channels, 0-255.
pub(crate) fn intensity(p: &Rgb<u8>) -> f64 {
    (p[0] as f64 + p[1] as f64 + p[2] as f64) / 3.0
}

/// Runs the classifier over `count` lazily built perturbations, batching by
/// the classifier's preferred size and fanning batches out over the rayon
/// pool when the classifier allows concurrent calls. Output order matches
/// perturbation index.
pub(crate) fn predict_perturbations<F>(
    classifier: &dyn Classifier,
    count: usize,
    make: F,
) -> Result<Vec<f64>, ExplainError>
where
    F: Fn(usize) -> RgbImage + Sync,
{
    let batch = classifier.max_batch().max(1);
    let starts: Vec<usize> = (0..count).step_by(batch).collect();
    let run = |start: usize| -> Result<Vec<f64>, ExplainError> {
        let end = (start + batch).min(count);
        let images: Vec<RgbImage> = (start..end).map(&make).collect();
        let out = classifier
            .predict(&images)
            .map_err(|source| ExplainError::ClassifierFailure {
                index: start,
                source,
            })?;
        if out.len() != images.len() {
            return Err(ExplainError::ClassifierFailure {
                index: start,
                source: ClassifierError::new(format!(
                    "returned {} predictions for a batch of {}",
                    out.len(),
                    images.len()
                )),
            });
        }
        if let Some(k) = out.iter().position(|p| !p.is_finite()) {
            return Err(ExplainError::ClassifierFailure {
                index: start + k,
                source: ClassifierError::new("non-finite prediction"),
            });
        }
        Ok(out)
    };
    let chunks: Vec<Vec<f64>> = if classifier.supports_concurrency() {
        starts.par_iter().map(|&s| run(s)).collect::<Result<_, _>>()?
    } else {
        starts.iter().map(|&s| run(s)).collect::<Result<_, _>>()?
    };
    Ok(chunks.into_iter().flatten().collect())
}

pub(crate) fn predict_one(classifier: &dyn Classifier, img: &RgbImage) -> Result<f64, ExplainError> {
    Ok(predict_perturbations(classifier, 1, |_| img.clone())?[0])
}

/// Copies baseline pixels into every segment switched off in `on`.
pub(crate) fn compose_segments(
    img: &RgbImage,
    baseline: &RgbImage,
    seg: &SegmentMap,
    on: &[bool],
) -> RgbImage {
    let mut out = img.clone();
    let w = img.width() as usize;
    for (i, &label) in seg.labels().iter().enumerate() {
        if !on[label] {
            let (x, y) = ((i % w) as u32, (i / w) as u32);
            out.put_pixel(x, y, *baseline.get_pixel(x, y));
        }
    }
    out
}

/// Broadcasts per-segment values to pixels, clamping negatives to zero.
pub(crate) fn broadcast_segments(seg: &SegmentMap, values: &[f64]) -> Result<Mask, MaskError> {
    let pixels = seg
        .labels()
        .iter()
        .map(|&l| values[l].max(0.0))
        .collect();
    Mask::new(seg.width() as usize, seg.height() as usize, pixels)
}

pub(crate) fn check_segment_dims(img: &RgbImage, seg: &SegmentMap) -> Result<(), ExplainError> {
    if img.dimensions() != (seg.width(), seg.height()) {
        return Err(ExplainError::DimensionMismatch {
            what: "segment map",
            image_w: img.width(),
            image_h: img.height(),
            other_w: seg.width(),
            other_h: seg.height(),
        });
    }
    Ok(())
}

/// Default perturbation sample budget for `segments` superpixels.
pub fn default_samples(segments: usize) -> usize {
    2 * segments + 64
}

/// Which native explainer to run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum ExplainerMethod {
    #[serde(rename = "os")]
    OcclusionSensitivity { patch: usize, stride: usize },
    Lime {
        segments: usize,
        samples: Option<usize>,
        kernel_width: f64,
    },
    #[serde(rename = "shap")]
    KernelShap {
        segments: usize,
        samples: Option<usize>,
        #[serde(default)]
        mode: ShapMode,
    },
}

impl ExplainerMethod {
    /// Method id under which masks are stored.
    pub fn id(&self) -> &'static str {
        match self {
            ExplainerMethod::OcclusionSensitivity { .. } => "occlusion",
            ExplainerMethod::Lime { .. } => "lime",
            ExplainerMethod::KernelShap { .. } => "shap",
        }
    }
}

/// Full configuration of one explanation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainerConfig {
    #[serde(flatten)]
    pub method: ExplainerMethod,
    pub seed: u64,
    #[serde(default)]
    pub baseline: Baseline,
    /// SLIC compactness for the superpixel methods.
    #[serde(default = "default_compactness")]
    pub compactness: f64,
}

fn default_compactness() -> f64 {
    10.0
}

impl ExplainerConfig {
    pub fn occlusion(patch: usize, stride: usize) -> Self {
        Self::with_method(ExplainerMethod::OcclusionSensitivity { patch, stride })
    }

    pub fn lime(segments: usize) -> Self {
        Self::with_method(ExplainerMethod::Lime {
            segments,
            samples: None,
            kernel_width: lime::DEFAULT_KERNEL_WIDTH,
        })
    }

    pub fn kernel_shap(segments: usize) -> Self {
        Self::with_method(ExplainerMethod::KernelShap {
            segments,
            samples: None,
            mode: ShapMode::Auto,
        })
    }

    fn with_method(method: ExplainerMethod) -> Self {
        ExplainerConfig {
            method,
            seed: 0,
            baseline: Baseline::default(),
            compactness: default_compactness(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_baseline(mut self, baseline: Baseline) -> Self {
        self.baseline = baseline;
        self
    }
}

/// Output of [`explain`]: the raw (clamped, unnormalized) mask plus the
/// segment-level detail for the superpixel methods.
#[derive(Debug, Clone)]
pub struct Explanation {
    pub method_id: &'static str,
    pub mask: Mask,
    pub segments: Option<SegmentMap>,
    pub segment_values: Option<Vec<f64>>,
}

/// Runs the configured explainer on one image, segmenting first when needed.
pub fn explain(
    classifier: &dyn Classifier,
    img: &RgbImage,
    cfg: &ExplainerConfig,
) -> Result<Explanation, ExplainError> {
    match cfg.method {
        ExplainerMethod::OcclusionSensitivity { patch, stride } => {
            let oc = OcclusionConfig {
                patch,
                stride,
                baseline: cfg.baseline,
            };
            Ok(Explanation {
                method_id: cfg.method.id(),
                mask: occlusion_sensitivity(classifier, img, &oc)?,
                segments: None,
                segment_values: None,
            })
        }
        ExplainerMethod::Lime {
            segments,
            samples,
            kernel_width,
        } => {
            let seg = slic_segments(img, segments, cfg.compactness)?;
            let lc = LimeConfig {
                samples,
                kernel_width,
                baseline: cfg.baseline,
                ..LimeConfig::default()
            };
            let fit = lime_segment_weights(classifier, img, &seg, &lc, cfg.seed)?;
            let mask = broadcast_segments(&seg, &fit.weights)?;
            Ok(Explanation {
                method_id: cfg.method.id(),
                mask,
                segment_values: Some(fit.weights),
                segments: Some(seg),
            })
        }
        ExplainerMethod::KernelShap {
            segments,
            samples,
            mode,
        } => {
            let seg = slic_segments(img, segments, cfg.compactness)?;
            let sc = ShapConfig {
                samples,
                mode,
                baseline: cfg.baseline,
            };
            let values = kernel_shap_values(classifier, img, &seg, &sc, cfg.seed)?;
            let mask = broadcast_segments(&seg, &values.phi)?;
            Ok(Explanation {
                method_id: cfg.method.id(),
                mask,
                segment_values: Some(values.phi),
                segments: Some(seg),
            })
        }
    }
}
