//! Import of externally computed saliency maps (gradient and CAM families).

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::io::{read_mask_file, LoadedMask, MaskIoError, MaskMeta};
use crate::mask::{apply_pipeline, MaskError, NormalizationOp, NormalizedMask};

#[derive(Debug, Error)]
pub enum ImportError {
    #[error("format error: {0}")]
    Format(#[from] MaskIoError),
    #[error("{what}: expected {expected_w}x{expected_h}, found {found_w}x{found_h}")]
    DimensionMismatch {
        what: &'static str,
        expected_w: usize,
        expected_h: usize,
        found_w: usize,
        found_h: usize,
    },
    #[error(transparent)]
    Mask(#[from] MaskError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodFamily {
    /// Class-activation mapping methods.
    Cam,
    /// Input-gradient attribution methods.
    Gradient,
    /// Black-box perturbation methods computed by this crate.
    Perturbation,
}

#[derive(Debug, Clone, Copy)]
pub struct MethodInfo {
    pub id: &'static str,
    pub name: &'static str,
    pub family: MethodFamily,
}

const fn method(id: &'static str, name: &'static str, family: MethodFamily) -> MethodInfo {
    MethodInfo { id, name, family }
}

/// The sixteen supported XAI methods.
pub const KNOWN_METHODS: [MethodInfo; 16] = [
    method("gradcam", "Grad-CAM", MethodFamily::Cam),
    method("gradcam_pp", "Grad-CAM++", MethodFamily::Cam),
    method("hirescam", "HiResCAM", MethodFamily::Cam),
    method("xgradcam", "XGrad-CAM", MethodFamily::Cam),
    method("ablationcam", "Ablation-CAM", MethodFamily::Cam),
    method("eigencam", "Eigen-CAM", MethodFamily::Cam),
    method("scorecam", "Score-CAM", MethodFamily::Cam),
    method("fullgrad", "FullGrad", MethodFamily::Cam),
    method("vanilla_gradients", "Vanilla Gradients", MethodFamily::Gradient),
    method("integrated_gradients", "Integrated Gradients", MethodFamily::Gradient),
    method("guided_ig", "Guided IG", MethodFamily::Gradient),
    method("blur_ig", "Blur IG", MethodFamily::Gradient),
    method("xrai", "XRAI", MethodFamily::Gradient),
    method("occlusion", "Occlusion Sensitivity", MethodFamily::Perturbation),
    method("lime", "LIME", MethodFamily::Perturbation),
    method("shap", "SHAP", MethodFamily::Perturbation),
];

pub fn method_info(id: &str) -> Option<&'static MethodInfo> {
    KNOWN_METHODS.iter().find(|m| m.id == id)
}

/// Blur width used by the default CAM pipeline.
pub const CAM_SMOOTH_SIGMA: f64 = 2.0;

/// Normalization applied to raw masks when the sidecar names no pipeline:
/// percentile for gradient maps, smoothing then min-max for CAM maps,
/// min-max for everything else.
pub fn default_pipeline(method_id: &str) -> Vec<NormalizationOp> {
    match method_info(method_id).map(|m| m.family) {
        Some(MethodFamily::Gradient) => vec![NormalizationOp::Percentile],
        Some(MethodFamily::Cam) => vec![
            NormalizationOp::GaussianSmooth {
                sigma: CAM_SMOOTH_SIGMA,
            },
            NormalizationOp::MinMax,
        ],
        _ => vec![NormalizationOp::MinMax],
    }
}

/// Reads and validates one mask file described by `meta`.
///
/// PGM masks are already normalized and are returned as stored. CSV masks
/// are raw and go through `meta.pipeline`, or the method's default pipeline
/// when that is empty. `image_dims` is the size of the referenced image.
pub fn import_mask(
    path: &Path,
    meta: &MaskMeta,
    image_dims: Option<(usize, usize)>,
) -> Result<(String, NormalizedMask), ImportError> {
    let loaded = read_mask_file(path)?;
    let (w, h) = loaded.dims();
    if (w, h) != (meta.width, meta.height) {
        return Err(ImportError::DimensionMismatch {
            what: "mask vs sidecar",
            expected_w: meta.width,
            expected_h: meta.height,
            found_w: w,
            found_h: h,
        });
    }
    if let Some((iw, ih)) = image_dims {
        if (w, h) != (iw, ih) {
            return Err(ImportError::DimensionMismatch {
                what: "mask vs image",
                expected_w: iw,
                expected_h: ih,
                found_w: w,
                found_h: h,
            });
        }
    }
    let mask = match loaded {
        LoadedMask::Normalized(m) => m,
        LoadedMask::Raw(raw) => {
            let pipeline = if meta.pipeline.is_empty() {
                default_pipeline(&meta.method_id)
            } else {
                meta.pipeline.clone()
            };
            apply_pipeline(&raw, &pipeline)?
        }
    };
    Ok((meta.method_id.clone(), mask))
}
