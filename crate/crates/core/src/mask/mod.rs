//! Saliency mask representation.
//!
//! A [`Mask`] is a row-major `width × height` grid of finite, non-negative
//! reals. Raw explainer output, imported attribution maps and human
//! attention maps all live in this type. A [`NormalizedMask`] is the same
//! grid with the additional guarantee that every value lies in `[0, 1]`;
//! it can only be produced by the normalizing operations in [`normalize`]
//! or by a checked conversion.

pub mod io;
pub mod normalize;
pub mod similarity;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use normalize::{
    apply_pipeline, gaussian_smooth, kmeans_quantize, min_max_scale, percentile_scale,
    NormalizationOp, Quantized,
};
pub use similarity::cosine_similarity;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaskError {
    #[error("mask dimensions must be at least 1x1, got {width}x{height}")]
    EmptyDimensions { width: usize, height: usize },
    #[error("expected {expected} values for a {width}x{height} mask, got {actual}")]
    LengthMismatch {
        width: usize,
        height: usize,
        expected: usize,
        actual: usize,
    },
    #[error("value at index {index} is {value}; mask values must be finite and >= 0")]
    InvalidValue { index: usize, value: f64 },
    #[error("value at index {index} is {value}; normalized mask values must lie in [0, 1]")]
    OutOfUnitRange { index: usize, value: f64 },
    #[error("dimension mismatch: {left_w}x{left_h} vs {right_w}x{right_h}")]
    DimensionMismatch {
        left_w: usize,
        left_h: usize,
        right_w: usize,
        right_h: usize,
    },
    #[error("cosine similarity is undefined for an all-zero mask")]
    ZeroMask,
    #[error("normalization pipeline is empty")]
    EmptyPipeline,
    #[error("invalid normalization op: {0}")]
    InvalidOp(String),
}

/// Row-major grid of non-negative importance values.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMask", into = "RawMask")]
pub struct Mask {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawMask {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl TryFrom<RawMask> for Mask {
    type Error = MaskError;

    fn try_from(raw: RawMask) -> Result<Self, Self::Error> {
        Mask::new(raw.width, raw.height, raw.values)
    }
}

impl From<Mask> for RawMask {
    fn from(m: Mask) -> Self {
        RawMask {
            width: m.width,
            height: m.height,
            values: m.values,
        }
    }
}

impl Mask {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self, MaskError> {
        if width == 0 || height == 0 {
            return Err(MaskError::EmptyDimensions { width, height });
        }
        let expected = width * height;
        if values.len() != expected {
            return Err(MaskError::LengthMismatch {
                width,
                height,
                expected,
                actual: values.len(),
            });
        }
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(MaskError::InvalidValue { index, value });
        }
        Ok(Mask {
            width,
            height,
            values,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self, MaskError> {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self, MaskError> {
        Self::new(width, height, vec![value; width * height])
    }

    /// Builds a mask from a nested row list (`rows[y][x]`).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, MaskError> {
        let height = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        let values: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(width, height, values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Multiplies every value by `factor` (must be finite and non-negative).
    pub fn scaled(&self, factor: f64) -> Result<Mask, MaskError> {
        Mask::new(
            self.width,
            self.height,
            self.values.iter().map(|v| v * factor).collect(),
        )
    }

    pub fn ensure_same_dims(&self, other: &Mask) -> Result<(), MaskError> {
        if self.dims() != other.dims() {
            return Err(MaskError::DimensionMismatch {
                left_w: self.width,
                left_h: self.height,
                right_w: other.width,
                right_h: other.height,
            });
        }
        Ok(())
    }

    /// Builds a mask without validation. Callers guarantee the invariants.
    pub(crate) fn from_parts_unchecked(width: usize, height: usize, values: Vec<f64>) -> Mask {
        debug_assert_eq!(values.len(), width * height);
        debug_assert!(values.iter().all(|v| v.is_finite() && *v >= 0.0));
        Mask {
            width,
            height,
            values,
        }
    }
}

impl fmt::Debug for Mask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Mask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("min", &self.min())
            .field("max", &self.max())
            .finish()
    }
}

impl AsRef<Mask> for Mask {
    fn as_ref(&self) -> &Mask {
        self
    }
}

/// A [`Mask`] whose values all lie in `[0, 1]`.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Mask", into = "Mask")]
pub struct NormalizedMask(Mask);

impl NormalizedMask {
    pub fn as_mask(&self) -> &Mask {
        &self.0
    }

    pub fn into_mask(self) -> Mask {
        self.0
    }

    pub fn width(&self) -> usize {
        self.0.width
    }

    pub fn height(&self) -> usize {
        self.0.height
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    pub fn values(&self) -> &[f64] {
        &self.0.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.0.get(x, y)
    }

    pub(crate) fn from_mask_unchecked(mask: Mask) -> Self {
        debug_assert!(mask.values.iter().all(|v| (0.0..=1.0).contains(v)));
        NormalizedMask(mask)
    }
}

impl TryFrom<Mask> for NormalizedMask {
    type Error = MaskError;

    fn try_from(mask: Mask) -> Result<Self, Self::Error> {
        if let Some((index, &value)) = mask.values.iter().enumerate().find(|(_, v)| **v > 1.0) {
            return Err(MaskError::OutOfUnitRange { index, value });
        }
        Ok(NormalizedMask(mask))
    }
}

impl From<NormalizedMask> for Mask {
    fn from(m: NormalizedMask) -> Self {
        m.0
    }
}

impl AsRef<Mask> for NormalizedMask {
    fn as_ref(&self) -> &Mask {
        &self.0
    }
}

impl fmt::Debug for NormalizedMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("NormalizedMask").field(&self.0).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes_and_values() {
        assert!(matches!(
            Mask::new(0, 3, vec![]),
            Err(MaskError::EmptyDimensions { .. })
        ));
        assert!(matches!(
            Mask::new(2, 2, vec![0.0; 3]),
            Err(MaskError::LengthMismatch { expected: 4, .. })
        ));
        assert!(matches!(
            Mask::new(1, 2, vec![0.0, -1.0]),
            Err(MaskError::InvalidValue { index: 1, .. })
        ));
        assert!(matches!(
            Mask::new(1, 1, vec![f64::NAN]),
            Err(MaskError::InvalidValue { .. })
        ));
    }

    #[test]
    fn normalized_conversion_checks_range() {
        let m = Mask::from_rows(&[vec![0.0, 1.5]]).unwrap();
        assert!(matches!(
            NormalizedMask::try_from(m),
            Err(MaskError::OutOfUnitRange { index: 1, .. })
        ));
        let ok = Mask::from_rows(&[vec![0.0, 1.0]]).unwrap();
        assert!(NormalizedMask::try_from(ok).is_ok());
    }

    #[test]
    fn serde_validates() {
        let bad = r#"{"width":1,"height":1,"values":[-2.0]}"#;
        assert!(serde_json::from_str::<Mask>(bad).is_err());
        let bad_norm = r#"{"width":1,"height":1,"values":[2.0]}"#;
        assert!(serde_json::from_str::<NormalizedMask>(bad_norm).is_err());
        let good = r#"{"width":2,"height":1,"values":[0.25,1.0]}"#;
        let m: NormalizedMask = serde_json::from_str(good).unwrap();
        assert_eq!(m.get(1, 0), 1.0);
    }
}
