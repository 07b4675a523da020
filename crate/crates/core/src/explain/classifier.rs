//! The detector abstraction and the built-in deterministic classifiers.

use image::RgbImage;
use thiserror::Error;

use super::{intensity, SegmentMap};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{0}")]
pub struct ClassifierError(pub String);

impl ClassifierError {
    pub fn new(msg: impl Into<String>) -> Self {
        ClassifierError(msg.into())
    }
}

/// A binary fake/real image detector.
///
/// `predict` maps a batch of RGB images to fake-class probabilities in
/// `[0, 1]`, one per image, in batch order. Implementations must be
/// deterministic. Engines call `predict` from several threads at once
/// unless [`supports_concurrency`](Classifier::supports_concurrency)
/// returns `false`.
pub trait Classifier: Send + Sync {
    fn predict(&self, batch: &[RgbImage]) -> Result<Vec<f64>, ClassifierError>;

    fn supports_concurrency(&self) -> bool {
        true
    }

    /// Largest batch the engine should send in one call.
    fn max_batch(&self) -> usize {
        32
    }
}

impl<C: Classifier + ?Sized> Classifier for Box<C> {
    fn predict(&self, batch: &[RgbImage]) -> Result<Vec<f64>, ClassifierError> {
        (**self).predict(batch)
    }

    fn supports_concurrency(&self) -> bool {
        (**self).supports_concurrency()
    }

    fn max_batch(&self) -> usize {
        (**self).max_batch()
    }
}

/// Always returns the same probability.
#[derive(Debug, Clone, Copy)]
pub struct ConstantClassifier(pub f64);

impl Classifier for ConstantClassifier {
    fn predict(&self, batch: &[RgbImage]) -> Result<Vec<f64>, ClassifierError> {
        Ok(vec![self.0; batch.len()])
    }
}

/// Weighted sum of mean region intensities over a regular grid.
///
/// The image is split into `cols × rows` cells (cell `i` spans
/// `[i·w/cols, (i+1)·w/cols)` horizontally, likewise vertically) and
/// `p = Σ weight_r · mean_intensity_r / 255`, clamped to `[0, 1]`.
/// With non-negative weights summing to at most one the clamp never bites.
#[derive(Debug, Clone)]
pub struct RegionClassifier {
    cols: u32,
    rows: u32,
    weights: Vec<f64>,
}

impl RegionClassifier {
    pub fn new(cols: u32, rows: u32, weights: Vec<f64>) -> Result<Self, ClassifierError> {
        if cols == 0 || rows == 0 {
            return Err(ClassifierError::new("region grid must be at least 1x1"));
        }
        if weights.len() != (cols * rows) as usize {
            return Err(ClassifierError::new(format!(
                "expected {} region weights, got {}",
                cols * rows,
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(ClassifierError::new("region weights must be finite"));
        }
        Ok(RegionClassifier {
            cols,
            rows,
            weights,
        })
    }

    /// "Fake probability = mean intensity of the top-left quadrant / 255."
    pub fn top_left_quadrant() -> Self {
        Self::new(2, 2, vec![1.0, 0.0, 0.0, 0.0]).expect("valid grid")
    }

    /// The fixed built-in toy detector: a 4×4 grid whose weights favor the
    /// image center and sum to one.
    pub fn toy() -> Self {
        #[rustfmt::skip]
        let w = [
            1.0, 2.0, 2.0, 1.0,
            2.0, 6.0, 5.0, 2.0,
            2.0, 5.0, 6.0, 2.0,
            1.0, 2.0, 2.0, 1.0,
        ];
        let total: f64 = w.iter().sum();
        Self::new(4, 4, w.iter().map(|v| v / total).collect()).expect("valid grid")
    }

    pub fn cell_bounds(&self, width: u32, height: u32, cell: usize) -> (u32, u32, u32, u32) {
        let cx = cell as u32 % self.cols;
        let cy = cell as u32 / self.cols;
        let x0 = (cx as u64 * width as u64 / self.cols as u64) as u32;
        let x1 = ((cx as u64 + 1) * width as u64 / self.cols as u64) as u32;
        let y0 = (cy as u64 * height as u64 / self.rows as u64) as u32;
        let y1 = ((cy as u64 + 1) * height as u64 / self.rows as u64) as u32;
        (x0, x1, y0, y1)
    }

    pub fn score(&self, img: &RgbImage) -> f64 {
        let (w, h) = img.dimensions();
        let mut p = 0.0;
        for (cell, &weight) in self.weights.iter().enumerate() {
            if weight == 0.0 {
                continue;
            }
            let (x0, x1, y0, y1) = self.cell_bounds(w, h, cell);
            let n = ((x1 - x0) * (y1 - y0)) as f64;
            if n == 0.0 {
                continue;
            }
            let mut sum = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    sum += intensity(img.get_pixel(x, y));
                }
            }
            p += weight * sum / n / 255.0;
        }
        p.clamp(0.0, 1.0)
    }
}

impl Classifier for RegionClassifier {
    fn predict(&self, batch: &[RgbImage]) -> Result<Vec<f64>, ClassifierError> {
        Ok(batch.iter().map(|img| self.score(img)).collect())
    }
}

/// `p = bias + Σ_s weight_s · mean_intensity(segment s) / 255`.
///
/// Additive across segments, so its Shapley values under a constant
/// baseline are known in closed form; used to validate LIME and KernelSHAP.
/// No clamping is applied.
#[derive(Debug, Clone)]
pub struct SegmentAdditiveClassifier {
    segments: SegmentMap,
    weights: Vec<f64>,
    bias: f64,
}

impl SegmentAdditiveClassifier {
    pub fn new(segments: SegmentMap, weights: Vec<f64>, bias: f64) -> Result<Self, ClassifierError> {
        if weights.len() != segments.count() {
            return Err(ClassifierError::new(format!(
                "expected {} segment weights, got {}",
                segments.count(),
                weights.len()
            )));
        }
        Ok(SegmentAdditiveClassifier {
            segments,
            weights,
            bias,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Mean intensity / 255 of every segment.
    pub fn segment_means(&self, img: &RgbImage) -> Vec<f64> {
        let mut sums = vec![0.0; self.segments.count()];
        let w = img.width() as usize;
        for (i, &label) in self.segments.labels().iter().enumerate() {
            sums[label] += intensity(img.get_pixel((i % w) as u32, (i / w) as u32));
        }
        sums.iter()
            .zip(self.segments.sizes())
            .map(|(s, &n)| s / n as f64 / 255.0)
            .collect()
    }

    pub fn score(&self, img: &RgbImage) -> f64 {
        self.bias
            + self
                .segment_means(img)
                .iter()
                .zip(&self.weights)
                .map(|(m, w)| m * w)
                .sum::<f64>()
    }
}

impl Classifier for SegmentAdditiveClassifier {
    fn predict(&self, batch: &[RgbImage]) -> Result<Vec<f64>, ClassifierError> {
        batch
            .iter()
            .map(|img| {
                if img.dimensions() != (self.segments.width(), self.segments.height()) {
                    return Err(ClassifierError::new("image does not match the segment map"));
                }
                Ok(self.score(img))
            })
            .collect()
    }
}
