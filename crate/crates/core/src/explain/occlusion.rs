//! Occlusion sensitivity: slide a baseline-filled patch over the image and
//! record how much the fake probability drops.

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::{predict_one, predict_perturbations, Baseline, Classifier, ExplainError};
use crate::mask::Mask;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcclusionConfig {
    pub patch: usize,
    pub stride: usize,
    #[serde(default)]
    pub baseline: Baseline,
}

impl OcclusionConfig {
    pub fn validate(&self) -> Result<(), ExplainError> {
        if self.patch == 0 {
            return Err(ExplainError::InvalidConfig("patch must be >= 1".into()));
        }
        if self.stride == 0 || self.stride > self.patch {
            return Err(ExplainError::InvalidConfig(format!(
                "stride must satisfy 1 <= stride <= patch ({}), got {}",
                self.patch, self.stride
            )));
        }
        Ok(())
    }
}

/// Window start offsets along one axis. The last window is flush with the
/// far edge so every pixel is covered.
pub fn window_starts(extent: usize, patch: usize, stride: usize) -> Vec<usize> {
    let patch = patch.min(extent);
    let mut starts: Vec<usize> = (0..=extent - patch).step_by(stride).collect();
    if *starts.last().expect("at least one window") + patch < extent {
        starts.push(extent - patch);
    }
    starts
}

/// Per-pixel mean of `p(img) - p(img with window occluded)` over every
/// window covering the pixel; negative means are clamped to zero.
pub fn occlusion_sensitivity(
    classifier: &dyn Classifier,
    img: &RgbImage,
    cfg: &OcclusionConfig,
) -> Result<Mask, ExplainError> {
    cfg.validate()?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let xs = window_starts(w, cfg.patch, cfg.stride);
    let ys = window_starts(h, cfg.patch, cfg.stride);
    let (pw, ph) = (cfg.patch.min(w), cfg.patch.min(h));
    let windows: Vec<(usize, usize)> = ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| (x, y)))
        .collect();

    let baseline = cfg.baseline.materialize(img)?;
    let reference = predict_one(classifier, img)?;
    let occluded = predict_perturbations(classifier, windows.len(), |i| {
        let (x0, y0) = windows[i];
        let mut out = img.clone();
        for y in y0..y0 + ph {
            for x in x0..x0 + pw {
                out.put_pixel(x as u32, y as u32, *baseline.get_pixel(x as u32, y as u32));
            }
        }
        out
    })?;

    let mut sum = vec![0.0; w * h];
    let mut cover = vec![0u32; w * h];
    for (&(x0, y0), &p) in windows.iter().zip(&occluded) {
        let importance = reference - p;
        for y in y0..y0 + ph {
            for x in x0..x0 + pw {
                sum[y * w + x] += importance;
                cover[y * w + x] += 1;
            }
        }
    }
    let values = sum
        .iter()
        .zip(&cover)
        .map(|(&s, &c)| if c == 0 { 0.0 } else { (s / c as f64).max(0.0) })
        .collect();
    Ok(Mask::new(w, h, values)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explain::{ConstantClassifier, RegionClassifier};
    use image::Rgb;

    #[test]
    fn window_layout() {
        assert_eq!(window_starts(8, 4, 4), vec![0, 4]);
        assert_eq!(window_starts(10, 4, 3), vec![0, 3, 6]);
        assert_eq!(window_starts(9, 4, 4), vec![0, 4, 5]);
        assert_eq!(window_starts(3, 8, 2), vec![0]);
    }

    #[test]
    fn constant_classifier_gives_zero_mask() {
        let img = RgbImage::from_fn(12, 10, |x, y| Rgb([(x * 20) as u8, (y * 20) as u8, 9]));
        let cfg = OcclusionConfig {
            patch: 4,
            stride: 2,
            baseline: Baseline::black(),
        };
        let m = occlusion_sensitivity(&ConstantClassifier(0.7), &img, &cfg).unwrap();
        assert!(m.is_zero());
    }

    #[test]
    fn quadrant_windows_are_piecewise_constant() {
        // 8x8, patch == stride == 4: exactly four windows, one per quadrant.
        let img = RgbImage::from_fn(8, 8, |x, y| {
            let v = 40 * (1 + (x / 4) + 2 * (y / 4)) as u8;
            Rgb([v, v, v])
        });
        let cfg = OcclusionConfig {
            patch: 4,
            stride: 4,
            baseline: Baseline::black(),
        };
        let c = RegionClassifier::top_left_quadrant();
        let m = occlusion_sensitivity(&c, &img, &cfg).unwrap();
        // Oracle: only the top-left occlusion changes p, by its mean intensity / 255.
        let tl = 40.0 / 255.0;
        for y in 0..8 {
            for x in 0..8 {
                let expect = if x < 4 && y < 4 { tl } else { 0.0 };
                assert!((m.get(x, y) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn invalid_configs() {
        let img = RgbImage::new(4, 4);
        let c = ConstantClassifier(0.1);
        for (patch, stride) in [(0, 1), (4, 0), (2, 3)] {
            let cfg = OcclusionConfig {
                patch,
                stride,
                baseline: Baseline::Mean,
            };
            assert!(occlusion_sensitivity(&c, &img, &cfg).is_err());
        }
    }
}
