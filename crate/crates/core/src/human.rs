//! Human attention masks built from survey clicks.
//!
//! Every click adds `c` inside a disc of radius `round(R · min(w, h))`
//! pixels; the accumulated map is min-max normalized and then skewed with
//! `v ↦ (e^{αv} − 1) / (e^{α} − 1)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AnnotationResponse, CategorySelector};
use crate::mask::{min_max_scale, Mask, MaskError, NormalizedMask};

pub const DEFAULT_RADIUS_FRAC: f64 = 0.088;
pub const DEFAULT_ALPHA: f64 = 3.0;

#[derive(Debug, Error)]
pub enum HumanMaskError {
    #[error("no click points")]
    NoPoints,
    #[error("click ({x}, {y}) is outside the {width}x{height} image")]
    OutOfBounds { x: u32, y: u32, width: usize, height: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("no responses in category {0}")]
    EmptyCategory(String),
    #[error("no masks to aggregate")]
    NoMasks,
    #[error(transparent)]
    Mask(#[from] MaskError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClickPoint {
    pub x: u32,
    pub y: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HumanMaskParams {
    /// Disc radius as a fraction of the shorter image side.
    pub radius_frac: f64,
    /// Amount added per click.
    pub increment: f64,
    /// Skew exponent.
    pub alpha: f64,
}

impl Default for HumanMaskParams {
    fn default() -> Self {
        HumanMaskParams {
            radius_frac: DEFAULT_RADIUS_FRAC,
            increment: 1.0,
            alpha: DEFAULT_ALPHA,
        }
    }
}

impl HumanMaskParams {
    pub fn new(radius_frac: f64, alpha: f64) -> Result<Self, HumanMaskError> {
        let p = HumanMaskParams {
            radius_frac,
            alpha,
            ..Self::default()
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), HumanMaskError> {
        if !(self.radius_frac > 0.0 && self.radius_frac <= 1.0) {
            return Err(HumanMaskError::InvalidParams(format!(
                "R must be in (0, 1], got {}",
                self.radius_frac
            )));
        }
        if !(self.increment > 0.0 && self.increment.is_finite()) {
            return Err(HumanMaskError::InvalidParams(format!(
                "c must be > 0, got {}",
                self.increment
            )));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(HumanMaskError::InvalidParams(format!(
                "alpha must be > 0, got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    /// Disc radius in pixels for a `width × height` image.
    pub fn radius_px(&self, width: usize, height: usize) -> usize {
        (self.radius_frac * width.min(height) as f64).round() as usize
    }
}

/// Exponential skew; maps 0 to 0 and 1 to 1 exactly.
pub fn skew(v: f64, alpha: f64) -> f64 {
    (alpha * v).exp_m1() / alpha.exp_m1()
}

/// Number of click discs covering each pixel. A pixel is inside a disc when
/// its squared distance to the click is at most `r²`.
pub fn coverage_counts(points: &[ClickPoint], width: usize, height: usize, radius: usize) -> Vec<u32> {
    let mut counts = vec![0u32; width * height];
    let r = radius as i64;
    for p in points {
        let (cx, cy) = (p.x as i64, p.y as i64);
        let y0 = (cy - r).max(0);
        let y1 = (cy + r).min(height as i64 - 1);
        let x0 = (cx - r).max(0);
        let x1 = (cx + r).min(width as i64 - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                if (x - cx).pow(2) + (y - cy).pow(2) <= r * r {
                    counts[y as usize * width + x as usize] += 1;
                }
            }
        }
    }
    counts
}

/// Builds the human mask for one image.
///
/// The accumulated values are `count · c`, so min-max scaling is computed
/// from the integer counts and `c` cancels exactly. When every pixel has the
/// same coverage the mask is all ones.
pub fn build_human_mask(
    points: &[ClickPoint],
    width: usize,
    height: usize,
    params: &HumanMaskParams,
) -> Result<NormalizedMask, HumanMaskError> {
    params.validate()?;
    if width == 0 || height == 0 {
        return Err(MaskError::EmptyDimensions { width, height }.into());
    }
    if points.is_empty() {
        return Err(HumanMaskError::NoPoints);
    }
    if let Some(p) = points
        .iter()
        .find(|p| p.x as usize >= width || p.y as usize >= height)
    {
        return Err(HumanMaskError::OutOfBounds {
            x: p.x,
            y: p.y,
            width,
            height,
        });
    }
    let counts = coverage_counts(points, width, height, params.radius_px(width, height));
    let lo = *counts.iter().min().expect("non-empty");
    let hi = *counts.iter().max().expect("non-empty");
    let values = if hi == lo {
        vec![1.0; counts.len()]
    } else {
        let span = (hi - lo) as f64;
        counts
            .iter()
            .map(|&n| skew((n - lo) as f64 / span, params.alpha))
            .collect()
    };
    Ok(NormalizedMask::try_from(Mask::new(width, height, values)?)?)
}

/// All clicks of the given responses.
pub fn response_points<'a>(responses: impl IntoIterator<Item = &'a AnnotationResponse>) -> Vec<ClickPoint> {
    responses
        .into_iter()
        .flat_map(|r| r.clicks.iter().copied())
        .collect()
}

/// Human mask restricted to responses whose text falls in `selector`.
pub fn build_text_category_mask(
    responses: &[AnnotationResponse],
    selector: CategorySelector,
    width: usize,
    height: usize,
    params: &HumanMaskParams,
) -> Result<NormalizedMask, HumanMaskError> {
    let points = response_points(
        responses
            .iter()
            .filter(|r| selector.matches(&r.text_categories)),
    );
    if points.is_empty() {
        return Err(HumanMaskError::EmptyCategory(selector.id().to_string()));
    }
    build_human_mask(&points, width, height, params)
}

/// Element-wise mean of per-participant masks, min-max scaled.
pub fn aggregate_population(masks: &[NormalizedMask]) -> Result<NormalizedMask, HumanMaskError> {
    let first = masks.first().ok_or(HumanMaskError::NoMasks)?;
    let mut sum = vec![0.0; first.values().len()];
    for m in masks {
        first.as_mask().ensure_same_dims(m.as_mask())?;
        for (s, v) in sum.iter_mut().zip(m.values()) {
            *s += v;
        }
    }
    let n = masks.len() as f64;
    let mean = Mask::new(first.width(), first.height(), sum.into_iter().map(|s| s / n).collect())?;
    Ok(min_max_scale(&mean))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CategorySource, TextCategory};
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn pt(x: u32, y: u32) -> ClickPoint {
        ClickPoint { x, y }
    }

    fn params(r: f64, c: f64, alpha: f64) -> HumanMaskParams {
        HumanMaskParams {
            radius_frac: r,
            increment: c,
            alpha,
        }
    }

    #[test]
    fn single_click_is_an_indicator_disc() {
        let m = build_human_mask(&[pt(10, 10)], 21, 21, &params(0.2, 1.0, 3.0)).unwrap();
        // r = round(0.2 · 21) = 4
        for y in 0..21usize {
            for x in 0..21usize {
                let d2 = (x as i64 - 10).pow(2) + (y as i64 - 10).pow(2);
                let want = if d2 <= 16 { 1.0 } else { 0.0 };
                assert_eq!(m.get(x, y), want, "({x},{y})");
                assert_eq!(m.get(x, y), m.get(20 - x, y));
                assert_eq!(m.get(x, y), m.get(y, x));
            }
        }
    }

    #[test]
    fn overlapping_clicks() {
        let p = params(0.1, 1.0, 3.0);
        let m = build_human_mask(&[pt(20, 20), pt(24, 20)], 50, 50, &p).unwrap();
        let single = (1.5f64.exp() - 1.0) / (3.0f64.exp() - 1.0);
        assert_eq!(m.get(22, 20), 1.0);
        assert!((m.get(16, 20) - single).abs() < 1e-12);
        assert!((m.get(28, 20) - single).abs() < 1e-12);
        assert_eq!(m.get(0, 0), 0.0);
        assert!((single - 0.182_426).abs() < 1e-6);
    }

    #[test]
    fn radius_for_512() {
        assert_eq!(HumanMaskParams::default().radius_px(512, 512), 45);
        assert_eq!(HumanMaskParams::default().radius_px(1024, 512), 45);
    }

    #[test]
    fn errors() {
        let p = HumanMaskParams::default();
        assert!(matches!(build_human_mask(&[], 8, 8, &p), Err(HumanMaskError::NoPoints)));
        assert!(matches!(
            build_human_mask(&[pt(8, 0)], 8, 8, &p),
            Err(HumanMaskError::OutOfBounds { x: 8, .. })
        ));
        for bad in [params(0.0, 1.0, 3.0), params(0.1, 0.0, 3.0), params(0.1, 1.0, -1.0)] {
            assert!(matches!(
                build_human_mask(&[pt(1, 1)], 8, 8, &bad),
                Err(HumanMaskError::InvalidParams(_))
            ));
        }
    }

    #[test]
    fn full_coverage_is_all_ones() {
        let m = build_human_mask(&[pt(2, 2)], 5, 5, &params(1.0, 1.0, 3.0)).unwrap();
        assert!(m.values().iter().all(|&v| v == 1.0));
    }

    fn resp(id: &str, clicks: &[(u32, u32)], cats: &[TextCategory]) -> AnnotationResponse {
        AnnotationResponse {
            response_id: id.into(),
            participant_id: id.into(),
            image_id: "img".into(),
            clicks: clicks.iter().map(|&(x, y)| pt(x, y)).collect(),
            click_item_tags: None,
            text: String::new(),
            text_categories: cats.iter().copied().collect::<BTreeSet<_>>(),
            category_source: CategorySource::Manual,
            needs_review: false,
            timestamp: String::new(),
        }
    }

    #[test]
    fn text_category_masks() {
        use TextCategory::*;
        let p = params(0.1, 1.0, 3.0);
        let rs = vec![
            resp("a", &[(5, 5), (30, 30)], &[Iii]),
            resp("b", &[(40, 8)], &[Vi]),
            resp("c", &[(10, 40)], &[Iii, Xii]),
        ];
        let m = build_text_category_mask(&rs, CategorySelector::One(Iii), 50, 50, &p).unwrap();
        // Oracle: filter by hand, then build.
        let manual = build_human_mask(&[pt(5, 5), pt(30, 30), pt(10, 40)], 50, 50, &p).unwrap();
        assert_eq!(m, manual);
        assert_eq!(m.get(40, 8), 0.0);

        let vq = build_text_category_mask(
            &rs,
            CategorySelector::Group(crate::corpus::CategoryGroup::VisualQuality),
            50,
            50,
            &p,
        )
        .unwrap();
        assert_eq!(vq, manual);

        let all: Vec<_> = rs.iter().map(|r| resp(&r.response_id, &[], &[Vi])).collect();
        assert!(matches!(
            build_text_category_mask(&all, CategorySelector::One(I), 50, 50, &p),
            Err(HumanMaskError::EmptyCategory(_))
        ));
        let everyone: Vec<_> = rs
            .iter()
            .map(|r| AnnotationResponse {
                text_categories: [Ix].into(),
                ..r.clone()
            })
            .collect();
        assert_eq!(
            build_text_category_mask(&everyone, CategorySelector::One(Ix), 50, 50, &p).unwrap(),
            build_human_mask(&response_points(&everyone), 50, 50, &p).unwrap()
        );
    }

    #[test]
    fn aggregation() {
        let a = NormalizedMask::try_from(Mask::new(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap()).unwrap();
        let b = NormalizedMask::try_from(Mask::new(2, 2, vec![0.0, 0.0, 0.0, 1.0]).unwrap()).unwrap();
        assert_eq!(aggregate_population(&[a.clone(), a.clone()]).unwrap(), a);
        let ab = aggregate_population(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(ab.values(), &[1.0, 0.0, 0.0, 1.0]);
        // 3·a + b: mean = [0.75, 0, 0, 0.25] → [1, 0, 0, 1/3]
        let blend = aggregate_population(&[a.clone(), a.clone(), a.clone(), b.clone()]).unwrap();
        assert_eq!(blend.values()[0], 1.0);
        assert!((blend.values()[3] - 1.0 / 3.0).abs() < 1e-15);
        let small = NormalizedMask::try_from(Mask::zeros(1, 2).unwrap()).unwrap();
        assert!(matches!(aggregate_population(&[a, small]), Err(HumanMaskError::Mask(_))));
        assert!(matches!(aggregate_population(&[]), Err(HumanMaskError::NoMasks)));
    }

    fn clicks_strategy(w: u32, h: u32) -> impl Strategy<Value = Vec<ClickPoint>> {
        prop::collection::vec((0..w, 0..h).prop_map(|(x, y)| pt(x, y)), 1..5)
    }

    proptest! {
        #[test]
        fn c_invariance(pts in clicks_strategy(40, 30), c in 1e-3f64..1e3, r in 0.05f64..0.5) {
            let a = build_human_mask(&pts, 40, 30, &params(r, 1.0, 3.0)).unwrap();
            let b = build_human_mask(&pts, 40, 30, &params(r, c, 3.0)).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn more_coverage_means_larger_value(pts in clicks_strategy(30, 30), r in 0.05f64..0.4) {
            let p = params(r, 1.0, 2.5);
            let m = build_human_mask(&pts, 30, 30, &p).unwrap();
            let counts = coverage_counts(&pts, 30, 30, p.radius_px(30, 30));
            for i in 0..counts.len() {
                for j in 0..counts.len() {
                    if counts[i] > counts[j] {
                        prop_assert!(m.values()[i] > m.values()[j]);
                    }
                }
            }
            if counts.contains(&0) {
                prop_assert_eq!(m.as_mask().min(), 0.0);
                prop_assert_eq!(m.as_mask().max(), 1.0);
            }
        }

        #[test]
        fn translation_equivariance(
            pts in prop::collection::vec((12u32..28, 12u32..28).prop_map(|(x, y)| pt(x, y)), 1..4),
            dx in 0u32..8, dy in 0u32..8,
        ) {
            // r = round(0.1 · 60) = 6 keeps every disc inside the frame.
            let p = params(0.1, 1.0, 3.0);
            let a = build_human_mask(&pts, 60, 60, &p).unwrap();
            let moved: Vec<_> = pts.iter().map(|q| pt(q.x + dx, q.y + dy)).collect();
            let b = build_human_mask(&moved, 60, 60, &p).unwrap();
            for y in 0..52usize {
                for x in 0..52usize {
                    prop_assert_eq!(a.get(x, y), b.get(x + dx as usize, y + dy as usize));
                }
            }
        }

        #[test]
        fn larger_alpha_suppresses_partial_values(pts in clicks_strategy(30, 30), a1 in 0.1f64..5.0, extra in 0.1f64..5.0) {
            let lo = build_human_mask(&pts, 30, 30, &params(0.2, 1.0, a1)).unwrap();
            let hi = build_human_mask(&pts, 30, 30, &params(0.2, 1.0, a1 + extra)).unwrap();
            for (l, h) in lo.values().iter().zip(hi.values()) {
                if *l < 1.0 {
                    prop_assert!(h <= l);
                }
            }
        }
    }

    #[test]
    fn small_alpha_approaches_identity() {
        for v in [0.0, 0.1, 0.37, 0.5, 0.9, 1.0] {
            assert!((skew(v, 1e-6) - v).abs() < 1e-6);
        }
    }
}
