//! The four mask normalization operations and their composition.

use serde::{Deserialize, Serialize};

use super::{Mask, MaskError, NormalizedMask};

/// One step of a normalization pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum NormalizationOp {
    MinMax,
    Percentile,
    #[serde(rename = "kmeans")]
    KMeansQuantize { k: usize },
    #[serde(rename = "gaussian")]
    GaussianSmooth { sigma: f64 },
}

impl NormalizationOp {
    pub fn validate(&self) -> Result<(), MaskError> {
        match *self {
            NormalizationOp::KMeansQuantize { k } if k < 2 => Err(MaskError::InvalidOp(format!(
                "kmeans requires k >= 2, got {k}"
            ))),
            NormalizationOp::GaussianSmooth { sigma } if !(sigma > 0.0 && sigma.is_finite()) => Err(
                MaskError::InvalidOp(format!("gaussian requires sigma > 0, got {sigma}")),
            ),
            _ => Ok(()),
        }
    }

    /// Whether the op's output is guaranteed to lie in `[0, 1]`.
    pub fn is_normalizing(&self) -> bool {
        matches!(self, NormalizationOp::MinMax | NormalizationOp::Percentile)
    }
}

/// `(M - min M) / (max M - min M)`. A constant mask maps to all zeros.
pub fn min_max_scale(m: &Mask) -> NormalizedMask {
    let lo = m.min();
    let hi = m.max();
    let range = hi - lo;
    let values = if range > 0.0 {
        m.values()
            .iter()
            .map(|&v| ((v - lo) / range).clamp(0.0, 1.0))
            .collect()
    } else {
        vec![0.0; m.len()]
    };
    NormalizedMask::from_mask_unchecked(Mask::from_parts_unchecked(m.width(), m.height(), values))
}

/// Replaces every value by its percentile rank divided by 100.
///
/// Ranks are 0-based; tied values share the average of their ranks, and
/// the rank is divided by `n - 1`. A single-pixel mask maps to `0.5`, the
/// same value a fully tied mask of any size receives.
pub fn percentile_scale(m: &Mask) -> NormalizedMask {
    let n = m.len();
    let values = m.values();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));

    let mut out = vec![0.0; n];
    if n == 1 {
        out[0] = 0.5;
    } else {
        let denom = (n - 1) as f64;
        let mut start = 0;
        while start < n {
            let v = values[order[start]];
            let mut end = start;
            while end + 1 < n && values[order[end + 1]] == v {
                end += 1;
            }
            let avg_rank = (start + end) as f64 / 2.0;
            let p = avg_rank / denom;
            for &idx in &order[start..=end] {
                out[idx] = p;
            }
            start = end + 1;
        }
    }
    NormalizedMask::from_mask_unchecked(Mask::from_parts_unchecked(m.width(), m.height(), out))
}

/// Result of [`kmeans_quantize`].
#[derive(Debug, Clone)]
pub struct Quantized {
    pub mask: Mask,
    /// Set when the mask had fewer than `k` distinct values and was returned unchanged.
    pub degenerate: bool,
    /// Within-cluster sum of squares of the final assignment.
    pub inertia: f64,
    pub centroids: Vec<f64>,
}

const KMEANS_MAX_ITER: usize = 100;
const KMEANS_TOL: f64 = 1e-12;

/// 1-D k-means over the mask values; each pixel becomes its cluster centroid.
///
/// Centroids start at `k` evenly spaced quantiles of the value distribution
/// (falling back to evenly spaced distinct values when quantiles collide),
/// then Lloyd iterations run until the inertia improves by less than
/// `1e-12` or 100 iterations have passed.
pub fn kmeans_quantize(m: &Mask, k: usize) -> Result<Quantized, MaskError> {
    NormalizationOp::KMeansQuantize { k }.validate()?;

    let mut sorted: Vec<f64> = m.values().to_vec();
    sorted.sort_by(f64::total_cmp);
    // Distinct values with multiplicities.
    let mut distinct: Vec<(f64, usize)> = Vec::new();
    for &v in &sorted {
        match distinct.last_mut() {
            Some((last, count)) if *last == v => *count += 1,
            _ => distinct.push((v, 1)),
        }
    }
    if distinct.len() < k {
        log::warn!(
            "kmeans_quantize: {} distinct values < k = {k}; mask returned unchanged",
            distinct.len()
        );
        return Ok(Quantized {
            mask: m.clone(),
            degenerate: true,
            inertia: 0.0,
            centroids: distinct.iter().map(|d| d.0).collect(),
        });
    }

    let n = sorted.len();
    let mut centroids: Vec<f64> = (0..k)
        .map(|i| sorted[(i as f64 * (n - 1) as f64 / (k - 1) as f64).round() as usize])
        .collect();
    if centroids.windows(2).any(|w| w[0] == w[1]) {
        let d = distinct.len();
        centroids = (0..k)
            .map(|i| distinct[(i as f64 * (d - 1) as f64 / (k - 1) as f64).round() as usize].0)
            .collect();
    }

    let assign = |centroids: &[f64]| -> Vec<usize> {
        distinct
            .iter()
            .map(|&(v, _)| nearest_centroid(centroids, v))
            .collect()
    };
    let inertia_of = |centroids: &[f64], labels: &[usize]| -> f64 {
        distinct
            .iter()
            .zip(labels)
            .map(|(&(v, c), &l)| c as f64 * (v - centroids[l]).powi(2))
            .sum()
    };

    let mut labels = assign(&centroids);
    let mut inertia = inertia_of(&centroids, &labels);
    for _ in 0..KMEANS_MAX_ITER {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for (&(v, c), &l) in distinct.iter().zip(&labels) {
            sums[l] += v * c as f64;
            counts[l] += c;
        }
        for j in 0..k {
            // Empty clusters keep their previous centroid.
            if counts[j] > 0 {
                centroids[j] = sums[j] / counts[j] as f64;
            }
        }
        let new_labels = assign(&centroids);
        let new_inertia = inertia_of(&centroids, &new_labels);
        let improved = inertia - new_inertia;
        let unchanged = new_labels == labels;
        labels = new_labels;
        inertia = new_inertia;
        if unchanged || improved < KMEANS_TOL {
            break;
        }
    }

    let values = m
        .values()
        .iter()
        .map(|&v| {
            let idx = distinct
                .binary_search_by(|probe| probe.0.total_cmp(&v))
                .expect("value present in distinct list");
            centroids[labels[idx]]
        })
        .collect();
    Ok(Quantized {
        mask: Mask::from_parts_unchecked(m.width(), m.height(), values),
        degenerate: false,
        inertia,
        centroids,
    })
}

fn nearest_centroid(centroids: &[f64], v: f64) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, &c) in centroids.iter().enumerate() {
        let d = (v - c).abs();
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    best
}

/// Normalized 1-D Gaussian kernel with radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let two_s2 = 2.0 * sigma * sigma;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / two_s2).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= total);
    k
}

/// Mirror an out-of-range index back into `0..n` (edge sample repeated).
pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m >= n { period - 1 - m } else { m }) as usize
}

/// Separable Gaussian blur with reflection padding at the borders.
pub fn gaussian_smooth(m: &Mask, sigma: f64) -> Result<Mask, MaskError> {
    NormalizationOp::GaussianSmooth { sigma }.validate()?;
    let values = smooth_plane(m.values(), m.width(), m.height(), sigma);
    Ok(Mask::from_parts_unchecked(m.width(), m.height(), values))
}

/// Blur a single row-major plane; shared with image-channel blurring.
pub(crate) fn smooth_plane(plane: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;

    let mut tmp = vec![0.0; plane.len()];
    for y in 0..height {
        let row = &plane[y * width..(y + 1) * width];
        for x in 0..width {
            let mut acc = 0.0;
            for (t, w) in kernel.iter().enumerate() {
                let xi = reflect_index(x as isize + t as isize - radius, width);
                acc += w * row[xi];
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; plane.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (t, w) in kernel.iter().enumerate() {
                let yi = reflect_index(y as isize + t as isize - radius, height);
                acc += w * tmp[yi * width + x];
            }
            // Rounding can leave tiny negatives next to exact zeros.
            out[y * width + x] = acc.max(0.0);
        }
    }
    out
}

/// Applies `ops` in order. A pipeline that does not end in a normalizing op
/// (MinMax or Percentile) gets a trailing MinMax.
pub fn apply_pipeline(m: &Mask, ops: &[NormalizationOp]) -> Result<NormalizedMask, MaskError> {
    if ops.is_empty() {
        return Err(MaskError::EmptyPipeline);
    }
    for op in ops {
        op.validate()?;
    }
    let mut current = m.clone();
    let mut normalized: Option<NormalizedMask> = None;
    for op in ops {
        let next = match *op {
            NormalizationOp::MinMax => {
                let n = min_max_scale(&current);
                normalized = Some(n.clone());
                n.into_mask()
            }
            NormalizationOp::Percentile => {
                let n = percentile_scale(&current);
                normalized = Some(n.clone());
                n.into_mask()
            }
            NormalizationOp::KMeansQuantize { k } => {
                normalized = None;
                kmeans_quantize(&current, k)?.mask
            }
            NormalizationOp::GaussianSmooth { sigma } => {
                normalized = None;
                gaussian_smooth(&current, sigma)?
            }
        };
        current = next;
    }
    Ok(normalized.unwrap_or_else(|| min_max_scale(&current)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask(rows: &[&[f64]]) -> Mask {
        Mask::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn min_max_examples() {
        let out = min_max_scale(&mask(&[&[0.0, 5.0], &[10.0, 15.0]]));
        let expected = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for (a, b) in out.values().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        let constant = min_max_scale(&mask(&[&[7.0, 7.0], &[7.0, 7.0]]));
        assert!(constant.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn percentile_examples() {
        let out = percentile_scale(&mask(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let expected = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for (a, b) in out.values().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        let tied = percentile_scale(&mask(&[&[5.0, 5.0], &[5.0, 5.0]]));
        assert!(tied.values().iter().all(|&v| v == tied.values()[0]));
        let single = percentile_scale(&mask(&[&[3.0]]));
        assert_eq!(single.values(), &[0.5]);
    }

    #[test]
    fn percentile_ties_share_average_rank() {
        // sorted: 1, 2, 2, 9 -> ranks 0, 1.5, 1.5, 3
        let out = percentile_scale(&mask(&[&[2.0, 9.0, 1.0, 2.0]]));
        assert_eq!(out.values(), &[0.5, 1.0, 0.0, 0.5]);
    }

    /// Exhaustive optimum over contiguous partitions of the sorted values.
    fn exhaustive_1d_kmeans(values: &[f64], k: usize) -> f64 {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let sse = |s: &[f64]| {
            let mean = s.iter().sum::<f64>() / s.len() as f64;
            s.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
        };
        let mut best = f64::INFINITY;
        // choose k-1 cut points among n-1 gaps
        fn rec(
            start: usize,
            remaining: usize,
            sorted: &[f64],
            acc: f64,
            best: &mut f64,
            sse: &dyn Fn(&[f64]) -> f64,
        ) {
            let n = sorted.len();
            if remaining == 1 {
                let total = acc + sse(&sorted[start..]);
                if total < *best {
                    *best = total;
                }
                return;
            }
            for end in start + 1..=n - (remaining - 1) {
                rec(end, remaining - 1, sorted, acc + sse(&sorted[start..end]), best, sse);
            }
        }
        rec(0, k, &sorted, 0.0, &mut best, &sse);
        let _ = n;
        best
    }

    #[test]
    fn kmeans_two_clusters_matches_exhaustive() {
        let m = mask(&[&[0.0, 0.1], &[0.9, 1.0]]);
        let q = kmeans_quantize(&m, 2).unwrap();
        assert!(!q.degenerate);
        let expected = [0.05, 0.05, 0.95, 0.95];
        for (a, b) in q.mask.values().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert!((q.inertia - exhaustive_1d_kmeans(m.values(), 2)).abs() < 1e-12);
    }

    #[test]
    fn kmeans_degenerate_and_exact_k() {
        let c = Mask::filled(3, 3, 0.4).unwrap();
        let q = kmeans_quantize(&c, 2).unwrap();
        assert!(q.degenerate);
        assert_eq!(q.mask, c);

        let m = mask(&[&[0.2, 0.7, 0.2], &[0.9, 0.7, 0.9]]);
        let q = kmeans_quantize(&m, 3).unwrap();
        assert!(!q.degenerate);
        assert_eq!(q.mask, m);
        assert_eq!(q.inertia, 0.0);

        assert!(kmeans_quantize(&m, 1).is_err());
    }

    #[test]
    fn kmeans_is_a_lloyd_fixed_point() {
        let m = mask(&[&[0.0, 0.05, 0.3, 0.32, 0.35, 0.8, 0.81, 0.99, 1.0, 0.5]]);
        let q = kmeans_quantize(&m, 3).unwrap();
        // every value maps to its nearest centroid, and centroids are cluster means
        for (&v, &c) in m.values().iter().zip(q.mask.values()) {
            let nearest = q.centroids[nearest_centroid(&q.centroids, v)];
            assert_eq!(c, nearest);
        }
        for &c in &q.centroids {
            let members: Vec<f64> = m
                .values()
                .iter()
                .zip(q.mask.values())
                .filter(|(_, &o)| o == c)
                .map(|(&v, _)| v)
                .collect();
            if !members.is_empty() {
                let mean = members.iter().sum::<f64>() / members.len() as f64;
                assert!((mean - c).abs() < 1e-12);
            }
        }
    }

    proptest! {
        // Equal-size, well-separated groups: quantile init seeds one centroid per
        // group, so Lloyd reaches the global optimum.
        #[test]
        fn kmeans_separated_groups_reach_exhaustive_optimum(
            groups in (1usize..4, 2usize..4).prop_flat_map(|(m, k)| {
                proptest::collection::vec(proptest::collection::vec(0.0f64..0.05, m), k)
            }),
        ) {
            let k = groups.len();
            let values: Vec<f64> = groups
                .iter()
                .enumerate()
                .flat_map(|(g, vs)| vs.iter().map(move |v| g as f64 + v))
                .collect();
            prop_assume!(values.len() <= 12);
            let m = Mask::new(values.len(), 1, values.clone()).unwrap();
            let q = kmeans_quantize(&m, k).unwrap();
            let mut distinct = values.clone();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            prop_assume!(distinct.len() >= k);
            let best = exhaustive_1d_kmeans(&values, k);
            prop_assert!(q.inertia <= best + 1e-9, "{} > {}", q.inertia, best);
        }
    }

    /// Dense 2-D convolution with the outer-product kernel, reflecting each axis.
    fn dense_convolution(m: &Mask, sigma: f64) -> Vec<f64> {
        let radius = (3.0 * sigma).ceil() as isize;
        let mut w2d = Vec::new();
        let mut total = 0.0;
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                let w = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
                w2d.push((dx, dy, w));
                total += w;
            }
        }
        let (w, h) = m.dims();
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for &(dx, dy, wt) in &w2d {
                    let xi = reflect_index(x as isize + dx, w);
                    let yi = reflect_index(y as isize + dy, h);
                    acc += wt * m.get(xi, yi);
                }
                out[y * w + x] = acc / total;
            }
        }
        out
    }

    #[test]
    fn gaussian_impulse_matches_dense_oracle() {
        let mut v = vec![0.0; 33 * 33];
        v[16 * 33 + 16] = 1.0;
        let m = Mask::new(33, 33, v).unwrap();
        let out = gaussian_smooth(&m, 2.0).unwrap();
        let oracle = dense_convolution(&m, 2.0);
        for (a, b) in out.values().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
        let max_idx = out
            .values()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(max_idx, 16 * 33 + 16);
        assert!((out.sum() - 1.0).abs() <= 0.01);
    }

    #[test]
    fn gaussian_edges_match_dense_oracle() {
        let v: Vec<f64> = (0..7 * 5).map(|i| ((i * 37) % 11) as f64).collect();
        let m = Mask::new(7, 5, v).unwrap();
        let out = gaussian_smooth(&m, 1.5).unwrap();
        for (a, b) in out.values().iter().zip(dense_convolution(&m, 1.5)) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn gaussian_constant_and_linearity() {
        let c = Mask::filled(9, 6, 0.37).unwrap();
        let out = gaussian_smooth(&c, 1.3).unwrap();
        assert!(out.values().iter().all(|v| (v - 0.37).abs() < 1e-9));

        let mut a = vec![0.0; 20 * 20];
        let mut b = vec![0.0; 20 * 20];
        a[5 * 20 + 5] = 1.0;
        b[12 * 20 + 14] = 2.0;
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let sa = gaussian_smooth(&Mask::new(20, 20, a).unwrap(), 1.0).unwrap();
        let sb = gaussian_smooth(&Mask::new(20, 20, b).unwrap(), 1.0).unwrap();
        let ss = gaussian_smooth(&Mask::new(20, 20, sum).unwrap(), 1.0).unwrap();
        for i in 0..400 {
            assert!((ss.values()[i] - sa.values()[i] - sb.values()[i]).abs() < 1e-9);
        }
        assert!(gaussian_smooth(&c, 0.0).is_err());
    }

    #[test]
    fn reflection_handles_kernels_wider_than_the_image() {
        assert_eq!(reflect_index(-1, 3), 0);
        assert_eq!(reflect_index(-4, 3), 2);
        assert_eq!(reflect_index(3, 3), 2);
        assert_eq!(reflect_index(7, 3), 1);
        let m = Mask::new(2, 1, vec![1.0, 0.0]).unwrap();
        let out = gaussian_smooth(&m, 3.0).unwrap();
        assert!((out.sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn pipeline_behaviour() {
        let m = mask(&[&[0.0, 5.0], &[10.0, 15.0]]);
        assert!(matches!(apply_pipeline(&m, &[]), Err(MaskError::EmptyPipeline)));
        let once = apply_pipeline(&m, &[NormalizationOp::MinMax]).unwrap();
        let twice = apply_pipeline(&m, &[NormalizationOp::MinMax, NormalizationOp::MinMax]).unwrap();
        assert_eq!(once, twice);
        assert!((once.values()[1] - 1.0 / 3.0).abs() < 1e-12);

        let mut v = vec![0.0; 15 * 15];
        v[7 * 15 + 7] = 4.0;
        let impulse = Mask::new(15, 15, v).unwrap();
        let smoothed = apply_pipeline(
            &impulse,
            &[NormalizationOp::GaussianSmooth { sigma: 2.0 }, NormalizationOp::MinMax],
        )
        .unwrap();
        assert_eq!(smoothed.get(7, 7), 1.0);
        assert_eq!(smoothed.values().iter().copied().fold(1.0, f64::min), 0.0);
        // Closure: a trailing non-normalizing op gets MinMax appended.
        let closed =
            apply_pipeline(&impulse, &[NormalizationOp::GaussianSmooth { sigma: 2.0 }]).unwrap();
        assert_eq!(closed, smoothed);
        assert!(apply_pipeline(&m, &[NormalizationOp::KMeansQuantize { k: 1 }]).is_err());
    }

    #[test]
    fn op_serde_shape() {
        let ops = vec![
            NormalizationOp::GaussianSmooth { sigma: 2.0 },
            NormalizationOp::KMeansQuantize { k: 4 },
            NormalizationOp::Percentile,
            NormalizationOp::MinMax,
        ];
        let json = serde_json::to_string(&ops).unwrap();
        assert_eq!(
            json,
            r#"[{"op":"gaussian","sigma":2.0},{"op":"kmeans","k":4},{"op":"percentile"},{"op":"min_max"}]"#
        );
        let back: Vec<NormalizationOp> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ops);
    }
}
