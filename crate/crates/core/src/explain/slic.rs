//! Superpixels: the [`SegmentMap`] type and a SLIC segmenter.

use image::RgbImage;
use super::ExplainError;

/// Per-pixel segment labels `0..count`, every label used at least once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentMap {
    width: u32,
    height: u32,
    labels: Vec<usize>,
    count: usize,
    sizes: Vec<usize>,
}

impl SegmentMap {
    pub fn new(width: u32, height: u32, labels: Vec<usize>) -> Result<Self, ExplainError> {
        if width == 0 || height == 0 || labels.len() != (width * height) as usize {
            return Err(ExplainError::InvalidConfig(format!(
                "segment map needs {}x{} labels, got {}",
                width,
                height,
                labels.len()
            )));
        }
        let count = labels.iter().max().map_or(0, |m| m + 1);
        let mut sizes = vec![0usize; count];
        for &l in &labels {
            sizes[l] += 1;
        }
        if let Some(missing) = sizes.iter().position(|&s| s == 0) {
            return Err(ExplainError::InvalidConfig(format!(
                "segment label {missing} is unused; labels must be contiguous from 0"
            )));
        }
        Ok(SegmentMap {
            width,
            height,
            labels,
            count,
            sizes,
        })
    }

    /// Regular `cols × rows` tiling, labels in raster order of the tiles.
    pub fn grid(width: u32, height: u32, cols: u32, rows: u32) -> Result<Self, ExplainError> {
        if cols == 0 || rows == 0 || cols > width || rows > height {
            return Err(ExplainError::InvalidConfig(format!(
                "cannot tile {width}x{height} into {cols}x{rows}"
            )));
        }
        let labels = (0..height)
            .flat_map(|y| {
                (0..width).map(move |x| {
                    let cx = (x as u64 * cols as u64 / width as u64) as usize;
                    let cy = (y as u64 * rows as u64 / height as u64) as usize;
                    cy * cols as usize + cx
                })
            })
            .collect();
        Self::new(width, height, labels)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label_at(&self, x: u32, y: u32) -> usize {
        self.labels[(y * self.width + x) as usize]
    }

    /// Pixel count of every segment.
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }
}

const SLIC_ITERATIONS: usize = 10;
const COMPACTNESS_RETRIES: usize = 4;

/// SLIC superpixels: k-means in (L, a, b, x, y) restricted to a `2·step`
/// window around each center, followed by connectivity enforcement.
///
/// `target` is clamped to the pixel count. `compactness` trades color
/// homogeneity (small values) for regular shapes (large values).
pub fn slic_segments(img: &RgbImage, target: usize, compactness: f64) -> Result<SegmentMap, ExplainError> {
    if target < 2 {
        return Err(ExplainError::InvalidConfig(format!(
            "superpixel count must be >= 2, got {target}"
        )));
    }
    if !(compactness > 0.0 && compactness.is_finite()) {
        return Err(ExplainError::InvalidConfig(format!(
            "compactness must be > 0, got {compactness}"
        )));
    }
    let (w, h) = img.dimensions();
    let (wu, hu) = (w as usize, h as usize);
    let n = wu * hu;
    let target = target.min(n);
    let lab: Vec<[f64; 3]> = img.pixels().map(|p| srgb_to_lab(p.0)).collect();

    // Fine texture can shatter color clusters into fragments that the
    // connectivity pass then folds together; stiffen the spatial term and retry.
    let mut m = compactness;
    let mut labels = slic_pass(&lab, wu, hu, target, m);
    for _ in 0..COMPACTNESS_RETRIES {
        let count = labels.iter().max().map_or(0, |&l| l + 1);
        if 2 * count >= target && count <= 2 * target {
            break;
        }
        m *= 4.0;
        log::debug!("slic gave {count} segments for target {target}; retrying with compactness {m}");
        labels = slic_pass(&lab, wu, hu, target, m);
    }
    SegmentMap::new(w, h, labels)
}

fn slic_pass(lab: &[[f64; 3]], wu: usize, hu: usize, target: usize, compactness: f64) -> Vec<usize> {
    let n = wu * hu;
    let (w, h) = (wu as u32, hu as u32);

    let step = (n as f64 / target as f64).sqrt();
    let cols = ((w as f64 / step).round() as usize).clamp(1, wu);
    let rows = ((h as f64 / step).round() as usize).clamp(1, hu);

    // center: [l, a, b, x, y]
    let mut centers: Vec<[f64; 5]> = Vec::with_capacity(cols * rows);
    for j in 0..rows {
        for i in 0..cols {
            let x = (((i as f64 + 0.5) * w as f64 / cols as f64) as usize).min(wu - 1);
            let y = (((j as f64 + 0.5) * h as f64 / rows as f64) as usize).min(hu - 1);
            let (x, y) = lowest_gradient_nearby(lab, wu, hu, x, y);
            let c = lab[y * wu + x];
            centers.push([c[0], c[1], c[2], x as f64, y as f64]);
        }
    }

    let spatial_weight = (compactness / step).powi(2);
    let window = (2.0 * step).ceil() as isize;
    let mut labels = vec![usize::MAX; n];
    let mut dist = vec![f64::INFINITY; n];

    for _ in 0..SLIC_ITERATIONS {
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        for (k, c) in centers.iter().enumerate() {
            let (cx, cy) = (c[3].round() as isize, c[4].round() as isize);
            let x0 = (cx - window).max(0) as usize;
            let x1 = ((cx + window) as usize).min(wu - 1);
            let y0 = (cy - window).max(0) as usize;
            let y1 = ((cy + window) as usize).min(hu - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let idx = y * wu + x;
                    let p = lab[idx];
                    let dc = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2);
                    let ds = (x as f64 - c[3]).powi(2) + (y as f64 - c[4]).powi(2);
                    let d = dc + ds * spatial_weight;
                    if d < dist[idx] {
                        dist[idx] = d;
                        labels[idx] = k;
                    }
                }
            }
        }
        // Pixels outside every window fall back to the spatially nearest center.
        for idx in 0..n {
            if labels[idx] == usize::MAX {
                let (x, y) = ((idx % wu) as f64, (idx / wu) as f64);
                labels[idx] = centers
                    .iter()
                    .enumerate()
                    .min_by(|a, b| {
                        let da = (a.1[3] - x).powi(2) + (a.1[4] - y).powi(2);
                        let db = (b.1[3] - x).powi(2) + (b.1[4] - y).powi(2);
                        da.total_cmp(&db)
                    })
                    .map(|(k, _)| k)
                    .unwrap_or(0);
            }
        }
        let mut sums = vec![[0.0f64; 5]; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for (idx, &k) in labels.iter().enumerate() {
            let p = lab[idx];
            let s = &mut sums[k];
            s[0] += p[0];
            s[1] += p[1];
            s[2] += p[2];
            s[3] += (idx % wu) as f64;
            s[4] += (idx / wu) as f64;
            counts[k] += 1;
        }
        for (k, c) in centers.iter_mut().enumerate() {
            if counts[k] > 0 {
                for d in 0..5 {
                    c[d] = sums[k][d] / counts[k] as f64;
                }
            }
        }
    }

    let min_size = n / target / 2;
    enforce_connectivity(&labels, wu, hu, min_size)
}

fn lowest_gradient_nearby(lab: &[[f64; 3]], w: usize, h: usize, x: usize, y: usize) -> (usize, usize) {
    if w < 3 || h < 3 {
        return (x, y);
    }
    let grad = |x: usize, y: usize| -> f64 {
        let xm = x.saturating_sub(1);
        let xp = (x + 1).min(w - 1);
        let ym = y.saturating_sub(1);
        let yp = (y + 1).min(h - 1);
        let d = |a: [f64; 3], b: [f64; 3]| (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>();
        d(lab[y * w + xp], lab[y * w + xm]) + d(lab[yp * w + x], lab[ym * w + x])
    };
    let mut best = (x, y);
    let mut best_g = grad(x, y);
    for dy in -1isize..=1 {
        for dx in -1isize..=1 {
            let nx = x as isize + dx;
            let ny = y as isize + dy;
            if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                continue;
            }
            let g = grad(nx as usize, ny as usize);
            if g < best_g {
                best_g = g;
                best = (nx as usize, ny as usize);
            }
        }
    }
    best
}

/// Relabels 4-connected components in raster order and folds components
/// smaller than `min_size` into the previously labeled adjacent component.
fn enforce_connectivity(labels: &[usize], w: usize, h: usize, min_size: usize) -> Vec<usize> {
    let n = w * h;
    let mut out = vec![usize::MAX; n];
    let mut next = 0usize;
    let mut stack = Vec::new();
    let mut component = Vec::new();
    for start in 0..n {
        if out[start] != usize::MAX {
            continue;
        }
        // An already-labeled neighbor to absorb a too-small component.
        let (sx, sy) = (start % w, start / w);
        let adjacent = [
            (sx > 0).then(|| start - 1),
            (sy > 0).then(|| start - w),
        ]
        .into_iter()
        .flatten()
        .find(|&i| out[i] != usize::MAX)
        .map(|i| out[i]);

        component.clear();
        stack.push(start);
        out[start] = next;
        while let Some(i) = stack.pop() {
            component.push(i);
            let (x, y) = (i % w, i / w);
            let neighbors = [
                (x > 0).then(|| i - 1),
                (x + 1 < w).then(|| i + 1),
                (y > 0).then(|| i - w),
                (y + 1 < h).then(|| i + w),
            ];
            for j in neighbors.into_iter().flatten() {
                if out[j] == usize::MAX && labels[j] == labels[start] {
                    out[j] = next;
                    stack.push(j);
                }
            }
        }
        match adjacent {
            Some(a) if component.len() < min_size => {
                for &i in &component {
                    out[i] = a;
                }
            }
            _ => next += 1,
        }
    }
    out
}

fn srgb_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    let lin = |c: u8| {
        let c = c as f64 / 255.0;
        if c <= 0.04045 {
            c / 12.92
        } else {
            ((c + 0.055) / 1.055).powf(2.4)
        }
    };
    let (r, g, b) = (lin(rgb[0]), lin(rgb[1]), lin(rgb[2]));
    let x = (0.4124564 * r + 0.3575761 * g + 0.1804375 * b) / 0.95047;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = (0.0193339 * r + 0.1191920 * g + 0.9503041 * b) / 1.08883;
    let f = |t: f64| {
        if t > 216.0 / 24389.0 {
            t.cbrt()
        } else {
            (24389.0 / 27.0 * t + 16.0) / 116.0
        }
    };
    let (fx, fy, fz) = (f(x), f(y), f(z));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}
