//! Weighted (ridge-regularized) least squares via the normal equations.

use nalgebra::{DMatrix, DVector};

/// Relative pivot size below which the normal matrix counts as singular.
const PIVOT_TOL: f64 = 1e-12;

/// Minimizes `Σ_i w_i (y_i - x_i·β)² + ridge · Σ_{j penalized} β_j²`.
///
/// `rows` holds the design matrix row by row. Returns `None` when the
/// normal matrix is not numerically positive definite.
pub(crate) fn weighted_ridge(
    rows: &[Vec<f64>],
    y: &[f64],
    weights: &[f64],
    ridge: f64,
    penalized: &[bool],
) -> Option<Vec<f64>> {
    let p = penalized.len();
    debug_assert!(rows.iter().all(|r| r.len() == p));
    let mut a = DMatrix::<f64>::zeros(p, p);
    let mut b = DVector::<f64>::zeros(p);
    for ((row, &yi), &wi) in rows.iter().zip(y).zip(weights) {
        if wi == 0.0 {
            continue;
        }
        for j in 0..p {
            if row[j] == 0.0 {
                continue;
            }
            let wx = wi * row[j];
            b[j] += wx * yi;
            for k in j..p {
                a[(j, k)] += wx * row[k];
            }
        }
    }
    for j in 0..p {
        for k in 0..j {
            a[(j, k)] = a[(k, j)];
        }
        if penalized[j] {
            a[(j, j)] += ridge;
        }
    }
    let scale = (0..p).map(|j| a[(j, j)]).fold(0.0, f64::max);
    if scale <= 0.0 {
        return None;
    }
    let chol = a.cholesky()?;
    let l = chol.l_dirty();
    if (0..p).any(|j| l[(j, j)] * l[(j, j)] < PIVOT_TOL * scale) {
        return None;
    }
    Some(chol.solve(&b).iter().copied().collect())
}
