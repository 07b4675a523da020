use super::{Mask, MaskError};

/// Cosine similarity of the two masks viewed as flat vectors.
///
/// Masks are non-negative, so the result lies in `[0, 1]`; it is clamped
/// there to absorb rounding.
pub fn cosine_similarity(a: impl AsRef<Mask>, b: impl AsRef<Mask>) -> Result<f64, MaskError> {
    let a = a.as_ref();
    let b = b.as_ref();
    a.ensure_same_dims(b)?;
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.values().iter().zip(b.values()) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(MaskError::ZeroMask);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_cases() {
        let a = Mask::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let b = Mask::from_rows(&[vec![1.0, 1.0], vec![0.0, 0.0]]).unwrap();
        let s = cosine_similarity(&a, &b).unwrap();
        assert!((s - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((cosine_similarity(&b, &b).unwrap() - 1.0).abs() < 1e-12);

        let c = Mask::from_rows(&[vec![0.0, 0.0], vec![3.0, 0.0]]).unwrap();
        assert_eq!(cosine_similarity(&a, &c).unwrap(), 0.0);
    }

    #[test]
    fn errors() {
        let a = Mask::filled(2, 2, 1.0).unwrap();
        let z = Mask::zeros(2, 2).unwrap();
        let wide = Mask::filled(4, 1, 1.0).unwrap();
        assert_eq!(cosine_similarity(&a, &z), Err(MaskError::ZeroMask));
        assert!(matches!(
            cosine_similarity(&a, &wide),
            Err(MaskError::DimensionMismatch { .. })
        ));
    }
}
