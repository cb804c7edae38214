use nalgebra::{DMatrix, DVector};

pub const POWER_TOL: f64 = 1e-8;
pub const POWER_MAX_ITER: usize = 10_000;

/// Largest singular value by power iteration on `A^T A`.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    spectral_norm_with(a, POWER_TOL, POWER_MAX_ITER)
}

pub fn spectral_norm_with(a: &DMatrix<f64>, tol: f64, max_iter: usize) -> f64 {
    if a.is_empty() || a.iter().all(|v| *v == 0.0) {
        return 0.0;
    }
    let n = a.ncols();
    // Deterministic, non-symmetric start so no singular direction is missed by symmetry.
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.5 * ((i as f64 * 0.754_877_666).fract() - 0.5));
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..max_iter {
        let w = a.tr_mul(&(a * &v));
        let next = w.norm();
        if next == 0.0 {
            return 0.0;
        }
        v = w / next;
        let done = (next - lambda).abs() <= tol * next;
        lambda = next;
        if done {
            break;
        }
    }
    lambda.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_svd() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, -1.0, 0.0, 0.5, 3.0, 1.0, 0.0, 0.2, -1.5]);
        let svd_max = a.singular_values().max();
        assert!((spectral_norm(&a) - svd_max).abs() < 1e-6 * svd_max);
        assert_eq!(spectral_norm(&DMatrix::zeros(4, 4)), 0.0);
    }
}
