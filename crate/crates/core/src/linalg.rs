use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{GpError, Result};

/// Relative jitter applied to the diagonal, in units of the process variance.
pub const JITTER_REL: f64 = 1e-8;

/// Number of times the jitter may be doubled after a failed factorization.
pub const JITTER_ESCALATIONS: usize = 6;

pub type Chol = Cholesky<f64, Dyn>;

/// Cholesky of `m + jitter·diag(weights)`, doubling `jitter` on failure.
///
/// Returns the factor and the jitter that was finally used.
pub fn jittered_cholesky(m: DMatrix<f64>, weights: &[f64], jitter: f64) -> Result<(Chol, f64)> {
    debug_assert_eq!(m.nrows(), weights.len());
    let mut jitter = jitter;
    for _ in 0..=JITTER_ESCALATIONS {
        let mut a = m.clone();
        for (i, w) in weights.iter().enumerate() {
            a[(i, i)] += jitter * w;
        }
        if let Some(c) = Cholesky::new(a) {
            if c.l_dirty().diagonal().iter().all(|v| v.is_finite() && *v > 0.0) {
                return Ok((c, jitter));
            }
        }
        jitter *= 2.0;
    }
    Err(GpError::Factorization { attempts: JITTER_ESCALATIONS })
}

/// `log det` of the factored matrix.
pub fn log_det(c: &Chol) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// Solves `L x = b` in place for the lower factor.
pub fn solve_lower(c: &Chol, b: &mut nalgebra::DVector<f64>) {
    c.l_dirty().solve_lower_triangular_mut(b);
}

/// Solves `L X = B` in place for the lower factor.
pub fn solve_lower_mat(c: &Chol, b: &mut DMatrix<f64>) {
    c.l_dirty().solve_lower_triangular_mut(b);
}

/// `(L Lᵀ)⁻¹` as `L⁻ᵀ L⁻¹`.
///
/// Column `j` of `L⁻¹` is zero above row `j`, so each column solve only
/// touches the trailing block; the product then goes through matrix
/// multiplication.
pub fn inverse(c: &Chol) -> DMatrix<f64> {
    let l = c.l_dirty();
    let n = l.nrows();
    let mut linv = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut col = nalgebra::DVector::zeros(n - j);
        col[0] = 1.0;
        l.view((j, j), (n - j, n - j)).solve_lower_triangular_mut(&mut col);
        linv.view_mut((j, j), (n - j, 1)).copy_from(&col);
    }
    linv.transpose() * &linv
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |i, j| ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.4);
        a.transpose() * &a + DMatrix::identity(n, n) * 0.5
    }

    #[test]
    fn inverse_matches_reference() {
        let m = spd(37);
        let (c, _) = jittered_cholesky(m.clone(), &vec![1.0; 37], 0.0).unwrap();
        let fast = inverse(&c);
        let reference = c.inverse();
        assert!((fast - reference).abs().max() < 1e-10);
    }

    #[test]
    fn jitter_escalates_on_singular_input() {
        let m = DMatrix::from_element(4, 4, 1.0);
        let (_, j) = jittered_cholesky(m, &[1.0; 4], 1e-8).unwrap();
        assert!(j >= 1e-8);
        let bad = DMatrix::from_element(2, 2, -1.0);
        assert!(jittered_cholesky(bad, &[1.0; 2], 1e-8).is_err());
    }

    #[test]
    fn log_det_of_diagonal() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 3.0, 4.0]));
        let (c, _) = jittered_cholesky(m, &[1.0; 3], 0.0).unwrap();
        assert!((log_det(&c) - 24f64.ln()).abs() < 1e-14);
    }
}
