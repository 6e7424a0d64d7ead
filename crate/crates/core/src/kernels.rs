//! Stationary correlation functions and covariance assembly.
//!
//! Correlations are anisotropic: each input dimension is scaled by its own
//! lengthscale before the radial profile is applied. The process variance is
//! carried alongside but never folded into [`Kernel::eval`], which returns a
//! correlation in `(0, 1]`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{GpError, Result};

const SQRT5: f64 = 2.236_067_977_499_79;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum KernelFamily {
    SquaredExponential,
    #[default]
    #[serde(rename = "matern-5/2")]
    Matern52,
}

impl KernelFamily {
    /// Correlation as a function of the squared scaled distance
    /// `Σ (Δ_d / θ_d)²`.
    #[inline]
    pub fn profile(self, scaled_sq: f64) -> f64 {
        match self {
            KernelFamily::SquaredExponential => (-0.5 * scaled_sq).exp(),
            KernelFamily::Matern52 => {
                let r = scaled_sq.sqrt();
                (1.0 + SQRT5 * r + 5.0 / 3.0 * scaled_sq) * (-SQRT5 * r).exp()
            }
        }
    }

    /// Factor `g` such that `∂c/∂log θ_d = g · (Δ_d/θ_d)²`.
    #[inline]
    pub(crate) fn log_lengthscale_factor(self, scaled_sq: f64) -> f64 {
        match self {
            KernelFamily::SquaredExponential => (-0.5 * scaled_sq).exp(),
            KernelFamily::Matern52 => {
                let r = scaled_sq.sqrt();
                5.0 / 3.0 * (1.0 + SQRT5 * r) * (-SQRT5 * r).exp()
            }
        }
    }
}

impl std::str::FromStr for KernelFamily {
    type Err = GpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared-exponential" | "se" | "gaussian" => Ok(KernelFamily::SquaredExponential),
            "matern-5/2" | "matern52" => Ok(KernelFamily::Matern52),
            other => Err(GpError::InvalidParameter(format!("unknown kernel family '{other}'"))),
        }
    }
}

/// A stationary covariance: family, per-dimension lengthscales and process variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub family: KernelFamily,
    pub lengthscales: Vec<f64>,
    pub process_variance: f64,
}

impl Kernel {
    pub fn new(family: KernelFamily, lengthscales: Vec<f64>, process_variance: f64) -> Result<Self> {
        if lengthscales.is_empty() {
            return Err(GpError::InvalidParameter("kernel needs at least one lengthscale".into()));
        }
        if lengthscales.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            return Err(GpError::InvalidParameter(format!(
                "lengthscales must be positive and finite, got {lengthscales:?}"
            )));
        }
        if !(process_variance > 0.0 && process_variance.is_finite()) {
            return Err(GpError::InvalidParameter(format!(
                "process variance must be positive, got {process_variance}"
            )));
        }
        Ok(Kernel { family, lengthscales, process_variance })
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    #[inline]
    fn scaled_sq(&self, x: impl Iterator<Item = f64>, y: impl Iterator<Item = f64>) -> f64 {
        x.zip(y)
            .zip(&self.lengthscales)
            .map(|((a, b), t)| {
                let u = (a - b) / t;
                u * u
            })
            .sum()
    }

    /// Correlation `c(x, x')`.
    pub fn eval(&self, x: &[f64], x2: &[f64]) -> Result<f64> {
        self.check_dim(x.len())?;
        self.check_dim(x2.len())?;
        Ok(self.family.profile(self.scaled_sq(x.iter().copied(), x2.iter().copied())))
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim() {
            return Err(GpError::DimensionMismatch { expected: self.dim(), got });
        }
        Ok(())
    }

    /// Correlation between a point and row `i` of `xs`, unchecked.
    #[inline]
    pub(crate) fn corr_row(&self, x: &[f64], xs: &DMatrix<f64>, i: usize) -> f64 {
        let s = self.scaled_sq(x.iter().copied(), (0..xs.ncols()).map(|k| xs[(i, k)]));
        self.family.profile(s)
    }

    /// Correlation vector between `x` and every row of `xs`.
    pub fn cross_vec(&self, xs: &DMatrix<f64>, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x.len())?;
        if xs.nrows() > 0 {
            self.check_dim(xs.ncols())?;
        }
        Ok((0..xs.nrows()).map(|i| self.corr_row(x, xs, i)).collect())
    }

    /// Correlation matrix with entry `(i, j) = c(x1_i, x2_j)`.
    pub fn cross_cov(&self, x1: &DMatrix<f64>, x2: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x1.nrows() > 0 {
            self.check_dim(x1.ncols())?;
        }
        if x2.nrows() > 0 {
            self.check_dim(x2.ncols())?;
        }
        let d = self.dim();
        let (n1, n2) = (x1.nrows(), x2.nrows());
        let mut out = DMatrix::zeros(n1, n2);
        let mut row = vec![0.0; d];
        for i in 0..n1 {
            for (k, v) in row.iter_mut().enumerate() {
                *v = x1[(i, k)];
            }
            for j in 0..n2 {
                out[(i, j)] = self.corr_row(&row, x2, j);
            }
        }
        Ok(out)
    }

    /// Symmetric correlation matrix of a design with exact unit diagonal.
    pub fn gram(&self, xs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if xs.nrows() > 0 {
            self.check_dim(xs.ncols())?;
        }
        let n = xs.nrows();
        let d = self.dim();
        let mut out = DMatrix::identity(n, n);
        let mut row = vec![0.0; d];
        for i in 0..n {
            for (k, v) in row.iter_mut().enumerate() {
                *v = xs[(i, k)];
            }
            for j in 0..i {
                let c = self.corr_row(&row, xs, j);
                out[(i, j)] = c;
                out[(j, i)] = c;
            }
        }
        Ok(out)
    }

    /// Derivatives of the design correlation matrix with respect to each log lengthscale.
    #[cfg(test)]
    pub(crate) fn gram_log_lengthscale_grads(&self, xs: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let n = xs.nrows();
        let d = self.dim();
        let mut grads = vec![DMatrix::zeros(n, n); d];
        let mut u2 = vec![0.0; d];
        for i in 0..n {
            for j in 0..i {
                let mut s = 0.0;
                for k in 0..d {
                    let u = (xs[(i, k)] - xs[(j, k)]) / self.lengthscales[k];
                    u2[k] = u * u;
                    s += u2[k];
                }
                let g = self.family.log_lengthscale_factor(s);
                for k in 0..d {
                    let v = g * u2[k];
                    grads[k][(i, j)] = v;
                    grads[k][(j, i)] = v;
                }
            }
        }
        grads
    }
}

/// Axis-aligned hyper-rectangle of admissible inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Domain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(GpError::DimensionMismatch { expected: lower.len(), got: upper.len() });
        }
        if lower.is_empty() {
            return Err(GpError::InvalidParameter("domain needs at least one dimension".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(GpError::InvalidParameter("domain bounds need lower < upper".into()));
        }
        Ok(Domain { lower, upper })
    }

    pub fn unit(d: usize) -> Self {
        Domain { lower: vec![0.0; d], upper: vec![1.0; d] }
    }

    /// Smallest domain containing every row of `xs`; degenerate axes get unit width.
    pub fn bounding(xs: &DMatrix<f64>) -> Self {
        let d = xs.ncols();
        let mut lower = vec![f64::INFINITY; d];
        let mut upper = vec![f64::NEG_INFINITY; d];
        for i in 0..xs.nrows() {
            for k in 0..d {
                lower[k] = lower[k].min(xs[(i, k)]);
                upper[k] = upper[k].max(xs[(i, k)]);
            }
        }
        for k in 0..d {
            if !(upper[k] > lower[k]) {
                let c = if lower[k].is_finite() { lower[k] } else { 0.0 };
                lower[k] = c - 0.5;
                upper[k] = c + 0.5;
            }
        }
        Domain { lower, upper }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).collect()
    }

    /// Maps a point of the unit cube into the domain.
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (l, h))| l + v * (h - l))
            .collect()
    }

    /// Maps a domain point to `[-1, 1]` per coordinate.
    pub fn to_symmetric(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (l, h))| 2.0 * (v - l) / (h - l) - 1.0)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn se1(theta: f64) -> Kernel {
        Kernel::new(KernelFamily::SquaredExponential, vec![theta], 1.0).unwrap()
    }

    #[test]
    fn zero_distance_is_one() {
        for fam in [KernelFamily::SquaredExponential, KernelFamily::Matern52] {
            let k = Kernel::new(fam, vec![0.3, 2.0], 1.7).unwrap();
            assert_eq!(k.eval(&[0.1, -4.0], &[0.1, -4.0]).unwrap(), 1.0);
        }
    }

    #[test]
    fn squared_exponential_unit_distance() {
        assert_relative_eq!(se1(1.0).eval(&[0.0], &[1.0]).unwrap(), 0.606_530_659_712_633, epsilon = 1e-12);
    }

    #[test]
    fn matern_matches_closed_form() {
        let k = Kernel::new(KernelFamily::Matern52, vec![0.5], 1.0).unwrap();
        let r: f64 = 0.3 / 0.5;
        let expected = (1.0 + 5f64.sqrt() * r + 5.0 * r * r / 3.0) * (-(5f64.sqrt()) * r).exp();
        assert_relative_eq!(k.eval(&[0.2], &[0.5]).unwrap(), expected, epsilon = 1e-14);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let k = se1(1.0);
        assert!(matches!(k.eval(&[0.0, 1.0], &[0.0]), Err(GpError::DimensionMismatch { .. })));
        let x = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 1.0]);
        assert!(k.cross_cov(&x, &x).is_err());
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        assert!(Kernel::new(KernelFamily::Matern52, vec![0.0], 1.0).is_err());
        assert!(Kernel::new(KernelFamily::Matern52, vec![1.0], -1.0).is_err());
        assert!(Domain::new(vec![1.0], vec![0.0]).is_err());
    }

    #[test]
    fn small_cross_cov_cases() {
        let k = se1(0.7);
        let one = DMatrix::from_row_slice(1, 1, &[0.4]);
        assert_eq!(k.cross_cov(&one, &one).unwrap(), DMatrix::from_element(1, 1, 1.0));
        let two = DMatrix::from_row_slice(2, 1, &[0.4, 0.4]);
        assert_eq!(k.cross_cov(&two, &two).unwrap(), DMatrix::from_element(2, 2, 1.0));
    }

    #[test]
    fn cross_cov_matches_pointwise_eval() {
        let k = Kernel::new(KernelFamily::Matern52, vec![0.3, 0.9, 1.4], 2.0).unwrap();
        let x1 = DMatrix::from_row_slice(3, 3, &[0.1, 0.5, 0.9, 0.3, 0.2, 0.7, 0.8, 0.6, 0.05]);
        let x2 = DMatrix::from_row_slice(3, 3, &[0.4, 0.45, 0.2, 0.0, 1.0, 0.3, 0.6, 0.1, 0.5]);
        let c = k.cross_cov(&x1, &x2).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let a: Vec<f64> = x1.row(i).iter().copied().collect();
                let b: Vec<f64> = x2.row(j).iter().copied().collect();
                assert_eq!(c[(i, j)], k.eval(&a, &b).unwrap());
            }
        }
    }

    #[test]
    fn lengthscale_gradient_matches_finite_differences() {
        let xs = DMatrix::from_row_slice(4, 2, &[0.1, 0.2, 0.5, 0.9, 0.7, 0.3, 0.95, 0.55]);
        for fam in [KernelFamily::SquaredExponential, KernelFamily::Matern52] {
            let theta = [0.4, 0.8];
            let k = Kernel::new(fam, theta.to_vec(), 1.0).unwrap();
            let grads = k.gram_log_lengthscale_grads(&xs);
            for d in 0..2 {
                let h = 1e-6;
                let mut up = theta.to_vec();
                up[d] *= f64::exp(h);
                let mut dn = theta.to_vec();
                dn[d] *= f64::exp(-h);
                let cu = Kernel::new(fam, up, 1.0).unwrap().gram(&xs).unwrap();
                let cd = Kernel::new(fam, dn, 1.0).unwrap().gram(&xs).unwrap();
                let fd = (cu - cd) / (2.0 * h);
                assert!((fd - &grads[d]).abs().max() < 1e-7);
            }
        }
    }

    fn points(n: usize, d: usize) -> impl Strategy<Value = DMatrix<f64>> {
        prop::collection::vec(-2.0f64..2.0, n * d).prop_map(move |v| DMatrix::from_row_slice(n, d, &v))
    }

    proptest! {
        #[test]
        fn gram_is_symmetric_unit_diagonal(xs in points(6, 2), t0 in 0.05f64..3.0, t1 in 0.05f64..3.0) {
            for fam in [KernelFamily::SquaredExponential, KernelFamily::Matern52] {
                let k = Kernel::new(fam, vec![t0, t1], 1.0).unwrap();
                let c = k.cross_cov(&xs, &xs).unwrap();
                prop_assert_eq!(&c, &c.transpose());
                for i in 0..6 {
                    prop_assert_eq!(c[(i, i)], 1.0);
                }
                prop_assert!(c.iter().all(|&v| v > 0.0 && v <= 1.0 || v == 0.0));
            }
        }

        #[test]
        fn correlation_nondecreasing_in_lengthscale(a in -1.0f64..1.0, b in -1.0f64..1.0, t in 0.01f64..5.0, f in 1.0f64..4.0) {
            prop_assume!((a - b).abs() > 1e-9);
            for fam in [KernelFamily::SquaredExponential, KernelFamily::Matern52] {
                let lo = Kernel::new(fam, vec![t], 1.0).unwrap().eval(&[a], &[b]).unwrap();
                let hi = Kernel::new(fam, vec![t * f], 1.0).unwrap().eval(&[a], &[b]).unwrap();
                prop_assert!(hi >= lo);
            }
        }

        #[test]
        fn jittered_gram_factorizes(xs in points(40, 2), t in 0.01f64..3.0) {
            let k = Kernel::new(KernelFamily::SquaredExponential, vec![t, t], 1.0).unwrap();
            let f = crate::linalg::jittered_cholesky(k.gram(&xs).unwrap(), &vec![1.0; 40], 1e-8);
            prop_assert!(f.is_ok());
        }
    }

    #[test]
    fn jittered_gram_factorizes_at_500_rows() {
        // near-duplicate rows are the hard case
        let n = 500;
        let v: Vec<f64> = (0..n).map(|i| (i / 2) as f64 / n as f64).collect();
        let xs = DMatrix::from_column_slice(n, 1, &v);
        let k = Kernel::new(KernelFamily::SquaredExponential, vec![2.0], 1.0).unwrap();
        assert!(crate::linalg::jittered_cholesky(k.gram(&xs).unwrap(), &vec![1.0; n], 1e-8).is_ok());
    }
}
