//! Collapsed-data likelihood over log-parameterized hyperparameters, with
//! analytic gradients.
//!
//! Parameter layout: `[log θ_1..log θ_d, log σ², noise...]`, where the noise
//! block is empty for a fixed noise model, `log ν` for homoscedastic noise and
//! the polynomial coefficients of `h` for `r(x) = exp(h(x))`.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{GpError, Result};
use crate::gp::{FittedGP, TrendMode};
use crate::kernels::{Domain, Kernel, KernelFamily};
use crate::lowdisc;
use crate::noise::{variance_floor, NoiseModel, PolyBasis};
use crate::replication::CompactedDesign;

/// How the noise variance enters the parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub enum NoiseParameterization {
    Fixed(NoiseModel),
    Homoscedastic,
    Parametric(PolyBasis),
}

pub struct LikelihoodProblem<'a> {
    data: &'a CompactedDesign,
    family: KernelFamily,
    trend: TrendMode,
    noise: NoiseParameterization,
    lower: Vec<f64>,
    upper: Vec<f64>,
    default_start: Vec<f64>,
    floor: f64,
}

impl<'a> LikelihoodProblem<'a> {
    pub fn new(
        data: &'a CompactedDesign,
        family: KernelFamily,
        trend: TrendMode,
        noise: NoiseParameterization,
        domain: Option<&Domain>,
    ) -> Result<Self> {
        if data.n() == 0 {
            return Err(GpError::InsufficientData("likelihood needs observations".into()));
        }
        let domain = domain.cloned().unwrap_or_else(|| Domain::bounding(&data.xu));
        if domain.dim() != data.dim() {
            return Err(GpError::DimensionMismatch { expected: data.dim(), got: domain.dim() });
        }
        let var_means = data.mean_variance();
        let scale = if var_means > 0.0 { var_means } else { data.total_variance().max(1e-300) };
        let total = data.total_variance().max(scale);

        let mut lower = Vec::new();
        let mut upper = Vec::new();
        let mut start = Vec::new();
        for w in domain.widths() {
            lower.push((1e-3 * w).ln());
            upper.push((10.0 * w).ln());
            start.push((0.25 * w).ln());
        }
        lower.push((1e-8 * scale).ln());
        upper.push((1e4 * scale).ln());
        start.push(scale.ln());
        let (nu_lo, nu_hi) = ((1e-10 * total).ln(), (1e2 * total).ln());
        let nu_start = data.pooled_variance().filter(|v| *v > 0.0).unwrap_or(0.1 * total).ln();
        match &noise {
            NoiseParameterization::Fixed(_) => {}
            NoiseParameterization::Homoscedastic => {
                lower.push(nu_lo);
                upper.push(nu_hi);
                start.push(nu_start);
            }
            NoiseParameterization::Parametric(basis) => {
                if basis.domain.dim() != data.dim() {
                    return Err(GpError::DimensionMismatch { expected: data.dim(), got: basis.domain.dim() });
                }
                lower.push(nu_lo);
                upper.push(nu_hi);
                start.push(nu_start);
                for _ in 1..basis.len() {
                    lower.push(-20.0);
                    upper.push(20.0);
                    start.push(0.0);
                }
            }
        }
        for ((s, l), u) in start.iter_mut().zip(&lower).zip(&upper) {
            *s = s.clamp(*l, *u);
        }
        Ok(LikelihoodProblem {
            data,
            family,
            trend,
            noise,
            lower,
            upper,
            default_start: start,
            floor: variance_floor(data),
        })
    }

    pub fn n_params(&self) -> usize {
        self.lower.len()
    }

    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (self.lower.clone(), self.upper.clone())
    }

    pub fn default_start(&self) -> Vec<f64> {
        self.default_start.clone()
    }

    /// The default (or warm) start followed by space-filling points in the box.
    pub fn starts(&self, count: usize, warm: Option<&[f64]>) -> Vec<Vec<f64>> {
        let p = self.n_params();
        let mut out = Vec::with_capacity(count);
        let first = match warm {
            Some(w) if w.len() == p => w.iter().zip(&self.lower).zip(&self.upper).map(|((v, l), u)| v.clamp(*l, *u)).collect(),
            _ => self.default_start(),
        };
        out.push(first);
        let extra = count.saturating_sub(1);
        let unit: Vec<Vec<f64>> = if p <= 16 {
            let h = lowdisc::halton(extra, p, 0);
            (0..extra).map(|i| h.row(i).iter().copied().collect()).collect()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
            (0..extra).map(|_| (0..p).map(|_| rng.random::<f64>()).collect()).collect()
        };
        for u in unit {
            out.push(u.iter().enumerate().map(|(k, v)| self.lower[k] + v * (self.upper[k] - self.lower[k])).collect());
        }
        out
    }

    /// Kernel and noise model encoded by `p`.
    pub fn unpack(&self, p: &[f64]) -> Result<(Kernel, NoiseModel)> {
        if p.len() != self.n_params() {
            return Err(GpError::DimensionMismatch { expected: self.n_params(), got: p.len() });
        }
        let d = self.data.dim();
        let kernel = Kernel::new(self.family, p[..d].iter().map(|v| v.exp()).collect(), p[d].exp())?;
        let noise = match &self.noise {
            NoiseParameterization::Fixed(m) => m.clone(),
            NoiseParameterization::Homoscedastic => NoiseModel::Constant { variance: p[d + 1].exp() },
            NoiseParameterization::Parametric(basis) => NoiseModel::Parametric {
                basis: basis.clone(),
                coeffs: p[d + 1..].to_vec(),
                floor: self.floor,
            },
        };
        Ok((kernel, noise))
    }

    pub fn condition(&self, p: &[f64]) -> Result<FittedGP> {
        let (kernel, noise) = self.unpack(p)?;
        FittedGP::condition(kernel, noise, self.trend, self.data.clone())
    }

    pub fn value(&self, p: &[f64]) -> Result<f64> {
        Ok(self.condition(p)?.neg_log_likelihood())
    }

    /// Objective and its gradient with respect to every entry of `p`.
    ///
    /// With `W = K⁻¹ − ααᵀ`, each partial derivative is `½ Σ_ij W_ij ∂K_ij`.
    /// The GLS trend coefficient needs no correction term since the
    /// objective is stationary in it.
    pub fn value_and_gradient(&self, p: &[f64]) -> Result<(f64, Vec<f64>)> {
        let model = self.condition(p)?;
        let n = self.data.n();
        let d = self.data.dim();
        let kernel = model.kernel();
        let s2 = kernel.process_variance;
        let kinv = crate::linalg::inverse(model.chol());
        let alpha: &DVector<f64> = model.alpha();
        let w = |i: usize, j: usize| kinv[(i, j)] - alpha[i] * alpha[j];

        let mut grad = vec![0.0; self.n_params()];
        let xs = &self.data.xu;
        let mut u2 = vec![0.0; d];
        for j in 0..n {
            for i in (j + 1)..n {
                let mut s = 0.0;
                for k in 0..d {
                    let u = (xs[(i, k)] - xs[(j, k)]) / kernel.lengthscales[k];
                    u2[k] = u * u;
                    s += u2[k];
                }
                let wij = w(i, j);
                let factor = self.family.log_lengthscale_factor(s);
                for k in 0..d {
                    grad[k] += wij * s2 * factor * u2[k];
                }
                grad[d] += wij * s2 * self.family.profile(s);
            }
        }
        let jitter = model.jitter();
        let r = model.noise_at_design();
        for i in 0..n {
            let a = self.data.counts[i] as f64;
            let wii = w(i, i);
            // The jitter enters the log determinant only; the quadratic form uses the refined solve.
            grad[d] += 0.5 * (wii * s2 + kinv[(i, i)] * jitter / a);
            match &self.noise {
                NoiseParameterization::Fixed(_) => {}
                NoiseParameterization::Homoscedastic => grad[d + 1] += 0.5 * wii * r[i] / a,
                NoiseParameterization::Parametric(basis) => {
                    let phi = basis.eval(&self.data.point(i));
                    for (k, f) in phi.iter().enumerate() {
                        grad[d + 1 + k] += 0.5 * wii * r[i] * f / a;
                    }
                }
            }
        }
        Ok((model.neg_log_likelihood(), grad))
    }
}
