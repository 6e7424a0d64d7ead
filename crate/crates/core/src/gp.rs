//! Exact GP inference on compacted (n-form) data.
//!
//! With `a_i` replicates at unique design `x̄_i`, the collapsed covariance of
//! the design means is
//!
//! ```text
//! K = σ² C_n + diag((r(x̄_i) + j) / a_i)
//! ```
//!
//! where `j` is a diagonal jitter proportional to `σ²`. Treating the jitter as
//! part of every observation's noise keeps the n-form system exactly
//! equivalent to the full N-row system with the same jitter.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GpError, Result};
use crate::kernels::{Domain, Kernel, KernelFamily};
use crate::likelihood::{LikelihoodProblem, NoiseParameterization};
use crate::linalg::{self, Chol, JITTER_REL};
use crate::noise::{self, NoiseModel, NoiseSpec};
use crate::optim::{self, LbfgsOptions};
use crate::replication::CompactedDesign;

const MAX_REFINE_STEPS: usize = 10;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TrendMode {
    Zero,
    #[default]
    ConstantGls,
}

impl std::str::FromStr for TrendMode {
    type Err = GpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(TrendMode::Zero),
            "constant" | "constant-gls" => Ok(TrendMode::ConstantGls),
            other => Err(GpError::InvalidParameter(format!("unknown trend '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trend {
    pub mode: TrendMode,
    pub beta: f64,
}

/// Predictive moments at one input.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    /// Variance of the latent mean surface `f(x)`.
    pub latent_var: f64,
    /// `latent_var + r(x)`: variance of a new observation.
    pub obs_var: f64,
}

impl Prediction {
    pub fn latent_sd(&self) -> f64 {
        self.latent_var.sqrt()
    }

    pub fn obs_sd(&self) -> f64 {
        self.obs_var.sqrt()
    }
}

/// A conditioned GP: hyperparameters, noise model, trend and the factored n-form system.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(into = "FittedGpRecord", try_from = "FittedGpRecord")]
pub struct FittedGP {
    kernel: Kernel,
    noise: NoiseModel,
    trend: Trend,
    design: CompactedDesign,
    noise_at_design: Vec<f64>,
    jitter: f64,
    chol: Chol,
    /// `K⁻¹ (ȳ − β)`.
    alpha: DVector<f64>,
    nll: f64,
    degenerate: bool,
}

#[derive(Serialize, Deserialize)]
struct FittedGpRecord {
    kernel: Kernel,
    noise: NoiseModel,
    trend: Trend,
    design: CompactedDesign,
    degenerate: bool,
}

impl From<FittedGP> for FittedGpRecord {
    fn from(m: FittedGP) -> Self {
        FittedGpRecord { kernel: m.kernel, noise: m.noise, trend: m.trend, design: m.design, degenerate: m.degenerate }
    }
}

impl TryFrom<FittedGpRecord> for FittedGP {
    type Error = GpError;

    fn try_from(r: FittedGpRecord) -> Result<Self> {
        let mut m = FittedGP::condition(r.kernel, r.noise, r.trend.mode, r.design)?;
        m.degenerate = r.degenerate;
        Ok(m)
    }
}

impl FittedGP {
    /// Conditions a GP with fixed hyperparameters on `design`.
    pub fn condition(kernel: Kernel, noise: NoiseModel, mode: TrendMode, design: CompactedDesign) -> Result<Self> {
        let n = design.n();
        if n > 0 && design.dim() != kernel.dim() {
            return Err(GpError::DimensionMismatch { expected: kernel.dim(), got: design.dim() });
        }
        let s2 = kernel.process_variance;
        let noise_at_design: Vec<f64> = (0..n).map(|i| noise.eval_r(&design.point(i))).collect();
        let mut k = kernel.gram(&design.xu)? * s2;
        let weights: Vec<f64> = design.counts.iter().map(|&a| 1.0 / a as f64).collect();
        for i in 0..n {
            k[(i, i)] += noise_at_design[i] * weights[i];
        }
        let (chol, jitter) = linalg::jittered_cholesky(k.clone(), &weights, JITTER_REL * s2)?;
        let ybar = DVector::from_column_slice(&design.means);
        // Solves are refined against the unjittered system so that noise-free
        // models interpolate to rounding error rather than to jitter size.
        let solve = |b: &DVector<f64>| {
            let mut x = chol.solve(b);
            let mut last = f64::INFINITY;
            for _ in 0..MAX_REFINE_STEPS {
                let step = chol.solve(&(b - &k * &x));
                let size = step.amax();
                if !(size < last) {
                    break;
                }
                x += step;
                last = size;
                if size <= f64::EPSILON * x.amax() {
                    break;
                }
            }
            x
        };
        let beta = match mode {
            TrendMode::Zero => 0.0,
            TrendMode::ConstantGls if n == 0 => 0.0,
            TrendMode::ConstantGls => {
                let kinv_one = solve(&DVector::from_element(n, 1.0));
                kinv_one.dot(&ybar) / kinv_one.sum()
            }
        };
        let resid = ybar.add_scalar(-beta);
        let alpha = solve(&resid);
        let nll = 0.5 * (linalg::log_det(&chol) + resid.dot(&alpha) + n as f64 * LN_2PI);
        Ok(FittedGP {
            kernel,
            noise,
            trend: Trend { mode, beta },
            design,
            noise_at_design,
            jitter,
            chol,
            alpha,
            nll,
            degenerate: false,
        })
    }

    /// Prior model without observations.
    pub fn prior(kernel: Kernel, noise: NoiseModel, mode: TrendMode) -> Result<Self> {
        let d = kernel.dim();
        Self::condition(kernel, noise, mode, CompactedDesign::empty(d))
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn trend(&self) -> Trend {
        self.trend
    }

    pub fn design(&self) -> &CompactedDesign {
        &self.design
    }

    pub fn dim(&self) -> usize {
        self.kernel.dim()
    }

    /// Noise variance `r(x̄_i)` used for each unique design.
    pub fn noise_at_design(&self) -> &[f64] {
        &self.noise_at_design
    }

    /// Diagonal jitter actually applied, per observation.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Negative log likelihood of the design means at the current hyperparameters.
    pub fn neg_log_likelihood(&self) -> f64 {
        self.nll
    }

    /// True when the data had no output variation and a constant model was returned.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub(crate) fn chol(&self) -> &Chol {
        &self.chol
    }

    pub(crate) fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(GpError::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        Ok(())
    }

    /// `σ² c(x)`, the covariance between `x` and every unique design.
    pub(crate) fn cov_vec(&self, x: &[f64]) -> DVector<f64> {
        let s2 = self.kernel.process_variance;
        DVector::from_iterator(self.design.n(), (0..self.design.n()).map(|i| s2 * self.kernel.corr_row(x, &self.design.xu, i)))
    }

    pub(crate) fn mean_unchecked(&self, x: &[f64]) -> f64 {
        self.trend.beta + self.cov_vec(x).dot(&self.alpha)
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        self.check_point(x)?;
        let mut c = self.cov_vec(x);
        let mean = self.trend.beta + c.dot(&self.alpha);
        linalg::solve_lower(&self.chol, &mut c);
        let latent_var = (self.kernel.process_variance - c.norm_squared()).max(0.0);
        Ok(Prediction { mean, latent_var, obs_var: latent_var + self.noise.eval_r(x) })
    }

    /// Predictions at every row of `xs`.
    pub fn predict_many(&self, xs: &DMatrix<f64>) -> Result<Vec<Prediction>> {
        if xs.ncols() != self.dim() {
            return Err(GpError::DimensionMismatch { expected: self.dim(), got: xs.ncols() });
        }
        let (cross, v) = self.solved_cross(xs)?;
        let s2 = self.kernel.process_variance;
        let mut out = Vec::with_capacity(xs.nrows());
        let mut row = vec![0.0; self.dim()];
        for j in 0..xs.nrows() {
            for (k, r) in row.iter_mut().enumerate() {
                *r = xs[(j, k)];
            }
            let mean = self.trend.beta + cross.column(j).dot(&self.alpha);
            let latent_var = (s2 - v.column(j).norm_squared()).max(0.0);
            out.push(Prediction { mean, latent_var, obs_var: latent_var + self.noise.eval_r(&row) });
        }
        Ok(out)
    }

    /// Returns `(Σ, L⁻¹ Σ)` with `Σ = σ² C(X̄, xs)` of size `n × m`.
    pub(crate) fn solved_cross(&self, xs: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let cross = self.kernel.cross_cov(&self.design.xu, xs)? * self.kernel.process_variance;
        let mut v = cross.clone();
        linalg::solve_lower_mat(&self.chol, &mut v);
        Ok((cross, v))
    }

    /// Hyperparameters in the optimizer's log parameterization:
    /// log lengthscales, log process variance, then noise parameters.
    pub fn log_params(&self) -> Vec<f64> {
        let mut p: Vec<f64> = self.kernel.lengthscales.iter().map(|t| t.ln()).collect();
        p.push(self.kernel.process_variance.ln());
        match &self.noise {
            NoiseModel::Constant { variance } => p.push(variance.ln()),
            NoiseModel::Parametric { coeffs, .. } => p.extend_from_slice(coeffs),
            _ => {}
        }
        p
    }

    /// Same hyperparameters and noise model conditioned on a different design.
    pub fn recondition(&self, design: CompactedDesign) -> Result<Self> {
        Self::condition(self.kernel.clone(), self.noise.clone(), self.trend.mode, design)
    }

    /// Noise-free GP with the same kernel interpolating `m_n` at the unique designs.
    pub fn reinterpolate(&self) -> Result<Self> {
        let n = self.design.n();
        let means = (0..n).map(|i| self.mean_unchecked(&self.design.point(i))).collect();
        let design = CompactedDesign::from_summaries(self.design.xu.clone(), vec![1; n], means, vec![None; n])?;
        Self::condition(self.kernel.clone(), NoiseModel::noise_free(), self.trend.mode, design)
    }
}

/// Negative log density of the design means under the collapsed covariance.
pub fn neg_log_likelihood(kernel: &Kernel, noise: &NoiseModel, trend: TrendMode, data: &CompactedDesign) -> Result<f64> {
    Ok(FittedGP::condition(kernel.clone(), noise.clone(), trend, data.clone())?.nll)
}

#[derive(Clone, Debug)]
pub struct FitOptions {
    pub family: KernelFamily,
    pub trend: TrendMode,
    /// Total number of local searches: the default start plus space-filling ones.
    pub starts: usize,
    pub lbfgs: LbfgsOptions,
    /// Domain used for lengthscale bounds; defaults to the bounding box of the designs.
    pub domain: Option<Domain>,
    /// Replaces the default start, in [`FittedGP::log_params`] layout.
    pub warm_start: Option<Vec<f64>>,
    /// Run the starts on the rayon pool.
    pub parallel: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            family: KernelFamily::Matern52,
            trend: TrendMode::ConstantGls,
            starts: 5,
            lbfgs: LbfgsOptions::default(),
            domain: None,
            warm_start: None,
            parallel: true,
        }
    }
}

/// Fits hyperparameters by maximum likelihood and conditions the model.
pub fn fit(data: &CompactedDesign, spec: &NoiseSpec, opts: &FitOptions) -> Result<FittedGP> {
    match spec {
        NoiseSpec::Homoscedastic => fit_parameterized(data, NoiseParameterization::Homoscedastic, opts),
        NoiseSpec::Fixed(model) => fit_parameterized(data, NoiseParameterization::Fixed(model.clone()), opts),
        NoiseSpec::Parametric { degree } => noise::fit_parametric_variance(data, *degree, opts).map(|(_, m)| m),
        NoiseSpec::StochasticKriging => {
            let model = noise::fit_stochastic_kriging(data, opts)?;
            fit_parameterized(data, NoiseParameterization::Fixed(model), opts)
        }
        NoiseSpec::SmoothedLatent => noise::fit_smoothed_latent(data, opts),
    }
}

fn is_degenerate(data: &CompactedDesign, trend: TrendMode) -> bool {
    data.n() == 1
        || (data.mean_variance() == 0.0 && (trend == TrendMode::ConstantGls || data.means.iter().all(|&m| m == 0.0)))
}

pub(crate) fn fit_parameterized(
    data: &CompactedDesign,
    noise: NoiseParameterization,
    opts: &FitOptions,
) -> Result<FittedGP> {
    if data.n() == 0 {
        return Err(GpError::InsufficientData("no observations to fit".into()));
    }
    if is_degenerate(data, opts.trend) {
        return constant_model(data, noise, opts);
    }
    let problem = LikelihoodProblem::new(data, opts.family, opts.trend, noise, opts.domain.as_ref())?;
    let (lower, upper) = problem.bounds();
    let starts = problem.starts(opts.starts.max(1), opts.warm_start.as_deref());
    let run = |x0: &Vec<f64>| {
        optim::minimize(|p| problem.value_and_gradient(p).ok(), x0, &lower, &upper, &opts.lbfgs)
    };
    let results: Vec<_> = if opts.parallel {
        use rayon::prelude::*;
        starts.par_iter().map(run).collect()
    } else {
        starts.iter().map(run).collect()
    };
    let best = results
        .into_iter()
        .flatten()
        .fold(None::<optim::Minimum>, |best, m| match best {
            Some(b) if b.f <= m.f => Some(b),
            _ => Some(m),
        })
        .ok_or(GpError::OptimizerFailed { starts: starts.len() })?;
    problem.condition(&best.x)
}

fn constant_model(data: &CompactedDesign, noise: NoiseParameterization, opts: &FitOptions) -> Result<FittedGP> {
    let domain = opts.domain.clone().unwrap_or_else(|| Domain::bounding(&data.xu));
    let level = data.means.iter().sum::<f64>() / data.n() as f64;
    let kernel = Kernel::new(
        opts.family,
        domain.widths().iter().map(|w| 0.25 * w).collect(),
        1e-12 * level.powi(2).max(1.0),
    )?;
    let pooled = data.pooled_variance().unwrap_or(0.0);
    let noise = match noise {
        NoiseParameterization::Fixed(m) => m,
        NoiseParameterization::Homoscedastic => NoiseModel::Constant { variance: pooled },
        NoiseParameterization::Parametric(basis) => {
            let floor = noise::variance_floor(data);
            let mut coeffs = vec![0.0; basis.len()];
            coeffs[0] = pooled.max(floor).max(f64::MIN_POSITIVE).ln();
            NoiseModel::Parametric { basis, coeffs, floor }
        }
    };
    let mut m = FittedGP::condition(kernel, noise, opts.trend, data.clone())?;
    m.degenerate = true;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::replication::{compact, RawData};
    use approx::assert_relative_eq;

    fn k1(theta: f64, s2: f64) -> Kernel {
        Kernel::new(KernelFamily::Matern52, vec![theta], s2).unwrap()
    }

    fn single(y: f64) -> CompactedDesign {
        CompactedDesign::from_summaries(DMatrix::from_element(1, 1, 0.5), vec![1], vec![y], vec![None]).unwrap()
    }

    #[test]
    fn univariate_likelihood_values() {
        let k = k1(1.0, 1.0);
        let v = neg_log_likelihood(&k, &NoiseModel::noise_free(), TrendMode::Zero, &single(0.0)).unwrap();
        assert_relative_eq!(v, 0.918_938_533_204_672_7, epsilon = 1e-7);
        let v = neg_log_likelihood(&k, &NoiseModel::Constant { variance: 1.0 }, TrendMode::Zero, &single(0.0)).unwrap();
        assert_relative_eq!(v, 1.265_512_123_484_645_4, epsilon = 1e-7);
    }

    #[test]
    fn interpolates_noise_free_training_points() {
        let raw = RawData::from_1d(&[0.1, 0.4, 0.8], vec![1.0, -0.5, 2.0]).unwrap();
        let m = FittedGP::condition(k1(0.3, 1.0), NoiseModel::noise_free(), TrendMode::ConstantGls, compact(&raw)).unwrap();
        for (x, y) in [(0.1, 1.0), (0.4, -0.5), (0.8, 2.0)] {
            let p = m.predict(&[x]).unwrap();
            assert!((p.mean - y).abs() < 1e-8, "{} {}", p.mean - y, p.latent_var);
            assert!(p.latent_var < 1e-8);
        }
    }

    #[test]
    fn reverts_to_prior_far_away() {
        let raw = RawData::from_1d(&[0.1, 0.2], vec![3.0, 4.0]).unwrap();
        let m = FittedGP::condition(k1(0.05, 2.0), NoiseModel::Constant { variance: 0.1 }, TrendMode::Zero, compact(&raw)).unwrap();
        let p = m.predict(&[50.0]).unwrap();
        assert!(p.mean.abs() < 1e-12);
        assert_relative_eq!(p.latent_var, 2.0, epsilon = 1e-12);
        assert_relative_eq!(p.obs_var, 2.1, epsilon = 1e-12);
    }

    #[test]
    fn prior_model_has_prior_variance() {
        let m = FittedGP::prior(k1(0.3, 1.7), NoiseModel::noise_free(), TrendMode::Zero).unwrap();
        let p = m.predict(&[0.2]).unwrap();
        assert_eq!((p.mean, p.latent_var), (0.0, 1.7));
    }

    #[test]
    fn predict_many_matches_predict() {
        let raw = RawData::from_1d(&[0.1, 0.1, 0.5, 0.9], vec![1.0, 1.4, 0.2, 0.7]).unwrap();
        let m = FittedGP::condition(k1(0.4, 1.0), NoiseModel::Constant { variance: 0.05 }, TrendMode::ConstantGls, compact(&raw)).unwrap();
        let xs = DMatrix::from_column_slice(3, 1, &[0.0, 0.33, 0.7]);
        let many = m.predict_many(&xs).unwrap();
        for (j, p) in many.iter().enumerate() {
            let q = m.predict(&[xs[(j, 0)]]).unwrap();
            assert_relative_eq!(p.mean, q.mean, epsilon = 1e-13);
            assert_relative_eq!(p.latent_var, q.latent_var, epsilon = 1e-13);
        }
        assert!(m.predict(&[0.1, 0.2]).is_err());
    }

    #[test]
    fn degenerate_data_gives_flagged_constant() {
        let raw = RawData::from_1d(&[0.1, 0.5, 0.9], vec![2.5; 3]).unwrap();
        let m = fit(&compact(&raw), &NoiseSpec::Homoscedastic, &FitOptions::default()).unwrap();
        assert!(m.is_degenerate());
        assert!((m.predict(&[0.3]).unwrap().mean - 2.5).abs() < 1e-12);
    }

    #[test]
    fn fit_rejects_empty_design() {
        assert!(fit(&CompactedDesign::empty(1), &NoiseSpec::Homoscedastic, &FitOptions::default()).is_err());
    }

    #[test]
    fn reinterpolation_of_noise_free_model_is_identity_at_designs() {
        let raw = RawData::from_1d(&[0.0, 0.3, 0.6, 1.0], vec![0.1, 0.9, 0.4, -0.2]).unwrap();
        let m = FittedGP::condition(k1(0.3, 1.0), NoiseModel::noise_free(), TrendMode::ConstantGls, compact(&raw)).unwrap();
        let r = m.reinterpolate().unwrap();
        for i in 0..4 {
            let x = m.design().point(i);
            let e = r.predict(&x).unwrap().mean - m.predict(&x).unwrap().mean;
            assert!(e.abs() < 1e-8, "{e}");
            assert!(r.predict(&x).unwrap().latent_var < 1e-6);
        }
    }

    #[test]
    fn serde_round_trip_preserves_predictions() {
        let raw = RawData::from_1d(&[0.1, 0.1, 0.5, 0.9], vec![1.0, 1.4, 0.2, 0.7]).unwrap();
        let m = FittedGP::condition(k1(0.4, 1.0), NoiseModel::Constant { variance: 0.05 }, TrendMode::ConstantGls, compact(&raw)).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        let back: FittedGP = serde_json::from_str(&s).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), s);
        let p = m.predict(&[0.37]).unwrap();
        let q = back.predict(&[0.37]).unwrap();
        assert_eq!(p, q);
    }
}
