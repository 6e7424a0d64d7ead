//! Noise variance functions `r(x)` and their estimation.
//!
//! Four flavors are supported: a constant, a known built-in function, a
//! log-polynomial `exp(h(x))` fitted jointly with the mean GP, and a second GP
//! on log empirical variances (stochastic kriging).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::digamma;

use crate::error::{GpError, Result};
use crate::gp::{self, FitOptions, FittedGP, Prediction, TrendMode};
use crate::kernels::Domain;
use crate::likelihood::NoiseParameterization;
use crate::replication::CompactedDesign;

/// Lower bound for variances, relative to the variance of the design means.
pub const FLOOR_REL: f64 = 1e-12;

/// Maximum refit rounds of the smoothed latent-variance scheme.
pub const LATENT_MAX_ROUNDS: usize = 3;

/// Relative likelihood change that stops the smoothed latent-variance scheme.
pub const LATENT_REL_TOL: f64 = 1e-4;

pub fn variance_floor(data: &CompactedDesign) -> f64 {
    (FLOOR_REL * data.mean_variance()).max(f64::MIN_POSITIVE)
}

/// Named built-in variance functions. Polynomials act on the first input coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum KnownVariance {
    Constant { variance: f64 },
    /// `max(0, Σ c_k x_1^k)`.
    Poly { coeffs: Vec<f64> },
    /// `exp(Σ c_k x_1^k)`.
    ExpPoly { coeffs: Vec<f64> },
}

impl KnownVariance {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let horner = |c: &[f64]| c.iter().rev().fold(0.0, |acc, v| acc * x[0] + v);
        match self {
            KnownVariance::Constant { variance } => *variance,
            KnownVariance::Poly { coeffs } => horner(coeffs).max(0.0),
            KnownVariance::ExpPoly { coeffs } => horner(coeffs).exp(),
        }
    }
}

impl std::str::FromStr for KnownVariance {
    type Err = GpError;

    /// Parses `constant:0.3`, `poly:c0,c1,...` or `exppoly:c0,c1,...`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = s.split_once(':').ok_or_else(|| GpError::InvalidParameter(format!("expected name:args, got '{s}'")))?;
        let nums = args
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| GpError::InvalidParameter(format!("bad number '{v}' in '{s}'"))))
            .collect::<Result<Vec<_>>>()?;
        match name {
            "constant" if nums.len() == 1 && nums[0] >= 0.0 => Ok(KnownVariance::Constant { variance: nums[0] }),
            "poly" => Ok(KnownVariance::Poly { coeffs: nums }),
            "exppoly" => Ok(KnownVariance::ExpPoly { coeffs: nums }),
            _ => Err(GpError::InvalidParameter(format!("unknown variance function '{s}'"))),
        }
    }
}

/// Monomials of total degree `≤ degree` in inputs rescaled to `[-1, 1]`.
///
/// Terms are ordered by total degree, so index 0 is the intercept and indices
/// `1..=d` are the linear terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyBasis {
    pub domain: Domain,
    pub degree: usize,
    pub exponents: Vec<Vec<u32>>,
}

impl PolyBasis {
    pub fn new(domain: Domain, degree: usize) -> Result<Self> {
        if degree > 3 {
            return Err(GpError::InvalidParameter(format!("polynomial degree {degree} exceeds 3")));
        }
        let d = domain.dim();
        let mut exponents = Vec::new();
        for total in 0..=degree as u32 {
            let mut current = vec![0u32; d];
            push_compositions(total, 0, &mut current, &mut exponents);
        }
        Ok(PolyBasis { domain, degree, exponents })
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let s = self.domain.to_symmetric(x);
        self.exponents
            .iter()
            .map(|e| e.iter().zip(&s).map(|(&p, v)| v.powi(p as i32)).product())
            .collect()
    }

    /// Linear coefficient along `dim` expressed per unit of the original input.
    pub fn linear_slope(&self, coeffs: &[f64], dim: usize) -> f64 {
        let w = self.domain.upper[dim] - self.domain.lower[dim];
        coeffs[1 + dim] * 2.0 / w
    }
}

fn push_compositions(remaining: u32, pos: usize, current: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if pos == current.len() - 1 {
        current[pos] = remaining;
        out.push(current.clone());
        current[pos] = 0;
        return;
    }
    for v in (0..=remaining).rev() {
        current[pos] = v;
        push_compositions(remaining - v, pos + 1, current, out);
    }
    current[pos] = 0;
}

/// The variance function `r(x)`, in output-variance units.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum NoiseModel {
    Constant {
        variance: f64,
    },
    Known {
        function: KnownVariance,
        floor: f64,
    },
    Parametric {
        basis: PolyBasis,
        coeffs: Vec<f64>,
        floor: f64,
    },
    /// `r(x) = exp(m(x))` with `m` the predictive mean of a GP on log variances.
    StochasticKriging {
        inner: Box<FittedGP>,
        floor: f64,
    },
}

impl NoiseModel {
    pub fn noise_free() -> Self {
        NoiseModel::Constant { variance: 0.0 }
    }

    pub fn floor(&self) -> f64 {
        match self {
            NoiseModel::Constant { .. } => 0.0,
            NoiseModel::Known { floor, .. } | NoiseModel::Parametric { floor, .. } | NoiseModel::StochasticKriging { floor, .. } => *floor,
        }
    }

    pub fn eval_r(&self, x: &[f64]) -> f64 {
        match self {
            NoiseModel::Constant { variance } => *variance,
            NoiseModel::Known { function, floor } => function.eval(x).max(*floor),
            NoiseModel::Parametric { basis, coeffs, floor } => {
                let h: f64 = basis.eval(x).iter().zip(coeffs).map(|(f, c)| f * c).sum();
                h.exp().max(*floor)
            }
            NoiseModel::StochasticKriging { inner, floor } => inner.mean_unchecked(x).exp().max(*floor),
        }
    }

    /// Prediction of the inner GP on the log-variance scale, when there is one.
    pub fn log_variance_prediction(&self, x: &[f64]) -> Option<Result<Prediction>> {
        match self {
            NoiseModel::StochasticKriging { inner, .. } => Some(inner.predict(x)),
            _ => None,
        }
    }
}

impl PartialEq for NoiseModel {
    fn eq(&self, other: &Self) -> bool {
        serde_json::to_string(self).ok() == serde_json::to_string(other).ok()
    }
}

/// How the noise variance is obtained when fitting a model.
#[derive(Clone, Debug, PartialEq)]
pub enum NoiseSpec {
    /// Constant `ν` estimated by maximum likelihood.
    Homoscedastic,
    /// A given noise model, kept as is.
    Fixed(NoiseModel),
    /// `r(x) = exp(h(x))`, polynomial `h` of the given degree fitted jointly.
    Parametric { degree: usize },
    /// GP on log empirical variances of replicated designs.
    StochasticKriging,
    /// Alternating refits of a smoothed log-variance GP and the mean GP.
    SmoothedLatent,
}

impl std::str::FromStr for NoiseSpec {
    type Err = GpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "homoscedastic" | "constant" => Ok(NoiseSpec::Homoscedastic),
            "stochastic-kriging" | "sk" => Ok(NoiseSpec::StochasticKriging),
            "latent" | "smoothed-latent" => Ok(NoiseSpec::SmoothedLatent),
            "noise-free" => Ok(NoiseSpec::Fixed(NoiseModel::noise_free())),
            _ => {
                if let Some(deg) = s.strip_prefix("parametric:") {
                    let degree = deg.parse().map_err(|_| GpError::InvalidParameter(format!("bad degree in '{s}'")))?;
                    Ok(NoiseSpec::Parametric { degree })
                } else if let Some(known) = s.strip_prefix("known:") {
                    Ok(NoiseSpec::Fixed(NoiseModel::Known { function: known.parse()?, floor: 0.0 }))
                } else {
                    Err(GpError::InvalidParameter(format!("unknown noise model '{s}'")))
                }
            }
        }
    }
}

fn inner_options(opts: &FitOptions) -> FitOptions {
    FitOptions { trend: TrendMode::ConstantGls, warm_start: None, ..opts.clone() }
}

/// Fits `r(x) = exp(h(x))` jointly with the kernel hyperparameters.
pub fn fit_parametric_variance(data: &CompactedDesign, degree: usize, opts: &FitOptions) -> Result<(NoiseModel, FittedGP)> {
    let domain = opts.domain.clone().unwrap_or_else(|| Domain::bounding(&data.xu));
    let basis = PolyBasis::new(domain, degree)?;
    if data.n() <= basis.len() {
        return Err(GpError::InsufficientData(format!(
            "{} unique designs cannot identify {} noise coefficients plus the mean model",
            data.n(),
            basis.len()
        )));
    }
    let model = gp::fit_parameterized(data, NoiseParameterization::Parametric(basis), opts)?;
    Ok((model.noise().clone(), model))
}

/// Fits the log-variance GP on designs with at least two replicates.
pub fn fit_stochastic_kriging(data: &CompactedDesign, opts: &FitOptions) -> Result<NoiseModel> {
    let floor = variance_floor(data);
    let usable: Vec<usize> = (0..data.n()).filter(|&i| data.emp_vars[i].is_some()).collect();
    if usable.len() < 3 {
        return Err(GpError::TooFewReplicatedDesigns { found: usable.len() });
    }
    let xs = DMatrix::from_fn(usable.len(), data.dim(), |r, k| data.xu[(usable[r], k)]);
    let logs = usable.iter().map(|&i| data.emp_vars[i].unwrap().max(floor).ln()).collect();
    let inner_data = CompactedDesign::from_summaries(xs, vec![1; usable.len()], logs, vec![None; usable.len()])?;
    let inner_opts = FitOptions { domain: None, ..inner_options(opts) };
    let inner = gp::fit(&inner_data, &NoiseSpec::Homoscedastic, &inner_opts)?;
    Ok(NoiseModel::StochasticKriging { inner: Box::new(inner), floor })
}

/// Hybrid latent-variance fit usable without replication.
///
/// Each round estimates a per-design log variance from the squared deviations
/// of the raw outputs around the current predictive mean, corrects the
/// log-chi-square bias for its `a_i` degrees of freedom, smooths these values
/// with a homoscedastic GP and refits the mean GP with the resulting
/// `exp(log-variance mean)` as fixed noise.
pub fn fit_smoothed_latent(data: &CompactedDesign, opts: &FitOptions) -> Result<FittedGP> {
    let floor = variance_floor(data);
    let mut model = gp::fit(data, &NoiseSpec::Homoscedastic, opts)?;
    if model.is_degenerate() || data.n() < 3 {
        return Ok(model);
    }
    let inner_opts = FitOptions { domain: opts.domain.clone(), ..inner_options(opts) };
    let mut prev = model.neg_log_likelihood();
    for _ in 0..LATENT_MAX_ROUNDS {
        let mut logs = Vec::with_capacity(data.n());
        for i in 0..data.n() {
            let a = data.counts[i] as f64;
            let m = model.mean_unchecked(&data.point(i));
            let within = data.emp_vars[i].map_or(0.0, |v| (a - 1.0) * v);
            let mse = (within + a * (data.means[i] - m).powi(2)) / a;
            let bias = digamma(a / 2.0) + (2.0 / a).ln();
            logs.push(mse.max(floor).ln() - bias);
        }
        let inner_data = CompactedDesign::from_summaries(data.xu.clone(), vec![1; data.n()], logs, vec![None; data.n()])?;
        let inner = gp::fit(&inner_data, &NoiseSpec::Homoscedastic, &inner_opts)?;
        let noise = NoiseModel::StochasticKriging { inner: Box::new(inner), floor };
        let refit_opts = FitOptions { warm_start: Some(model.log_params()[..data.dim() + 1].to_vec()), ..opts.clone() };
        model = gp::fit(data, &NoiseSpec::Fixed(noise), &refit_opts)?;
        let nll = model.neg_log_likelihood();
        let rel = (nll - prev).abs() / prev.abs().max(1.0);
        prev = nll;
        if rel < LATENT_REL_TOL {
            break;
        }
    }
    Ok(model)
}
