//! Acquisition criteria: IMSPE with replicate-vs-new lookahead, plugin EI,
//! lower confidence bounds, contour SUR and replicate budgeting.
//!
//! Every criterion works at fixed hyperparameters. Adding one observation at
//! `x⁺` with noise `r(x⁺)` changes the latent covariance by the rank-one term
//!
//! ```text
//! k_{n+1}(z, z') = k_n(z, z') − k_n(z, x⁺) k_n(x⁺, z') / (v_n(x⁺) + r(x⁺) + j)
//! ```
//!
//! which is the same whether `x⁺` is a new row or a replicate of an existing
//! design.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{GpError, Result};
use crate::gp::FittedGP;
use crate::kernels::Domain;
use crate::linalg;
use crate::lowdisc;

pub const GAUSS_HERMITE_ORDER: usize = 9;

#[derive(Clone, Debug)]
pub struct AcquisitionConfig {
    /// `M × d` integration nodes shared by IMSPE and SUR.
    pub quad_nodes: DMatrix<f64>,
    /// Level-set target, or an override of the plugin best value for EI.
    pub threshold: Option<f64>,
    pub ucb_beta: f64,
    /// Target ratio `ρ` of post- to pre-batch latent variance.
    pub reduction_ratio: f64,
    pub replicate_cap: usize,
    pub candidate_count: usize,
}

impl AcquisitionConfig {
    /// Defaults for `domain`: `512·d` Halton nodes and `100·d` candidates.
    pub fn for_domain(domain: &Domain) -> Self {
        let d = domain.dim();
        AcquisitionConfig {
            quad_nodes: lowdisc::halton_in(512 * d, domain),
            threshold: None,
            ucb_beta: 1.96,
            reduction_ratio: 0.9,
            replicate_cap: 50,
            candidate_count: 100 * d,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.quad_nodes.nrows() < 32 {
            return Err(GpError::InvalidParameter(format!("need at least 32 quadrature nodes, got {}", self.quad_nodes.nrows())));
        }
        if !(self.reduction_ratio > 0.0 && self.reduction_ratio <= 1.0) {
            return Err(GpError::InvalidParameter(format!("reduction ratio {} outside (0, 1]", self.reduction_ratio)));
        }
        if self.replicate_cap == 0 || self.candidate_count == 0 {
            return Err(GpError::InvalidParameter("replicate_cap and candidate_count must be positive".into()));
        }
        if !(self.ucb_beta >= 0.0) {
            return Err(GpError::InvalidParameter(format!("ucb beta {} must be nonnegative", self.ucb_beta)));
        }
        Ok(())
    }

    fn threshold(&self) -> Result<f64> {
        self.threshold.ok_or_else(|| GpError::InvalidParameter("contour criteria need a threshold".into()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Action {
    NewDesign { x: Vec<f64> },
    /// Replicate the unique design with this index.
    Replicate { index: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignDecision {
    pub action: Action,
    pub batch_size: usize,
    pub criterion_value: f64,
    /// The batch hit the replicate cap without meeting the reduction target.
    #[serde(default)]
    pub saturated: bool,
}

/// Batch size chosen by [`replicates_for_target_reduction`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchSize {
    pub size: usize,
    /// No size up to the cap reached the target.
    pub saturated: bool,
    /// The latent variance at the point was already zero.
    pub no_op: bool,
}

/// Model quantities at the quadrature nodes, reused across candidates.
pub struct NodeCache<'a> {
    model: &'a FittedGP,
    nodes: &'a DMatrix<f64>,
    /// `L⁻¹ Σ(X̄, Z)`.
    solved: DMatrix<f64>,
    pub means: Vec<f64>,
    pub latent_vars: Vec<f64>,
}

/// Effect of one extra observation at a point.
struct Update {
    /// `k_n(z, x⁺)` at every node.
    cov: DVector<f64>,
    /// `v_n(x⁺) + r(x⁺) + j`.
    denom: f64,
}

impl<'a> NodeCache<'a> {
    pub fn new(model: &'a FittedGP, nodes: &'a DMatrix<f64>) -> Result<Self> {
        if nodes.ncols() != model.dim() {
            return Err(GpError::DimensionMismatch { expected: model.dim(), got: nodes.ncols() });
        }
        let (cross, solved) = model.solved_cross(nodes)?;
        let s2 = model.kernel().process_variance;
        let beta = model.trend().beta;
        let means = (0..nodes.nrows()).map(|j| beta + cross.column(j).dot(model.alpha())).collect();
        let latent_vars = (0..nodes.nrows()).map(|j| (s2 - solved.column(j).norm_squared()).max(0.0)).collect();
        Ok(NodeCache { model, nodes, solved, means, latent_vars })
    }

    pub fn imspe(&self) -> f64 {
        mean(&self.latent_vars)
    }

    fn update(&self, x: &[f64], replicates: usize) -> Result<Update> {
        let model = self.model;
        if x.len() != model.dim() {
            return Err(GpError::DimensionMismatch { expected: model.dim(), got: x.len() });
        }
        let kernel = model.kernel();
        let s2 = kernel.process_variance;
        let mut w = model.cov_vec(x);
        linalg::solve_lower(model.chol(), &mut w);
        let vx = (s2 - w.norm_squared()).max(0.0);
        let mut cov = DVector::from_iterator(
            self.nodes.nrows(),
            (0..self.nodes.nrows()).map(|j| s2 * kernel.corr_row(x, self.nodes, j)),
        );
        if model.design().n() > 0 {
            cov -= self.solved.tr_mul(&w);
        }
        let noise = (model.noise().eval_r(x) + model.jitter()) / replicates as f64;
        Ok(Update { cov, denom: vx + noise })
    }

    /// IMSPE after one more observation at `x`.
    pub fn one_step(&self, x: &[f64]) -> Result<f64> {
        let u = self.update(x, 1)?;
        if u.denom <= 0.0 {
            return Ok(self.imspe());
        }
        let total: f64 = self
            .latent_vars
            .iter()
            .zip(u.cov.iter())
            .map(|(v, c)| (v - c * c / u.denom).max(0.0))
            .sum();
        Ok(total / self.latent_vars.len() as f64)
    }

    /// Mean misclassification variance `p(1 − p)` over the nodes.
    pub fn gamma(&self, threshold: f64) -> f64 {
        let vals: Vec<f64> = self
            .means
            .iter()
            .zip(&self.latent_vars)
            .map(|(&m, &v)| bernoulli_var(m, v, threshold))
            .collect();
        mean(&vals)
    }

    /// Expected `gamma` after one observation at `x`.
    ///
    /// With `s²` the variance of the mean update at a node, the expectation
    /// of `p(1 − p)` over the outcome is `2 T(h, √((v − s²)/(v + s²)))`,
    /// `h = (m − t)/√v`, where `T` is Owen's function.
    pub fn contour_sur(&self, x: &[f64], threshold: f64) -> Result<f64> {
        let u = self.update(x, 1)?;
        if u.denom <= 0.0 {
            return Ok(self.gamma(threshold));
        }
        let mut total = 0.0;
        for j in 0..self.means.len() {
            let v = self.latent_vars[j];
            if v <= 0.0 {
                total += bernoulli_var(self.means[j], 0.0, threshold);
                continue;
            }
            let s2 = (u.cov[j] * u.cov[j] / u.denom).min(v);
            let h = (self.means[j] - threshold) / v.sqrt();
            total += 2.0 * owens_t(h, ((v - s2) / (v + s2)).sqrt());
        }
        Ok((total / self.means.len() as f64).clamp(0.0, 0.25))
    }

    /// [`NodeCache::contour_sur`] with the outcome expectation taken by Gauss–Hermite quadrature.
    pub fn contour_sur_gauss_hermite(&self, x: &[f64], threshold: f64) -> Result<f64> {
        let u = self.update(x, 1)?;
        if u.denom <= 0.0 {
            return Ok(self.gamma(threshold));
        }
        let scale = u.denom.sqrt();
        let (nodes, weights) = gauss_hermite();
        let mut total = 0.0;
        for j in 0..self.means.len() {
            let c = u.cov[j];
            let shift = c / scale;
            let v_next = (self.latent_vars[j] - c * c / u.denom).max(0.0);
            let mut e = 0.0;
            for (xi, w) in nodes.iter().zip(weights) {
                e += w * bernoulli_var(self.means[j] + shift * xi, v_next, threshold);
            }
            total += e;
        }
        Ok((total / self.means.len() as f64).clamp(0.0, 0.25))
    }

    /// Monte Carlo version of [`NodeCache::contour_sur`] over standard normal draws of the outcome.
    pub fn contour_sur_samples(&self, x: &[f64], threshold: f64, xis: &[f64]) -> Result<Vec<f64>> {
        let u = self.update(x, 1)?;
        let scale = u.denom.sqrt();
        Ok(xis
            .iter()
            .map(|xi| {
                let vals: Vec<f64> = (0..self.means.len())
                    .map(|j| {
                        let c = u.cov[j];
                        let v_next = (self.latent_vars[j] - c * c / u.denom).max(0.0);
                        bernoulli_var(self.means[j] + c / scale * xi, v_next, threshold)
                    })
                    .collect();
                mean(&vals)
            })
            .collect())
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn std_normal() -> Normal {
    Normal::standard()
}

fn bernoulli_var(m: f64, v: f64, threshold: f64) -> f64 {
    let p = if v > 0.0 {
        std_normal().cdf((m - threshold) / v.sqrt())
    } else if m > threshold {
        1.0
    } else if m < threshold {
        0.0
    } else {
        0.5
    };
    p * (1.0 - p)
}

/// Owen's `T(h, a) = (1/2π) ∫₀ᵃ exp(−h²(1 + x²)/2) / (1 + x²) dx` for `0 ≤ a ≤ 1`.
pub fn owens_t(h: f64, a: f64) -> f64 {
    let (nodes, weights) = gauss_legendre();
    let half = 0.5 * a;
    let mut sum = 0.0;
    for (t, w) in nodes.iter().zip(weights) {
        let x = half * (t + 1.0);
        let q = 1.0 + x * x;
        sum += w * (-0.5 * h * h * q).exp() / q;
    }
    half * sum / (2.0 * std::f64::consts::PI)
}

fn golub_welsch(n: usize, offdiag: impl Fn(usize) -> f64, mass: f64) -> (Vec<f64>, Vec<f64>) {
    let jacobi = DMatrix::from_fn(n, n, |i, j| if i.abs_diff(j) == 1 { offdiag(i.max(j)) } else { 0.0 });
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n).map(|k| (eig.eigenvalues[k], mass * eig.eigenvectors[(0, k)].powi(2))).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// 32-point Gauss–Legendre rule on `[−1, 1]`.
fn gauss_legendre() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| {
        golub_welsch(32, |k| {
            let k = k as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        }, 2.0)
    })
}

/// Nodes and weights for `E[g(ξ)]`, `ξ ~ N(0, 1)`, via the Golub–Welsch eigenproblem.
pub fn gauss_hermite() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| golub_welsch(GAUSS_HERMITE_ORDER, |k| (k as f64).sqrt(), 1.0))
}

/// Mean latent variance over the quadrature nodes.
pub fn imspe(model: &FittedGP, cfg: &AcquisitionConfig) -> Result<f64> {
    Ok(NodeCache::new(model, &cfg.quad_nodes)?.imspe())
}

/// IMSPE after appending `x` with noise `r(x)`, at fixed hyperparameters.
pub fn imspe_one_step(model: &FittedGP, x: &[f64], cfg: &AcquisitionConfig) -> Result<f64> {
    NodeCache::new(model, &cfg.quad_nodes)?.one_step(x)
}

/// Minimizes one-step IMSPE over every existing design and the new `candidates`.
///
/// Replicates are scored first and a new point replaces the incumbent only
/// when strictly better, so ties go to replication.
pub fn select_next_imspe(model: &FittedGP, cfg: &AcquisitionConfig, candidates: &DMatrix<f64>) -> Result<DesignDecision> {
    let cache = NodeCache::new(model, &cfg.quad_nodes)?;
    let options = options(model, candidates);
    let scores = options.par_iter().map(|x| cache.one_step(x)).collect::<Result<Vec<_>>>()?;
    let (best, value) = argmin(&scores).ok_or(GpError::EmptyInput("no design options to score"))?;
    Ok(decision(best, model.design().n(), &options, value))
}

/// One-step IMSPE choice, reconsidered over a two-evaluation horizon.
///
/// When the one-step minimizer is a new design, two paths are compared at
/// fixed hyperparameters: the new design followed by the best replicate, and
/// the best replicate followed by the best new design. The first action of
/// the better path is taken, with ties going to replication.
pub fn select_next_imspe_lookahead(model: &FittedGP, cfg: &AcquisitionConfig, candidates: &DMatrix<f64>) -> Result<DesignDecision> {
    let n = model.design().n();
    let cache = NodeCache::new(model, &cfg.quad_nodes)?;
    let options = options(model, candidates);
    let scores = options.par_iter().map(|x| cache.one_step(x)).collect::<Result<Vec<_>>>()?;
    let (best, value) = argmin(&scores).ok_or(GpError::EmptyInput("no design options to score"))?;
    let first = decision(best, n, &options, value);
    if best < n || n == 0 {
        return Ok(first);
    }
    let (rep, rep_value) = argmin(&scores[..n]).expect("designs exist");

    let after_new = with_extra(model, &options[best])?;
    let cache_new = NodeCache::new(&after_new, &cfg.quad_nodes)?;
    let design_new = after_new.design();
    let new_then_rep = (0..design_new.n())
        .into_par_iter()
        .map(|i| cache_new.one_step(&design_new.point(i)))
        .collect::<Result<Vec<_>>>()?;

    let after_rep = with_extra(model, &options[rep])?;
    let cache_rep = NodeCache::new(&after_rep, &cfg.quad_nodes)?;
    let rep_then_new = options[n..].par_iter().map(|x| cache_rep.one_step(x)).collect::<Result<Vec<_>>>()?;

    let path_new = argmin(&new_then_rep).map_or(f64::INFINITY, |b| b.1);
    let path_rep = argmin(&rep_then_new).map_or(f64::INFINITY, |b| b.1);
    if path_rep <= path_new {
        Ok(decision(rep, n, &options, rep_value))
    } else {
        Ok(first)
    }
}

/// The model's design with one more observation at `x`, at the same hyperparameters.
///
/// The observed value does not matter for variances; the current mean is used.
fn with_extra(model: &FittedGP, x: &[f64]) -> Result<FittedGP> {
    let mut design = model.design().clone();
    match design.find(x) {
        Some(i) => design.counts[i] += 1,
        None => {
            let n = design.n();
            let mut xu = design.xu.clone().resize_vertically(n + 1, 0.0);
            for (k, v) in x.iter().enumerate() {
                xu[(n, k)] = *v;
            }
            let mut counts = design.counts.clone();
            counts.push(1);
            let mut means = design.means.clone();
            means.push(model.mean_unchecked(x));
            let mut vars = design.emp_vars.clone();
            vars.push(None);
            design = crate::replication::CompactedDesign::from_summaries(xu, counts, means, vars)?;
        }
    }
    model.recondition(design)
}

/// Minimizes one-step IMSPE over the new candidates only, ignoring replication.
pub fn select_new_imspe(model: &FittedGP, cfg: &AcquisitionConfig, candidates: &DMatrix<f64>) -> Result<DesignDecision> {
    let cache = NodeCache::new(model, &cfg.quad_nodes)?;
    let options: Vec<Vec<f64>> = (0..candidates.nrows()).map(|j| candidates.row(j).iter().copied().collect()).collect();
    let scores = options.par_iter().map(|x| cache.one_step(x)).collect::<Result<Vec<_>>>()?;
    let (best, value) = argmin(&scores).ok_or(GpError::EmptyInput("no candidates to score"))?;
    Ok(decision(best, 0, &options, value))
}

/// Existing unique designs followed by the new candidates.
fn options(model: &FittedGP, candidates: &DMatrix<f64>) -> Vec<Vec<f64>> {
    let design = model.design();
    (0..design.n())
        .map(|i| design.point(i))
        .chain((0..candidates.nrows()).map(|j| candidates.row(j).iter().copied().collect()))
        .collect()
}

/// First index of the smallest value; NaN scores are skipped.
fn argmin(scores: &[f64]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        if s.is_nan() {
            continue;
        }
        if best.is_none_or(|(_, b)| s < b) {
            best = Some((i, s));
        }
    }
    best
}

fn decision(best: usize, n_designs: usize, options: &[Vec<f64>], value: f64) -> DesignDecision {
    let action = if best < n_designs {
        Action::Replicate { index: best }
    } else {
        Action::NewDesign { x: options[best].clone() }
    };
    DesignDecision { action, batch_size: 1, criterion_value: value, saturated: false }
}

/// Plugin best value: the smallest predictive mean over the unique designs.
pub fn plugin_best(model: &FittedGP) -> Option<f64> {
    let design = model.design();
    (0..design.n()).map(|i| model.mean_unchecked(&design.point(i))).min_by(f64::total_cmp)
}

/// `E[max(0, t − Z)]` for `Z ~ N(mean, sd²)`.
pub fn expected_improvement(mean: f64, sd: f64, t: f64) -> f64 {
    if sd <= 0.0 {
        return (t - mean).max(0.0);
    }
    let u = (t - mean) / sd;
    let n = std_normal();
    ((t - mean) * n.cdf(u) + sd * n.pdf(u)).max(0.0)
}

/// Expected improvement of the latent surface over the plugin best value.
pub fn ei_plugin(model: &FittedGP, x: &[f64]) -> Result<f64> {
    let t = plugin_best(model).ok_or(GpError::InsufficientData("plugin EI needs at least one design".into()))?;
    let p = model.predict(x)?;
    Ok(expected_improvement(p.mean, p.latent_sd(), t))
}

/// Lower confidence bound `m(x) − β √v(x)`.
pub fn ucb(model: &FittedGP, x: &[f64], beta: f64) -> Result<f64> {
    if !(beta >= 0.0) {
        return Err(GpError::InvalidParameter(format!("ucb beta {beta} must be nonnegative")));
    }
    let p = model.predict(x)?;
    Ok(p.mean - beta * p.latent_sd())
}

/// Current contour uncertainty `mean p(1 − p)` over the nodes.
pub fn contour_uncertainty(model: &FittedGP, cfg: &AcquisitionConfig) -> Result<f64> {
    Ok(NodeCache::new(model, &cfg.quad_nodes)?.gamma(cfg.threshold()?))
}

/// Expected contour uncertainty after one observation at `x`.
pub fn contour_sur(model: &FittedGP, x: &[f64], cfg: &AcquisitionConfig) -> Result<f64> {
    NodeCache::new(model, &cfg.quad_nodes)?.contour_sur(x, cfg.threshold()?)
}

/// Latent variance at `x` after `a` more observations there.
pub fn latent_var_after(v: f64, noise: f64, a: usize) -> f64 {
    let per = noise / a as f64;
    if v + per <= 0.0 {
        0.0
    } else {
        v * per / (v + per)
    }
}

/// Smallest batch at `x` whose latent variance drops to `ρ` times its current value.
pub fn replicates_for_target_reduction(model: &FittedGP, x: &[f64], rho: f64, cap: usize) -> Result<BatchSize> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(GpError::InvalidParameter(format!("reduction ratio {rho} outside (0, 1]")));
    }
    if cap == 0 {
        return Err(GpError::InvalidParameter("replicate cap must be at least 1".into()));
    }
    let v = model.predict(x)?.latent_var;
    if v <= 0.0 {
        return Ok(BatchSize { size: 1, saturated: false, no_op: true });
    }
    let noise = model.noise().eval_r(x) + model.jitter();
    for a in 1..=cap {
        if latent_var_after(v, noise, a) <= rho * v {
            return Ok(BatchSize { size: a, saturated: false, no_op: false });
        }
    }
    Ok(BatchSize { size: cap, saturated: true, no_op: false })
}

/// Scores every design option with `score` (smaller is better) and returns the decision.
pub(crate) fn select_by<F>(model: &FittedGP, candidates: &DMatrix<f64>, score: F) -> Result<DesignDecision>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let options = options(model, candidates);
    let scores = options.par_iter().map(|x| score(x)).collect::<Result<Vec<_>>>()?;
    let (best, value) = argmin(&scores).ok_or(GpError::EmptyInput("no design options to score"))?;
    Ok(decision(best, model.design().n(), &options, value))
}

/// Candidate minimizing expected contour uncertainty, with its batch sized for a `ρ` reduction.
pub fn select_next_contour(model: &FittedGP, cfg: &AcquisitionConfig, candidates: &DMatrix<f64>) -> Result<DesignDecision> {
    let cache = NodeCache::new(model, &cfg.quad_nodes)?;
    let t = cfg.threshold()?;
    let mut d = select_by(model, candidates, |x| cache.contour_sur(x, t))?;
    let x = match &d.action {
        Action::NewDesign { x } => x.clone(),
        Action::Replicate { index } => model.design().point(*index),
    };
    let b = replicates_for_target_reduction(model, &x, cfg.reduction_ratio, cfg.replicate_cap)?;
    d.batch_size = b.size;
    d.saturated = b.saturated;
    Ok(d)
}
