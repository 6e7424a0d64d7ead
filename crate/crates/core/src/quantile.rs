//! Quantile surfaces from replicated data.
//!
//! Empirical quantiles are computed per unique design and modelled either by
//! one homoscedastic GP per level, or by a single GP whose input is augmented
//! with the (rescaled) quantile level. Predictions are rearranged pointwise so
//! that quantiles never cross.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{GpError, Result};
use crate::gp::{self, FitOptions, FittedGP};
use crate::kernels::Domain;
use crate::noise::NoiseSpec;
use crate::replication::{compact, quantile_sorted, CompactedDesign, RawData};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum QuantileMode {
    #[default]
    PerLevel,
    Augmented,
}

impl std::str::FromStr for QuantileMode {
    type Err = GpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-level" => Ok(QuantileMode::PerLevel),
            "augmented" => Ok(QuantileMode::Augmented),
            other => Err(GpError::InvalidParameter(format!("unknown quantile mode '{other}'"))),
        }
    }
}

/// One predicted quantile together with the inner model's predictive standard deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuantilePrediction {
    pub level: f64,
    pub value: f64,
    pub sd: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QuantileModel {
    levels: Vec<f64>,
    mode: QuantileMode,
    models: Vec<FittedGP>,
}

fn check_levels(levels: &[f64]) -> Result<()> {
    if levels.is_empty() {
        return Err(GpError::EmptyInput("at least one quantile level is required"));
    }
    if levels.iter().any(|&l| !(l > 0.0 && l < 1.0)) {
        return Err(GpError::InvalidParameter(format!("quantile levels must lie in (0, 1): {levels:?}")));
    }
    if levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(GpError::InvalidParameter(format!("quantile levels must be strictly increasing: {levels:?}")));
    }
    Ok(())
}

/// Fits quantile surfaces to the empirical quantiles of each replicated design.
pub fn fit_quantile_model(raw: &RawData, levels: &[f64], mode: QuantileMode, opts: &FitOptions) -> Result<QuantileModel> {
    check_levels(levels)?;
    let data = compact(raw);
    if let Some(i) = data.counts.iter().position(|&a| a < 2) {
        return Err(GpError::ReplicationRequired(format!(
            "design {i} has a single observation; quantile models need a_i >= 2 everywhere \
             (replicate, or use the Gaussian predictive quantile of a fitted GP)"
        )));
    }
    if data.n() < 3 {
        return Err(GpError::InsufficientData(format!("quantile models need 3 unique designs, got {}", data.n())));
    }
    let groups: Vec<Vec<f64>> = data
        .groups(raw)
        .into_iter()
        .map(|mut g| {
            g.sort_by(f64::total_cmp);
            g
        })
        .collect();
    let empirical: Vec<Vec<f64>> = groups.iter().map(|g| levels.iter().map(|&l| quantile_sorted(g, l)).collect()).collect();
    let n = data.n();
    let d = data.dim();
    let x_domain = opts.domain.clone().unwrap_or_else(|| Domain::bounding(&data.xu));

    let models = match mode {
        QuantileMode::PerLevel => levels
            .iter()
            .enumerate()
            .map(|(l, _)| {
                let q = empirical.iter().map(|row| row[l]).collect();
                let design = CompactedDesign::from_summaries(data.xu.clone(), vec![1; n], q, vec![None; n])?;
                gp::fit(&design, &NoiseSpec::Homoscedastic, &FitOptions { domain: Some(x_domain.clone()), ..opts.clone() })
            })
            .collect::<Result<Vec<_>>>()?,
        QuantileMode::Augmented => {
            let m = n * levels.len();
            let xs = DMatrix::from_fn(m, d + 1, |r, k| {
                let (i, l) = (r / levels.len(), r % levels.len());
                if k < d {
                    data.xu[(i, k)]
                } else {
                    scale_level(levels, levels[l])
                }
            });
            let q = (0..m).map(|r| empirical[r / levels.len()][r % levels.len()]).collect();
            let design = CompactedDesign::from_summaries(xs, vec![1; m], q, vec![None; m])?;
            let mut lower = x_domain.lower.clone();
            let mut upper = x_domain.upper.clone();
            lower.push(0.0);
            upper.push(1.0);
            let domain = Domain::new(lower, upper)?;
            vec![gp::fit(&design, &NoiseSpec::Homoscedastic, &FitOptions { domain: Some(domain), ..opts.clone() })?]
        }
    };
    Ok(QuantileModel { levels: levels.to_vec(), mode, models })
}

fn scale_level(levels: &[f64], level: f64) -> f64 {
    let (lo, hi) = (levels[0], levels[levels.len() - 1]);
    if hi > lo {
        (level - lo) / (hi - lo)
    } else {
        0.0
    }
}

impl QuantileModel {
    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn mode(&self) -> QuantileMode {
        self.mode
    }

    pub fn inner_models(&self) -> &[FittedGP] {
        &self.models
    }

    /// Raw inner-model predictions, without rearrangement.
    pub fn predict_raw(&self, x: &[f64], levels: &[f64]) -> Result<Vec<QuantilePrediction>> {
        levels
            .iter()
            .map(|&level| {
                let p = match self.mode {
                    QuantileMode::PerLevel => {
                        let idx = self.levels.iter().position(|&l| l == level).ok_or_else(|| {
                            GpError::InvalidParameter(format!(
                                "level {level} was not trained; per-level models predict only {:?}",
                                self.levels
                            ))
                        })?;
                        self.models[idx].predict(x)?
                    }
                    QuantileMode::Augmented => {
                        let (lo, hi) = (self.levels[0], self.levels[self.levels.len() - 1]);
                        if !(level >= lo && level <= hi) {
                            return Err(GpError::InvalidParameter(format!(
                                "level {level} outside the trained range [{lo}, {hi}]"
                            )));
                        }
                        let mut z = x.to_vec();
                        z.push(scale_level(&self.levels, level));
                        self.models[0].predict(&z)?
                    }
                };
                Ok(QuantilePrediction { level, value: p.mean, sd: p.latent_sd() })
            })
            .collect()
    }

    /// Predicted quantiles, nondecreasing in level.
    ///
    /// Values are sorted pointwise and reassigned in increasing level order;
    /// each value keeps the standard deviation of the model that produced it.
    pub fn predict_quantiles(&self, x: &[f64], levels: &[f64]) -> Result<Vec<QuantilePrediction>> {
        let raw = self.predict_raw(x, levels)?;
        Ok(rearrange(raw))
    }
}

/// Monotone rearrangement of quantile predictions across levels.
pub fn rearrange(raw: Vec<QuantilePrediction>) -> Vec<QuantilePrediction> {
    let mut by_level: Vec<usize> = (0..raw.len()).collect();
    by_level.sort_by(|&a, &b| raw[a].level.total_cmp(&raw[b].level));
    let mut by_value: Vec<usize> = (0..raw.len()).collect();
    by_value.sort_by(|&a, &b| raw[a].value.total_cmp(&raw[b].value));
    let mut out = raw.clone();
    for (&slot, &src) in by_level.iter().zip(&by_value) {
        out[slot] = QuantilePrediction { level: raw[slot].level, value: raw[src].value, sd: raw[src].sd };
    }
    out
}

/// Closed-form Gaussian predictive quantile `m(x) + z_α √obs_var(x)`.
pub fn gaussian_predictive_quantile(model: &FittedGP, x: &[f64], alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(GpError::InvalidParameter(format!("quantile level {alpha} outside (0, 1)")));
    }
    let p = model.predict(x)?;
    Ok(p.mean + standard_normal_quantile(alpha) * p.obs_sd())
}

pub fn standard_normal_quantile(alpha: f64) -> f64 {
    Normal::standard().inverse_cdf(alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::TrendMode;
    use crate::kernels::{Kernel, KernelFamily};
    use crate::noise::NoiseModel;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Exp};

    fn skewed(n: usize, reps: usize, seed: u64) -> RawData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..n {
            let x = i as f64 / (n - 1) as f64;
            let e = Exp::new(1.0 / (0.2 + x)).unwrap();
            for _ in 0..reps {
                xs.push(x);
                ys.push(x + e.sample(&mut rng));
            }
        }
        RawData::from_1d(&xs, ys).unwrap()
    }

    #[test]
    fn gaussian_quantile_closed_forms() {
        let k = Kernel::new(KernelFamily::Matern52, vec![0.3], 3.0).unwrap();
        let m = FittedGP::prior(k, NoiseModel::Constant { variance: 1.0 }, TrendMode::Zero).unwrap();
        assert_eq!(gaussian_predictive_quantile(&m, &[0.2], 0.5).unwrap(), 0.0);
        let one_sd = gaussian_predictive_quantile(&m, &[0.2], 0.841_344_746_068_542_9).unwrap();
        assert_relative_eq!(one_sd, 2.0, epsilon = 1e-9);
        assert_relative_eq!(gaussian_predictive_quantile(&m, &[0.2], 0.95).unwrap(), 2.0 * 1.644_853_626_951_472_2, epsilon = 1e-9);
        assert!(gaussian_predictive_quantile(&m, &[0.2], 1.0).is_err());
    }

    #[test]
    fn gaussian_quantile_strictly_increasing() {
        let k = Kernel::new(KernelFamily::Matern52, vec![0.3], 1.0).unwrap();
        let m = FittedGP::prior(k, NoiseModel::Constant { variance: 0.5 }, TrendMode::Zero).unwrap();
        let vals: Vec<f64> = (1..100).map(|i| gaussian_predictive_quantile(&m, &[0.0], i as f64 / 100.0).unwrap()).collect();
        assert!(vals.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn rearrangement_sorts_crossed_predictions() {
        let raw = vec![
            QuantilePrediction { level: 0.1, value: 2.0, sd: 0.1 },
            QuantilePrediction { level: 0.9, value: 1.0, sd: 0.2 },
        ];
        let out = rearrange(raw);
        assert_eq!(out[0].value, 1.0);
        assert_eq!(out[1].value, 2.0);
        assert_eq!((out[0].level, out[1].level), (0.1, 0.9));
        let single = vec![QuantilePrediction { level: 0.3, value: 5.0, sd: 1.0 }];
        assert_eq!(rearrange(single.clone()), single);
    }

    #[test]
    fn constant_data_gives_constant_quantiles() {
        let xs: Vec<f64> = (0..5).flat_map(|i| std::iter::repeat_n(i as f64 / 4.0, 3)).collect();
        let raw = RawData::from_1d(&xs, vec![1.25; 15]).unwrap();
        for mode in [QuantileMode::PerLevel, QuantileMode::Augmented] {
            let qm = fit_quantile_model(&raw, &[0.1, 0.5, 0.9], mode, &FitOptions::default()).unwrap();
            for x in [0.0, 0.4, 0.77] {
                for q in qm.predict_quantiles(&[x], &[0.1, 0.5, 0.9]).unwrap() {
                    assert!((q.value - 1.25).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn rejects_unreplicated_designs_and_bad_levels() {
        let raw = RawData::from_1d(&[0.1, 0.1, 0.5, 0.9, 0.9], vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let err = fit_quantile_model(&raw, &[0.5], QuantileMode::PerLevel, &FitOptions::default()).unwrap_err();
        assert!(matches!(err, GpError::ReplicationRequired(_)));
        let raw = skewed(5, 4, 0);
        assert!(fit_quantile_model(&raw, &[0.5, 0.2], QuantileMode::PerLevel, &FitOptions::default()).is_err());
        assert!(fit_quantile_model(&raw, &[], QuantileMode::PerLevel, &FitOptions::default()).is_err());
    }

    #[test]
    fn level_requests_are_checked() {
        let raw = skewed(6, 10, 1);
        let per = fit_quantile_model(&raw, &[0.25, 0.75], QuantileMode::PerLevel, &FitOptions::default()).unwrap();
        assert!(per.predict_quantiles(&[0.5], &[0.5]).is_err());
        assert_eq!(per.predict_quantiles(&[0.5], &[0.75]).unwrap().len(), 1);
        let aug = fit_quantile_model(&raw, &[0.25, 0.75], QuantileMode::Augmented, &FitOptions::default()).unwrap();
        assert!(aug.predict_quantiles(&[0.5], &[0.5]).is_ok());
        assert!(aug.predict_quantiles(&[0.5], &[0.9]).is_err());
    }

    #[test]
    fn non_crossing_on_grid() {
        let raw = skewed(10, 8, 2);
        let levels = [0.05, 0.25, 0.5, 0.75, 0.95];
        for mode in [QuantileMode::PerLevel, QuantileMode::Augmented] {
            let qm = fit_quantile_model(&raw, &levels, mode, &FitOptions::default()).unwrap();
            for i in 0..200 {
                let x = i as f64 / 199.0;
                let q = qm.predict_quantiles(&[x], &levels).unwrap();
                assert!(q.windows(2).all(|w| w[0].value <= w[1].value));
            }
        }
    }

    #[test]
    fn negation_mirrors_levels() {
        let raw = skewed(8, 9, 4);
        let neg = RawData::new(raw.x.clone(), raw.y.iter().map(|v| -v).collect()).unwrap();
        let opts = FitOptions::default();
        let a = fit_quantile_model(&raw, &[0.2], QuantileMode::PerLevel, &opts).unwrap();
        let b = fit_quantile_model(&neg, &[0.8], QuantileMode::PerLevel, &opts).unwrap();
        for i in 0..20 {
            let x = i as f64 / 19.0;
            let qa = a.predict_quantiles(&[x], &[0.2]).unwrap()[0].value;
            let qb = b.predict_quantiles(&[x], &[0.8]).unwrap()[0].value;
            assert!((qa + qb).abs() < 1e-6, "{qa} vs {qb}");
        }
    }
}
