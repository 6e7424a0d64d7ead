//! Discrete-time chain-binomial SIR epidemic used as a stochastic test problem.
//!
//! The input `x ∈ [0, 1]` sets the per-contact transmission probability
//! through an affine map; the output is the final attack fraction
//! `(P − S_H) / P`. Every step draws from its own counter-based stream keyed
//! on the run key, so in CRN mode a fixed seed gives the same random stream
//! at every `x`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GpError, Result};
use crate::lowdisc;
use crate::replication::{empirical_moments, quantile_sorted, RawData};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SimMode {
    #[default]
    Iid,
    Crn,
}

impl std::str::FromStr for SimMode {
    type Err = GpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iid" => Ok(SimMode::Iid),
            "crn" => Ok(SimMode::Crn),
            other => Err(GpError::InvalidParameter(format!("unknown simulator mode '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SIRConfig {
    pub population: u64,
    pub initial_infected: u64,
    pub recovery_prob: f64,
    pub beta_min: f64,
    pub beta_max: f64,
    pub horizon: u32,
    pub mode: SimMode,
}

impl Default for SIRConfig {
    fn default() -> Self {
        SIRConfig {
            population: 1000,
            initial_infected: 10,
            recovery_prob: 0.1,
            beta_min: 0.0,
            beta_max: 3e-4,
            horizon: 200,
            mode: SimMode::Iid,
        }
    }
}

impl SIRConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GpError::InvalidParameter(m));
        if self.population == 0 || self.initial_infected == 0 || self.initial_infected >= self.population {
            return bad(format!(
                "need 0 < initial_infected < population, got {} and {}",
                self.initial_infected, self.population
            ));
        }
        if !(self.recovery_prob > 0.0 && self.recovery_prob < 1.0) {
            return bad(format!("recovery_prob must lie in (0, 1), got {}", self.recovery_prob));
        }
        if !(self.beta_min >= 0.0 && self.beta_min <= self.beta_max && self.beta_max <= 1.0) {
            return bad(format!("need 0 <= beta_min <= beta_max <= 1, got {} and {}", self.beta_min, self.beta_max));
        }
        if self.horizon == 0 {
            return bad("horizon must be positive".into());
        }
        Ok(())
    }

    /// Transmission probability per infected contact at input `x`.
    pub fn beta(&self, x: f64) -> f64 {
        self.beta_min + x * (self.beta_max - self.beta_min)
    }
}

/// SplitMix64 finalizer over two words; used to derive seeds and stream keys.
pub fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Susceptible counts `S_0..S_t` of one trajectory, stopping early once no one is infected.
pub fn trajectory(cfg: &SIRConfig, x: f64, seed: u64) -> Result<Vec<u64>> {
    cfg.validate()?;
    if !(0.0..=1.0).contains(&x) {
        return Err(GpError::InvalidParameter(format!("simulator input {x} outside [0, 1]")));
    }
    let key = match cfg.mode {
        SimMode::Crn => seed,
        SimMode::Iid => mix(seed, x.to_bits()),
    };
    let log_escape = (-cfg.beta(x)).ln_1p();
    let mut s = cfg.population - cfg.initial_infected;
    let mut i = cfg.initial_infected;
    let mut path = vec![s];
    for step in 0..cfg.horizon {
        if i == 0 {
            break;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        rng.set_stream(u64::from(step));
        let p_inf = -(i as f64 * log_escape).exp_m1();
        let infected = draw(s, p_inf, &mut rng);
        let recovered = draw(i, cfg.recovery_prob, &mut rng);
        s -= infected;
        i = i + infected - recovered;
        path.push(s);
    }
    Ok(path)
}

fn draw(n: u64, p: f64, rng: &mut ChaCha8Rng) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("probability checked above").sample(rng)
}

/// Final attack fraction at input `x`; deterministic in `(cfg, x, seed)`.
pub fn simulate(cfg: &SIRConfig, x: f64, seed: u64) -> Result<f64> {
    let path = trajectory(cfg, x, seed)?;
    let s_final = *path.last().expect("trajectory starts with S_0");
    Ok((cfg.population - s_final) as f64 / cfg.population as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "layout")]
pub enum Layout {
    /// `n_unique` equispaced inputs with `reps` runs each.
    Replicated { n_unique: usize, reps: usize },
    /// `n` low-discrepancy inputs with one run each.
    Dense { n: usize },
}

/// Seed of the `k`-th evaluation at replicate index `rep` under `master`.
///
/// CRN runs share seeds across inputs through the replicate index; i.i.d.
/// runs use a fresh seed per evaluation.
fn eval_seed(cfg: &SIRConfig, master: u64, k: usize, rep: usize) -> u64 {
    match cfg.mode {
        SimMode::Crn => mix(master, rep as u64),
        SimMode::Iid => mix(master, k as u64),
    }
}

pub fn build_dataset(cfg: &SIRConfig, layout: Layout, master_seed: u64) -> Result<RawData> {
    cfg.validate()?;
    let jobs: Vec<(f64, usize)> = match layout {
        Layout::Replicated { n_unique, reps } => {
            if n_unique == 0 || reps == 0 {
                return Err(GpError::InvalidParameter("replicated layout needs n_unique, reps >= 1".into()));
            }
            (0..n_unique)
                .flat_map(|i| {
                    let x = if n_unique == 1 { 0.5 } else { i as f64 / (n_unique - 1) as f64 };
                    (0..reps).map(move |r| (x, r))
                })
                .collect()
        }
        Layout::Dense { n } => {
            if n == 0 {
                return Err(GpError::InvalidParameter("dense layout needs n >= 1".into()));
            }
            let h = lowdisc::halton(n, 1, 0);
            (0..n).map(|k| (h[(k, 0)], k)).collect()
        }
    };
    let y = jobs
        .par_iter()
        .enumerate()
        .map(|(k, &(x, rep))| simulate(cfg, x, eval_seed(cfg, master_seed, k, rep)))
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = jobs.iter().map(|j| j.0).collect();
    RawData::from_1d(&xs, y)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceRow {
    pub x: f64,
    pub mean: f64,
    pub variance: f64,
    /// Absent when every run gave the same output.
    pub skewness: Option<f64>,
    pub quantiles: Vec<f64>,
}

/// Per-point statistics over `reps` independent runs on an equispaced grid of `[0, 1]`.
pub fn reference_stats(cfg: &SIRConfig, grid_size: usize, reps: usize, levels: &[f64], master_seed: u64) -> Result<Vec<ReferenceRow>> {
    cfg.validate()?;
    if grid_size < 2 || reps < 4 {
        return Err(GpError::InvalidParameter(format!("need grid_size >= 2 and reps >= 4, got {grid_size} and {reps}")));
    }
    if let Some(l) = levels.iter().find(|&&l| !(l > 0.0 && l < 1.0)) {
        return Err(GpError::InvalidParameter(format!("quantile level {l} outside (0, 1)")));
    }
    (0..grid_size)
        .into_par_iter()
        .map(|g| {
            let x = g as f64 / (grid_size - 1) as f64;
            let mut ys = (0..reps)
                .map(|r| simulate(cfg, x, mix(mix(master_seed, g as u64), r as u64)))
                .collect::<Result<Vec<_>>>()?;
            let m = empirical_moments(&ys)?;
            ys.sort_by(f64::total_cmp);
            Ok(ReferenceRow {
                x,
                mean: m.mean,
                variance: m.variance.unwrap_or(0.0),
                skewness: m.skewness,
                quantiles: levels.iter().map(|&l| quantile_sorted(&ys, l)).collect(),
            })
        })
        .collect()
}
