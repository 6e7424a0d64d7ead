//! Grouping of raw observations into unique designs with replicate statistics.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{GpError, Result};

/// Relative tolerance under which two input rows count as the same design.
pub const DUPLICATE_TOL: f64 = 1e-12;

/// Full observation list: one row of `x` per output in `y`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawData {
    #[serde(with = "crate::serde_rows")]
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
}

impl RawData {
    pub fn new(x: DMatrix<f64>, y: Vec<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(GpError::DimensionMismatch { expected: x.nrows(), got: y.len() });
        }
        if y.is_empty() {
            return Err(GpError::EmptyInput("raw data needs at least one observation"));
        }
        if x.ncols() == 0 {
            return Err(GpError::InvalidParameter("inputs need at least one column".into()));
        }
        Ok(RawData { x, y })
    }

    /// Builds raw data from one-dimensional inputs.
    pub fn from_1d(x: &[f64], y: Vec<f64>) -> Result<Self> {
        Self::new(DMatrix::from_column_slice(x.len(), 1, x), y)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }

    /// Appends observations in place.
    pub fn extend(&mut self, xs: &[Vec<f64>], ys: &[f64]) {
        let n0 = self.len();
        let d = self.dim();
        let mut x = self.x.clone().resize_vertically(n0 + xs.len(), 0.0);
        for (r, row) in xs.iter().enumerate() {
            for k in 0..d {
                x[(n0 + r, k)] = row[k];
            }
        }
        self.x = x;
        self.y.extend_from_slice(ys);
    }
}

/// Sample moments of one replicate group.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Moments {
    pub mean: f64,
    /// Unbiased variance, present from two values on.
    pub variance: Option<f64>,
    /// `m3 / m2^{3/2}` with biased central moments, present from three values on.
    pub skewness: Option<f64>,
}

pub fn empirical_moments(values: &[f64]) -> Result<Moments> {
    if values.is_empty() {
        return Err(GpError::EmptyInput("moments need at least one value"));
    }
    let a = values.len() as f64;
    // Constant groups get their exact value so the spread is exactly zero.
    let mean = if values.iter().all(|&v| v == values[0]) { values[0] } else { values.iter().sum::<f64>() / a };
    let (mut m2, mut m3) = (0.0, 0.0);
    for v in values {
        let d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
    }
    let variance = (values.len() >= 2).then(|| m2 / (a - 1.0));
    let (m2b, m3b) = (m2 / a, m3 / a);
    let skewness = (values.len() >= 3 && m2b > 0.0).then(|| m3b / m2b.powf(1.5));
    Ok(Moments { mean, variance, skewness })
}

/// Sample quantiles by linear interpolation between order statistics,
/// with plotting positions `(k - 1) / (a - 1)`.
pub fn empirical_quantiles(values: &[f64], levels: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(GpError::EmptyInput("quantiles need at least one value"));
    }
    if let Some(l) = levels.iter().find(|&&l| !(l > 0.0 && l < 1.0)) {
        return Err(GpError::InvalidParameter(format!("quantile level {l} outside (0, 1)")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(levels.iter().map(|&l| quantile_sorted(&sorted, l)).collect())
}

pub(crate) fn quantile_sorted(sorted: &[f64], level: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * level;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let w = h - lo as f64;
    if w == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + w * (sorted[hi] - sorted[lo])
    }
}

/// The n-form view of a data set: unique designs with replicate statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompactedDesign {
    /// `n × d` unique designs.
    #[serde(with = "crate::serde_rows")]
    pub xu: DMatrix<f64>,
    pub counts: Vec<usize>,
    pub means: Vec<f64>,
    pub emp_vars: Vec<Option<f64>>,
    pub emp_skews: Vec<Option<f64>>,
    /// Unique design of each raw row; empty when built from summaries.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub group_index: Vec<usize>,
}

fn same_row(x: &DMatrix<f64>, i: usize, xu: &[Vec<f64>], j: usize) -> bool {
    xu[j].iter().enumerate().all(|(k, &b)| {
        let a = x[(i, k)];
        (a - b).abs() <= DUPLICATE_TOL * (1.0 + a.abs().max(b.abs()))
    })
}

/// Groups raw rows into unique designs in order of first appearance.
pub fn compact(raw: &RawData) -> CompactedDesign {
    let d = raw.dim();
    let mut uniques: Vec<Vec<f64>> = Vec::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    let mut group_index = Vec::with_capacity(raw.len());
    for i in 0..raw.len() {
        let found = (0..uniques.len()).find(|&j| same_row(&raw.x, i, &uniques, j));
        let g = match found {
            Some(g) => g,
            None => {
                uniques.push(raw.row(i));
                members.push(Vec::new());
                uniques.len() - 1
            }
        };
        members[g].push(i);
        group_index.push(g);
    }
    let n = uniques.len();
    let xu = DMatrix::from_fn(n, d, |i, k| uniques[i][k]);
    let mut counts = Vec::with_capacity(n);
    let mut means = Vec::with_capacity(n);
    let mut emp_vars = Vec::with_capacity(n);
    let mut emp_skews = Vec::with_capacity(n);
    let mut buf = Vec::new();
    for m in &members {
        buf.clear();
        buf.extend(m.iter().map(|&i| raw.y[i]));
        let mo = empirical_moments(&buf).expect("groups are never empty");
        counts.push(m.len());
        means.push(mo.mean);
        emp_vars.push(mo.variance);
        emp_skews.push(mo.skewness);
    }
    CompactedDesign { xu, counts, means, emp_vars, emp_skews, group_index }
}

impl CompactedDesign {
    /// Builds a design from per-design summaries without raw rows.
    pub fn from_summaries(
        xu: DMatrix<f64>,
        counts: Vec<usize>,
        means: Vec<f64>,
        emp_vars: Vec<Option<f64>>,
    ) -> Result<Self> {
        let n = xu.nrows();
        for len in [counts.len(), means.len(), emp_vars.len()] {
            if len != n {
                return Err(GpError::DimensionMismatch { expected: n, got: len });
            }
        }
        if counts.contains(&0) {
            return Err(GpError::InvalidParameter("replicate counts must be positive".into()));
        }
        Ok(CompactedDesign { xu, counts, means, emp_vars, emp_skews: vec![None; n], group_index: Vec::new() })
    }

    /// Design without observations in `d` dimensions.
    pub fn empty(d: usize) -> Self {
        CompactedDesign {
            xu: DMatrix::zeros(0, d),
            counts: Vec::new(),
            means: Vec::new(),
            emp_vars: Vec::new(),
            emp_skews: Vec::new(),
            group_index: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.counts.len()
    }

    pub fn dim(&self) -> usize {
        self.xu.ncols()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        self.xu.row(i).iter().copied().collect()
    }

    /// Population variance of the design means.
    pub fn mean_variance(&self) -> f64 {
        let n = self.n();
        if n == 0 {
            return 0.0;
        }
        let m = self.means.iter().sum::<f64>() / n as f64;
        self.means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64
    }

    /// Variance of all raw outputs, reconstructed from group summaries.
    pub fn total_variance(&self) -> f64 {
        let nn = self.total() as f64;
        if nn == 0.0 {
            return 0.0;
        }
        let grand = self.counts.iter().zip(&self.means).map(|(&a, m)| a as f64 * m).sum::<f64>() / nn;
        let between: f64 = self.counts.iter().zip(&self.means).map(|(&a, m)| a as f64 * (m - grand).powi(2)).sum();
        let within: f64 = self
            .counts
            .iter()
            .zip(&self.emp_vars)
            .map(|(&a, v)| v.map_or(0.0, |v| (a as f64 - 1.0) * v))
            .sum();
        (between + within) / nn
    }

    /// Pooled within-design variance, if any design is replicated.
    pub fn pooled_variance(&self) -> Option<f64> {
        let (mut ss, mut df) = (0.0, 0usize);
        for (&a, v) in self.counts.iter().zip(&self.emp_vars) {
            if let Some(v) = v {
                ss += (a as f64 - 1.0) * v;
                df += a - 1;
            }
        }
        (df > 0).then(|| ss / df as f64)
    }

    /// Raw outputs of each unique design, using `group_index`.
    pub fn groups(&self, raw: &RawData) -> Vec<Vec<f64>> {
        let mut out = vec![Vec::new(); self.n()];
        for (i, &g) in self.group_index.iter().enumerate() {
            out[g].push(raw.y[i]);
        }
        out
    }

    /// Index of the unique design matching `x`, if any.
    pub fn find(&self, x: &[f64]) -> Option<usize> {
        (0..self.n()).find(|&j| {
            x.iter().enumerate().all(|(k, &a)| {
                let b = self.xu[(j, k)];
                (a - b).abs() <= DUPLICATE_TOL * (1.0 + a.abs().max(b.abs()))
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal, Uniform};

    #[test]
    fn compacts_small_example() {
        let raw = RawData::from_1d(&[0.5, 0.5, 0.7], vec![1.0, 3.0, 5.0]).unwrap();
        let c = compact(&raw);
        assert_eq!(c.n(), 2);
        assert_eq!(c.counts, vec![2, 1]);
        assert_eq!(c.means, vec![2.0, 5.0]);
        assert_eq!(c.emp_vars, vec![Some(2.0), None]);
        assert_eq!(c.group_index, vec![0, 0, 1]);
    }

    #[test]
    fn distinct_rows_stay_separate() {
        let raw = RawData::from_1d(&[0.1, 0.2, 0.3, 0.4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let c = compact(&raw);
        assert_eq!(c.n(), 4);
        assert!(c.counts.iter().all(|&a| a == 1));
        assert!(c.emp_vars.iter().all(Option::is_none));
    }

    #[test]
    fn constant_group_has_zero_variance() {
        let raw = RawData::from_1d(&[0.3; 3], vec![1.0; 3]).unwrap();
        let c = compact(&raw);
        assert_eq!(c.means, vec![1.0]);
        assert_eq!(c.emp_vars, vec![Some(0.0)]);
        assert_eq!(c.emp_skews, vec![None]);
    }

    #[test]
    fn near_duplicates_within_tolerance_merge() {
        let x = 0.3f64;
        let raw = RawData::from_1d(&[x, x * (1.0 + 1e-15), x + 1e-9], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(compact(&raw).counts, vec![2, 1]);
    }

    #[test]
    fn moments_small_cases() {
        let m = empirical_moments(&[0.0, 2.0]).unwrap();
        assert_eq!((m.mean, m.variance, m.skewness), (1.0, Some(2.0), None));
        let m = empirical_moments(&[-1.0, 0.0, 1.0]).unwrap();
        assert_eq!((m.mean, m.variance, m.skewness), (0.0, Some(1.0), Some(0.0)));
        assert!(empirical_moments(&[]).is_err());
        let m = empirical_moments(&[4.0]).unwrap();
        assert_eq!((m.variance, m.skewness), (None, None));
    }

    #[test]
    fn moments_of_normal_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let v: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let m = empirical_moments(&v).unwrap();
        let var = m.variance.unwrap();
        assert!((0.9..=1.1).contains(&var), "variance {var}");
        assert!(m.skewness.unwrap().abs() < 0.1);
    }

    #[test]
    fn quantiles_follow_interpolation_rule() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(empirical_quantiles(&v, &[0.5]).unwrap(), vec![50.5]);
        assert!(empirical_quantiles(&[], &[0.5]).is_err());
        assert!(empirical_quantiles(&v, &[1.0]).is_err());
        assert_eq!(empirical_quantiles(&[3.0], &[0.1, 0.9]).unwrap(), vec![3.0, 3.0]);
    }

    #[test]
    fn quantile_of_uniform_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u = Uniform::new(0.0, 1.0).unwrap();
        let v: Vec<f64> = (0..10_000).map(|_| u.sample(&mut rng)).collect();
        let q = empirical_quantiles(&v, &[0.9]).unwrap()[0];
        assert!((q - 0.9).abs() < 0.02, "q90 {q}");
    }

    #[test]
    fn total_variance_matches_raw() {
        let raw = RawData::from_1d(&[0.1, 0.1, 0.2, 0.3, 0.3, 0.3], vec![1.0, 2.0, 0.5, 4.0, 3.0, 3.5]).unwrap();
        let c = compact(&raw);
        let m = raw.y.iter().sum::<f64>() / 6.0;
        let v = raw.y.iter().map(|y| (y - m).powi(2)).sum::<f64>() / 6.0;
        assert_relative_eq!(c.total_variance(), v, epsilon = 1e-12);
    }

    fn raw_strategy() -> impl Strategy<Value = RawData> {
        prop::collection::vec((0usize..6, -5.0f64..5.0), 1..40).prop_map(|rows| {
            let x: Vec<f64> = rows.iter().map(|(k, _)| *k as f64 / 5.0).collect();
            let y: Vec<f64> = rows.iter().map(|(_, y)| *y).collect();
            RawData::from_1d(&x, y).unwrap()
        })
    }

    proptest! {
        #[test]
        fn compaction_round_trip(raw in raw_strategy()) {
            let c = compact(&raw);
            prop_assert_eq!(c.total(), raw.len());
            let groups = c.groups(&raw);
            for (g, m) in groups.iter().zip(&c.means) {
                let recomputed = g.iter().sum::<f64>() / g.len() as f64;
                prop_assert!((recomputed - m).abs() <= 1e-12);
            }
            for (a, v) in c.counts.iter().zip(&c.emp_vars) {
                prop_assert_eq!(*a >= 2, v.is_some());
                prop_assert!(v.is_none_or(|v| v >= 0.0));
            }
            let pooled = c.counts.iter().zip(&c.means).map(|(&a, m)| a as f64 * m).sum::<f64>() / raw.len() as f64;
            let grand = raw.y.iter().sum::<f64>() / raw.len() as f64;
            prop_assert!((pooled - grand).abs() <= 1e-12);
        }

        #[test]
        fn compaction_is_order_invariant(raw in raw_strategy(), seed in 0u64..1000) {
            use rand::seq::SliceRandom;
            let mut perm: Vec<usize> = (0..raw.len()).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let x: Vec<f64> = perm.iter().map(|&i| raw.x[(i, 0)]).collect();
            let y: Vec<f64> = perm.iter().map(|&i| raw.y[i]).collect();
            let shuffled = RawData::from_1d(&x, y).unwrap();
            let (a, b) = (compact(&raw), compact(&shuffled));
            prop_assert_eq!(a.n(), b.n());
            for i in 0..a.n() {
                let j = b.find(&a.point(i)).unwrap();
                prop_assert_eq!(a.counts[i], b.counts[j]);
                prop_assert!((a.means[i] - b.means[j]).abs() <= 1e-12);
            }
        }

        #[test]
        fn quantiles_monotone_in_level(v in prop::collection::vec(-10.0f64..10.0, 1..50)) {
            let levels = [0.01, 0.1, 0.25, 0.5, 0.75, 0.9, 0.99];
            let q = empirical_quantiles(&v, &levels).unwrap();
            prop_assert!(q.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
