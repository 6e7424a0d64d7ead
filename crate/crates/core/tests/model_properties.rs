//! Properties of conditioned and fitted models across modules.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use noisygp::design::{self, AcquisitionConfig};
use noisygp::likelihood::{LikelihoodProblem, NoiseParameterization};
use noisygp::noise::fit_parametric_variance;
use noisygp::*;

fn design_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (3usize..10).prop_flat_map(|n| {
        (
            proptest::collection::btree_set(0u32..1000, n).prop_map(|s| s.into_iter().map(|v| v as f64 / 1000.0).collect()),
            proptest::collection::vec(-2.0f64..2.0, n),
        )
    })
}

fn kernel(theta: f64, s2: f64) -> Kernel {
    Kernel::new(KernelFamily::Matern52, vec![theta], s2).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn replicates_act_as_one_averaged_observation(
        (xs, ys) in design_strategy(),
        a in 1usize..6,
        r in 0.01f64..1.0,
        theta in 0.05f64..0.5,
    ) {
        let n = xs.len();
        let xu = DMatrix::from_column_slice(n, 1, &xs);
        let replicated = CompactedDesign::from_summaries(xu.clone(), vec![a; n], ys.clone(), vec![None; n]).unwrap();
        let single = CompactedDesign::from_summaries(xu, vec![1; n], ys, vec![None; n]).unwrap();
        let m1 = FittedGP::condition(kernel(theta, 1.0), NoiseModel::Constant { variance: r }, TrendMode::ConstantGls, replicated).unwrap();
        let m2 = FittedGP::condition(kernel(theta, 1.0), NoiseModel::Constant { variance: r / a as f64 }, TrendMode::ConstantGls, single).unwrap();
        // The jitter is per observation, so it is divided by `a` only in the replicated form.
        prop_assume!(m1.jitter() == m2.jitter());
        for g in 0..=20 {
            let x = [g as f64 / 20.0];
            let (p1, p2) = (m1.predict(&x).unwrap(), m2.predict(&x).unwrap());
            prop_assert!((p1.mean - p2.mean).abs() < 1e-6, "{} vs {}", p1.mean, p2.mean);
            prop_assert!((p1.latent_var - p2.latent_var).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_shift_moves_means_only(
        (xs, ys) in design_strategy(),
        k in -50.0f64..50.0,
        r in 0.0f64..0.5,
        theta in 0.05f64..0.5,
    ) {
        let raw = RawData::from_1d(&xs, ys.clone()).unwrap();
        let shifted = RawData::from_1d(&xs, ys.iter().map(|y| y + k).collect()).unwrap();
        let noise = NoiseModel::Constant { variance: r };
        let m1 = FittedGP::condition(kernel(theta, 1.3), noise.clone(), TrendMode::ConstantGls, compact(&raw)).unwrap();
        let m2 = FittedGP::condition(kernel(theta, 1.3), noise, TrendMode::ConstantGls, compact(&shifted)).unwrap();
        for g in 0..=20 {
            let x = [g as f64 / 20.0];
            let (p1, p2) = (m1.predict(&x).unwrap(), m2.predict(&x).unwrap());
            prop_assert!((p2.mean - p1.mean - k).abs() < 1e-10 * (1.0 + k.abs()), "shift {k}: {} vs {}", p1.mean, p2.mean);
            prop_assert!((p1.latent_var - p2.latent_var).abs() < 1e-10);
            prop_assert!(p1.obs_var >= p1.latent_var && p1.latent_var >= 0.0);
        }
    }

    #[test]
    fn ei_ignores_constant_output_shifts((xs, ys) in design_strategy(), k in -10.0f64..10.0, x in 0.0f64..1.0) {
        let shifted: Vec<f64> = ys.iter().map(|y| y + k).collect();
        let noise = NoiseModel::Constant { variance: 0.05 };
        let m1 = FittedGP::condition(kernel(0.2, 1.0), noise.clone(), TrendMode::ConstantGls, compact(&RawData::from_1d(&xs, ys).unwrap())).unwrap();
        let m2 = FittedGP::condition(kernel(0.2, 1.0), noise, TrendMode::ConstantGls, compact(&RawData::from_1d(&xs, shifted).unwrap())).unwrap();
        let (e1, e2) = (design::ei_plugin(&m1, &[x]).unwrap(), design::ei_plugin(&m2, &[x]).unwrap());
        prop_assert!((e1 - e2).abs() < 1e-9, "{e1} vs {e2}");
    }

    #[test]
    fn imspe_choice_ignores_candidate_order((xs, ys) in design_strategy(), seed in any::<u64>()) {
        let raw = RawData::from_1d(&xs, ys).unwrap();
        let model = FittedGP::condition(kernel(0.15, 1.0), NoiseModel::Constant { variance: 0.2 }, TrendMode::ConstantGls, compact(&raw)).unwrap();
        let mut cfg = AcquisitionConfig::for_domain(&Domain::unit(1));
        cfg.quad_nodes = noisygp::lowdisc::halton_in(64, &Domain::unit(1));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cands: Vec<f64> = (0..30).map(|_| rng.random::<f64>()).collect();
        let mut reversed = cands.clone();
        reversed.reverse();
        let a = design::select_next_imspe(&model, &cfg, &DMatrix::from_column_slice(30, 1, &cands)).unwrap();
        let b = design::select_next_imspe(&model, &cfg, &DMatrix::from_column_slice(30, 1, &reversed)).unwrap();
        prop_assert_eq!(a.action, b.action);
        prop_assert_eq!(a.criterion_value, b.criterion_value);
    }
}

#[test]
fn likelihood_matches_dense_density() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trend in [TrendMode::Zero, TrendMode::ConstantGls] {
        let xs: Vec<f64> = (0..5).map(|_| rng.random::<f64>()).collect();
        let raw_x: Vec<f64> = xs.iter().flat_map(|&x| [x, x]).collect();
        let ys: Vec<f64> = raw_x.iter().map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let data = compact(&RawData::from_1d(&raw_x, ys).unwrap());
        let k = Kernel::new(KernelFamily::SquaredExponential, vec![0.3], 1.7).unwrap();
        let noise = NoiseModel::Constant { variance: 0.4 };
        let nll = neg_log_likelihood(&k, &noise, trend, &data).unwrap();

        let n = data.n();
        let jitter = 1e-8 * 1.7;
        let cov = DMatrix::from_fn(n, n, |i, j| {
            let base = 1.7 * (-0.5 * ((data.xu[(i, 0)] - data.xu[(j, 0)]) / 0.3).powi(2)).exp();
            if i == j {
                base + 0.4 / data.counts[i] as f64
            } else {
                base
            }
        });
        let inv = cov.clone().try_inverse().unwrap();
        // The log determinant is taken of the jittered matrix, the quadratic form of the exact one.
        let jittered = &cov + DMatrix::from_fn(n, n, |i, j| if i == j { jitter / data.counts[i] as f64 } else { 0.0 });
        let y = DVector::from_column_slice(&data.means);
        let one = DVector::from_element(n, 1.0);
        let beta = match trend {
            TrendMode::Zero => 0.0,
            TrendMode::ConstantGls => (one.transpose() * &inv * &y)[0] / (one.transpose() * &inv * &one)[0],
        };
        let resid = y - one * beta;
        let dense = 0.5 * (jittered.determinant().ln() + (resid.transpose() * &inv * &resid)[0] + n as f64 * (2.0 * std::f64::consts::PI).ln());
        assert!((nll - dense).abs() < 1e-10, "{nll} vs {dense}");
    }
}

/// Draw of a zero-mean GP at `xs` plus white noise.
fn gp_sample(xs: &[f64], k: &Kernel, noise_sd: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = xs.len();
    let xm = DMatrix::from_column_slice(n, 1, xs);
    let l = (k.gram(&xm).unwrap() * k.process_variance + DMatrix::identity(n, n) * 1e-10).cholesky().unwrap().l();
    let z = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
    (l * z).iter().map(|v| v + noise_sd * rng.sample::<f64, _>(StandardNormal)).collect()
}

#[test]
fn fit_recovers_lengthscale_of_generating_process() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let truth = Kernel::new(KernelFamily::Matern52, vec![0.2], 1.0).unwrap();
    let xs: Vec<f64> = (0..40).map(|i| (i as f64 + 0.5) / 40.0).collect();
    let ys = gp_sample(&xs, &truth, 0.05, &mut rng);
    let data = compact(&RawData::from_1d(&xs, ys).unwrap());
    let opts = FitOptions { domain: Some(Domain::unit(1)), ..FitOptions::default() };
    let model = fit(&data, &NoiseSpec::Homoscedastic, &opts).unwrap();
    let theta = model.kernel().lengthscales[0];
    eprintln!("recovered lengthscale {theta:.4} (truth 0.2)");
    assert!(theta > 0.1 && theta < 0.4, "lengthscale {theta}");

    let problem = LikelihoodProblem::new(&data, KernelFamily::Matern52, TrendMode::ConstantGls, NoiseParameterization::Homoscedastic, Some(&Domain::unit(1))).unwrap();
    let at_start = problem.value(&problem.default_start()).unwrap();
    assert!(model.neg_log_likelihood() <= at_start);
    for start in problem.starts(5, None) {
        if let Ok(v) = problem.value(&start) {
            assert!(model.neg_log_likelihood() <= v + 1e-9);
        }
    }
}

/// Log-variance slope recovered from `r(x) = exp(2x)` data, 50 designs x 20 replicates.
fn recovered_slope(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..50 {
        let x = (i as f64 + 0.5) / 50.0;
        let sd = (2.0 * x).exp().sqrt();
        for _ in 0..20 {
            xs.push(x);
            ys.push((6.0 * x).sin() + sd * rng.sample::<f64, _>(StandardNormal));
        }
    }
    let data = compact(&RawData::from_1d(&xs, ys).unwrap());
    let opts = FitOptions { domain: Some(Domain::unit(1)), ..FitOptions::default() };
    let (noise, model) = fit_parametric_variance(&data, 1, &opts).unwrap();
    assert_eq!(model.noise(), &noise);
    let NoiseModel::Parametric { basis, coeffs, .. } = &noise else { panic!("expected parametric noise, got {noise:?}") };
    basis.linear_slope(coeffs, 0)
}

#[test]
fn parametric_noise_recovers_log_linear_slope() {
    let slope = recovered_slope(0);
    eprintln!("recovered log-variance slope {slope:.3} (truth 2)");
    assert!((1.0..=3.0).contains(&slope), "slope {slope}");

    // Only the design means enter the likelihood, so a single data set pins the
    // slope down to roughly +-0.75; the median over seeds must sit near 2.
    let mut slopes: Vec<f64> = (1..10).map(recovered_slope).collect();
    slopes.push(slope);
    slopes.sort_by(f64::total_cmp);
    let median = 0.5 * (slopes[4] + slopes[5]);
    eprintln!("median slope over 10 seeds {median:.3}");
    assert!((1.5..=2.5).contains(&median), "median slope {median}");
}

#[test]
fn imspe_matches_monte_carlo_integral() {
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    for d in 1..=2 {
        let n = 8;
        let xu = DMatrix::from_fn(n, d, |_, _| rng.random::<f64>());
        let means = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let data = CompactedDesign::from_summaries(xu, vec![2; n], means, vec![None; n]).unwrap();
        let k = Kernel::new(KernelFamily::Matern52, vec![0.3; d], 1.0).unwrap();
        let model = FittedGP::condition(k, NoiseModel::Constant { variance: 0.1 }, TrendMode::ConstantGls, data).unwrap();
        let cfg = AcquisitionConfig::for_domain(&Domain::unit(d));
        let value = design::imspe(&model, &cfg).unwrap();
        let draws: Vec<f64> = (0..100_000)
            .map(|_| {
                let x: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
                model.predict(&x).unwrap().latent_var
            })
            .collect();
        let m = draws.iter().sum::<f64>() / draws.len() as f64;
        let sd = (draws.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (draws.len() - 1) as f64).sqrt();
        let se = sd / (draws.len() as f64).sqrt();
        assert!((value - m).abs() <= 3.0 * se, "d = {d}: {value} vs {m} ± {se}");
    }
}
