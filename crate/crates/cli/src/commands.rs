//! The six subcommands. Each returns a short summary for stdout.

use std::path::PathBuf;
use std::time::Instant;

use nalgebra::DMatrix;
use noisygp::optim::LbfgsOptions;
use noisygp::quantile::standard_normal_quantile;
use noisygp::sequential::{log_to_jsonl, run_sequential, SequentialConfig, Simulator};
use noisygp::*;
use serde_json::json;

use crate::config::RunConfig;
use crate::csvio::{self, raw_table, x_header, Table};
use crate::error::{CliError, CliResult};
use crate::modelfile;
use crate::svg;

/// Equispaced product grid over `domain`, first coordinate varying slowest.
pub fn grid(domain: &Domain, per_dim: usize) -> DMatrix<f64> {
    let d = domain.dim();
    let total = per_dim.pow(d as u32);
    DMatrix::from_fn(total, d, |i, k| {
        let idx = (i / per_dim.pow((d - 1 - k) as u32)) % per_dim;
        let t = idx as f64 / (per_dim - 1) as f64;
        domain.lower[k] + t * (domain.upper[k] - domain.lower[k])
    })
}

fn json_bytes(v: &serde_json::Value) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("json values serialize");
    s.push('\n');
    s.into_bytes()
}

pub fn simulate(cfg: &RunConfig) -> CliResult<String> {
    let raw = build_dataset(&cfg.simulator, cfg.layout()?, cfg.seed)?;
    let out = cfg.out_dir();
    let data_path = out.join("data.csv");
    raw_table(&raw).write(&data_path)?;
    let mut summary = format!("wrote {} rows to {}", raw.len(), data_path.display());
    if cfg.dataset.reference {
        let d = &cfg.dataset;
        let rows = reference_stats(&cfg.simulator, d.reference_grid, d.reference_reps, &d.reference_levels, d.reference_seed)?;
        let mut header = vec!["x".to_string(), "mean".into(), "variance".into()];
        header.extend(d.reference_levels.iter().map(|l| format!("q{l}")));
        let mut t = Table::new(header);
        for r in &rows {
            let mut row = vec![r.x, r.mean, r.variance];
            row.extend(&r.quantiles);
            t.rows.push(row);
        }
        let ref_path = out.join("reference.csv");
        t.write(&ref_path)?;
        summary.push_str(&format!("; reference table ({} points) in {}", rows.len(), ref_path.display()));
    }
    Ok(summary)
}

pub fn fit_model(cfg: &RunConfig) -> CliResult<String> {
    let data_path = cfg.data_path();
    let raw = csvio::read_raw(&data_path)?;
    let noise = cfg.noise()?;
    let opts = cfg.fit_options()?;
    let start = Instant::now();
    let data = compact(&raw);
    let model = fit(&data, &noise, &opts)?;
    let wall = start.elapsed().as_secs_f64();

    let out = cfg.out_dir();
    let model_path = out.join("model.json");
    modelfile::save(&model, &model_path)?;
    let k = model.kernel();
    let report = json!({
        "data": data_path.display().to_string(),
        "noise": cfg.model.noise,
        "kernel": cfg.model.kernel,
        "n": data.n(),
        "N": data.total(),
        "neg_log_likelihood": model.neg_log_likelihood(),
        "lengthscales": k.lengthscales,
        "process_variance": k.process_variance,
        "trend_beta": model.trend().beta,
        "wall_time_s": wall,
    });
    csvio::write_bytes(&out.join("fit_report.json"), &json_bytes(&report))?;
    Ok(format!(
        "fitted {} noise on n = {}, N = {}: NLL {:.6}, {:.3} s; model in {}",
        cfg.model.noise,
        data.n(),
        data.total(),
        model.neg_log_likelihood(),
        wall,
        model_path.display()
    ))
}

pub fn predict(cfg: &RunConfig) -> CliResult<String> {
    let model = modelfile::load(&cfg.model_path())?;
    let xs = match &cfg.predict.at {
        Some(p) => csvio::read_inputs(p)?,
        None => {
            if model.design().n() == 0 {
                return Err(CliError::Data("model has no designs to span a grid; pass an input file".into()));
            }
            grid(&Domain::bounding(&model.design().xu), cfg.predict.grid)
        }
    };
    if xs.ncols() != model.dim() {
        return Err(CliError::Data(format!("model has {} inputs but the grid has {}", model.dim(), xs.ncols())));
    }
    let preds = model.predict_many(&xs)?;
    let z = standard_normal_quantile(0.95);
    let mut header = x_header(xs.ncols());
    header.extend(["mean", "latent_sd", "obs_sd", "q05", "q95"].map(String::from));
    let mut t = Table::new(header);
    for (i, p) in preds.iter().enumerate() {
        let mut row: Vec<f64> = xs.row(i).iter().copied().collect();
        let sd = p.obs_sd();
        row.extend([p.mean, p.latent_sd(), sd, p.mean - z * sd, p.mean + z * sd]);
        t.rows.push(row);
    }
    let out = cfg.out_dir();
    let path = out.join("predictions.csv");
    t.write(&path)?;
    let mut summary = format!("wrote {} predictions to {}", preds.len(), path.display());
    if cfg.predict.svg {
        if xs.ncols() != 1 {
            return Err(CliError::Config("SVG plots are available for one-dimensional models only".into()));
        }
        let col = |k: usize| t.rows.iter().map(|r| r[k]).collect::<Vec<_>>();
        let plot = svg::band_plot(&col(0), &col(1), &col(4), &col(5));
        let svg_path = out.join("predictions.svg");
        csvio::write_bytes(&svg_path, plot.as_bytes())?;
        summary.push_str(&format!("; plot in {}", svg_path.display()));
    }
    Ok(summary)
}

pub fn quantile(cfg: &RunConfig) -> CliResult<String> {
    let raw = csvio::read_raw(&cfg.data_path())?;
    let levels = &cfg.quantile.levels;
    let opts = cfg.fit_options()?;
    let qm = fit_quantile_model(&raw, levels, cfg.quantile_mode()?, &opts)?;
    let domain = match opts.domain {
        Some(d) => d,
        None => Domain::bounding(&raw.x),
    };
    let xs = grid(&domain, cfg.quantile.grid);
    let mut header = x_header(xs.ncols());
    header.extend(levels.iter().map(|l| format!("q{l}")));
    let mut t = Table::new(header);
    for i in 0..xs.nrows() {
        let x: Vec<f64> = xs.row(i).iter().copied().collect();
        let q = qm.predict_quantiles(&x, levels)?;
        let mut row = x;
        row.extend(q.iter().map(|p| p.value));
        t.rows.push(row);
    }
    let path = cfg.out_dir().join("quantiles.csv");
    t.write(&path)?;
    Ok(format!("wrote {} levels on {} points to {}", levels.len(), xs.nrows(), path.display()))
}

pub fn design(cfg: &RunConfig) -> CliResult<String> {
    let sim = &cfg.simulator;
    let domain = sim.domain();
    let initial = match &cfg.data {
        Some(p) => csvio::read_raw(p)?,
        None => {
            let layout = Layout::Replicated { n_unique: cfg.design.initial_unique, reps: cfg.design.initial_reps };
            build_dataset(sim, layout, cfg.seed)?
        }
    };
    let mut sc = SequentialConfig::new(cfg.strategy()?, cfg.design.budget, &domain);
    sc.acquisition = cfg.acquisition(&domain);
    sc.noise = cfg.design_noise()?;
    sc.fit = cfg.fit_options()?;
    sc.refresh_every = cfg.design.refresh_every;
    sc.seed = cfg.seed;

    let out = cfg.out_dir();
    let result = match run_sequential(sim, &initial, &sc) {
        Ok(r) => r,
        Err(e) => {
            if let Some(cp) = &e.checkpoint {
                let text = serde_json::to_vec_pretty(cp).expect("checkpoints serialize");
                csvio::write_bytes(&out.join("design_checkpoint.json"), &text)?;
            }
            return Err(e.error.into());
        }
    };
    csvio::write_bytes(&out.join("design_log.jsonl"), log_to_jsonl(&result.log).as_bytes())?;
    modelfile::save(&result.model, &out.join("model.json"))?;
    raw_table(&result.data).write(&out.join("design_data.csv"))?;

    let fin = compact(&result.data);
    let mut header: Vec<String> = (1..=fin.dim()).map(|k| format!("x_{k}")).collect();
    header.extend(["count", "mean"].map(String::from));
    let mut t = Table::new(header);
    for i in 0..fin.n() {
        let mut row = fin.point(i);
        row.extend([fin.counts[i] as f64, fin.means[i]]);
        t.rows.push(row);
    }
    t.write(&out.join("designs.csv"))?;
    let decisions = result.log.len() - 1;
    Ok(format!(
        "{} run: {} decisions, {} evaluations on {} unique designs; outputs in {}",
        cfg.design.strategy,
        decisions,
        result.data.len(),
        fin.n(),
        out.display()
    ))
}

pub fn bench(cfg: &RunConfig) -> CliResult<String> {
    let b = &cfg.bench;
    let opts = FitOptions {
        starts: b.starts,
        parallel: false,
        lbfgs: LbfgsOptions { max_iter: b.max_iter, ..LbfgsOptions::default() },
        domain: Some(Domain::unit(1)),
        ..cfg.fit_options()?
    };
    let layouts = [
        ("replicated", Layout::Replicated { n_unique: b.n_unique, reps: b.reps }),
        ("dense", Layout::Dense { n: b.n_unique * b.reps }),
    ];
    let mut runs = Vec::new();
    let mut homo_time = [0.0f64; 2];
    for (li, (name, layout)) in layouts.iter().enumerate() {
        let raw = build_dataset(&cfg.simulator, *layout, cfg.seed)?;
        for (noise_name, noise) in [("homoscedastic", NoiseSpec::Homoscedastic), ("stochastic-kriging", NoiseSpec::StochasticKriging)] {
            let start = Instant::now();
            let data = compact(&raw);
            let outcome = fit(&data, &noise, &opts);
            let secs = start.elapsed().as_secs_f64();
            let mut entry = json!({ "layout": name, "noise": noise_name, "n": data.n(), "N": data.total(), "wall_time_s": secs });
            match outcome {
                Ok(m) => entry["neg_log_likelihood"] = json!(m.neg_log_likelihood()),
                // Dense data has no replicates, so the stochastic-kriging fit is expected to fail.
                Err(e) => entry["error"] = json!(e.to_string()),
            }
            if matches!(noise, NoiseSpec::Homoscedastic) {
                homo_time[li] = secs;
            }
            runs.push(entry);
        }
    }
    let ratio = homo_time[1] / homo_time[0].max(1e-9);
    let report = json!({ "runs": runs, "speed_ratio": ratio });
    let path: PathBuf = cfg.out_dir().join("bench_report.json");
    csvio::write_bytes(&path, &json_bytes(&report))?;
    Ok(format!(
        "homoscedastic fit: replicated {:.4} s, dense {:.4} s, speed ratio {ratio:.1}; report in {}",
        homo_time[0],
        homo_time[1],
        path.display()
    ))
}
