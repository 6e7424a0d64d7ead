use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod csvio;
mod error;
mod modelfile;
mod svg;

use config::RunConfig;
use error::CliResult;

/// Replication-aware GP surrogates for stochastic simulators.
///
/// Settings come from built-in defaults, then the `--config` TOML file, then flags.
#[derive(Parser, Debug)]
#[command(name = "noisygp", version)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: $NOISYGP_OUT_DIR, else the current directory).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the SIR simulator and write a dataset (and optionally a reference table).
    Simulate(SimulateArgs),
    /// Fit a GP to a dataset and write the model file and a report.
    Fit(ModelArgs),
    /// Predict from a model file on a grid or at given inputs.
    Predict(PredictArgs),
    /// Fit quantile surfaces to replicated data.
    Quantile(QuantileArgs),
    /// Run a sequential design on the SIR simulator.
    Design(DesignArgs),
    /// Time replicated vs dense fits.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// `replicated` or `dense`.
    #[arg(long)]
    layout: Option<String>,
    #[arg(long)]
    n_unique: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    /// Number of runs of the dense layout.
    #[arg(long)]
    n: Option<usize>,
    /// `iid` or `crn`.
    #[arg(long)]
    mode: Option<String>,
    /// Also write the reference table.
    #[arg(long)]
    reference: bool,
    #[arg(long)]
    reference_reps: Option<usize>,
    #[arg(long)]
    reference_grid: Option<usize>,
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Dataset CSV (default: data.csv in the output directory).
    #[arg(long)]
    data: Option<PathBuf>,
    /// homoscedastic, sk, latent, parametric:D, known:SPEC or noise-free.
    #[arg(long)]
    noise: Option<String>,
    /// matern52 or se.
    #[arg(long)]
    kernel: Option<String>,
    /// zero or constant-gls.
    #[arg(long)]
    trend: Option<String>,
    #[arg(long)]
    starts: Option<usize>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    /// Model file (default: model.json in the output directory).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Grid points per dimension over the design bounding box.
    #[arg(long)]
    grid: Option<usize>,
    /// CSV of inputs to predict at.
    #[arg(long)]
    at: Option<PathBuf>,
    /// Also write an SVG plot (one-dimensional models).
    #[arg(long)]
    svg: bool,
}

#[derive(Args, Debug)]
struct QuantileArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Comma-separated levels in (0, 1).
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<f64>>,
    /// per-level or augmented.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    grid: Option<usize>,
}

#[derive(Args, Debug)]
struct DesignArgs {
    /// imspe, contour-sur, ei, ucb or fixed-replicates-K.
    #[arg(long)]
    strategy: Option<String>,
    /// Total evaluations, initial design included.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    noise: Option<String>,
    /// Initial design CSV instead of a simulated replicated design.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    initial_unique: Option<usize>,
    #[arg(long)]
    initial_reps: Option<usize>,
    #[arg(long)]
    reduction_ratio: Option<f64>,
    #[arg(long)]
    candidates: Option<usize>,
    #[arg(long)]
    quad_nodes: Option<usize>,
    #[arg(long)]
    refresh_every: Option<usize>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    n_unique: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    max_iter: Option<usize>,
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, flag: Option<T>) {
    if flag.is_some() {
        *slot = flag;
    }
}

impl Cli {
    fn config(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        set_opt(&mut cfg.out_dir, self.out_dir.clone());
        set(&mut cfg.seed, self.seed);
        match &self.command {
            Command::Simulate(a) => {
                set(&mut cfg.dataset.layout, a.layout.clone());
                set(&mut cfg.dataset.n_unique, a.n_unique);
                set(&mut cfg.dataset.reps, a.reps);
                set(&mut cfg.dataset.n, a.n);
                if let Some(m) = &a.mode {
                    cfg.simulator.mode = m.parse()?;
                }
                cfg.dataset.reference |= a.reference;
                set(&mut cfg.dataset.reference_reps, a.reference_reps);
                set(&mut cfg.dataset.reference_grid, a.reference_grid);
            }
            Command::Fit(a) => {
                set_opt(&mut cfg.data, a.data.clone());
                set(&mut cfg.model.noise, a.noise.clone());
                set(&mut cfg.model.kernel, a.kernel.clone());
                set(&mut cfg.model.trend, a.trend.clone());
                set(&mut cfg.model.starts, a.starts);
            }
            Command::Predict(a) => {
                set_opt(&mut cfg.predict.model, a.model.clone());
                set(&mut cfg.predict.grid, a.grid);
                set_opt(&mut cfg.predict.at, a.at.clone());
                cfg.predict.svg |= a.svg;
            }
            Command::Quantile(a) => {
                set_opt(&mut cfg.data, a.data.clone());
                set(&mut cfg.quantile.levels, a.levels.clone());
                set(&mut cfg.quantile.mode, a.mode.clone());
                set(&mut cfg.quantile.grid, a.grid);
            }
            Command::Design(a) => {
                set(&mut cfg.design.strategy, a.strategy.clone());
                set(&mut cfg.design.budget, a.budget);
                set_opt(&mut cfg.design.threshold, a.threshold);
                set_opt(&mut cfg.design.noise, a.noise.clone());
                set_opt(&mut cfg.data, a.data.clone());
                set(&mut cfg.design.initial_unique, a.initial_unique);
                set(&mut cfg.design.initial_reps, a.initial_reps);
                set(&mut cfg.design.reduction_ratio, a.reduction_ratio);
                set_opt(&mut cfg.design.candidates, a.candidates);
                set_opt(&mut cfg.design.quad_nodes, a.quad_nodes);
                set(&mut cfg.design.refresh_every, a.refresh_every);
            }
            Command::Bench(a) => {
                set(&mut cfg.bench.n_unique, a.n_unique);
                set(&mut cfg.bench.reps, a.reps);
                set(&mut cfg.bench.max_iter, a.max_iter);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn run(&self) -> CliResult<String> {
        let cfg = self.config()?;
        match self.command {
            Command::Simulate(_) => commands::simulate(&cfg),
            Command::Fit(_) => commands::fit_model(&cfg),
            Command::Predict(_) => commands::predict(&cfg),
            Command::Quantile(_) => commands::quantile(&cfg),
            Command::Design(_) => commands::design(&cfg),
            Command::Bench(_) => commands::bench(&cfg),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.run() {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("noisygp").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "seed = 3\n[model]\nnoise = \"sk\"\nstarts = 2\n").unwrap();
        let p = path.to_str().unwrap();
        let cfg = parse(&["--config", p, "fit", "--noise", "latent"]).config().unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.model.noise, "latent");
        assert_eq!(cfg.model.starts, 2);
        let cfg = parse(&["fit", "--config", p, "--seed", "11"]).config().unwrap();
        assert_eq!(cfg.seed, 11);
        assert_eq!(cfg.model.noise, "sk");
    }

    #[test]
    fn levels_flag_is_comma_separated() {
        let cfg = parse(&["quantile", "--levels", "0.1,0.9"]).config().unwrap();
        assert_eq!(cfg.quantile.levels, vec![0.1, 0.9]);
    }

    #[test]
    fn bad_mode_is_a_config_error() {
        let err = parse(&["simulate", "--mode", "shared"]).config().unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
