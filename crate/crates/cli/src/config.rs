//! Run configuration: built-in defaults, overridden by a TOML file, overridden by flags.

use std::path::{Path, PathBuf};

use noisygp::design::AcquisitionConfig;
use noisygp::optim::LbfgsOptions;
use noisygp::sequential::Strategy;
use noisygp::{Domain, FitOptions, KernelFamily, Layout, NoiseSpec, QuantileMode, SIRConfig, TrendMode};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "NOISYGP_OUT_DIR";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    /// Dataset CSV read by fit, quantile and design.
    pub data: Option<PathBuf>,
    pub simulator: SIRConfig,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub predict: PredictConfig,
    pub quantile: QuantileConfig,
    pub design: DesignConfig,
    pub bench: BenchConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// `replicated` or `dense`.
    pub layout: String,
    pub n_unique: usize,
    pub reps: usize,
    pub n: usize,
    pub reference: bool,
    pub reference_grid: usize,
    pub reference_reps: usize,
    pub reference_levels: Vec<f64>,
    pub reference_seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            layout: "replicated".into(),
            n_unique: 25,
            reps: 100,
            n: 2500,
            reference: false,
            reference_grid: 51,
            reference_reps: 10_000,
            reference_levels: vec![0.05, 0.5, 0.95],
            reference_seed: 2024,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kernel: String,
    pub noise: String,
    pub trend: String,
    pub starts: usize,
    pub max_iter: Option<usize>,
    pub parallel: bool,
    /// Box used for hyperparameter bounds; the bounding box of the designs when absent.
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kernel: "matern52".into(),
            noise: "homoscedastic".into(),
            trend: "constant-gls".into(),
            starts: 5,
            max_iter: None,
            parallel: true,
            lower: None,
            upper: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictConfig {
    pub model: Option<PathBuf>,
    /// Points per dimension of the prediction grid.
    pub grid: usize,
    /// CSV of inputs to predict at, instead of the grid.
    pub at: Option<PathBuf>,
    pub svg: bool,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig { model: None, grid: 101, at: None, svg: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantileConfig {
    pub levels: Vec<f64>,
    pub mode: String,
    pub grid: usize,
}

impl Default for QuantileConfig {
    fn default() -> Self {
        QuantileConfig { levels: vec![0.05, 0.5, 0.95], mode: "per-level".into(), grid: 51 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignConfig {
    pub strategy: String,
    pub budget: usize,
    /// Noise model of the sequential fits; `model.noise` when absent.
    pub noise: Option<String>,
    pub initial_unique: usize,
    pub initial_reps: usize,
    pub threshold: Option<f64>,
    pub reduction_ratio: f64,
    pub replicate_cap: usize,
    pub ucb_beta: f64,
    pub candidates: Option<usize>,
    pub quad_nodes: Option<usize>,
    pub refresh_every: usize,
}

impl Default for DesignConfig {
    fn default() -> Self {
        DesignConfig {
            strategy: "imspe".into(),
            budget: 1000,
            noise: None,
            initial_unique: 10,
            initial_reps: 10,
            threshold: None,
            reduction_ratio: 0.9,
            replicate_cap: 50,
            ucb_beta: 1.96,
            candidates: None,
            quad_nodes: None,
            refresh_every: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub n_unique: usize,
    pub reps: usize,
    pub starts: usize,
    pub max_iter: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { n_unique: 25, reps: 100, starts: 1, max_iter: 10 }
    }
}

fn config_err(what: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{what}: {e}"))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| config_err("invalid config", e))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(&format!("cannot read {}", path.display()), e))?;
        Self::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Output directory: config value, then the environment default, then `.`.
    pub fn out_dir(&self) -> PathBuf {
        self.out_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn data_path(&self) -> PathBuf {
        self.data.clone().unwrap_or_else(|| self.out_dir().join("data.csv"))
    }

    pub fn model_path(&self) -> PathBuf {
        self.predict.model.clone().unwrap_or_else(|| self.out_dir().join("model.json"))
    }

    /// Checks every field that is parsed from a string or constrained in range.
    pub fn validate(&self) -> CliResult<()> {
        self.simulator.validate()?;
        self.layout()?;
        self.kernel()?;
        self.noise()?;
        self.trend()?;
        self.quantile_mode()?;
        self.strategy()?;
        self.design_noise()?;
        self.model_domain()?;
        if self.model.starts == 0 {
            return Err(CliError::Config("model.starts must be positive".into()));
        }
        if self.predict.grid < 2 || self.quantile.grid < 2 {
            return Err(CliError::Config("grids need at least 2 points per dimension".into()));
        }
        if self.design.initial_unique == 0 || self.design.initial_reps == 0 {
            return Err(CliError::Config("design.initial_unique and design.initial_reps must be positive".into()));
        }
        if self.bench.n_unique < 2 || self.bench.reps == 0 || self.bench.starts == 0 {
            return Err(CliError::Config("bench needs n_unique >= 2, reps >= 1 and starts >= 1".into()));
        }
        Ok(())
    }

    pub fn layout(&self) -> CliResult<Layout> {
        let d = &self.dataset;
        match d.layout.as_str() {
            "replicated" => Ok(Layout::Replicated { n_unique: d.n_unique, reps: d.reps }),
            "dense" => Ok(Layout::Dense { n: d.n }),
            other => Err(CliError::Config(format!("unknown layout '{other}' (expected replicated or dense)"))),
        }
    }

    pub fn kernel(&self) -> CliResult<KernelFamily> {
        Ok(self.model.kernel.parse()?)
    }

    pub fn noise(&self) -> CliResult<NoiseSpec> {
        Ok(self.model.noise.parse()?)
    }

    pub fn trend(&self) -> CliResult<TrendMode> {
        Ok(self.model.trend.parse()?)
    }

    pub fn quantile_mode(&self) -> CliResult<QuantileMode> {
        Ok(self.quantile.mode.parse()?)
    }

    pub fn strategy(&self) -> CliResult<Strategy> {
        Ok(self.design.strategy.parse()?)
    }

    pub fn design_noise(&self) -> CliResult<NoiseSpec> {
        match &self.design.noise {
            Some(s) => Ok(s.parse()?),
            None => self.noise(),
        }
    }

    pub fn model_domain(&self) -> CliResult<Option<Domain>> {
        match (&self.model.lower, &self.model.upper) {
            (Some(l), Some(u)) => Ok(Some(Domain::new(l.clone(), u.clone())?)),
            (None, None) => Ok(None),
            _ => Err(CliError::Config("model.lower and model.upper must be given together".into())),
        }
    }

    pub fn fit_options(&self) -> CliResult<FitOptions> {
        let mut lbfgs = LbfgsOptions::default();
        if let Some(m) = self.model.max_iter {
            lbfgs.max_iter = m;
        }
        Ok(FitOptions {
            family: self.kernel()?,
            trend: self.trend()?,
            starts: self.model.starts,
            lbfgs,
            domain: self.model_domain()?,
            warm_start: None,
            parallel: self.model.parallel,
        })
    }

    pub fn acquisition(&self, domain: &Domain) -> AcquisitionConfig {
        let d = &self.design;
        let mut acq = AcquisitionConfig::for_domain(domain);
        if let Some(m) = d.quad_nodes {
            acq.quad_nodes = noisygp::lowdisc::halton_in(m, domain);
        }
        if let Some(c) = d.candidates {
            acq.candidate_count = c;
        }
        acq.threshold = d.threshold;
        acq.reduction_ratio = d.reduction_ratio;
        acq.replicate_cap = d.replicate_cap;
        acq.ucb_beta = d.ucb_beta;
        acq
    }
}
