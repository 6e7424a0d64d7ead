//! The sequential design loop: select, evaluate, refit, log.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{self, AcquisitionConfig, Action, DesignDecision, NodeCache};
use crate::error::{GpError, Result};
use crate::gp::{self, FitOptions, FittedGP};
use crate::kernels::Domain;
use crate::lowdisc;
use crate::noise::NoiseSpec;
use crate::replication::{compact, RawData};
use crate::sir::{self, mix, SIRConfig};

/// A stochastic simulator over a box domain. Evaluations must be pure in `(x, seed)`.
pub trait Simulator: Sync {
    fn domain(&self) -> Domain;
    fn evaluate(&self, x: &[f64], seed: u64) -> Result<f64>;
}

impl Simulator for SIRConfig {
    fn domain(&self) -> Domain {
        Domain::unit(1)
    }

    fn evaluate(&self, x: &[f64], seed: u64) -> Result<f64> {
        if x.len() != 1 {
            return Err(GpError::DimensionMismatch { expected: 1, got: x.len() });
        }
        sir::simulate(self, x[0], seed)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Strategy {
    ImspeLookahead,
    ContourSurBudget,
    EiPlugin,
    Ucb,
    /// New designs chosen by IMSPE, each evaluated `k` times.
    FixedReplicates(usize),
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::ImspeLookahead => write!(f, "imspe-lookahead"),
            Strategy::ContourSurBudget => write!(f, "contour-sur+budget"),
            Strategy::EiPlugin => write!(f, "ei-plugin"),
            Strategy::Ucb => write!(f, "ucb"),
            Strategy::FixedReplicates(k) => write!(f, "fixed-replicates-{k}"),
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = GpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "imspe-lookahead" | "imspe" => Ok(Strategy::ImspeLookahead),
            "contour-sur+budget" | "contour-sur" => Ok(Strategy::ContourSurBudget),
            "ei-plugin" | "ei" => Ok(Strategy::EiPlugin),
            "ucb" => Ok(Strategy::Ucb),
            other => match other.strip_prefix("fixed-replicates-").map(str::parse::<usize>) {
                Some(Ok(k)) if k > 0 => Ok(Strategy::FixedReplicates(k)),
                _ => Err(GpError::InvalidParameter(format!("unknown strategy '{other}'"))),
            },
        }
    }
}

impl TryFrom<String> for Strategy {
    type Error = GpError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Strategy> for String {
    fn from(s: Strategy) -> Self {
        s.to_string()
    }
}

#[derive(Clone, Debug)]
pub struct SequentialConfig {
    pub strategy: Strategy,
    /// Total number of simulator evaluations, initial design included.
    pub budget: usize,
    pub acquisition: AcquisitionConfig,
    pub noise: NoiseSpec,
    pub fit: FitOptions,
    /// Hyperparameters are re-estimated every this many iterations.
    pub refresh_every: usize,
    pub seed: u64,
}

impl SequentialConfig {
    pub fn new(strategy: Strategy, budget: usize, domain: &Domain) -> Self {
        SequentialConfig {
            strategy,
            budget,
            acquisition: AcquisitionConfig::for_domain(domain),
            noise: NoiseSpec::Homoscedastic,
            fit: FitOptions::default(),
            refresh_every: 5,
            seed: 0,
        }
    }
}

/// One line of the run log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iteration: usize,
    /// `initial`, `new` or `replicate`.
    pub action: String,
    pub x: Vec<f64>,
    pub batch: usize,
    pub criterion: Option<f64>,
    pub unique_count: usize,
    pub evaluations: usize,
    /// IMSPE, or contour uncertainty for the contour strategy, after the refit.
    pub imspe_or_gamma: f64,
    pub saturated: bool,
    /// Iteration at which the hyperparameters in use were estimated.
    pub snapshot: usize,
}

/// State from which a run can resume.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub data: RawData,
    pub iteration: usize,
    pub snapshot: usize,
    pub model: FittedGP,
    pub log: Vec<LogRecord>,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub data: RawData,
    pub model: FittedGP,
    pub log: Vec<LogRecord>,
}

impl RunResult {
    /// Unique designs that were not part of the initial design.
    pub fn added_unique(&self, initial: &RawData) -> usize {
        let init = compact(initial);
        let fin = compact(&self.data);
        (0..fin.n()).filter(|&i| init.find(&fin.point(i)).is_none()).count()
    }
}

/// A run stopped early; `checkpoint` holds the last consistent state when one exists.
#[derive(Debug)]
pub struct RunError {
    pub error: GpError,
    pub checkpoint: Option<Box<Checkpoint>>,
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.checkpoint {
            Some(c) => write!(f, "{} (resumable from iteration {})", self.error, c.iteration),
            None => write!(f, "{}", self.error),
        }
    }
}

impl std::error::Error for RunError {}

impl From<GpError> for RunError {
    fn from(error: GpError) -> Self {
        RunError { error, checkpoint: None }
    }
}

const CANDIDATE_TAG: u64 = 0xca4d;
const EVAL_TAG: u64 = 0xe7a1;

fn metric(model: &FittedGP, cfg: &SequentialConfig) -> Result<f64> {
    let cache = NodeCache::new(model, &cfg.acquisition.quad_nodes)?;
    Ok(match (cfg.strategy, cfg.acquisition.threshold) {
        (Strategy::ContourSurBudget, Some(t)) => cache.gamma(t),
        _ => cache.imspe(),
    })
}

fn validate(sim: &dyn Simulator, cfg: &SequentialConfig, initial: &RawData) -> Result<()> {
    cfg.acquisition.validate()?;
    if cfg.budget < initial.len() {
        return Err(GpError::InvalidParameter(format!(
            "budget {} is smaller than the initial design ({} evaluations)",
            cfg.budget,
            initial.len()
        )));
    }
    if initial.dim() != sim.domain().dim() {
        return Err(GpError::DimensionMismatch { expected: sim.domain().dim(), got: initial.dim() });
    }
    if cfg.refresh_every == 0 {
        return Err(GpError::InvalidParameter("refresh_every must be positive".into()));
    }
    if cfg.strategy == Strategy::ContourSurBudget && cfg.acquisition.threshold.is_none() {
        return Err(GpError::InvalidParameter("the contour strategy needs a threshold".into()));
    }
    Ok(())
}

fn fit_options(cfg: &SequentialConfig, domain: &Domain) -> FitOptions {
    FitOptions { domain: Some(cfg.fit.domain.clone().unwrap_or_else(|| domain.clone())), ..cfg.fit.clone() }
}

/// Runs the loop from an initial design until `cfg.budget` evaluations have been spent.
pub fn run_sequential(sim: &dyn Simulator, initial: &RawData, cfg: &SequentialConfig) -> std::result::Result<RunResult, RunError> {
    validate(sim, cfg, initial)?;
    let domain = sim.domain();
    let model = gp::fit(&compact(initial), &cfg.noise, &fit_options(cfg, &domain))?;
    let log = vec![LogRecord {
        iteration: 0,
        action: "initial".into(),
        x: Vec::new(),
        batch: initial.len(),
        criterion: None,
        unique_count: model.design().n(),
        evaluations: initial.len(),
        imspe_or_gamma: metric(&model, cfg)?,
        saturated: false,
        snapshot: 0,
    }];
    let state = Checkpoint { data: initial.clone(), iteration: 0, snapshot: 0, model, log };
    resume(sim, state, cfg)
}

/// Continues a run from `checkpoint`.
pub fn resume(sim: &dyn Simulator, checkpoint: Checkpoint, cfg: &SequentialConfig) -> std::result::Result<RunResult, RunError> {
    validate(sim, cfg, &checkpoint.data)?;
    let domain = sim.domain();
    let fit_opts = fit_options(cfg, &domain);
    let mut state = checkpoint;
    while state.data.len() < cfg.budget {
        let it = state.iteration + 1;
        let fail = |error: GpError, state: &Checkpoint| RunError { error, checkpoint: Some(Box::new(state.clone())) };
        let decision = match choose(&state.model, cfg, &domain, it) {
            Ok(d) => d,
            Err(e) => return Err(fail(e, &state)),
        };
        let x = match &decision.action {
            Action::NewDesign { x } => x.clone(),
            Action::Replicate { index } => state.model.design().point(*index),
        };
        let batch = decision.batch_size.min(cfg.budget - state.data.len());
        let start = state.data.len();
        let ys = (0..batch)
            .into_par_iter()
            .map(|b| sim.evaluate(&x, mix(cfg.seed ^ EVAL_TAG, (start + b) as u64)))
            .collect::<Result<Vec<_>>>();
        let ys = match ys {
            Ok(ys) => ys,
            Err(e) => return Err(fail(GpError::Simulator(format!("evaluation at {x:?} failed: {e}")), &state)),
        };
        let mut data = state.data.clone();
        data.extend(&vec![x.clone(); batch], &ys);
        let compacted = compact(&data);
        let refresh = it.is_multiple_of(cfg.refresh_every);
        let model = if refresh {
            let opts = FitOptions { starts: 1, warm_start: Some(state.model.log_params()), ..fit_opts.clone() };
            gp::fit(&compacted, &cfg.noise, &opts)
        } else {
            state.model.recondition(compacted)
        };
        let model = match model {
            Ok(m) => m,
            Err(e) => return Err(fail(e, &state)),
        };
        let value = match metric(&model, cfg) {
            Ok(v) => v,
            Err(e) => return Err(fail(e, &state)),
        };
        let snapshot = if refresh { it } else { state.snapshot };
        state.log.push(LogRecord {
            iteration: it,
            action: match decision.action {
                Action::NewDesign { .. } => "new".into(),
                Action::Replicate { .. } => "replicate".into(),
            },
            x,
            batch,
            criterion: Some(decision.criterion_value),
            unique_count: model.design().n(),
            evaluations: data.len(),
            imspe_or_gamma: value,
            saturated: decision.saturated,
            snapshot,
        });
        state.data = data;
        state.model = model;
        state.iteration = it;
        state.snapshot = snapshot;
    }
    Ok(RunResult { data: state.data, model: state.model, log: state.log })
}

fn choose(model: &FittedGP, cfg: &SequentialConfig, domain: &Domain, it: usize) -> Result<DesignDecision> {
    let acq = &cfg.acquisition;
    let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed ^ CANDIDATE_TAG, it as u64));
    let candidates = lowdisc::rotated_halton(acq.candidate_count, domain, &mut rng);
    match cfg.strategy {
        Strategy::ImspeLookahead => design::select_next_imspe_lookahead(model, acq, &candidates),
        Strategy::ContourSurBudget => design::select_next_contour(model, acq, &candidates),
        Strategy::EiPlugin => {
            let t = match acq.threshold {
                Some(t) => t,
                None => design::plugin_best(model).ok_or(GpError::InsufficientData("EI needs designs".into()))?,
            };
            let mut d = design::select_by(model, &candidates, |x| {
                let p = model.predict(x)?;
                Ok(-design::expected_improvement(p.mean, p.latent_sd(), t))
            })?;
            d.criterion_value = -d.criterion_value;
            Ok(d)
        }
        Strategy::Ucb => design::select_by(model, &candidates, |x| design::ucb(model, x, acq.ucb_beta)),
        Strategy::FixedReplicates(k) => {
            let mut d = design::select_new_imspe(model, acq, &candidates)?;
            d.batch_size = k;
            Ok(d)
        }
    }
}

/// Writes the log as line-delimited JSON.
pub fn log_to_jsonl(log: &[LogRecord]) -> String {
    let mut out = String::new();
    for r in log {
        out.push_str(&serde_json::to_string(r).expect("log records serialize"));
        out.push('\n');
    }
    out
}
