//! Replication-aware Gaussian process surrogates for stochastic simulators.
//!
//! The crate covers heteroscedastic GP regression on compacted (unique design)
//! data, quantile surfaces, sequential design criteria with replication, and a
//! chain-binomial SIR simulator used as a test problem.

pub mod design;
pub mod error;
pub mod gp;
pub mod kernels;
pub mod likelihood;
pub mod linalg;
pub mod lowdisc;
pub mod noise;
pub mod optim;
pub mod quantile;
pub mod replication;
pub mod sequential;
pub mod sir;
mod serde_rows;

pub use error::{GpError, Result};
pub use gp::{fit, neg_log_likelihood, FitOptions, FittedGP, Prediction, Trend, TrendMode};
pub use kernels::{Domain, Kernel, KernelFamily};
pub use noise::{KnownVariance, NoiseModel, NoiseSpec, PolyBasis};
pub use quantile::{fit_quantile_model, gaussian_predictive_quantile, QuantileMode, QuantileModel, QuantilePrediction};
pub use sir::{build_dataset, reference_stats, simulate, Layout, ReferenceRow, SIRConfig, SimMode};
pub use replication::{compact, empirical_moments, empirical_quantiles, CompactedDesign, Moments, RawData};
