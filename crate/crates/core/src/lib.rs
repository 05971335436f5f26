//! Estimation and geometric diagnosis of second-order stochastic
//! oscillators from partially observed scalar time series.
//!
//! The library filters a noisy observation of the first coordinate through
//! an 8-state nonparametric Kalman recursion that tracks the latent pair,
//! the unknown drift and its partial derivatives, estimates the model
//! scales by quasi-maximum likelihood, and embeds the filtered trajectory
//! in R^3 to compute vector-field and covariant-derivative diagnostics,
//! followed by a year-level statistical analysis.
//!
//! Modules:
//! - [`matfun`]: matrix exponential, phi functions, discretized noise covariance
//! - [`simulate`]: Euler-Maruyama ground-truth generator
//! - [`npf`]: the nonparametric filter recursion and quasi likelihood
//! - [`qmle`]: Nelder-Mead parameter search
//! - [`geometry`]: vector field, covariant derivative, geodesic flags
//! - [`yearstats`]: per-year summaries, ANOVA grouping, PCA, Hotelling t2
//! - [`pipeline`]: CSV ingest, end-to-end run, artifact emission
//! - [`selfcheck`]: the built-in verification battery

pub mod error;
pub mod geometry;
pub mod matfun;
pub mod npf;
pub mod pipeline;
pub mod qmle;
pub mod selfcheck;
pub mod simulate;
pub mod yearstats;

pub use error::{Error, Result};
pub use npf::{ModelParams, ObservationSeries, StateEstimate};
pub use pipeline::PipelineConfig;
