//! Diffusion-model sandbox for compensation sampling.
//!
//! The crate is organised bottom-up:
//!
//! * [`schedule`] builds discrete variance-preserving noise schedules and the
//!   deterministic degradation `D(x, t) = g(t)·x + f(t)·z`.
//! * [`nn`] is a small multilayer perceptron with exact reverse-mode
//!   gradients, Adam and a binary checkpoint format.
//! * [`denoisers`] wraps trained networks and the analytic Gaussian posterior
//!   behind one ε-prediction interface, and hosts the compensation module.
//! * [`samplers`] contains the reverse step rules (DDPM, DDIM, Cold Diffusion,
//!   compensation sampling) and deviation tracing.
//! * [`training`] runs the joint denoiser / compensation-module loop.
//! * [`data`] and [`metrics`] provide toy distributions and distances.
//! * [`harness`] holds configs, manifests, experiment drivers and CSV/SVG
//!   writers used by the `compsamp` binary.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod denoisers;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod samplers;
pub mod schedule;
pub mod training;

pub use data::{Dataset, DatasetKind, DatasetSpec};
pub use denoisers::{CompensationHandle, DenoiserHandle};
pub use error::{Error, Result};
pub use metrics::MetricReport;
pub use nn::{Activation, AdamConfig, AdamState, Loss, MlpParams, TimeEmbedding};
pub use samplers::{Rule, SamplerParams, Trajectory};
pub use schedule::{NoisePattern, NoiseSchedule};
pub use training::{CompMagnitudeLog, TrainConfig};

/// Data matrices are row-major `n × d` arrays of `f64`.
pub type Matrix = ndarray::Array2<f64>;
