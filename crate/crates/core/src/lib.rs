//! Joint change point detection and segment-wise neural SDE modeling.
//!
//! Time series with distributional shifts are modeled as a sequence of
//! neural SDEs, one per segment, trained adversarially: the generator
//! integrates learned drift/diffusion networks over a fixed time grid,
//! and a neural-CDE discriminator scores whole paths. Change points are
//! estimated from sliding-window discriminator scores and refined in
//! alternation with the GAN parameters.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`], [`tape`], [`params`], [`nn`] — a small reverse-mode
//!   autodiff engine over dense `f64` arrays, sized for MLPs and
//!   differentiation through unrolled fixed-step solvers.
//! - [`sim`] — Brownian sampling, Stratonovich Heun integration, and the
//!   piecewise Ornstein–Uhlenbeck synthetic data generator.
//! - [`generator`], [`discriminator`] — the neural SDE generator and the
//!   neural CDE critic.
//! - [`training`] — WGAN optimization with weight clipping and the
//!   alternating change-point/parameter loop.
//! - [`changepoint`] — score-based change point estimation plus mean and
//!   MMD baselines.
//! - [`metrics`] — MMD, train-on-synthetic-test-on-real prediction, and
//!   real-vs-synthetic classification.
//! - [`config`], [`pipeline`] — experiment configuration and the CLI
//!   subcommand implementations.

pub mod changepoint;
pub mod config;
pub mod discriminator;
pub mod error;
pub mod generator;
pub mod kernel;
pub mod metrics;
pub mod nn;
pub mod params;
pub mod pipeline;
pub mod rng;
pub mod sim;
pub mod tape;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
