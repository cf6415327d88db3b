//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes incompatible with the requested operation.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// An operation was called outside its contract (e.g. non-scalar
    /// backward root, missing initial state).
    #[error("contract error: {0}")]
    Contract(String),

    /// A simulated state became non-finite.
    #[error("simulation diverged at step {step}")]
    SimulationDiverged { step: usize },

    /// Non-finite gradient or loss during optimization.
    #[error("training error: non-finite value in '{what}'")]
    Training { what: String },

    /// Per-channel standardization is undefined for constant channels.
    #[error("normalization error: channel {channel} has zero variance")]
    ZeroVariance { channel: usize },

    /// Sliding-window length outside `2..=n_steps`.
    #[error("window error: w={w} invalid for {n_steps} steps")]
    Window { w: usize, n_steps: usize },

    /// Score sequence too short for change detection.
    #[error("detection error: {0}")]
    Detection(String),

    /// MMD estimators need at least two samples per batch.
    #[error("estimator error: {0}")]
    Estimator(String),

    /// Invalid experiment or training configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed on-disk artifact (CSV, checkpoint, truth file).
    #[error("format error in {path}: {reason}")]
    Format { path: String, reason: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 1 config, 2 I/O or artifact,
    /// 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Contract(_) | Error::Dimension(_) | Error::Window { .. } => 1,
            Error::Io(_) | Error::Format { .. } => 2,
            Error::SimulationDiverged { .. }
            | Error::Training { .. }
            | Error::ZeroVariance { .. }
            | Error::Detection(_)
            | Error::Estimator(_) => 3,
        }
    }
}
