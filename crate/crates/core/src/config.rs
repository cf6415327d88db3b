//! Experiment configuration: one TOML document describing the data
//! source, model dimensions, training hyperparameters, and metric
//! settings. Every field has a default; the built-in default experiment
//! is the three-change synthetic benchmark.

use crate::discriminator::DiscDims;
use crate::error::{Error, Result};
use crate::generator::GenDims;
use crate::sim::{OuSegment, OuSpec, TimeGrid};
use crate::training::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub metrics: MetricsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            out_dir: PathBuf::from("out"),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

/// Exactly one data source: a synthetic OU specification or a CSV file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    Synthetic(SyntheticConfig),
    Csv(CsvConfig),
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Synthetic(SyntheticConfig::default())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    pub t0: f64,
    pub dt: f64,
    pub x0: f64,
    pub change_points: Vec<usize>,
    pub segments: Vec<OuSegment>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        let spec = OuSpec::three_change_benchmark();
        SyntheticConfig {
            n_paths: 128,
            n_steps: 128,
            t0: 0.0,
            dt: 1.0,
            x0: 0.0,
            change_points: spec.change_points,
            segments: spec.segments,
        }
    }
}

impl SyntheticConfig {
    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.t0, self.dt, self.n_steps)
    }

    pub fn ou_spec(&self) -> OuSpec {
        OuSpec {
            change_points: self.change_points.clone(),
            segments: self.segments.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvConfig {
    pub path: PathBuf,
}

/// Network dimensions; the data channel count comes from the data itself.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub v_dim: usize,
    pub x_dim: usize,
    pub w_dim: usize,
    pub gen_hidden: usize,
    pub h_dim: usize,
    pub disc_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            v_dim: 4,
            x_dim: 4,
            w_dim: 4,
            gen_hidden: 32,
            h_dim: 32,
            disc_hidden: 32,
        }
    }
}

impl ModelConfig {
    pub fn gen_dims(&self, y_dim: usize) -> GenDims {
        GenDims {
            v_dim: self.v_dim,
            x_dim: self.x_dim,
            w_dim: self.w_dim,
            y_dim,
            hidden: self.gen_hidden,
        }
    }

    pub fn disc_dims(&self, y_dim: usize) -> DiscDims {
        DiscDims {
            y_dim,
            h_dim: self.h_dim,
            hidden: self.disc_hidden,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Metrics are reported per seed; the summary aggregates over them.
    pub n_seeds: u64,
    /// Training epochs for the prediction and classification metrics.
    pub epochs: usize,
    /// Generated sample count per seed (0 = match the data batch).
    pub n_samples: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            n_seeds: 3,
            epochs: 40,
            n_samples: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if let DataConfig::Synthetic(s) = &self.data {
            let grid = s.grid()?;
            s.ou_spec().validate(&grid)?;
            if s.n_paths == 0 {
                return Err(Error::Config("n_paths must be positive".into()));
            }
        }
        if self.metrics.n_seeds == 0 {
            return Err(Error::Config("metrics.n_seeds must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
