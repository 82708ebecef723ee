//! Run configuration: a TOML document with nested sections, every field
//! optional and defaulting to the published constants, unknown keys
//! rejected.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use rindex_core::losses::LossWeights;
use rindex_core::networks::NetArch;
use rindex_core::training::TrainConfig;

use crate::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub cohort: Option<PathBuf>,
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub num_patterns: usize,
    pub hidden1: usize,
    pub hidden2: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let arch = NetArch::default();
        ModelSection {
            num_patterns: 3,
            hidden1: arch.hidden1,
            hidden2: arch.hidden2,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub lambda: f64,
    pub gamma: f64,
    pub kappa: f64,
    pub zeta: f64,
    pub mu: f64,
    pub eta: f64,
    pub lr_d: f64,
    pub lr_fg: f64,
    pub clip_bound: f64,
    pub batch_fraction: f64,
    pub min_iterations: u64,
    pub max_iterations: u64,
    pub recons_stop: f64,
    pub mono_stop: f64,
    pub ema_decay: f64,
    pub log_interval: u64,
    pub seed: u64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        let w = t.weights;
        TrainingSection {
            lambda: w.lambda,
            gamma: w.gamma,
            kappa: w.kappa,
            zeta: w.zeta,
            mu: w.mu,
            eta: w.eta,
            lr_d: t.lr_d,
            lr_fg: t.lr_fg,
            clip_bound: t.clip_bound,
            batch_fraction: t.batch_fraction,
            min_iterations: t.min_iterations,
            max_iterations: t.max_iterations,
            recons_stop: t.recons_stop,
            mono_stop: t.mono_stop,
            ema_decay: t.ema_decay,
            log_interval: t.log_interval,
            seed: t.seed,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub lambda_grid: Vec<f64>,
    pub m_grid: Vec<usize>,
    pub replicas: usize,
    /// 0 means one worker per available core.
    pub workers: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            lambda_grid: vec![0.1, 0.2, 0.4, 0.6, 0.8],
            m_grid: vec![2, 3, 4],
            replicas: 10,
            workers: 0,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::argument(format!("{}: {e}", path.display())))
    }

    /// The training configuration this run document describes.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            num_patterns: self.model.num_patterns,
            weights: LossWeights {
                gamma: self.training.gamma,
                kappa: self.training.kappa,
                zeta: self.training.zeta,
                lambda: self.training.lambda,
                mu: self.training.mu,
                eta: self.training.eta,
            },
            lr_d: self.training.lr_d,
            lr_fg: self.training.lr_fg,
            clip_bound: self.training.clip_bound,
            batch_fraction: self.training.batch_fraction,
            min_iterations: self.training.min_iterations,
            max_iterations: self.training.max_iterations,
            recons_stop: self.training.recons_stop,
            mono_stop: self.training.mono_stop,
            ema_decay: self.training.ema_decay,
            seed: self.training.seed,
            log_interval: self.training.log_interval,
            arch: NetArch {
                hidden1: self.model.hidden1,
                hidden2: self.model.hidden2,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_document_gets_published_defaults() {
        let cfg: RunConfig = toml::from_str("[data]\ncohort = \"c.csv\"\n").unwrap();
        let t = cfg.train_config();
        assert_eq!(t.lr_d, 4e-5);
        assert_eq!(t.lr_fg, 2e-4);
        assert_eq!(t.weights.gamma, 6.0);
        assert_eq!(t.weights.kappa, 80.0);
        assert_eq!(t.weights.zeta, 80.0);
        assert_eq!(t.weights.mu, 500.0);
        assert_eq!(t.weights.eta, 6.0);
        assert_eq!(t.min_iterations, 100_000);
        assert_eq!(t.clip_bound, 0.5);
        assert_eq!(cfg.sweep.lambda_grid, vec![0.1, 0.2, 0.4, 0.6, 0.8]);
        assert_eq!(cfg.sweep.m_grid, vec![2, 3, 4]);
        assert_eq!(cfg.sweep.replicas, 10);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<RunConfig>("[training]\nlearning_rate = 1.0\n").unwrap_err();
        assert!(err.to_string().contains("learning_rate"));
        assert!(toml::from_str::<RunConfig>("[mystery]\n").is_err());
    }
}
