//! Versioned, self-describing checkpoint files.
//!
//! A checkpoint is JSON text: format version, `(M, S)`, the training
//! configuration, final iteration and losses, and one weight record per
//! layer with explicit shape descriptors and nested row-major decimal
//! arrays (logical `out_dim x in_dim` orientation). Serialization uses
//! shortest-round-trip decimal rendering, so save -> load -> save is
//! byte-identical and reloaded parameters are bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::losses::LossReport;
use crate::mat::Mat;
use crate::networks::ModelBundle;
use crate::neural::{Activation, DenseLayer};
use crate::training::TrainConfig;
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerState {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub has_bias: bool,
    /// `out_dim` rows of `in_dim` entries.
    pub weights: Vec<Vec<f64>>,
    pub bias: Option<Vec<f64>>,
}

impl LayerState {
    fn from_layer(layer: &DenseLayer) -> Self {
        let wt = layer.weights_t();
        let mut weights = vec![vec![0.0; layer.in_dim()]; layer.out_dim()];
        for i in 0..layer.in_dim() {
            for (o, row) in weights.iter_mut().enumerate() {
                row[i] = wt.get(i, o);
            }
        }
        LayerState {
            in_dim: layer.in_dim(),
            out_dim: layer.out_dim(),
            activation: layer.activation(),
            has_bias: layer.bias().is_some(),
            weights,
            bias: layer.bias().map(|b| b.to_vec()),
        }
    }

    fn to_layer(&self) -> Result<DenseLayer> {
        if self.weights.len() != self.out_dim {
            return Err(Error::CheckpointFormat(format!(
                "layer declares {} output rows but stores {}",
                self.out_dim,
                self.weights.len()
            )));
        }
        let mut wt = Mat::zeros(self.in_dim, self.out_dim);
        for (o, row) in self.weights.iter().enumerate() {
            if row.len() != self.in_dim {
                return Err(Error::CheckpointFormat(format!(
                    "layer declares {} input columns but row {} stores {}",
                    self.in_dim,
                    o,
                    row.len()
                )));
            }
            for (i, &v) in row.iter().enumerate() {
                wt.set(i, o, v);
            }
        }
        if self.has_bias != self.bias.is_some() {
            return Err(Error::CheckpointFormat(
                "bias flag disagrees with stored bias".into(),
            ));
        }
        if let Some(b) = &self.bias {
            if b.len() != self.out_dim {
                return Err(Error::CheckpointFormat(format!(
                    "bias length {} does not match {} outputs",
                    b.len(),
                    self.out_dim
                )));
            }
        }
        DenseLayer::from_parts(wt, self.bias.clone(), self.activation)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkState {
    pub layers: Vec<LayerState>,
}

impl NetworkState {
    fn from_layers<'a>(layers: impl IntoIterator<Item = &'a DenseLayer>) -> Self {
        NetworkState {
            layers: layers.into_iter().map(LayerState::from_layer).collect(),
        }
    }

    fn to_layers(&self) -> Result<Vec<DenseLayer>> {
        self.layers.iter().map(|l| l.to_layer()).collect()
    }
}

/// Serialized parameters of all four networks plus training metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub num_patterns: usize,
    pub num_features: usize,
    pub config: TrainConfig,
    pub iteration: u64,
    pub converged: bool,
    pub final_losses: LossReport,
    pub f: NetworkState,
    pub d: NetworkState,
    pub g1: NetworkState,
    pub g2: NetworkState,
}

impl Checkpoint {
    pub fn from_bundle(
        bundle: &ModelBundle,
        config: TrainConfig,
        iteration: u64,
        converged: bool,
        final_losses: LossReport,
    ) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            num_patterns: bundle.num_patterns(),
            num_features: bundle.num_features(),
            config,
            iteration,
            converged,
            final_losses,
            f: NetworkState::from_layers(bundle.f.layers()),
            d: NetworkState::from_layers(bundle.d.layers()),
            g1: NetworkState::from_layers([&bundle.g1.layer]),
            g2: NetworkState::from_layers(bundle.g2.layers()),
        }
    }

    /// Rebuild the four networks; validates wiring against `(M, S)`.
    pub fn bundle(&self) -> Result<ModelBundle> {
        let bundle = ModelBundle::from_layers(
            self.f.to_layers()?,
            self.d.to_layers()?,
            self.g1.to_layers()?,
            self.g2.to_layers()?,
        )?;
        if bundle.num_patterns() != self.num_patterns
            || bundle.num_features() != self.num_features
        {
            return Err(Error::CheckpointFormat(format!(
                "layer shapes imply (M={}, S={}) but header declares (M={}, S={})",
                bundle.num_patterns(),
                bundle.num_features(),
                self.num_patterns,
                self.num_features
            )));
        }
        Ok(bundle)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::CheckpointFormat(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        // Peek at the version before strict decoding, so version skew is
        // reported as such rather than as a parse error.
        #[derive(Deserialize)]
        struct Header {
            format_version: u32,
        }
        let header: Header = serde_json::from_str(&text)
            .map_err(|e| Error::CheckpointFormat(format!("{}: {e}", path.display())))?;
        if header.format_version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                found: header.format_version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let ckpt: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::CheckpointFormat(format!("{}: {e}", path.display())))?;
        ckpt.bundle()?; // shape validation
        Ok(ckpt)
    }
}
