//! The GeoGNN network, its parameters and its prediction heads.

mod geognn;
mod layers;
mod params;

pub use geognn::{Embedding, GeoGnn};
pub use layers::{Linear, Mlp, SlotMlp};
pub use params::{Param, ParamGroup, ParamStore, Precision};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Number of stacked dual blocks.
    pub blocks: usize,
    pub hidden: usize,
    pub dropout: f64,
    /// Number of distance bins predicted by the distance head.
    pub distance_bins: usize,
    pub geometry_head_hidden: usize,
    pub downstream_head_hidden: usize,
    /// Width of the fingerprint head; 0 disables it.
    pub fingerprint_bits: usize,
    /// Outputs of the downstream head; 0 disables it.
    pub num_tasks: usize,
    /// Feed the freshly updated bond states into the atom update of the
    /// same block instead of the previous ones.
    pub sequential_update: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            blocks: 8,
            hidden: 32,
            dropout: 0.2,
            distance_bins: 30,
            geometry_head_hidden: 256,
            downstream_head_hidden: 128,
            fingerprint_bits: 0,
            num_tasks: 0,
            sequential_update: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.blocks < 1 {
            return bad("model needs at least one block".into());
        }
        if self.hidden < 1 {
            return bad("hidden width must be at least 1".into());
        }
        if self.distance_bins < 2 {
            return bad(format!("distance_bins must be at least 2, got {}", self.distance_bins));
        }
        if self.geometry_head_hidden < 1 || self.downstream_head_hidden < 1 {
            return bad("head widths must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}
