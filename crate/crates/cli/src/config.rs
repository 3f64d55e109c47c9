//! JSON run configuration. Every key is optional; command-line flags win
//! over the file, and the file wins over built-in defaults.

use std::path::Path;

use geognn_core::pretrain::Task;
use geognn_core::train::{AdamConfig, Metric, Optimizer, TrainConfig};
use geognn_core::{FeatureConfig, ModelConfig, PretrainConfig, Precision};
use serde::{Deserialize, Serialize};

use crate::failure::{CliResult, Failure};
use crate::Common;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub precision: Option<Precision>,
    pub threads: Option<usize>,
    pub strict: Option<bool>,
    pub features: Option<FeatureConfig>,
    /// Architecture of freshly initialised models.
    pub model: Option<ModelConfig>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr_body: Option<f64>,
    pub lr_head: Option<f64>,
    pub clip_norm: Option<f64>,
    /// Overrides the dropout of the model, fresh or loaded.
    pub dropout: Option<f64>,
    pub pretrain_tasks: Option<Vec<Task>>,
    pub mask_ratio: Option<f64>,
    pub fingerprint_weight: Option<f64>,
    pub distance_pair_limit: Option<usize>,
    /// Downstream label columns; empty or absent means all.
    pub labels: Option<Vec<String>>,
    pub metric: Option<Metric>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> CliResult<FileConfig> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::usage(format!("config {}: {e}", path.display())))
    }
}

/// Flags that override [`FileConfig`] keys.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct TrainFlags {
    /// Number of epochs (total, when resuming).
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Minibatch size in molecules.
    #[arg(long)]
    pub batch: Option<usize>,
    /// Learning rate of the GNN body.
    #[arg(long)]
    pub lr_body: Option<f64>,
    /// Learning rate of the prediction heads.
    #[arg(long)]
    pub lr_head: Option<f64>,
    /// Clip the global gradient norm to this value.
    #[arg(long)]
    pub clip_norm: Option<f64>,
    /// Dropout rate inside the GNN blocks.
    #[arg(long)]
    pub dropout: Option<f64>,
}

/// Resolved settings shared by every command.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settings {
    pub seed: u64,
    pub seed_given: bool,
    pub precision: Precision,
    pub precision_given: bool,
    pub strict: bool,
    pub features: FeatureConfig,
    pub model: ModelConfig,
    pub file: FileConfig,
}

impl Settings {
    pub fn resolve(common: &Common) -> CliResult<Settings> {
        let file = FileConfig::load(common.config.as_deref())?;
        let features = file.features.clone().unwrap_or_default();
        features.validate()?;
        let mut model = file.model.clone().unwrap_or_default();
        if let Some(d) = file.dropout {
            model.dropout = d;
        }
        let precision = match &common.precision {
            Some(p) => p.parse()?,
            None => file.precision.unwrap_or_default(),
        };
        Ok(Settings {
            seed: common.seed.or(file.seed).unwrap_or(0),
            seed_given: common.seed.is_some() || file.seed.is_some(),
            precision,
            precision_given: common.precision.is_some() || file.precision.is_some(),
            strict: common.strict || file.strict.unwrap_or(false),
            features,
            model,
            file,
        })
    }

    pub fn threads(common: &Common, file: &FileConfig) -> Option<usize> {
        common.threads.or(file.threads)
    }

    pub fn dropout(&self, flags: &TrainFlags) -> Option<f64> {
        flags.dropout.or(self.file.dropout)
    }

    pub fn train_config(&self, flags: &TrainFlags, epochs: usize, batch: usize) -> CliResult<TrainConfig> {
        let f = &self.file;
        let cfg = TrainConfig {
            epochs: flags.epochs.or(f.epochs).unwrap_or(epochs),
            batch_size: flags.batch.or(f.batch_size).unwrap_or(batch),
            seed: self.seed,
            optimizer: Optimizer {
                lr_body: flags.lr_body.or(f.lr_body).unwrap_or(1e-3),
                lr_head: flags.lr_head.or(f.lr_head).unwrap_or(1e-3),
                adam: AdamConfig::default(),
                clip_norm: flags.clip_norm.or(f.clip_norm),
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn pretrain_config(&self, tasks: Option<&str>, mask_ratio: Option<f64>) -> CliResult<PretrainConfig> {
        let f = &self.file;
        let defaults = PretrainConfig::default();
        let tasks = match tasks {
            Some(list) => list
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(str::parse)
                .collect::<Result<Vec<Task>, _>>()?,
            None => f.pretrain_tasks.clone().unwrap_or(defaults.tasks),
        };
        if tasks.is_empty() {
            return Err(Failure::usage("no pretraining tasks selected"));
        }
        let cfg = PretrainConfig {
            tasks,
            mask_ratio: mask_ratio.or(f.mask_ratio).unwrap_or(defaults.mask_ratio),
            fingerprint_weight: f.fingerprint_weight.unwrap_or(defaults.fingerprint_weight),
            distance_pair_limit: f.distance_pair_limit.or(defaults.distance_pair_limit),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn metric(&self, flag: Option<&str>) -> CliResult<Option<Metric>> {
        Ok(match flag {
            Some(m) => Some(m.parse()?),
            None => self.file.metric,
        })
    }

    pub fn labels(&self, flag: Option<&str>) -> Vec<String> {
        match flag {
            Some(list) => list
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect(),
            None => self.file.labels.clone().unwrap_or_default(),
        }
    }
}
