//! Optimizer, metrics and the pretraining / finetuning loops.

mod adam;
mod finetune;
mod metrics;
mod pretrain;

pub use adam::{adam_step, AdamConfig, Optimizer};
pub use finetune::{
    downstream_model, finetune, predict_all, resolve_tasks, score, EpochRecord, FinetuneConfig, FinetuneReport,
};
pub use metrics::{evaluate, mae, rmse, rocauc, rocauc_pairs, select_best_epoch, Metric, TaskType};
pub use pretrain::{pretrain, PretrainEpoch, PretrainLog};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, NodeId};
use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::model::GeoGnn;
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

/// Stream tags for [`SplitMix64::derive`].
pub(crate) mod tags {
    pub const SHUFFLE: u64 = 10;
    pub const PRETRAIN: u64 = 11;
    pub const PRETRAIN_EVAL: u64 = 12;
    pub const FINETUNE: u64 = 13;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            seed: 0,
            optimizer: Optimizer::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        let o = &self.optimizer;
        for (name, lr) in [("body", o.lr_body), ("head", o.lr_head)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{name} learning rate must be positive, got {lr}")));
            }
        }
        if let Some(c) = o.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config(format!("clip norm must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// Per-molecule losses and summed parameter gradients for one batch.
///
/// Molecules run in parallel; gradients are reduced in batch order so the
/// result does not depend on scheduling.
pub(crate) fn batch_gradients<T, F>(
    model: &GeoGnn,
    batch: &[(&Sample, SplitMix64)],
    loss_fn: F,
) -> Result<(Vec<Option<Tensor>>, Vec<T>)>
where
    T: Send,
    F: Fn(&mut Graph, &GeoGnn, &Sample, &mut SplitMix64) -> Result<(Option<NodeId>, T)> + Sync,
{
    type One<T> = (Vec<(usize, Tensor)>, T);
    let results: Vec<Result<One<T>>> = batch
        .par_iter()
        .map(|(s, rng)| {
            let mut rng = rng.clone();
            let mut g = Graph::new();
            let (loss, extra) = loss_fn(&mut g, model, s, &mut rng)?;
            let mut grads = Vec::new();
            if let Some(loss) = loss {
                let gr = g.backward(loss)?;
                for (idx, t) in gr.params() {
                    if let Some(t) = t {
                        grads.push((idx, t.clone()));
                    }
                }
            }
            Ok((grads, extra))
        })
        .collect();

    let mut total: Vec<Option<Tensor>> = vec![None; model.params.len()];
    let mut extras = Vec::with_capacity(batch.len());
    for r in results {
        let (grads, extra) = r?;
        for (idx, t) in grads {
            match &mut total[idx] {
                Some(acc) => acc.data_mut().iter_mut().zip(t.data()).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(t),
            }
        }
        extras.push(extra);
    }
    Ok((total, extras))
}

pub(crate) fn scale_grads(grads: &mut [Option<Tensor>], c: f64) {
    for t in grads.iter_mut().flatten() {
        t.data_mut().iter_mut().for_each(|x| *x *= c);
    }
}

/// Index order for one epoch.
pub(crate) fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    SplitMix64::derive(seed, &[tags::SHUFFLE, epoch as u64]).shuffle(&mut order);
    order
}
