use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{batch_gradients, epoch_order, scale_grads, tags, TrainConfig};
use crate::autograd::Graph;
use crate::checkpoint::{self, CheckpointMeta, Stage};
use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::model::GeoGnn;
use crate::pretrain::{molecule_loss, LossComponents, PretrainConfig};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainEpoch {
    /// 1-based.
    pub epoch: usize,
    /// Mean per-molecule losses over the epoch's training steps.
    pub train: LossComponents,
    /// Eval-mode losses on the held-out molecules, with fixed masks.
    pub eval: Option<LossComponents>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PretrainLog {
    pub epochs: Vec<PretrainEpoch>,
}

pub const CHECKPOINT_NAME: &str = "pretrain.gem";
pub const LOG_NAME: &str = "pretrain_log.json";

fn eval_losses(model: &GeoGnn, eval: &[Sample], pcfg: &PretrainConfig, seed: u64) -> Result<LossComponents> {
    let comps: Result<Vec<LossComponents>> = eval
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = SplitMix64::derive(seed, &[tags::PRETRAIN_EVAL, i as u64]);
            let mut g = Graph::new();
            Ok(molecule_loss(&mut g, model, s, pcfg, false, &mut rng)?.1)
        })
        .collect();
    Ok(LossComponents::mean(&comps?))
}

/// Runs pretraining epochs `start_epoch + 1 ..= cfg.epochs`, continuing
/// from whatever state `model` holds. With `out`, the checkpoint and the
/// loss log are rewritten after every epoch.
///
/// A non-finite loss or gradient stops the run with [`Error::Diverged`];
/// the checkpoint on disk is then the last good one.
pub fn pretrain(
    model: &mut GeoGnn,
    train: &[Sample],
    eval: &[Sample],
    cfg: &TrainConfig,
    pcfg: &PretrainConfig,
    start_epoch: usize,
    out: Option<&Path>,
) -> Result<PretrainLog> {
    cfg.validate()?;
    pcfg.validate()?;
    if train.is_empty() && cfg.epochs > start_epoch {
        return Err(Error::Data("pretraining corpus is empty".into()));
    }
    let ck_path: Option<PathBuf> = out.map(|d| d.join(CHECKPOINT_NAME));
    let mut last_good: Option<PathBuf> = ck_path.clone().filter(|p| start_epoch > 0 && p.exists());
    let mut log = PretrainLog::default();
    if let (Some(dir), true) = (out, start_epoch > 0) {
        // keep the earlier epochs of a resumed run
        if let Ok(text) = std::fs::read_to_string(dir.join(LOG_NAME)) {
            if let Ok(mut prev) = serde_json::from_str::<PretrainLog>(&text) {
                prev.epochs.retain(|e| e.epoch <= start_epoch);
                log = prev;
            }
        }
    }

    let meta = |epoch: usize, model: &GeoGnn| CheckpointMeta {
        stage: Stage::Pretrain,
        model: model.config.clone(),
        layout: model.layout.clone(),
        precision: model.params.precision,
        epoch,
        seed: cfg.seed,
        tasks: Vec::new(),
        task_type: None,
    };
    if let Some(p) = &ck_path {
        if cfg.epochs == start_epoch {
            checkpoint::save(p, &meta(start_epoch, model), model)?;
        }
    }

    for epoch in start_epoch + 1..=cfg.epochs {
        let order = epoch_order(train.len(), cfg.seed, epoch);
        let mut comps = Vec::with_capacity(train.len());
        let diverged = |last_good: &Option<PathBuf>| Error::Diverged {
            epoch,
            last_good: last_good.clone(),
        };
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<(&Sample, SplitMix64)> = chunk
                .iter()
                .enumerate()
                .map(|(j, &i)| {
                    let pos = (bi * cfg.batch_size + j) as u64;
                    (&train[i], SplitMix64::derive(cfg.seed, &[tags::PRETRAIN, epoch as u64, pos]))
                })
                .collect();
            let step = batch_gradients(model, &batch, |g, m, s, rng| {
                let (l, c) = molecule_loss(g, m, s, pcfg, true, rng)?;
                Ok((Some(l), c))
            });
            let (mut grads, batch_comps) = match step {
                Ok(x) => x,
                Err(e) if e.is_numerical() => {
                    log::error!("epoch {epoch}: {e}");
                    return Err(diverged(&last_good));
                }
                Err(e) => return Err(e),
            };
            if batch_comps.iter().any(|c: &LossComponents| !c.is_finite()) {
                return Err(diverged(&last_good));
            }
            scale_grads(&mut grads, 1.0 / batch.len() as f64);
            match cfg.optimizer.step(&mut model.params, &grads) {
                Ok(()) => {}
                Err(e) if e.is_numerical() => return Err(diverged(&last_good)),
                Err(e) => return Err(e),
            }
            if !model.params.all_finite() {
                return Err(diverged(&last_good));
            }
            comps.extend(batch_comps);
        }

        let train_mean = LossComponents::mean(&comps);
        let eval_mean = if eval.is_empty() {
            None
        } else {
            Some(eval_losses(model, eval, pcfg, cfg.seed).map_err(|e| {
                if e.is_numerical() {
                    diverged(&last_good)
                } else {
                    e
                }
            })?)
        };
        log::info!(
            "pretrain epoch {epoch}: total {:.5} length {:.5} angle {:.5} distance {:.5} fingerprint {:.5}",
            train_mean.total,
            train_mean.length,
            train_mean.angle,
            train_mean.distance,
            train_mean.fingerprint
        );
        log.epochs.push(PretrainEpoch {
            epoch,
            train: train_mean,
            eval: eval_mean,
        });
        if let (Some(p), Some(dir)) = (&ck_path, out) {
            checkpoint::save(p, &meta(epoch, model), model)?;
            last_good = Some(p.clone());
            let json = serde_json::to_string_pretty(&log)?;
            let lp = dir.join(LOG_NAME);
            std::fs::write(&lp, json).map_err(|e| Error::io(&lp, e))?;
        }
    }
    Ok(log)
}
