use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{evaluate, select_best_epoch, Metric, TaskType};
use super::{batch_gradients, epoch_order, scale_grads, tags, TrainConfig};
use crate::autograd::{Graph, NodeId};
use crate::checkpoint::{self, CheckpointMeta, Stage};
use crate::dataset::{label_names, DatasetSplit, Sample};
use crate::error::{Error, Result};
use crate::features::FeatureLayout;
use crate::model::{GeoGnn, ModelConfig, Precision};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

pub const BEST_CHECKPOINT_NAME: &str = "finetune_best.gem";
pub const REPORT_NAME: &str = "finetune_report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    /// Label names to predict; empty means every label found in train.
    pub tasks: Vec<String>,
    pub metric: Metric,
    /// Stop as soon as the train metric reaches this value.
    pub stop_at_train_metric: Option<f64>,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            tasks: Vec::new(),
            metric: Metric::Rmse,
            stop_at_train_metric: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_metric: f64,
    pub valid_metric: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneReport {
    pub metric: Metric,
    pub task_type: TaskType,
    pub tasks: Vec<String>,
    pub seed: u64,
    pub train_config: TrainConfig,
    pub model_config: ModelConfig,
    /// Split used for model selection: `valid`, or `train` when no
    /// validation molecules exist.
    pub selection_split: String,
    pub epochs: Vec<EpochRecord>,
    /// 1-based; 0 means the initial parameters were kept.
    pub best_epoch: usize,
    pub best_selection_metric: Option<f64>,
    pub test_metric: Option<f64>,
}

/// Chooses the label columns to train on.
///
/// A requested label that no molecule carries is an error. A label whose
/// values are all missing in train is dropped with a warning. For
/// classification every present value must be 0 or 1.
pub fn resolve_tasks(requested: &[String], data: &DatasetSplit, task_type: TaskType) -> Result<Vec<String>> {
    let all = data.train.iter().chain(&data.valid).chain(&data.test);
    let known = label_names(all);
    let names: Vec<String> = if requested.is_empty() {
        known.clone()
    } else {
        for r in requested {
            if !known.contains(r) {
                return Err(Error::Data(format!("no molecule carries label {r:?}")));
            }
        }
        requested.to_vec()
    };
    let mut kept = Vec::new();
    for name in names {
        let present = data
            .train
            .iter()
            .filter(|s| s.molecule.labels.get(&name).copied().flatten().is_some())
            .count();
        if present == 0 {
            log::warn!("label {name:?} is missing for every training molecule; task excluded");
            continue;
        }
        if task_type == TaskType::Classification {
            let samples = data.train.iter().chain(&data.valid).chain(&data.test);
            for s in samples {
                if let Some(Some(v)) = s.molecule.labels.get(&name) {
                    if *v != 0.0 && *v != 1.0 {
                        return Err(Error::Config(format!(
                            "classification metric requested but label {name:?} of {} is {v}, not 0 or 1",
                            s.id()
                        )));
                    }
                }
            }
        }
        kept.push(name);
    }
    if kept.is_empty() {
        return Err(Error::Data("no usable labels for finetuning".into()));
    }
    Ok(kept)
}

/// Model for downstream training. With `base`, the architecture comes
/// from `base` and every parameter except the downstream head is copied;
/// `config` then only supplies the task count, dropout and downstream
/// head width. Optimizer state starts fresh.
pub fn downstream_model(
    base: Option<&GeoGnn>,
    config: &ModelConfig,
    layout: &FeatureLayout,
    seed: u64,
    precision: Precision,
) -> Result<GeoGnn> {
    let Some(base) = base else {
        return GeoGnn::new(config.clone(), layout.clone(), seed, precision);
    };
    let diff = base.layout.diff(layout);
    if !diff.is_empty() {
        return Err(Error::LayoutMismatch(diff.join("\n")));
    }
    let cfg = ModelConfig {
        num_tasks: config.num_tasks,
        dropout: config.dropout,
        downstream_head_hidden: config.downstream_head_hidden,
        ..base.config.clone()
    };
    let mut model = GeoGnn::new(cfg, layout.clone(), seed, precision)?;
    let mut donor = base.params.clone();
    for p in donor.iter_mut() {
        if p.name.starts_with("head.downstream") {
            p.name.insert(0, '#');
        }
    }
    model.params.copy_matching(&donor, false);
    model.params.reset_moments();
    model.params.round_to_precision();
    Ok(model)
}

/// Eval-mode downstream outputs, one row per sample.
pub fn predict_all(model: &GeoGnn, samples: &[Sample]) -> Result<Vec<Vec<f64>>> {
    samples
        .par_iter()
        .map(|s| model.predict(&s.encoded, &s.graph))
        .collect()
}

/// Metric of `model` on `samples` for the given label columns.
pub fn score(model: &GeoGnn, samples: &[Sample], tasks: &[String], metric: Metric) -> Result<f64> {
    let preds = predict_all(model, samples)?;
    let labels: Vec<Vec<Option<f64>>> = samples.iter().map(|s| s.labels_for(tasks)).collect();
    evaluate(metric, &preds, &labels)
}

/// Summed per-label loss of one molecule and its number of present labels.
fn molecule_loss(
    g: &mut Graph,
    model: &GeoGnn,
    sample: &Sample,
    tasks: &[String],
    task_type: TaskType,
    rng: &mut SplitMix64,
) -> Result<(Option<NodeId>, (f64, usize))> {
    let labels = sample.labels_for(tasks);
    let count = labels.iter().filter(|l| l.is_some()).count();
    if count == 0 {
        return Ok((None, (0.0, 0)));
    }
    let y: Vec<f64> = labels.iter().map(|l| l.unwrap_or(0.0)).collect();
    let w: Vec<f64> = labels.iter().map(|l| if l.is_some() { 1.0 } else { 0.0 }).collect();
    let emb = model.forward(g, &sample.encoded, &sample.graph, true, rng)?;
    let pred = model.head_downstream(g, &emb)?;
    let loss = match task_type {
        TaskType::Regression => {
            let t = y.len();
            let yc = g.constant(Tensor::matrix(1, t, y)?)?;
            let wc = g.constant(Tensor::matrix(1, t, w)?)?;
            let d = g.sub(pred, yc)?;
            let d = g.mul(d, wc)?;
            let sq = g.mul(d, d)?;
            g.sum(sq)?
        }
        TaskType::Classification => {
            let mean = g.bce_with_logits(pred, &y, &w)?;
            g.scale(mean, count as f64)?
        }
    };
    let v = g.value(loss).item();
    Ok((Some(loss), (v, count)))
}

fn better(metric: Metric, a: f64, b: f64) -> bool {
    if metric.lower_is_better() {
        a < b
    } else {
        a > b
    }
}

/// Trains the downstream head and body on `data.train`, scores every epoch
/// on the selection split, and keeps the parameters of the best epoch in
/// `model`. The test metric is computed once, with those parameters.
///
/// Regression minimizes squared error and classification binary
/// cross-entropy, both averaged over present labels only.
pub fn finetune(
    model: &mut GeoGnn,
    data: &DatasetSplit,
    cfg: &TrainConfig,
    fcfg: &FinetuneConfig,
    tasks: &[String],
    out: Option<&Path>,
) -> Result<FinetuneReport> {
    cfg.validate()?;
    let task_type = fcfg.metric.task_type();
    if model.config.num_tasks != tasks.len() {
        return Err(Error::Config(format!(
            "model predicts {} tasks but {} labels were selected",
            model.config.num_tasks,
            tasks.len()
        )));
    }
    if data.train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let (selection, selection_split) = if data.valid.is_empty() {
        log::warn!("no validation molecules; selecting the epoch on the training split");
        (&data.train, "train")
    } else {
        (&data.valid, "valid")
    };
    let save_best = |model: &GeoGnn, epoch: usize| -> Result<()> {
        if let Some(dir) = out {
            let meta = CheckpointMeta {
                stage: Stage::Finetune,
                model: model.config.clone(),
                layout: model.layout.clone(),
                precision: model.params.precision,
                epoch,
                seed: cfg.seed,
                tasks: tasks.to_vec(),
                task_type: Some(task_type),
            };
            checkpoint::save(&dir.join(BEST_CHECKPOINT_NAME), &meta, model)?;
        }
        Ok(())
    };
    let numerical = |e: Error, epoch: usize| {
        if e.is_numerical() {
            log::error!("epoch {epoch}: {e}");
            Error::Diverged { epoch, last_good: None }
        } else {
            e
        }
    };

    let mut best_params = model.params.clone();
    let mut best_epoch = 0;
    let mut best_value: Option<f64> = None;
    let mut records = Vec::new();
    if cfg.epochs == 0 {
        best_value = score(model, selection, tasks, fcfg.metric).ok();
        save_best(model, 0)?;
    }

    for epoch in 1..=cfg.epochs {
        let order = epoch_order(data.train.len(), cfg.seed, epoch);
        let (mut loss_sum, mut loss_count) = (0.0, 0usize);
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<(&Sample, SplitMix64)> = chunk
                .iter()
                .enumerate()
                .map(|(j, &i)| {
                    let pos = (bi * cfg.batch_size + j) as u64;
                    (&data.train[i], SplitMix64::derive(cfg.seed, &[tags::FINETUNE, epoch as u64, pos]))
                })
                .collect();
            let (mut grads, parts) = batch_gradients(model, &batch, |g, m, s, rng| {
                molecule_loss(g, m, s, tasks, task_type, rng)
            })
            .map_err(|e| numerical(e, epoch))?;
            let count: usize = parts.iter().map(|p| p.1).sum();
            if count == 0 {
                continue;
            }
            loss_sum += parts.iter().map(|p| p.0).sum::<f64>();
            loss_count += count;
            scale_grads(&mut grads, 1.0 / count as f64);
            cfg.optimizer
                .step(&mut model.params, &grads)
                .map_err(|e| numerical(e, epoch))?;
            if !model.params.all_finite() {
                return Err(Error::Diverged { epoch, last_good: None });
            }
        }
        let train_loss = loss_sum / loss_count.max(1) as f64;
        if !train_loss.is_finite() {
            return Err(Error::Diverged { epoch, last_good: None });
        }
        let train_metric = score(model, &data.train, tasks, fcfg.metric).map_err(|e| numerical(e, epoch))?;
        let valid_metric = if data.valid.is_empty() {
            None
        } else {
            Some(score(model, &data.valid, tasks, fcfg.metric).map_err(|e| numerical(e, epoch))?)
        };
        let sel = valid_metric.unwrap_or(train_metric);
        log::info!(
            "finetune epoch {epoch}: loss {train_loss:.5} train {} {train_metric:.5} {selection_split} {sel:.5}",
            fcfg.metric.name()
        );
        records.push(EpochRecord {
            epoch,
            train_loss,
            train_metric,
            valid_metric,
        });
        if best_value.map_or(true, |b| better(fcfg.metric, sel, b)) {
            best_value = Some(sel);
            best_epoch = epoch;
            best_params = model.params.clone();
            save_best(model, epoch)?;
        }
        if let Some(stop) = fcfg.stop_at_train_metric {
            if !better(fcfg.metric, stop, train_metric) {
                break;
            }
        }
    }

    // cross-check with the generic selector
    let sel_series: Vec<f64> = records
        .iter()
        .map(|r| r.valid_metric.unwrap_or(r.train_metric))
        .collect();
    debug_assert_eq!(
        select_best_epoch(&sel_series, fcfg.metric).map(|i| i + 1),
        (best_epoch > 0).then_some(best_epoch)
    );

    model.params = best_params;
    let test_metric = if data.test.is_empty() {
        None
    } else {
        Some(score(model, &data.test, tasks, fcfg.metric)?)
    };
    let report = FinetuneReport {
        metric: fcfg.metric,
        task_type,
        tasks: tasks.to_vec(),
        seed: cfg.seed,
        train_config: cfg.clone(),
        model_config: model.config.clone(),
        selection_split: selection_split.to_string(),
        epochs: records,
        best_epoch,
        best_selection_metric: best_value,
        test_metric,
    };
    if let Some(dir) = out {
        let p = dir.join(REPORT_NAME);
        std::fs::write(&p, serde_json::to_string_pretty(&report)?).map_err(|e| Error::io(&p, e))?;
    }
    Ok(report)
}
