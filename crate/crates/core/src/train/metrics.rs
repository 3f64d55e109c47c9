use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskType {
    Regression,
    Classification,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Rmse,
    Mae,
    Rocauc,
}

impl Metric {
    pub fn task_type(self) -> TaskType {
        match self {
            Metric::Rmse | Metric::Mae => TaskType::Regression,
            Metric::Rocauc => TaskType::Classification,
        }
    }

    pub fn lower_is_better(self) -> bool {
        self != Metric::Rocauc
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Rmse => "rmse",
            Metric::Mae => "mae",
            Metric::Rocauc => "rocauc",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rmse" => Ok(Metric::Rmse),
            "mae" => Ok(Metric::Mae),
            "rocauc" => Ok(Metric::Rocauc),
            _ => Err(Error::Config(format!("metric must be rmse, mae or rocauc, got {s:?}"))),
        }
    }
}

fn present(preds: &[f64], targets: &[Option<f64>]) -> Result<Vec<(f64, f64)>> {
    if preds.len() != targets.len() {
        return Err(Error::shape("metric", format!("{} predictions, {} targets", preds.len(), targets.len())));
    }
    let pairs: Vec<(f64, f64)> = preds
        .iter()
        .zip(targets)
        .filter_map(|(&p, t)| t.map(|t| (p, t)))
        .collect();
    if pairs.is_empty() {
        return Err(Error::Data("no labelled examples to score".into()));
    }
    Ok(pairs)
}

pub fn rmse(preds: &[f64], targets: &[Option<f64>]) -> Result<f64> {
    let p = present(preds, targets)?;
    Ok((p.iter().map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64).sqrt())
}

pub fn mae(preds: &[f64], targets: &[Option<f64>]) -> Result<f64> {
    let p = present(preds, targets)?;
    Ok(p.iter().map(|(a, b)| (a - b).abs()).sum::<f64>() / p.len() as f64)
}

/// Area under the ROC curve via the rank-sum statistic with average ranks
/// for ties: `P(score_pos > score_neg) + P(tie) / 2`. Labels are `0` or `1`;
/// `None` entries are skipped. Fails when only one class is present.
pub fn rocauc(scores: &[f64], labels: &[Option<f64>]) -> Result<f64> {
    let p = present(scores, labels)?;
    let mut items: Vec<(f64, bool)> = Vec::with_capacity(p.len());
    for (s, y) in p {
        let pos = if y == 1.0 {
            true
        } else if y == 0.0 {
            false
        } else {
            return Err(Error::Data(format!("classification label {y} is not 0 or 1")));
        };
        items.push((s, pos));
    }
    let n_pos = items.iter().filter(|x| x.1).count();
    let n_neg = items.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Data("ROC-AUC needs both classes".into()));
    }
    items.sort_by(|a, b| a.0.total_cmp(&b.0));
    // twice the rank sum of positives keeps every quantity an integer
    let mut twice_rank_sum: u64 = 0;
    let mut i = 0;
    while i < items.len() {
        let mut j = i;
        while j + 1 < items.len() && items[j + 1].0 == items[i].0 {
            j += 1;
        }
        // ranks i+1..=j+1 averaged, doubled
        let twice_avg = (i + 1 + j + 1) as u64;
        let pos_in_group = items[i..=j].iter().filter(|x| x.1).count() as u64;
        twice_rank_sum += twice_avg * pos_in_group;
        i = j + 1;
    }
    let np = n_pos as u64;
    let twice_u = twice_rank_sum - np * (np + 1);
    Ok(twice_u as f64 / (2.0 * (n_pos * n_neg) as f64))
}

/// Direct O(n^2) pair counting; reference for [`rocauc`].
pub fn rocauc_pairs(scores: &[f64], labels: &[bool]) -> f64 {
    let mut twice_wins = 0u64;
    let (mut np, mut nn) = (0u64, 0u64);
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            nn += 1;
            continue;
        }
        np += 1;
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            if scores[i] > scores[j] {
                twice_wins += 2;
            } else if scores[i] == scores[j] {
                twice_wins += 1;
            }
        }
    }
    twice_wins as f64 / (2.0 * (np * nn) as f64)
}

/// Mean of the per-task metric. `preds[i][t]` and `labels[i][t]` are
/// sample `i`, task `t`. Tasks that cannot be scored (no labels, or one
/// class for ROC-AUC) are skipped with a warning; if none remain this is
/// an error.
pub fn evaluate(metric: Metric, preds: &[Vec<f64>], labels: &[Vec<Option<f64>>]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::shape("evaluate", format!("{} rows of predictions, {} of labels", preds.len(), labels.len())));
    }
    let tasks = labels.first().map_or(0, Vec::len);
    let mut scores = Vec::with_capacity(tasks);
    for t in 0..tasks {
        let p: Vec<f64> = preds.iter().map(|r| r[t]).collect();
        let y: Vec<Option<f64>> = labels.iter().map(|r| r[t]).collect();
        let r = match metric {
            Metric::Rmse => rmse(&p, &y),
            Metric::Mae => mae(&p, &y),
            Metric::Rocauc => rocauc(&p, &y),
        };
        match r {
            Ok(v) => scores.push(v),
            Err(Error::Data(msg)) if !msg.contains("not 0 or 1") => {
                log::warn!("task {t} skipped for {}: {msg}", metric.name());
            }
            Err(e) => return Err(e),
        }
    }
    if scores.is_empty() {
        return Err(Error::Data(format!("no task could be scored with {}", metric.name())));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// 0-based index of the best value; ties go to the earliest.
pub fn select_best_epoch(values: &[f64], metric: Metric) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        let better = match best {
            None => true,
            Some(b) if metric.lower_is_better() => v < values[b],
            Some(b) => v > values[b],
        };
        if better {
            best = Some(i);
        }
    }
    best
}
