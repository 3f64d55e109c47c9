use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use geognn_core::checkpoint::{self, Checkpoint, Stage};
use geognn_core::mol::Split;
use geognn_core::pretrain::Task;
use geognn_core::train::{self, FinetuneConfig, Metric, TaskType};
use geognn_core::{synth as gen, DatasetSplit, GeoGnn, Sample};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::{Settings, TrainFlags};
use crate::failure::{io_error, CliResult, Failure};
use crate::input::{self, Rejected};
use crate::Common;

const PRETRAIN_EPOCHS: usize = 50;
const PRETRAIN_BATCH: usize = 8;
const FINETUNE_EPOCHS: usize = 100;
const FINETUNE_BATCH: usize = 32;

fn out_dir(common: &Common) -> CliResult<&Path> {
    let dir = common.out.as_deref().ok_or_else(|| Failure::usage("--out is required"))?;
    std::fs::create_dir_all(dir).map_err(|e| Failure::usage(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| io_error(path, e))
}

fn load_checkpoint(path: &Path, settings: &Settings) -> CliResult<Checkpoint> {
    if !path.is_file() {
        return Err(Failure::usage(format!("checkpoint {} does not exist", path.display())));
    }
    let ck = checkpoint::load(path)?;
    checkpoint::check_layout(&ck.meta, &settings.features.layout())?;
    Ok(ck)
}

fn load_samples(common: &Common, settings: &Settings) -> CliResult<Vec<Sample>> {
    let loaded = input::load(&common.input, &settings.features, settings.strict)?;
    if !loaded.rejected.is_empty() {
        log::warn!("skipped {} unreadable records", loaded.rejected.len());
    }
    Ok(loaded.samples)
}

#[derive(Serialize, Default)]
struct Counts {
    total: usize,
    min: Option<usize>,
    max: Option<usize>,
    /// Count per molecule size.
    histogram: BTreeMap<usize, usize>,
}

impl Counts {
    fn add(&mut self, n: usize) {
        self.total += n;
        self.min = Some(self.min.map_or(n, |m| m.min(n)));
        self.max = Some(self.max.map_or(n, |m| m.max(n)));
        *self.histogram.entry(n).or_default() += 1;
    }
}

#[derive(Serialize)]
struct Summary<'a> {
    molecules: usize,
    atoms: usize,
    bonds: usize,
    angles: usize,
    atom_counts: Counts,
    bond_counts: Counts,
    angle_counts: Counts,
    widths: BTreeMap<&'static str, usize>,
    rejected: &'a [Rejected],
}

pub fn featurize(common: &Common, settings: &Settings) -> CliResult<()> {
    let out = out_dir(common)?;
    let loaded = input::load(&common.input, &settings.features, settings.strict)?;
    let layout = settings.features.layout();

    let mut lines = String::new();
    let (mut atoms, mut bonds, mut angles) = (Counts::default(), Counts::default(), Counts::default());
    for s in &loaded.samples {
        let g = &s.graph;
        atoms.add(g.num_atoms);
        bonds.add(g.num_bonds());
        angles.add(g.num_angles());
        let rows = |t: &geognn_core::Tensor| (0..t.rows()).map(|r| t.row(r).to_vec()).collect::<Vec<_>>();
        let record = json!({
            "id": s.id(),
            "num_atoms": g.num_atoms,
            "bonds": g.bonds,
            "angles": g.angles.iter().map(|a| [a.ends[0], a.center, a.ends[1]]).collect::<Vec<_>>(),
            "atom_features": rows(&s.encoded.atom),
            "bond_features": rows(&s.encoded.bond),
            "angle_features": rows(&s.encoded.angle),
        });
        lines.push_str(&serde_json::to_string(&record)?);
        lines.push('\n');
    }
    let path = out.join("encoded.jsonl");
    std::fs::write(&path, lines).map_err(|e| io_error(&path, e))?;
    write_json(&out.join("layout.json"), &layout)?;
    let summary = Summary {
        molecules: loaded.samples.len(),
        atoms: atoms.total,
        bonds: bonds.total,
        angles: angles.total,
        atom_counts: atoms,
        bond_counts: bonds,
        angle_counts: angles,
        widths: BTreeMap::from([
            ("atom", layout.atom_width()),
            ("bond", layout.bond_width()),
            ("angle", layout.angle_width()),
        ]),
        rejected: &loaded.rejected,
    };
    write_json(&out.join("summary.json"), &summary)?;
    println!(
        "featurized {} molecules ({} atoms, {} bonds, {} angles); {} rejected",
        summary.molecules,
        summary.atoms,
        summary.bonds,
        summary.angles,
        summary.rejected.len()
    );
    Ok(())
}

/// Fingerprint width shared by every molecule that has one.
fn fingerprint_width(samples: &[Sample]) -> CliResult<usize> {
    let mut width = None;
    for s in samples {
        if let Some(bits) = &s.molecule.fingerprint {
            match width {
                None => width = Some(bits.len()),
                Some(w) if w != bits.len() => {
                    return Err(Failure::data(format!(
                        "{}: fingerprint has {} bits, earlier molecules have {w}",
                        s.id(),
                        bits.len()
                    )))
                }
                _ => {}
            }
        }
    }
    Ok(width.unwrap_or(0))
}

pub fn pretrain(
    common: &Common,
    settings: &Settings,
    flags: &TrainFlags,
    tasks: Option<&str>,
    mask_ratio: Option<f64>,
    resume: Option<&Path>,
) -> CliResult<()> {
    let out = out_dir(common)?;
    let pcfg = settings.pretrain_config(tasks, mask_ratio)?;
    let mut cfg = settings.train_config(flags, PRETRAIN_EPOCHS, PRETRAIN_BATCH)?;
    let samples = load_samples(common, settings)?;
    let (train, eval): (Vec<Sample>, Vec<Sample>) = samples
        .into_iter()
        .partition(|s| matches!(s.molecule.split, None | Some(Split::Train)));

    let (mut model, start) = match resume {
        Some(path) => {
            let ck = load_checkpoint(path, settings)?;
            if !matches!(ck.meta.stage, Stage::Pretrain | Stage::Init) {
                return Err(Failure::usage(format!("{} is not a pretraining checkpoint", path.display())));
            }
            if !settings.seed_given {
                cfg.seed = ck.meta.seed;
            }
            if cfg.epochs < ck.meta.epoch {
                return Err(Failure::usage(format!(
                    "checkpoint already has {} epochs, more than --epochs {}",
                    ck.meta.epoch, cfg.epochs
                )));
            }
            let mut model = ck.model;
            if let Some(d) = settings.dropout(flags) {
                model.config.dropout = d;
            }
            (model, ck.meta.epoch)
        }
        None => {
            let mut config = settings.model.clone();
            config.num_tasks = 0;
            if let Some(d) = settings.dropout(flags) {
                config.dropout = d;
            }
            if pcfg.has(Task::Fingerprint) && config.fingerprint_bits == 0 {
                config.fingerprint_bits = fingerprint_width(&train)?;
            }
            (GeoGnn::new(config, settings.features.layout(), cfg.seed, settings.precision)?, 0)
        }
    };
    log::info!(
        "pretraining on {} molecules ({} held out), epochs {}..={}",
        train.len(),
        eval.len(),
        start + 1,
        cfg.epochs
    );
    let log = train::pretrain(&mut model, &train, &eval, &cfg, &pcfg, start, Some(out))?;
    if let Some(last) = log.epochs.last() {
        println!(
            "epoch {}: length {:.5} angle {:.5} distance {:.5} fingerprint {:.5} total {:.5}",
            last.epoch, last.train.length, last.train.angle, last.train.distance, last.train.fingerprint, last.train.total
        );
    }
    println!("checkpoint {}", out.join("pretrain.gem").display());
    Ok(())
}

pub fn finetune(
    common: &Common,
    settings: &Settings,
    flags: &TrainFlags,
    base: Option<&Path>,
    labels: Option<&str>,
    metric: Option<&str>,
) -> CliResult<()> {
    let out = out_dir(common)?;
    let metric = settings.metric(metric)?.unwrap_or(Metric::Rmse);
    let cfg = settings.train_config(flags, FINETUNE_EPOCHS, FINETUNE_BATCH)?;
    let data = DatasetSplit::from_tags(load_samples(common, settings)?)?;
    let tasks = train::resolve_tasks(&settings.labels(labels), &data, metric.task_type())?;

    let ck = base.map(|p| load_checkpoint(p, settings)).transpose()?;
    let mut config = match &ck {
        Some(c) => c.meta.model.clone(),
        None => settings.model.clone(),
    };
    config.num_tasks = tasks.len();
    if let Some(d) = settings.dropout(flags) {
        config.dropout = d;
    }
    let precision = match &ck {
        Some(c) if !settings.precision_given => c.meta.precision,
        _ => settings.precision,
    };
    let mut model = train::downstream_model(
        ck.as_ref().map(|c| &c.model),
        &config,
        &settings.features.layout(),
        cfg.seed,
        precision,
    )?;
    log::info!(
        "finetuning {} on {} train / {} valid / {} test molecules",
        tasks.join(","),
        data.train.len(),
        data.valid.len(),
        data.test.len()
    );
    let fcfg = FinetuneConfig {
        tasks: tasks.clone(),
        metric,
        stop_at_train_metric: None,
    };
    let report = train::finetune(&mut model, &data, &cfg, &fcfg, &tasks, Some(out))?;
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.6}"));
    println!(
        "best epoch {} ({} {} {}), test {} {}",
        report.best_epoch,
        report.selection_split,
        metric.name(),
        fmt(report.best_selection_metric),
        metric.name(),
        fmt(report.test_metric)
    );
    Ok(())
}

fn select(samples: Vec<Sample>, split: &str) -> CliResult<Vec<Sample>> {
    let want = match split {
        "all" => return Ok(samples),
        "train" => Split::Train,
        "valid" => Split::Valid,
        "test" => Split::Test,
        other => return Err(Failure::usage(format!("unknown split {other:?} (train, valid, test, all)"))),
    };
    Ok(samples
        .into_iter()
        .filter(|s| s.molecule.split.unwrap_or(Split::Train) == want)
        .collect())
}

pub fn evaluate(
    common: &Common,
    settings: &Settings,
    path: &Path,
    metric: Option<&str>,
    split: &str,
) -> CliResult<()> {
    let ck = load_checkpoint(path, settings)?;
    let trained_for = match (ck.meta.stage, ck.meta.task_type) {
        (Stage::Finetune, Some(t)) if !ck.meta.tasks.is_empty() => t,
        _ => return Err(Failure::usage(format!("{} is not a finetuned checkpoint", path.display()))),
    };
    let metric = settings.metric(metric)?.unwrap_or(match trained_for {
        TaskType::Regression => Metric::Rmse,
        TaskType::Classification => Metric::Rocauc,
    });
    if metric.task_type() != trained_for {
        return Err(Failure::usage(format!(
            "metric {} needs {:?} labels but the checkpoint was trained for {:?}",
            metric.name(),
            metric.task_type(),
            trained_for
        )));
    }
    let samples = select(load_samples(common, settings)?, split)?;
    if samples.is_empty() {
        return Err(Failure::data(format!("split {split} has no molecules")));
    }
    let tasks = &ck.meta.tasks;
    for (k, task) in tasks.iter().enumerate() {
        let values: Vec<f64> = samples.iter().filter_map(|s| s.labels_for(tasks)[k]).collect();
        if values.is_empty() {
            return Err(Failure::data(format!("no molecule in split {split} has label {task:?}")));
        }
        if metric.task_type() == TaskType::Classification && values.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Failure::usage(format!(
                "label {task:?} is not binary; {} needs 0/1 labels",
                metric.name()
            )));
        }
    }
    let value = train::score(&ck.model, &samples, tasks, metric)?;
    let report = json!({
        "checkpoint": path,
        "metric": metric,
        "split": split,
        "tasks": tasks,
        "molecules": samples.len(),
        "value": value,
    });
    if let Some(dir) = &common.out {
        let dir = out_dir(&Common { out: Some(dir.clone()), ..Common::default() })?.to_path_buf();
        write_json(&dir.join("evaluate_report.json"), &report)?;
    }
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

pub fn embed(common: &Common, settings: &Settings, path: &Path) -> CliResult<()> {
    let out = out_dir(common)?;
    let ck = load_checkpoint(path, settings)?;
    let samples = load_samples(common, settings)?;
    let vectors: Vec<Vec<f64>> = samples
        .par_iter()
        .map(|s| ck.model.embed(&s.encoded, &s.graph))
        .collect::<Result<_, _>>()?;
    let mut text = String::new();
    for (s, h) in samples.iter().zip(&vectors) {
        text.push_str(&serde_json::to_string(&json!({ "id": s.id(), "h_G": h }))?);
        text.push('\n');
    }
    let file = out.join("embeddings.jsonl");
    std::fs::write(&file, text).map_err(|e| io_error(&file, e))?;
    println!("wrote {} embeddings to {}", samples.len(), file.display());
    Ok(())
}

pub fn synth(
    settings: &Settings,
    file: &PathBuf,
    count: usize,
    fingerprint_bits: usize,
    valid_frac: f64,
    test_frac: f64,
) -> CliResult<()> {
    let mut mols = gen::generate(&gen::SynthConfig {
        count,
        fingerprint_bits,
        seed: settings.seed,
        ..gen::SynthConfig::default()
    })?;
    if valid_frac > 0.0 || test_frac > 0.0 {
        gen::assign_splits(&mut mols, valid_frac, test_frac, settings.seed)?;
    }
    let ext = file.extension().and_then(|e| e.to_str()).unwrap_or("");
    let text = match ext {
        "sdf" | "sd" => geognn_core::write_sdf(&mols)?,
        "jsonl" | "ndjson" => geognn_core::write_jsonl(&mols)?,
        _ => return Err(Failure::usage(format!("{}: use a .sdf or .jsonl file name", file.display()))),
    };
    if let Some(parent) = file.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    std::fs::write(file, text).map_err(|e| io_error(file, e))?;
    println!("wrote {count} molecules to {}", file.display());
    Ok(())
}
