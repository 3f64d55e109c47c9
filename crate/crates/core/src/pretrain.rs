//! Self-supervised pretraining objectives.
//!
//! Geometry-level tasks reconstruct hidden bond lengths and bond angles
//! from a masked context and classify every interatomic distance into 1 Å
//! bins. The graph-level task predicts a molecular fingerprint. All four
//! share one masked forward pass per molecule.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, NodeId};
use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::geometry::{mask_context, DualGraph, MaskTargets};
use crate::model::{Embedding, GeoGnn};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

pub const DEFAULT_MASK_RATIO: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Length,
    Angle,
    Distance,
    Fingerprint,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Length, Task::Angle, Task::Distance, Task::Fingerprint];
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "length" => Ok(Task::Length),
            "angle" => Ok(Task::Angle),
            "distance" => Ok(Task::Distance),
            "fingerprint" => Ok(Task::Fingerprint),
            other => Err(Error::Config(format!(
                "unknown pretraining task {other:?} (expected length, angle, distance, fingerprint)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub tasks: Vec<Task>,
    pub mask_ratio: f64,
    pub fingerprint_weight: f64,
    /// Sample at most this many ordered pairs for the distance task; all
    /// pairs when `None`.
    pub distance_pair_limit: Option<usize>,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            tasks: Task::ALL.to_vec(),
            mask_ratio: DEFAULT_MASK_RATIO,
            fingerprint_weight: 1.0,
            distance_pair_limit: None,
        }
    }
}

impl PretrainConfig {
    pub fn has(&self, t: Task) -> bool {
        self.tasks.contains(&t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mask_ratio > 0.0 && self.mask_ratio <= 1.0) {
            return Err(Error::Config(format!("mask ratio {} outside (0, 1]", self.mask_ratio)));
        }
        if !(self.fingerprint_weight >= 0.0 && self.fingerprint_weight.is_finite()) {
            return Err(Error::Config("fingerprint weight must be finite and non-negative".into()));
        }
        if self.distance_pair_limit == Some(0) {
            return Err(Error::Config("distance pair limit must be positive".into()));
        }
        Ok(())
    }
}

/// Per-task loss values and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossComponents {
    pub length: f64,
    pub angle: f64,
    pub distance: f64,
    pub fingerprint: f64,
    pub total: f64,
}

impl LossComponents {
    pub fn mean(items: &[LossComponents]) -> LossComponents {
        let n = items.len().max(1) as f64;
        let mut m = LossComponents::default();
        for c in items {
            m.length += c.length;
            m.angle += c.angle;
            m.distance += c.distance;
            m.fingerprint += c.fingerprint;
            m.total += c.total;
        }
        m.length /= n;
        m.angle /= n;
        m.distance /= n;
        m.fingerprint /= n;
        m.total /= n;
        m
    }

    pub fn is_finite(&self) -> bool {
        [self.length, self.angle, self.distance, self.fingerprint, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Bin index of a distance: 1 Å bins from 0, last bin open-ended.
pub fn bin_distance(d: f64, bins: usize) -> Result<usize> {
    if d.is_nan() || d < 0.0 {
        return Err(Error::domain("bin_distance", format!("negative distance {d}")));
    }
    Ok((d.floor() as usize).min(bins - 1))
}

pub fn distance_one_hot(d: f64, bins: usize) -> Result<Vec<f64>> {
    let mut v = vec![0.0; bins];
    v[bin_distance(d, bins)?] = 1.0;
    Ok(v)
}

fn mse(g: &mut Graph, pred: NodeId, target: Vec<f64>) -> Result<NodeId> {
    let t = g.constant(Tensor::matrix(target.len(), 1, target)?)?;
    let d = g.sub(pred, t)?;
    let sq = g.mul(d, d)?;
    g.mean(sq)
}

fn zero(g: &mut Graph) -> Result<NodeId> {
    g.constant(Tensor::scalar(0.0))
}

/// Mean squared error of the length head over masked bonds.
pub fn loss_length(
    g: &mut Graph,
    model: &GeoGnn,
    emb: &Embedding,
    graph: &DualGraph,
    targets: &MaskTargets,
) -> Result<NodeId> {
    if targets.bonds.is_empty() {
        return zero(g);
    }
    let pairs: Vec<[usize; 2]> = targets.bonds.iter().map(|&b| graph.bonds[b]).collect();
    let pred = model.head_length(g, emb, &pairs)?;
    mse(g, pred, targets.lengths.clone())
}

/// Mean squared error of the angle head over masked angles.
pub fn loss_angle(
    g: &mut Graph,
    model: &GeoGnn,
    emb: &Embedding,
    graph: &DualGraph,
    targets: &MaskTargets,
) -> Result<NodeId> {
    if targets.angles.is_empty() {
        return zero(g);
    }
    let triples: Vec<[usize; 3]> = targets
        .angles
        .iter()
        .map(|&a| {
            let x = &graph.angles[a];
            [x.ends[0], x.center, x.ends[1]]
        })
        .collect();
    let pred = model.head_angle(g, emb, &triples)?;
    mse(g, pred, targets.angle_values.clone())
}

/// Mean cross-entropy of the distance head over ordered atom pairs,
/// including `u == v`. With `pair_limit`, a uniform subset of pairs drawn
/// from `rng` is used instead.
pub fn loss_distance(
    g: &mut Graph,
    model: &GeoGnn,
    emb: &Embedding,
    graph: &DualGraph,
    pair_limit: Option<usize>,
    rng: &mut SplitMix64,
) -> Result<NodeId> {
    let n = graph.num_atoms;
    if n < 2 {
        return zero(g);
    }
    let total = n * n;
    let flat: Vec<usize> = match pair_limit {
        Some(k) if k < total => rng.sample_indices(total, k),
        _ => (0..total).collect(),
    };
    let c = model.config.distance_bins;
    let pairs: Vec<[usize; 2]> = flat.iter().map(|&i| [i / n, i % n]).collect();
    let mut target = Vec::with_capacity(pairs.len() * c);
    for &[u, v] in &pairs {
        target.extend(distance_one_hot(graph.distance(u, v), c)?);
    }
    let logits = model.head_distance(g, emb, &pairs)?;
    g.softmax_cross_entropy(logits, &Tensor::matrix(pairs.len(), c, target)?)
}

/// Mean binary cross-entropy of the fingerprint head.
pub fn loss_fingerprint(g: &mut Graph, model: &GeoGnn, emb: &Embedding, bits: &[u8]) -> Result<NodeId> {
    if bits.is_empty() {
        return zero(g);
    }
    if bits.len() != model.config.fingerprint_bits {
        return Err(Error::Data(format!(
            "fingerprint has {} bits, model head has {}",
            bits.len(),
            model.config.fingerprint_bits
        )));
    }
    let logits = model.head_fingerprint(g, emb)?;
    let t: Vec<f64> = bits.iter().map(|&b| b as f64).collect();
    g.bce_with_logits(logits, &t, &vec![1.0; bits.len()])
}

/// Loss of one molecule: mask, one forward pass, weighted sum of the
/// enabled tasks. The fingerprint task is skipped for molecules without
/// bits.
pub fn molecule_loss(
    g: &mut Graph,
    model: &GeoGnn,
    sample: &Sample,
    config: &PretrainConfig,
    train: bool,
    rng: &mut SplitMix64,
) -> Result<(NodeId, LossComponents)> {
    let (masked, targets) = mask_context(&sample.graph, &sample.encoded, config.mask_ratio, rng)?;
    let emb = model.forward(g, &masked, &sample.graph, train, rng)?;
    let mut parts: Vec<(NodeId, f64)> = Vec::new();
    let mut comp = LossComponents::default();

    if config.has(Task::Length) {
        let l = loss_length(g, model, &emb, &sample.graph, &targets)?;
        comp.length = g.value(l).item();
        parts.push((l, 1.0));
    }
    if config.has(Task::Angle) {
        let l = loss_angle(g, model, &emb, &sample.graph, &targets)?;
        comp.angle = g.value(l).item();
        parts.push((l, 1.0));
    }
    if config.has(Task::Distance) {
        let l = loss_distance(g, model, &emb, &sample.graph, config.distance_pair_limit, rng)?;
        comp.distance = g.value(l).item();
        parts.push((l, 1.0));
    }
    if config.has(Task::Fingerprint) && model.config.fingerprint_bits > 0 {
        if let Some(bits) = &sample.molecule.fingerprint {
            let l = loss_fingerprint(g, model, &emb, bits)?;
            comp.fingerprint = g.value(l).item();
            parts.push((l, config.fingerprint_weight));
        }
    }

    let mut total = zero(g)?;
    for (l, w) in parts {
        let term = if w == 1.0 { l } else { g.scale(l, w)? };
        total = g.add(total, term)?;
    }
    comp.total = g.value(total).item();
    Ok((total, comp))
}

/// Mean pretraining loss over a batch; `rngs[i]` drives molecule `i`.
pub fn loss_pre(
    model: &GeoGnn,
    batch: &[&Sample],
    config: &PretrainConfig,
    train: bool,
    rngs: &mut [SplitMix64],
) -> Result<LossComponents> {
    if batch.is_empty() {
        return Err(Error::Data("empty pretraining batch".into()));
    }
    let mut comps = Vec::with_capacity(batch.len());
    for (s, rng) in batch.iter().zip(rngs.iter_mut()) {
        let mut g = Graph::new();
        comps.push(molecule_loss(&mut g, model, s, config, train, rng)?.1);
    }
    Ok(LossComponents::mean(&comps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureConfig;
    use crate::fixtures;
    use crate::model::{ModelConfig, Precision};

    fn model() -> GeoGnn {
        GeoGnn::new(
            ModelConfig {
                blocks: 2,
                hidden: 8,
                dropout: 0.0,
                geometry_head_hidden: 16,
                ..ModelConfig::default()
            },
            FeatureConfig::default().layout(),
            11,
            Precision::F64,
        )
        .unwrap()
    }

    #[test]
    fn binning() {
        assert_eq!(bin_distance(0.5, 30).unwrap(), 0);
        assert_eq!(bin_distance(29.3, 30).unwrap(), 29);
        assert_eq!(bin_distance(100.0, 30).unwrap(), 29);
        assert_eq!(bin_distance(1.0, 30).unwrap(), 1);
        assert!(bin_distance(-0.1, 30).is_err());
        let v = distance_one_hot(3.7, 30).unwrap();
        assert_eq!(v.iter().sum::<f64>(), 1.0);
        assert_eq!(v[3], 1.0);
    }

    #[test]
    fn mse_examples() {
        let mut g = Graph::new();
        let p = g.constant(Tensor::matrix(1, 1, vec![1.0]).unwrap()).unwrap();
        let l = mse(&mut g, p, vec![1.5]).unwrap();
        assert_eq!(g.value(l).item(), 0.25);
        let p = g.constant(Tensor::matrix(1, 1, vec![std::f64::consts::PI]).unwrap()).unwrap();
        let l = mse(&mut g, p, vec![std::f64::consts::FRAC_PI_2]).unwrap();
        assert!((g.value(l).item() - 2.4674011002723395).abs() < 1e-12);
    }

    #[test]
    fn geometry_only_total_is_sum_of_components() {
        let m = model();
        let s = Sample::new(fixtures::methanamine(), &FeatureConfig::default()).unwrap();
        let cfg = PretrainConfig {
            tasks: vec![Task::Length, Task::Angle, Task::Distance],
            ..PretrainConfig::default()
        };
        let mut g = Graph::new();
        let (_, c) = molecule_loss(&mut g, &m, &s, &cfg, false, &mut SplitMix64::new(4)).unwrap();
        assert_eq!(c.total, c.length + c.angle + c.distance);
        assert!(c.length > 0.0 && c.distance > 0.0);
    }

    #[test]
    fn batch_of_duplicates_equals_single() {
        let m = model();
        let s = Sample::new(fixtures::methanamine(), &FeatureConfig::default()).unwrap();
        let cfg = PretrainConfig::default();
        let one = loss_pre(&m, &[&s], &cfg, false, &mut [SplitMix64::new(8)]).unwrap();
        let two = loss_pre(&m, &[&s, &s], &cfg, false, &mut [SplitMix64::new(8), SplitMix64::new(8)]).unwrap();
        assert_eq!(one.total, two.total);
    }

    #[test]
    fn single_atom_distance_loss_is_zero() {
        let m = model();
        let s = Sample::new(fixtures::single_atom(), &FeatureConfig::default()).unwrap();
        let mut g = Graph::new();
        let (_, c) = molecule_loss(&mut g, &m, &s, &PretrainConfig::default(), false, &mut SplitMix64::new(1)).unwrap();
        assert_eq!(c, LossComponents::default());
    }

    #[test]
    fn fingerprint_width_mismatch() {
        let mut mc = ModelConfig {
            blocks: 1,
            hidden: 4,
            ..ModelConfig::default()
        };
        mc.fingerprint_bits = 3;
        let model = GeoGnn::new(mc, FeatureConfig::default().layout(), 1, Precision::F64).unwrap();
        let s = Sample::new(fixtures::water(), &FeatureConfig::default()).unwrap();
        let mut g = Graph::new();
        let emb = model.forward(&mut g, &s.encoded, &s.graph, false, &mut SplitMix64::new(0)).unwrap();
        assert!(loss_fingerprint(&mut g, &model, &emb, &[1, 0]).is_err());
        let l = loss_fingerprint(&mut g, &model, &emb, &[1, 0, 1]).unwrap();
        assert!(g.value(l).item() > 0.0);
    }
}
