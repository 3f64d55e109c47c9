#![allow(dead_code)]

use std::collections::BTreeMap;

use geognn_core::mol::{Atom, Bond, BondDir, BondType, Chirality, Hybridization, Molecule};
use geognn_core::SplitMix64;

const ELEMENTS: [u8; 7] = [6, 7, 8, 9, 1, 16, 17];

fn pick<T: Copy>(rng: &mut SplitMix64, items: &[T]) -> T {
    items[rng.below(items.len())]
}

/// Random molecule with `1..=max_atoms` atoms: a random spanning tree plus
/// occasional ring-closing bonds, random attributes, and coordinates with
/// every pair at least 0.9 Å apart.
pub fn random_molecule(seed: u64, max_atoms: usize) -> Molecule {
    let mut rng = SplitMix64::derive(seed, &[0xC0FFEE]);
    let n = 1 + rng.below(max_atoms);
    build_molecule(seed, n, rng)
}

/// Like [`random_molecule`] with exactly `n` atoms.
pub fn molecule_with_atoms(seed: u64, n: usize) -> Molecule {
    build_molecule(seed, n, SplitMix64::derive(seed, &[0xBEEF, n as u64]))
}

fn build_molecule(seed: u64, n: usize, mut rng: SplitMix64) -> Molecule {
    let atoms: Vec<Atom> = (0..n)
        .map(|_| Atom {
            element: pick(&mut rng, &ELEMENTS),
            formal_charge: rng.below(3) as i32 - 1,
            chirality: pick(&mut rng, &Chirality::ALL),
            num_explicit_h: rng.below(4) as u32,
            aromatic: rng.below(4) == 0,
            hybridization: pick(&mut rng, &Hybridization::ALL),
        })
        .collect();

    let mut bonds = Vec::new();
    let mut has = std::collections::HashSet::new();
    for i in 1..n {
        let j = rng.below(i);
        has.insert((j, i));
        bonds.push((j, i));
    }
    for _ in 0..n / 2 {
        let (a, b) = (rng.below(n), rng.below(n));
        let (a, b) = (a.min(b), a.max(b));
        if a != b && rng.below(2) == 0 && has.insert((a, b)) {
            bonds.push((a, b));
        }
    }
    let bonds: Vec<Bond> = bonds
        .into_iter()
        .map(|(a, b)| {
            let mut bond = Bond::new(a, b, pick(&mut rng, &BondType::ALL));
            bond.dir = pick(&mut rng, &BondDir::ALL);
            bond
        })
        .collect();

    let mut coords: Vec<[f64; 3]> = Vec::with_capacity(n);
    while coords.len() < n {
        let side = 1.2 * (n as f64).cbrt() + 1.0;
        let p = [
            rng.uniform(-side, side),
            rng.uniform(-side, side),
            rng.uniform(-side, side),
        ];
        let ok = coords.iter().all(|q| {
            let d = [(p[0] - q[0]), (p[1] - q[1]), (p[2] - q[2])];
            (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt() >= 0.9
        });
        if ok {
            coords.push(p);
        }
    }

    let mut m = Molecule::new(format!("rand{seed}"), atoms, bonds, coords).expect("valid random molecule");
    let mut labels = BTreeMap::new();
    labels.insert("y".to_string(), Some(rng.uniform(-1.0, 1.0)));
    m.labels = labels;
    m
}

/// Uniformly random rotation matrix (unit quaternion).
pub fn random_rotation(rng: &mut SplitMix64) -> [[f64; 3]; 3] {
    let (u1, u2, u3) = (rng.next_f64(), rng.next_f64(), rng.next_f64());
    let tau = std::f64::consts::TAU;
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (w, x, y, z) = (a * (tau * u2).sin(), a * (tau * u2).cos(), b * (tau * u3).sin(), b * (tau * u3).cos());
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
        [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
        [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

pub fn rigid_motion(m: &Molecule, rng: &mut SplitMix64) -> Molecule {
    let r = random_rotation(rng);
    let t = [rng.uniform(-10.0, 10.0), rng.uniform(-10.0, 10.0), rng.uniform(-10.0, 10.0)];
    let mut out = m.clone();
    for c in &mut out.coords {
        let p = *c;
        for i in 0..3 {
            c[i] = r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2] + t[i];
        }
    }
    out
}

pub fn random_permutation(n: usize, rng: &mut SplitMix64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut p);
    p
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

use geognn_core::pretrain::{molecule_loss, PretrainConfig};
use geognn_core::{Graph, GeoGnn, NodeId, Sample, Tensor};

/// Sum of every pretraining loss (fixed mask, eval mode) and a squared
/// error on the downstream head from an unmasked pass.
pub fn full_loss(g: &mut Graph, model: &GeoGnn, sample: &Sample) -> NodeId {
    let mut rng = SplitMix64::new(12345);
    let (pre, _) = molecule_loss(g, model, sample, &PretrainConfig::default(), false, &mut rng).unwrap();
    let emb = model
        .forward(g, &sample.encoded, &sample.graph, false, &mut SplitMix64::new(0))
        .unwrap();
    let out = model.head_downstream(g, &emb).unwrap();
    let t = model.config.num_tasks;
    let y = g.constant(Tensor::full([1, t], 0.3)).unwrap();
    let d = g.sub(out, y).unwrap();
    let sq = g.mul(d, d).unwrap();
    let s = g.sum(sq).unwrap();
    g.add(pre, s).unwrap()
}

pub fn loss_value(model: &GeoGnn, sample: &Sample) -> f64 {
    let mut g = Graph::new();
    let l = full_loss(&mut g, model, sample);
    g.value(l).item()
}

/// Per parameter tensor: (name, max elementwise relative error, relative
/// error of the whole gradient vector). Relative error of scalars is
/// `|a - n| / max(|a|, |n|, floor)`.
pub struct GradCheck {
    pub name: String,
    pub max_elem: f64,
    pub tensor: f64,
    pub max_abs: f64,
}

pub fn gradient_check(model: &GeoGnn, sample: &Sample, h: f64, floor: f64) -> Vec<GradCheck> {
    let mut g = Graph::new();
    let l = full_loss(&mut g, model, sample);
    let grads = g.backward(l).unwrap();
    let analytic: std::collections::HashMap<usize, Tensor> =
        grads.params().filter_map(|(i, t)| t.map(|t| (i, t.clone()))).collect();

    let mut work = model.clone();
    let mut out = Vec::new();
    for idx in 0..model.params.len() {
        let shape = model.params.value(idx).shape().to_vec();
        let a = analytic.get(&idx).cloned().unwrap_or_else(|| Tensor::zeros(shape));
        let mut max_elem: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        let (mut diff2, mut an2, mut nn2) = (0.0, 0.0, 0.0);
        for k in 0..a.numel() {
            let orig = work.params.value(idx).data()[k];
            work.params.get_mut(idx).value.data_mut()[k] = orig + h;
            let up = loss_value(&work, sample);
            work.params.get_mut(idx).value.data_mut()[k] = orig - h;
            let down = loss_value(&work, sample);
            work.params.get_mut(idx).value.data_mut()[k] = orig;
            let num = (up - down) / (2.0 * h);
            let an = a.data()[k];
            let err = (an - num).abs();
            max_abs = max_abs.max(err);
            max_elem = max_elem.max(err / an.abs().max(num.abs()).max(floor));
            diff2 += err * err;
            an2 += an * an;
            nn2 += num * num;
        }
        let denom = an2.sqrt().max(nn2.sqrt());
        let tensor = if denom == 0.0 { 0.0 } else { diff2.sqrt() / denom };
        out.push(GradCheck {
            name: model.params.get(idx).name.clone(),
            max_elem,
            tensor,
            max_abs,
        });
    }
    out
}

/// Plain-loop evaluation of a slot MLP head: first layer as one weight
/// block per slot, ReLU, then the remaining linear layer.
pub fn slot_mlp_oracle(model: &GeoGnn, prefix: &str, inputs: &[&[f64]]) -> Vec<f64> {
    let p = |name: String| model.params.value(model.params.index_of(&name).expect(&name)).clone();
    let b0 = p(format!("{prefix}.0.b"));
    let w1 = p(format!("{prefix}.rest.0.w"));
    let b1 = p(format!("{prefix}.rest.0.b"));
    let hidden = b0.numel();
    let out = b1.numel();
    let mut z = b0.data().to_vec();
    for (s, x) in inputs.iter().enumerate() {
        let w = p(format!("{prefix}.0.w{s}"));
        for (i, xi) in x.iter().enumerate() {
            for j in 0..hidden {
                z[j] += xi * w.get(i, j);
            }
        }
    }
    (0..out)
        .map(|o| b1.data()[o] + (0..hidden).map(|j| z[j].max(0.0) * w1.get(j, o)).sum::<f64>())
        .collect()
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Mean squared error of the length head over `bonds`, targets from raw
/// coordinates.
pub fn length_loss_oracle(model: &GeoGnn, h: &[Vec<f64>], mol: &Molecule, bonds: &[[usize; 2]]) -> f64 {
    let mut sum = 0.0;
    for &[u, v] in bonds {
        let pred = slot_mlp_oracle(model, "head.length", &[&h[u], &h[v]])[0];
        let t = dist(mol.coords[u], mol.coords[v]);
        sum += (pred - t) * (pred - t);
    }
    sum / bonds.len() as f64
}

/// Mean squared error of the angle head over `(w, u, v)` triples centred
/// on `u`, targets from raw coordinates via the law of cosines.
pub fn angle_loss_oracle(model: &GeoGnn, h: &[Vec<f64>], mol: &Molecule, triples: &[[usize; 3]]) -> f64 {
    let mut sum = 0.0;
    for &[w, u, v] in triples {
        let pred = slot_mlp_oracle(model, "head.angle", &[&h[w], &h[u], &h[v]])[0];
        let (a, b, c) = (dist(mol.coords[w], mol.coords[u]), dist(mol.coords[v], mol.coords[u]), dist(mol.coords[w], mol.coords[v]));
        let t = ((a * a + b * b - c * c) / (2.0 * a * b)).clamp(-1.0, 1.0).acos();
        sum += (pred - t) * (pred - t);
    }
    sum / triples.len() as f64
}

/// Mean cross-entropy of the distance head over all ordered pairs with
/// integer-Angstrom bins, the last bin open-ended.
pub fn distance_loss_oracle(model: &GeoGnn, h: &[Vec<f64>], mol: &Molecule) -> f64 {
    let n = h.len();
    let bins = model.config.distance_bins;
    let mut sum = 0.0;
    for u in 0..n {
        for v in 0..n {
            let logits = slot_mlp_oracle(model, "head.distance", &[&h[u], &h[v]]);
            let d = dist(mol.coords[u], mol.coords[v]);
            let mut k = 0;
            while k + 1 < bins && (k + 1) as f64 <= d {
                k += 1;
            }
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
            sum += lse - logits[k];
        }
    }
    sum / (n * n) as f64
}

/// Library loss values next to the plain-loop oracles for one masked pass:
/// `[(library, oracle)]` for length, angle and distance. Empty masks give
/// `None` entries.
pub fn loss_oracle_pairs(model: &GeoGnn, sample: &Sample, ratio: f64, seed: u64) -> Vec<Option<(f64, f64)>> {
    use geognn_core::pretrain::{loss_angle, loss_distance, loss_length};
    let mut rng = SplitMix64::new(seed);
    let (masked, targets) = geognn_core::mask_context(&sample.graph, &sample.encoded, ratio, &mut rng).unwrap();
    let mut g = Graph::new();
    let emb = model.forward(&mut g, &masked, &sample.graph, false, &mut rng).unwrap();
    let at = g.value(emb.atoms).clone();
    let h: Vec<Vec<f64>> = (0..at.rows()).map(|r| at.row(r).to_vec()).collect();
    let graph = &sample.graph;
    let mol = &sample.molecule;

    let ll = loss_length(&mut g, model, &emb, graph, &targets).unwrap();
    let la = loss_angle(&mut g, model, &emb, graph, &targets).unwrap();
    let ld = loss_distance(&mut g, model, &emb, graph, None, &mut rng).unwrap();
    let bonds: Vec<[usize; 2]> = targets.bonds.iter().map(|&b| graph.bonds[b]).collect();
    let triples: Vec<[usize; 3]> = targets
        .angles
        .iter()
        .map(|&a| [graph.angles[a].ends[0], graph.angles[a].center, graph.angles[a].ends[1]])
        .collect();
    vec![
        (!bonds.is_empty()).then(|| (g.value(ll).item(), length_loss_oracle(model, &h, mol, &bonds))),
        (!triples.is_empty()).then(|| (g.value(la).item(), angle_loss_oracle(model, &h, mol, &triples))),
        (h.len() >= 2).then(|| (g.value(ld).item(), distance_loss_oracle(model, &h, mol))),
    ]
}
