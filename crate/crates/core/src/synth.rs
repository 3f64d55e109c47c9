//! Random small molecules with plausible 3D geometry.
//!
//! Heavy atoms (C, N, O, F) form a random tree, hydrogens fill the remaining
//! valence, and coordinates are grown outward from the first atom with
//! element-dependent bond lengths plus Gaussian noise. Every bond angle is
//! at least 90° and no two atoms come closer than 1 Å.
//!
//! Each molecule carries a regression label `y`, a smooth function of its
//! mean bond length and mean bond angle, and a binary label `y_class`
//! (`y > 0`).

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::DualGraph;
use crate::mol::{Atom, Bond, BondType, Molecule, Split};

/// Number of substructure bits available for synthetic fingerprints.
pub const FINGERPRINT_FEATURES: usize = 8;

const MIN_SEPARATION: f64 = 1.0;
/// cos 90°
const MAX_COS: f64 = 0.0;
const PLACEMENT_TRIES: usize = 400;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub count: usize,
    pub min_heavy: usize,
    pub max_heavy: usize,
    /// Standard deviation of the bond-length noise, Å.
    pub length_noise: f64,
    /// Fingerprint width, at most [`FINGERPRINT_FEATURES`]; 0 for none.
    pub fingerprint_bits: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            count: 200,
            min_heavy: 2,
            max_heavy: 6,
            length_noise: 0.02,
            fingerprint_bits: 0,
            seed: 0,
        }
    }
}

fn valence(z: u8) -> usize {
    match z {
        1 | 9 => 1,
        6 => 4,
        7 => 3,
        8 => 2,
        _ => unreachable!("generator only uses H, C, N, O, F"),
    }
}

fn base_length(a: u8, b: u8, t: BondType) -> f64 {
    let (x, y) = (a.min(b), a.max(b));
    let double = t == BondType::Double;
    match (x, y, double) {
        (1, 1, _) => 0.74,
        (1, 6, _) => 1.09,
        (1, 7, _) => 1.01,
        (1, 8, _) => 0.96,
        (1, 9, _) => 0.92,
        (6, 6, false) => 1.54,
        (6, 6, true) => 1.34,
        (6, 7, false) => 1.47,
        (6, 7, true) => 1.28,
        (6, 8, false) => 1.43,
        (6, 8, true) => 1.21,
        (6, 9, _) => 1.35,
        (7, 7, false) => 1.45,
        (7, 7, true) => 1.25,
        (7, 8, false) => 1.40,
        (7, 8, true) => 1.22,
        (7, 9, _) => 1.36,
        (8, 8, _) => 1.48,
        (8, 9, _) => 1.42,
        _ => 1.42,
    }
}

/// Label as a function of mean bond length (Å) and mean bond angle (rad).
pub fn label_function(mean_length: f64, mean_angle: f64) -> f64 {
    5.0 * (mean_length - 1.25) + 4.0 * (mean_angle - 1.95)
}

fn topology(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> (Vec<u8>, Vec<(usize, usize, BondType)>) {
    loop {
        let n = rng.gen_range(cfg.min_heavy..=cfg.max_heavy);
        let mut elems = Vec::with_capacity(n);
        let mut free = Vec::with_capacity(n);
        let mut bonds = Vec::new();
        let mut ok = true;
        for i in 0..n {
            let z = if i == 0 && n > 1 {
                6
            } else {
                match rng.gen_range(0..20) {
                    0..=11 => 6,
                    12..=14 => 7,
                    15..=17 => 8,
                    _ => 9,
                }
            };
            elems.push(z);
            free.push(valence(z));
            if i == 0 {
                continue;
            }
            let parents: Vec<usize> = (0..i).filter(|&j| free[j] > 0).collect();
            if parents.is_empty() || free[i] == 0 {
                ok = false;
                break;
            }
            let p = parents[rng.gen_range(0..parents.len())];
            let t = if free[p] >= 2 && free[i] >= 2 && rng.gen_bool(0.2) {
                BondType::Double
            } else {
                BondType::Single
            };
            let order = if t == BondType::Double { 2 } else { 1 };
            free[p] -= order;
            free[i] -= order;
            bonds.push((p, i, t));
        }
        if !ok {
            continue;
        }
        for (i, &f) in free.clone().iter().enumerate() {
            for _ in 0..f {
                elems.push(1);
                bonds.push((i, elems.len() - 1, BondType::Single));
            }
        }
        return (elems, bonds);
    }
}

fn unit(v: [f64; 3]) -> Option<[f64; 3]> {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    (n > 1e-9).then(|| [v[0] / n, v[1] / n, v[2] / n])
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn place(
    rng: &mut ChaCha8Rng,
    elems: &[u8],
    bonds: &[(usize, usize, BondType)],
    noise: &Normal<f64>,
) -> Option<Vec<[f64; 3]>> {
    let n = elems.len();
    let mut pos: Vec<Option<[f64; 3]>> = vec![None; n];
    pos[0] = Some([0.0; 3]);
    // bonds are listed parent-first, so parents are always placed
    for &(p, c, t) in bonds {
        let pp = pos[p]?;
        let existing: Vec<[f64; 3]> = bonds
            .iter()
            .filter_map(|&(a, b, _)| {
                let other = if a == p { b } else if b == p { a } else { return None };
                let q = pos[other]?;
                unit([q[0] - pp[0], q[1] - pp[1], q[2] - pp[2]])
            })
            .collect();
        let away = unit(existing.iter().fold([0.0; 3], |s, d| [s[0] - d[0], s[1] - d[1], s[2] - d[2]]));
        let len = (base_length(elems[p], elems[c], t) + noise.sample(rng)).max(0.7);
        let mut placed = false;
        for _ in 0..PLACEMENT_TRIES {
            let r: [f64; 3] = UnitSphere.sample(rng);
            let spread = rng.gen_range(0.3..1.5);
            let cand = match away {
                Some(a) => [a[0] + spread * r[0], a[1] + spread * r[1], a[2] + spread * r[2]],
                None => r,
            };
            let Some(d) = unit(cand) else { continue };
            if existing.iter().any(|e| dot(*e, d) > MAX_COS) {
                continue;
            }
            let q = [pp[0] + len * d[0], pp[1] + len * d[1], pp[2] + len * d[2]];
            let clash = pos.iter().enumerate().any(|(k, o)| {
                k != p
                    && o.is_some_and(|o| {
                        let v = [o[0] - q[0], o[1] - q[1], o[2] - q[2]];
                        dot(v, v).sqrt() < MIN_SEPARATION
                    })
            });
            if clash {
                continue;
            }
            pos[c] = Some(q);
            placed = true;
            break;
        }
        if !placed {
            return None;
        }
    }
    pos.into_iter().collect()
}

fn fingerprint(elems: &[u8], bonds: &[(usize, usize, BondType)], bits: usize) -> Vec<u8> {
    let has = |z: u8| elems.contains(&z);
    let bonded = |x: u8, y: u8, t: Option<BondType>| {
        bonds.iter().any(|&(a, b, bt)| {
            let (ea, eb) = (elems[a], elems[b]);
            ((ea, eb) == (x, y) || (ea, eb) == (y, x)) && t.map_or(true, |t| t == bt)
        })
    };
    let heavy = elems.iter().filter(|&&z| z != 1).count();
    let features = [
        has(7),
        has(8),
        has(9),
        bonds.iter().any(|b| b.2 == BondType::Double),
        heavy >= 4,
        bonded(7, 1, None),
        bonded(8, 1, None),
        bonded(6, 8, Some(BondType::Double)),
    ];
    features[..bits].iter().map(|&f| f as u8).collect()
}

/// Generates `cfg.count` molecules, reproducibly from `cfg.seed`.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<Molecule>> {
    if cfg.min_heavy < 1 || cfg.min_heavy > cfg.max_heavy {
        return Err(Error::Config(format!(
            "heavy atom range {}..={} is empty",
            cfg.min_heavy, cfg.max_heavy
        )));
    }
    if cfg.fingerprint_bits > FINGERPRINT_FEATURES {
        return Err(Error::Config(format!(
            "at most {FINGERPRINT_FEATURES} synthetic fingerprint bits"
        )));
    }
    let noise = Normal::new(0.0, cfg.length_noise)
        .map_err(|e| Error::Config(format!("length noise: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.count);
    while out.len() < cfg.count {
        let (elems, bonds) = topology(&mut rng, cfg);
        let Some(coords) = place(&mut rng, &elems, &bonds, &noise) else {
            continue;
        };
        let atoms = elems.iter().map(|&z| Atom::new(z)).collect();
        let mol_bonds = bonds.iter().map(|&(a, b, t)| Bond::new(a, b, t)).collect();
        let id = format!("synth{}", out.len());
        let mut mol = Molecule::new(id, atoms, mol_bonds, coords)?;
        // attributes a reader would derive
        let degrees = mol.degrees();
        for (i, atom) in mol.atoms.iter_mut().enumerate() {
            atom.num_explicit_h = bonds
                .iter()
                .filter(|&&(a, b, _)| (a == i && elems[b] == 1) || (b == i && elems[a] == 1))
                .count() as u32;
            let order: f64 = bonds
                .iter()
                .filter(|&&(a, b, _)| a == i || b == i)
                .map(|b| b.2.order())
                .sum();
            atom.hybridization = crate::mol::estimate_hybridization(elems[i], 0, degrees[i], order);
        }
        let g = DualGraph::build(&mol)?;
        let mean_len = g.lengths.iter().sum::<f64>() / g.lengths.len().max(1) as f64;
        let mean_angle = if g.angle_values.is_empty() {
            1.95
        } else {
            g.angle_values.iter().sum::<f64>() / g.angle_values.len() as f64
        };
        let y = label_function(mean_len, mean_angle);
        let mut labels = BTreeMap::new();
        labels.insert("y".to_string(), Some(y));
        labels.insert("y_class".to_string(), Some(if y > 0.0 { 1.0 } else { 0.0 }));
        mol.labels = labels;
        if cfg.fingerprint_bits > 0 {
            mol.fingerprint = Some(fingerprint(&elems, &bonds, cfg.fingerprint_bits));
        }
        out.push(mol);
    }
    Ok(out)
}

/// Tags a random `valid_frac` / `test_frac` of the molecules; the rest
/// become train.
pub fn assign_splits(mols: &mut [Molecule], valid_frac: f64, test_frac: f64, seed: u64) -> Result<()> {
    if valid_frac < 0.0 || test_frac < 0.0 || valid_frac + test_frac >= 1.0 {
        return Err(Error::Config("split fractions must be non-negative and leave a train split".into()));
    }
    let n = mols.len();
    let mut order: Vec<usize> = (0..n).collect();
    crate::rng::SplitMix64::new(seed).shuffle(&mut order);
    let n_valid = (valid_frac * n as f64).round() as usize;
    let n_test = (test_frac * n as f64).round() as usize;
    for (k, &i) in order.iter().enumerate() {
        mols[i].split = Some(if k < n_valid {
            Split::Valid
        } else if k < n_valid + n_test {
            Split::Test
        } else {
            Split::Train
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::distance;

    #[test]
    fn reproducible_and_valid() {
        let cfg = SynthConfig {
            count: 30,
            fingerprint_bits: 8,
            seed: 3,
            ..SynthConfig::default()
        };
        let a = generate(&cfg).unwrap();
        assert_eq!(a, generate(&cfg).unwrap());
        for m in &a {
            let g = DualGraph::build(m).unwrap();
            assert!(g.angle_values.iter().all(|&x| x >= std::f64::consts::FRAC_PI_2 - 1e-9));
            for u in 0..m.atoms.len() {
                for v in u + 1..m.atoms.len() {
                    assert!(distance(m.coords[u], m.coords[v]) >= MIN_SEPARATION - 1e-9 || g.bonds.contains(&[u, v]));
                }
            }
            // valence satisfied
            let mut used = vec![0.0; m.atoms.len()];
            for b in &m.bonds {
                used[b.a] += b.bond_type.order();
                used[b.b] += b.bond_type.order();
            }
            for (a, u) in m.atoms.iter().zip(used) {
                assert_eq!(u as usize, valence(a.element));
            }
            assert_eq!(m.fingerprint.as_ref().unwrap().len(), 8);
        }
    }

    #[test]
    fn labels_follow_the_function() {
        let m = &generate(&SynthConfig {
            count: 1,
            ..SynthConfig::default()
        })
        .unwrap()[0];
        let g = DualGraph::build(m).unwrap();
        let l = g.lengths.iter().sum::<f64>() / g.lengths.len() as f64;
        let a = g.angle_values.iter().sum::<f64>() / g.angle_values.len() as f64;
        assert!((m.labels["y"].unwrap() - label_function(l, a)).abs() < 1e-12);
    }

    #[test]
    fn splits() {
        let mut m = generate(&SynthConfig {
            count: 20,
            ..SynthConfig::default()
        })
        .unwrap();
        assign_splits(&mut m, 0.2, 0.1, 1).unwrap();
        let count = |s| m.iter().filter(|x| x.split == Some(s)).count();
        assert_eq!((count(Split::Train), count(Split::Valid), count(Split::Test)), (14, 4, 2));
    }
}
