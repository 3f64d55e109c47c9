//! Input features for atoms, bonds and bond angles.
//!
//! Discrete attributes become one-hot blocks; bond lengths and bond angles
//! are expanded on fixed radial-basis grids, `e_m(x) = exp(-gamma (x - mu_m)^2)`.
//!
//! | entity | blocks (width) |
//! |--------|----------------|
//! | atom   | atom type (119), aromatic (2), formal charge (16), chirality (4), degree (11), hydrogens (9), hybridization (6) |
//! | bond   | bond dir (7), bond type (4), in ring (2), length RBF (51) |
//! | angle  | angle RBF (32) |
//!
//! The hybridization block has a sixth `unknown` slot. Atom type is indexed
//! by atomic number, so slot 0 is never set. Formal charge `c` lands in slot
//! `c + 8` and degree and hydrogen count clamp at their last slot.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::DualGraph;
use crate::mol::{BondDir, BondType, Chirality, Hybridization, Molecule, MAX_ATOMIC_NUMBER};
use crate::tensor::Tensor;

pub const ATOM_TYPE_VOCAB: usize = 119;
pub const AROMATIC_VOCAB: usize = 2;
pub const CHARGE_VOCAB: usize = 16;
pub const CHARGE_OFFSET: i32 = 8;
pub const CHIRALITY_VOCAB: usize = Chirality::ALL.len();
pub const DEGREE_VOCAB: usize = 11;
pub const NUM_H_VOCAB: usize = 9;
pub const HYBRIDIZATION_VOCAB: usize = Hybridization::ALL.len();
pub const BOND_DIR_VOCAB: usize = BondDir::ALL.len();
pub const BOND_TYPE_VOCAB: usize = BondType::ALL.len();
pub const IN_RING_VOCAB: usize = 2;

pub const DEFAULT_GAMMA: f64 = 10.0;
const GRID_STRIDE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub gamma: f64,
    pub length_centers: Vec<f64>,
    pub angle_centers: Vec<f64>,
    /// When false the length and angle RBF blocks are all zero
    /// (topology-only ablation). Widths are unchanged.
    pub geometry: bool,
}

/// `lo, lo + stride, ...` up to and including `hi` (within rounding).
pub fn grid(lo: f64, hi: f64, stride: f64) -> Vec<f64> {
    let n = ((hi - lo) / stride + 1e-9).floor() as usize + 1;
    (0..n).map(|i| lo + i as f64 * stride).collect()
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            gamma: DEFAULT_GAMMA,
            length_centers: grid(0.0, 5.0, GRID_STRIDE),
            angle_centers: grid(0.0, std::f64::consts::PI, GRID_STRIDE),
            geometry: true,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("RBF gamma must be positive, got {}", self.gamma)));
        }
        for (name, c) in [("length", &self.length_centers), ("angle", &self.angle_centers)] {
            if c.is_empty() || !c.windows(2).all(|w| w[0] < w[1]) {
                return Err(Error::Config(format!("{name} RBF centers must be non-empty and strictly increasing")));
            }
        }
        Ok(())
    }

    pub fn layout(&self) -> FeatureLayout {
        FeatureLayout::new(self)
    }
}

pub fn rbf_expand(x: f64, centers: &[f64], gamma: f64) -> Vec<f64> {
    centers.iter().map(|mu| (-gamma * (x - mu) * (x - mu)).exp()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureBlock {
    pub name: String,
    pub offset: usize,
    pub width: usize,
}

/// Self-describing column layout of the three feature matrices, stored in
/// checkpoints so a model is never fed features it was not trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub atom: Vec<FeatureBlock>,
    pub bond: Vec<FeatureBlock>,
    pub angle: Vec<FeatureBlock>,
    pub gamma: f64,
    pub length_centers: Vec<f64>,
    pub angle_centers: Vec<f64>,
    pub geometry: bool,
}

fn blocks(entries: &[(&str, usize)]) -> Vec<FeatureBlock> {
    let mut offset = 0;
    entries.iter()
        .map(|&(name, width)| {
            let b = FeatureBlock {
                name: name.to_string(),
                offset,
                width,
            };
            offset += width;
            b
        })
        .collect()
}

fn total(blocks: &[FeatureBlock]) -> usize {
    blocks.last().map_or(0, |b| b.offset + b.width)
}

impl FeatureLayout {
    pub fn new(config: &FeatureConfig) -> Self {
        FeatureLayout {
            atom: blocks(&[
                ("atom_type", ATOM_TYPE_VOCAB),
                ("aromatic", AROMATIC_VOCAB),
                ("formal_charge", CHARGE_VOCAB),
                ("chirality", CHIRALITY_VOCAB),
                ("degree", DEGREE_VOCAB),
                ("num_h", NUM_H_VOCAB),
                ("hybridization", HYBRIDIZATION_VOCAB),
            ]),
            bond: blocks(&[
                ("bond_dir", BOND_DIR_VOCAB),
                ("bond_type", BOND_TYPE_VOCAB),
                ("in_ring", IN_RING_VOCAB),
                ("length_rbf", config.length_centers.len()),
            ]),
            angle: blocks(&[("angle_rbf", config.angle_centers.len())]),
            gamma: config.gamma,
            length_centers: config.length_centers.clone(),
            angle_centers: config.angle_centers.clone(),
            geometry: config.geometry,
        }
    }

    pub fn atom_width(&self) -> usize {
        total(&self.atom)
    }

    pub fn bond_width(&self) -> usize {
        total(&self.bond)
    }

    pub fn angle_width(&self) -> usize {
        total(&self.angle)
    }

    /// Human-readable list of differences; empty when compatible.
    pub fn diff(&self, other: &FeatureLayout) -> Vec<String> {
        let mut out = Vec::new();
        for (entity, a, b) in [
            ("atom", &self.atom, &other.atom),
            ("bond", &self.bond, &other.bond),
            ("angle", &self.angle, &other.angle),
        ] {
            if a != b {
                let fmt = |v: &[FeatureBlock]| {
                    v.iter()
                        .map(|b| format!("{}@{}+{}", b.name, b.offset, b.width))
                        .collect::<Vec<_>>()
                        .join(", ")
                };
                out.push(format!("{entity} blocks: [{}] vs [{}]", fmt(a), fmt(b)));
            }
        }
        if self.gamma != other.gamma {
            out.push(format!("gamma: {} vs {}", self.gamma, other.gamma));
        }
        if self.length_centers != other.length_centers {
            out.push(format!(
                "length centers: {} vs {}",
                self.length_centers.len(),
                other.length_centers.len()
            ));
        }
        if self.angle_centers != other.angle_centers {
            out.push(format!(
                "angle centers: {} vs {}",
                self.angle_centers.len(),
                other.angle_centers.len()
            ));
        }
        if self.geometry != other.geometry {
            out.push(format!("geometry features: {} vs {}", self.geometry, other.geometry));
        }
        out
    }
}

/// Feature matrices plus per-entity mask flags.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedGraph {
    pub atom: Tensor,
    pub bond: Tensor,
    pub angle: Tensor,
    pub atom_mask: Vec<bool>,
    pub bond_mask: Vec<bool>,
    pub angle_mask: Vec<bool>,
}

fn mask_rows(t: &mut Tensor, flags: &mut [bool], rows: &[usize]) {
    let w = t.cols();
    for &r in rows {
        t.data_mut()[r * w..(r + 1) * w].fill(0.0);
        flags[r] = true;
    }
}

impl EncodedGraph {
    pub fn mask_atoms(&mut self, rows: &[usize]) {
        mask_rows(&mut self.atom, &mut self.atom_mask, rows);
    }

    pub fn mask_bonds(&mut self, rows: &[usize]) {
        mask_rows(&mut self.bond, &mut self.bond_mask, rows);
    }

    pub fn mask_angles(&mut self, rows: &[usize]) {
        mask_rows(&mut self.angle, &mut self.angle_mask, rows);
    }
}

fn one_hot(row: &mut [f64], block: &FeatureBlock, index: usize) -> Result<()> {
    if index >= block.width {
        return Err(Error::Vocabulary(format!(
            "{}: index {index} outside vocabulary of {}",
            block.name, block.width
        )));
    }
    row[block.offset + index] = 1.0;
    Ok(())
}

pub fn encode(graph: &DualGraph, mol: &Molecule, config: &FeatureConfig) -> Result<EncodedGraph> {
    let layout = config.layout();
    let (n, m, a) = (graph.num_atoms, graph.num_bonds(), graph.num_angles());

    let aw = layout.atom_width();
    let mut atom = vec![0.0; n * aw];
    for (u, at) in mol.atoms.iter().enumerate() {
        if at.element == 0 || at.element > MAX_ATOMIC_NUMBER {
            return Err(Error::Vocabulary(format!("atomic number {}", at.element)));
        }
        let row = &mut atom[u * aw..(u + 1) * aw];
        let charge = (at.formal_charge + CHARGE_OFFSET).clamp(0, CHARGE_VOCAB as i32 - 1) as usize;
        one_hot(row, &layout.atom[0], at.element as usize)?;
        one_hot(row, &layout.atom[1], at.aromatic as usize)?;
        one_hot(row, &layout.atom[2], charge)?;
        one_hot(row, &layout.atom[3], at.chirality.index())?;
        one_hot(row, &layout.atom[4], graph.degree(u).min(DEGREE_VOCAB - 1))?;
        one_hot(row, &layout.atom[5], (at.num_explicit_h as usize).min(NUM_H_VOCAB - 1))?;
        one_hot(row, &layout.atom[6], at.hybridization.index())?;
    }

    let bw = layout.bond_width();
    let mut bond = vec![0.0; m * bw];
    for (i, b) in mol.bonds.iter().enumerate() {
        let row = &mut bond[i * bw..(i + 1) * bw];
        one_hot(row, &layout.bond[0], b.dir.index())?;
        one_hot(row, &layout.bond[1], b.bond_type.index())?;
        one_hot(row, &layout.bond[2], b.in_ring as usize)?;
        if config.geometry {
            let rbf = rbf_expand(graph.lengths[i], &config.length_centers, config.gamma);
            let blk = &layout.bond[3];
            row[blk.offset..blk.offset + blk.width].copy_from_slice(&rbf);
        }
    }

    let gw = layout.angle_width();
    let mut angle = vec![0.0; a * gw];
    if config.geometry {
        for (k, &phi) in graph.angle_values.iter().enumerate() {
            let rbf = rbf_expand(phi, &config.angle_centers, config.gamma);
            angle[k * gw..(k + 1) * gw].copy_from_slice(&rbf);
        }
    }

    Ok(EncodedGraph {
        atom: Tensor::matrix(n, aw, atom)?,
        bond: Tensor::matrix(m, bw, bond)?,
        angle: Tensor::matrix(a, gw, angle)?,
        atom_mask: vec![false; n],
        bond_mask: vec![false; m],
        angle_mask: vec![false; a],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn default_grids() {
        let c = FeatureConfig::default();
        assert_eq!(c.length_centers.len(), 51);
        assert_eq!(c.angle_centers.len(), 32);
        assert!((c.length_centers[50] - 5.0).abs() < 1e-12);
        assert!((c.angle_centers[31] - 3.1).abs() < 1e-12);
        c.validate().unwrap();
    }

    #[test]
    fn rbf_examples() {
        let c = FeatureConfig::default();
        let e = rbf_expand(c.length_centers[3], &c.length_centers, 10.0);
        assert_eq!(e[3], 1.0);
        let e = rbf_expand(0.4, &[0.3], 10.0);
        assert!((e[0] - 0.904_837_418_035_959_6).abs() < 1e-12);
        // 1.2 beyond the last center
        let far = rbf_expand(5.0 + 1.2, &c.length_centers, 10.0);
        assert!(far.iter().all(|&v| v < 1e-6));
    }

    #[test]
    fn widths() {
        let l = FeatureConfig::default().layout();
        assert_eq!(l.atom_width(), 119 + 2 + 16 + 4 + 11 + 9 + 6);
        assert_eq!(l.bond_width(), 7 + 4 + 2 + 51);
        assert_eq!(l.angle_width(), 32);
    }

    #[test]
    fn carbon_one_hot_positions() {
        let m = fixtures::cyclopropane();
        let g = DualGraph::build(&m).unwrap();
        let e = encode(&g, &m, &FeatureConfig::default()).unwrap();
        let row = e.atom.row(0);
        assert_eq!(row[6], 1.0);
        let l = FeatureConfig::default().layout();
        // degree 2
        assert_eq!(row[l.atom[4].offset + 2], 1.0);
        // charge 0 at slot 8
        assert_eq!(row[l.atom[2].offset + 8], 1.0);
        // every bond in the ring
        for r in 0..3 {
            assert_eq!(e.bond.row(r)[l.bond[2].offset + 1], 1.0);
        }
    }

    #[test]
    fn length_on_grid_center_peaks() {
        let m = fixtures::diatomic(1.5);
        let g = DualGraph::build(&m).unwrap();
        let e = encode(&g, &m, &FeatureConfig::default()).unwrap();
        let l = FeatureConfig::default().layout();
        let row = e.bond.row(0);
        assert_eq!(&row[l.bond[1].offset..l.bond[1].offset + 4], &[1.0, 0.0, 0.0, 0.0]);
        assert!((row[l.bond[3].offset + 15] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn methanamine_shapes() {
        let m = fixtures::methanamine();
        let g = DualGraph::build(&m).unwrap();
        let e = encode(&g, &m, &FeatureConfig::default()).unwrap();
        let l = FeatureConfig::default().layout();
        // width-sum oracle, independent of the layout helper
        let atom_w: usize = [119, 2, 16, 4, 11, 9, 6].iter().sum();
        let bond_w: usize = [7, 4, 2, 51].iter().sum();
        assert_eq!(e.atom.shape(), &[7, atom_w]);
        assert_eq!(e.bond.shape(), &[6, bond_w]);
        // C: 4 bonds -> 6 angles, N: 3 bonds -> 3 angles
        assert_eq!(e.angle.shape(), &[9, 32]);
        assert_eq!(l.atom_width(), atom_w);
    }

    #[test]
    fn geometry_ablation_zeroes_rbf_blocks() {
        let m = fixtures::water();
        let g = DualGraph::build(&m).unwrap();
        let cfg = FeatureConfig {
            geometry: false,
            ..FeatureConfig::default()
        };
        let e = encode(&g, &m, &cfg).unwrap();
        assert!(e.angle.data().iter().all(|&v| v == 0.0));
        let blk = &cfg.layout().bond[3];
        assert!(e.bond.row(0)[blk.offset..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn layout_diff_reports_changes() {
        let a = FeatureConfig::default().layout();
        let mut cfg = FeatureConfig::default();
        cfg.gamma = 5.0;
        cfg.angle_centers.pop();
        let d = a.diff(&cfg.layout());
        assert!(d.iter().any(|s| s.contains("gamma")));
        assert!(d.iter().any(|s| s.contains("angle")));
        assert!(a.diff(&a).is_empty());
    }
}
