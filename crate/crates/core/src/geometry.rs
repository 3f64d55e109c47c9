//! Atom-bond graph G = (V, E) and bond-angle graph H = (E, A).
//!
//! Every bond is one node of H. Two bonds are joined in H when they share
//! an atom; the edge carries the angle at that shared atom. Bond lengths,
//! bond angles and the full interatomic distance matrix are computed once
//! here and reused by the featurizer and the pretraining targets.

use crate::error::{Error, Result};
use crate::features::EncodedGraph;
use crate::mol::Molecule;
use crate::rng::SplitMix64;

/// One edge of the bond-angle graph: bonds `bonds[0]` = (center, ends[0])
/// and `bonds[1]` = (center, ends[1]).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BondAngle {
    pub bonds: [usize; 2],
    pub center: usize,
    pub ends: [usize; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualGraph {
    pub num_atoms: usize,
    /// Undirected bonds with `a < b`, in the molecule's bond order.
    pub bonds: Vec<[usize; 2]>,
    pub angles: Vec<BondAngle>,
    /// Bond lengths in Angstrom, parallel to `bonds`.
    pub lengths: Vec<f64>,
    /// Bond angles in radians, parallel to `angles`.
    pub angle_values: Vec<f64>,
    /// Row-major `num_atoms x num_atoms` distances in Angstrom.
    pub distances: Vec<f64>,
    /// Per atom: `(neighbor atom, bond index)` in ascending bond order.
    pub atom_neighbors: Vec<Vec<(usize, usize)>>,
    /// Per bond: `(neighbor bond, angle index)` in ascending angle order.
    pub bond_neighbors: Vec<Vec<(usize, usize)>>,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

pub fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    norm(sub(a, b))
}

/// Angle at `center` between the arms to `w` and `v`, in radians.
pub fn angle_between(w: [f64; 3], center: [f64; 3], v: [f64; 3]) -> Result<f64> {
    let a = sub(w, center);
    let b = sub(v, center);
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Geometry("zero-length arm in bond angle".into()));
    }
    let cos = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]) / (na * nb);
    Ok(cos.clamp(-1.0, 1.0).acos())
}

impl DualGraph {
    pub fn build(mol: &Molecule) -> Result<DualGraph> {
        let n = mol.atoms.len();
        let bonds: Vec<[usize; 2]> = mol.bonds.iter().map(|b| [b.a.min(b.b), b.a.max(b.b)]).collect();

        let mut atom_neighbors = vec![Vec::new(); n];
        let mut lengths = Vec::with_capacity(bonds.len());
        for (i, &[a, b]) in bonds.iter().enumerate() {
            let l = distance(mol.coords[a], mol.coords[b]);
            if l == 0.0 {
                return Err(Error::Geometry(format!(
                    "{}: bonded atoms {a} and {b} coincide",
                    mol.id
                )));
            }
            lengths.push(l);
            atom_neighbors[a].push((b, i));
            atom_neighbors[b].push((a, i));
        }

        let mut angles = Vec::new();
        let mut angle_values = Vec::new();
        let mut bond_neighbors = vec![Vec::new(); bonds.len()];
        for (center, incident) in atom_neighbors.iter().enumerate() {
            for i in 0..incident.len() {
                for j in i + 1..incident.len() {
                    let (w, bw) = incident[i];
                    let (v, bv) = incident[j];
                    let phi = angle_between(mol.coords[w], mol.coords[center], mol.coords[v])
                        .map_err(|e| Error::Geometry(format!("{}: {e}", mol.id)))?;
                    let k = angles.len();
                    angles.push(BondAngle {
                        bonds: [bw, bv],
                        center,
                        ends: [w, v],
                    });
                    angle_values.push(phi);
                    bond_neighbors[bw].push((bv, k));
                    bond_neighbors[bv].push((bw, k));
                }
            }
        }

        let mut distances = vec![0.0; n * n];
        for u in 0..n {
            for v in u + 1..n {
                let d = distance(mol.coords[u], mol.coords[v]);
                distances[u * n + v] = d;
                distances[v * n + u] = d;
            }
        }

        Ok(DualGraph {
            num_atoms: n,
            bonds,
            angles,
            lengths,
            angle_values,
            distances,
            atom_neighbors,
            bond_neighbors,
        })
    }

    pub fn num_bonds(&self) -> usize {
        self.bonds.len()
    }

    pub fn num_angles(&self) -> usize {
        self.angles.len()
    }

    pub fn distance(&self, u: usize, v: usize) -> f64 {
        self.distances[u * self.num_atoms + v]
    }

    pub fn degree(&self, atom: usize) -> usize {
        self.atom_neighbors[atom].len()
    }
}

/// Ground truth for the entities hidden by [`mask_context`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MaskTargets {
    /// Selected atoms, ascending.
    pub atoms: Vec<usize>,
    /// Masked bonds, ascending, with their true lengths.
    pub bonds: Vec<usize>,
    pub lengths: Vec<f64>,
    /// Masked angles, ascending, with their true values.
    pub angles: Vec<usize>,
    pub angle_values: Vec<f64>,
}

/// Selects `max(1, round(ratio * |V|))` atoms and hides them together with
/// every bond touching them and every angle centred on them.
pub fn mask_context(
    graph: &DualGraph,
    encoded: &EncodedGraph,
    ratio: f64,
    rng: &mut SplitMix64,
) -> Result<(EncodedGraph, MaskTargets)> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Config(format!("mask ratio {ratio} outside (0, 1]")));
    }
    let n = graph.num_atoms;
    let k = ((ratio * n as f64).round() as usize).max(1).min(n);
    let atoms = rng.sample_indices(n, k);

    let mut bond_hit = vec![false; graph.num_bonds()];
    let mut angle_hit = vec![false; graph.num_angles()];
    for &u in &atoms {
        for &(_, b) in &graph.atom_neighbors[u] {
            bond_hit[b] = true;
        }
    }
    for (i, a) in graph.angles.iter().enumerate() {
        if atoms.binary_search(&a.center).is_ok() {
            angle_hit[i] = true;
        }
    }
    let bonds: Vec<usize> = (0..bond_hit.len()).filter(|&i| bond_hit[i]).collect();
    let angles: Vec<usize> = (0..angle_hit.len()).filter(|&i| angle_hit[i]).collect();

    let mut masked = encoded.clone();
    masked.mask_atoms(&atoms);
    masked.mask_bonds(&bonds);
    masked.mask_angles(&angles);

    let targets = MaskTargets {
        lengths: bonds.iter().map(|&b| graph.lengths[b]).collect(),
        angle_values: angles.iter().map(|&a| graph.angle_values[a]).collect(),
        atoms,
        bonds,
        angles,
    };
    Ok((masked, targets))
}
