//! Molecules: atoms, bonds, 3-D coordinates and optional labels.
//!
//! Two readers produce [`Molecule`]s: a MOL V2000 / SDF parser and a
//! JSON-lines format that round-trips every field. Both run the same
//! structural validation and recompute ring membership.

mod elements;
mod hybridization;
pub mod jsonl;
pub mod sdf;

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use elements::{atomic_number, symbol, valence_electrons, MAX_ATOMIC_NUMBER};
pub use hybridization::estimate_hybridization;
pub use jsonl::{parse_jsonl, parse_jsonl_records, write_jsonl};
pub use sdf::{parse_sdf, parse_sdf_records, write_sdf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Chirality {
    #[default]
    Unspecified,
    Cw,
    Ccw,
    Other,
}

impl Chirality {
    pub const ALL: [Chirality; 4] = [
        Chirality::Unspecified,
        Chirality::Cw,
        Chirality::Ccw,
        Chirality::Other,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hybridization {
    Sp,
    Sp2,
    Sp3,
    Sp3d,
    Sp3d2,
    #[default]
    Unknown,
}

impl Hybridization {
    pub const ALL: [Hybridization; 6] = [
        Hybridization::Sp,
        Hybridization::Sp2,
        Hybridization::Sp3,
        Hybridization::Sp3d,
        Hybridization::Sp3d2,
        Hybridization::Unknown,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BondType {
    #[default]
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondType {
    pub const ALL: [BondType; 4] = [
        BondType::Single,
        BondType::Double,
        BondType::Triple,
        BondType::Aromatic,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Bond order used for electron counting; aromatic counts 1.5.
    pub fn order(self) -> f64 {
        match self {
            BondType::Single => 1.0,
            BondType::Double => 2.0,
            BondType::Triple => 3.0,
            BondType::Aromatic => 1.5,
        }
    }
}

/// Stereo direction of a bond, using the RDKit vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BondDir {
    #[default]
    None,
    BeginWedge,
    BeginDash,
    EndDownRight,
    EndUpRight,
    EitherDouble,
    Unknown,
}

impl BondDir {
    pub const ALL: [BondDir; 7] = [
        BondDir::None,
        BondDir::BeginWedge,
        BondDir::BeginDash,
        BondDir::EndDownRight,
        BondDir::EndUpRight,
        BondDir::EitherDouble,
        BondDir::Unknown,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Atom {
    /// Atomic number, 1..=118.
    pub element: u8,
    pub formal_charge: i32,
    pub chirality: Chirality,
    pub num_explicit_h: u32,
    pub aromatic: bool,
    pub hybridization: Hybridization,
}

impl Atom {
    pub fn new(element: u8) -> Self {
        Atom {
            element,
            formal_charge: 0,
            chirality: Chirality::Unspecified,
            num_explicit_h: 0,
            aromatic: false,
            hybridization: Hybridization::Unknown,
        }
    }

    pub fn symbol(&self) -> &'static str {
        symbol(self.element).unwrap_or("?")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub bond_type: BondType,
    pub dir: BondDir,
    /// Derived from the bond graph by [`Molecule::validate`].
    pub in_ring: bool,
}

impl Bond {
    pub fn new(a: usize, b: usize, bond_type: BondType) -> Self {
        Bond {
            a,
            b,
            bond_type,
            dir: BondDir::None,
            in_ring: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Molecule {
    pub id: String,
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
    /// Cartesian coordinates in Angstrom, one per atom.
    pub coords: Vec<[f64; 3]>,
    pub labels: BTreeMap<String, Option<f64>>,
    pub fingerprint: Option<Vec<u8>>,
    pub split: Option<Split>,
}

impl Molecule {
    /// Builds and validates a molecule; ring membership is recomputed.
    pub fn new(id: impl Into<String>, atoms: Vec<Atom>, bonds: Vec<Bond>, coords: Vec<[f64; 3]>) -> Result<Self> {
        let mut m = Molecule {
            id: id.into(),
            atoms,
            bonds,
            coords,
            labels: BTreeMap::new(),
            fingerprint: None,
            split: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn num_atoms(&self) -> usize {
        self.atoms.len()
    }

    fn invalid(&self, message: impl Into<String>) -> Error {
        Error::InvalidMolecule {
            id: self.id.clone(),
            message: message.into(),
        }
    }

    /// Checks structural invariants and refreshes `in_ring` on every bond.
    pub fn validate(&mut self) -> Result<()> {
        if self.atoms.is_empty() {
            return Err(self.invalid("molecule has no atoms"));
        }
        if self.coords.len() != self.atoms.len() {
            return Err(self.invalid(format!(
                "{} coordinates for {} atoms",
                self.coords.len(),
                self.atoms.len()
            )));
        }
        for (i, a) in self.atoms.iter().enumerate() {
            if a.element == 0 || a.element > MAX_ATOMIC_NUMBER {
                return Err(self.invalid(format!("atom {i}: atomic number {} out of range", a.element)));
            }
        }
        if let Some(i) = self.coords.iter().position(|c| !c.iter().all(|v| v.is_finite())) {
            return Err(self.invalid(format!("atom {i}: non-finite coordinate")));
        }
        let n = self.atoms.len();
        let mut seen = HashSet::new();
        for (i, b) in self.bonds.iter().enumerate() {
            if b.a >= n || b.b >= n {
                return Err(self.invalid(format!("bond {i}: atom index out of range")));
            }
            if b.a == b.b {
                return Err(self.invalid(format!("bond {i}: endpoints coincide")));
            }
            if !seen.insert((b.a.min(b.b), b.a.max(b.b))) {
                return Err(self.invalid(format!("bond {i}: duplicate bond {}-{}", b.a, b.b)));
            }
        }
        if let Some(fp) = &self.fingerprint {
            if fp.iter().any(|&bit| bit > 1) {
                return Err(self.invalid("fingerprint bit not in {0,1}"));
            }
        }
        if let Some((k, _)) = self.labels.iter().find(|(_, v)| v.is_some_and(|x| !x.is_finite())) {
            return Err(self.invalid(format!("label {k:?} is not finite")));
        }
        let rings = ring_membership(n, &self.bonds);
        for (b, r) in self.bonds.iter_mut().zip(rings) {
            b.in_ring = r;
        }
        Ok(())
    }

    /// Number of bonds incident on each atom.
    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.atoms.len()];
        for b in &self.bonds {
            d[b.a] += 1;
            d[b.b] += 1;
        }
        d
    }

    /// Copy with atoms relabeled: new atom `i` is old atom `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Molecule> {
        let n = self.atoms.len();
        let mut inverse = vec![usize::MAX; n];
        for (new, &old) in perm.iter().enumerate() {
            if old >= n || inverse[old] != usize::MAX {
                return Err(self.invalid("not a permutation"));
            }
            inverse[old] = new;
        }
        if perm.len() != n {
            return Err(self.invalid("not a permutation"));
        }
        let mut m = self.clone();
        m.atoms = perm.iter().map(|&o| self.atoms[o].clone()).collect();
        m.coords = perm.iter().map(|&o| self.coords[o]).collect();
        for b in &mut m.bonds {
            b.a = inverse[b.a];
            b.b = inverse[b.b];
        }
        m.validate()?;
        Ok(m)
    }
}

/// For each bond, whether it lies on a cycle of the undirected bond graph.
///
/// A bond is on a cycle exactly when its endpoints stay connected after the
/// bond is removed.
pub fn ring_membership(num_atoms: usize, bonds: &[Bond]) -> Vec<bool> {
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); num_atoms];
    for (i, b) in bonds.iter().enumerate() {
        if b.a < num_atoms && b.b < num_atoms {
            adj[b.a].push((b.b, i));
            adj[b.b].push((b.a, i));
        }
    }
    let mut seen = vec![false; num_atoms];
    let mut stack = Vec::new();
    bonds
        .iter()
        .enumerate()
        .map(|(skip, b)| {
            if b.a >= num_atoms || b.b >= num_atoms {
                return false;
            }
            seen.fill(false);
            stack.clear();
            stack.push(b.a);
            seen[b.a] = true;
            while let Some(u) = stack.pop() {
                for &(v, e) in &adj[u] {
                    if e != skip && !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
            seen[b.b]
        })
        .collect()
}
