//! JSON-lines molecule format, one object per line:
//!
//! ```text
//! {"id": str,
//!  "atoms": [{"element": str, "formal_charge": int, "chirality": str,
//!             "aromatic": bool, "num_h": int, "hybridization": str}],
//!  "bonds": [{"a": int, "b": int, "type": str, "dir": str}],
//!  "coords": [[x, y, z], ...],
//!  "labels": {name: float | null},
//!  "fingerprint": [0|1, ...],            optional
//!  "split": "train" | "valid" | "test"}  optional
//! ```
//!
//! Atom attributes other than `element` fall back to their
//! unspecified/unknown category when absent. Blank lines are skipped.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Atom, Bond, BondDir, BondType, Chirality, Hybridization, Molecule, Split};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct RawAtom {
    element: String,
    #[serde(default)]
    formal_charge: i32,
    #[serde(default)]
    chirality: Chirality,
    #[serde(default)]
    aromatic: bool,
    #[serde(default)]
    num_h: u32,
    #[serde(default)]
    hybridization: Hybridization,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawBond {
    a: usize,
    b: usize,
    #[serde(rename = "type")]
    bond_type: BondType,
    #[serde(default)]
    dir: BondDir,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawMolecule {
    id: String,
    atoms: Vec<RawAtom>,
    bonds: Vec<RawBond>,
    coords: Vec<[f64; 3]>,
    #[serde(default)]
    labels: BTreeMap<String, Option<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fingerprint: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<Split>,
}

fn from_raw(raw: RawMolecule, line: usize) -> Result<Molecule> {
    let err = |message: String| Error::Parse { line, message };
    let mut atoms = Vec::with_capacity(raw.atoms.len());
    for (i, a) in raw.atoms.into_iter().enumerate() {
        let element = super::atomic_number(&a.element)
            .ok_or_else(|| err(format!("atom {i}: unknown element symbol {:?}", a.element)))?;
        atoms.push(Atom {
            element,
            formal_charge: a.formal_charge,
            chirality: a.chirality,
            num_explicit_h: a.num_h,
            aromatic: a.aromatic,
            hybridization: a.hybridization,
        });
    }
    let bonds = raw
        .bonds
        .into_iter()
        .map(|b| Bond {
            a: b.a,
            b: b.b,
            bond_type: b.bond_type,
            dir: b.dir,
            in_ring: false,
        })
        .collect();
    let fingerprint = match raw.fingerprint {
        Some(bits) => Some(
            bits.into_iter()
                .map(|b| match b {
                    0 | 1 => Ok(b as u8),
                    _ => Err(err(format!("fingerprint bit {b} not in {{0,1}}"))),
                })
                .collect::<Result<Vec<u8>>>()?,
        ),
        None => None,
    };
    let mut m = Molecule {
        id: raw.id,
        atoms,
        bonds,
        coords: raw.coords,
        labels: raw.labels,
        fingerprint,
        split: raw.split,
    };
    m.validate().map_err(|e| err(e.to_string()))?;
    Ok(m)
}

fn to_raw(m: &Molecule) -> RawMolecule {
    RawMolecule {
        id: m.id.clone(),
        atoms: m
            .atoms
            .iter()
            .map(|a| RawAtom {
                element: a.symbol().to_string(),
                formal_charge: a.formal_charge,
                chirality: a.chirality,
                aromatic: a.aromatic,
                num_h: a.num_explicit_h,
                hybridization: a.hybridization,
            })
            .collect(),
        bonds: m
            .bonds
            .iter()
            .map(|b| RawBond {
                a: b.a,
                b: b.b,
                bond_type: b.bond_type,
                dir: b.dir,
            })
            .collect(),
        coords: m.coords.clone(),
        labels: m.labels.clone(),
        fingerprint: m
            .fingerprint
            .as_ref()
            .map(|f| f.iter().map(|&b| b as u64).collect()),
        split: m.split,
    }
}

pub fn parse_jsonl(text: &str) -> Result<Vec<Molecule>> {
    parse_jsonl_records(text).into_iter().collect()
}

/// One result per non-blank line.
pub fn parse_jsonl_records(text: &str) -> Vec<Result<Molecule>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let line = i + 1;
            let raw: RawMolecule = serde_json::from_str(l).map_err(|e| Error::Parse {
                line,
                message: e.to_string(),
            })?;
            from_raw(raw, line)
        })
        .collect()
}

pub fn write_jsonl(molecules: &[Molecule]) -> Result<String> {
    let mut out = String::new();
    for m in molecules {
        out.push_str(&serde_json::to_string(&to_raw(m))?);
        out.push('\n');
    }
    Ok(out)
}
