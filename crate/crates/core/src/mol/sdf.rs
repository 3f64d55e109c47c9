//! MDL MOL V2000 / SD file reader and writer.
//!
//! Fixed-column layout (1-based columns):
//!
//! ```text
//! counts line   aaabbb...                atoms 1-3, bonds 4-6
//! atom line     xxxxx.xxxxyyyyy.yyyyzzzzz.zzzz aaaddcccsss...
//!               x 1-10, y 11-20, z 21-30, symbol 32-34, charge code 37-39
//! bond line     111222tttsss             first 1-3, second 4-6, type 7-9, stereo 10-12
//! ```
//!
//! `M  CHG` property lines override the atom-block charge codes. Data
//! items after `M  END` (`> <name>` followed by value lines) are read as
//! numeric labels, except `split` and `fingerprint` which fill the
//! corresponding fields. Records end at a `$$$$` line.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{estimate_hybridization, Atom, Bond, BondDir, BondType, Chirality, Molecule, Split};
use crate::error::{Error, Result};

fn err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Fixed-width field `[start, end)` (0-based byte columns), trimmed.
fn field(line: &str, start: usize, end: usize) -> Option<&str> {
    line.get(start..end.min(line.len())).map(str::trim)
}

fn int_field(line: &str, start: usize, end: usize, lineno: usize, what: &str) -> Result<i64> {
    let f = field(line, start, end).ok_or_else(|| err(lineno, format!("missing {what}")))?;
    f.parse()
        .map_err(|_| err(lineno, format!("{what}: expected an integer, found {f:?}")))
}

/// Parses every record, failing on the first bad one.
pub fn parse_sdf(text: &str) -> Result<Vec<Molecule>> {
    parse_sdf_records(text).into_iter().collect()
}

/// Parses every record independently so callers can skip bad ones.
pub fn parse_sdf_records(text: &str) -> Vec<Result<Molecule>> {
    let lines: Vec<&str> = text.lines().map(|l| l.trim_end_matches('\r')).collect();
    let mut out = Vec::new();
    let mut start = 0;
    let mut record_no = 0;
    for i in 0..=lines.len() {
        let at_end = i == lines.len();
        if at_end || lines[i].trim() == "$$$$" {
            let chunk = &lines[start..i];
            // blank trailing chunk (file ends with $$$$ and a newline)
            if !(at_end && chunk.iter().all(|l| l.trim().is_empty())) {
                record_no += 1;
                out.push(parse_record(chunk, start + 1, record_no));
            }
            start = i + 1;
        }
    }
    out
}

fn parse_record(lines: &[&str], first_line: usize, record_no: usize) -> Result<Molecule> {
    let ln = |i: usize| first_line + i;
    if lines.len() < 4 {
        return Err(err(ln(lines.len().saturating_sub(1)), "record ends before the counts line"));
    }
    let counts = lines[3];
    if counts.contains("V3000") {
        return Err(err(ln(3), "V3000 molfiles are not supported"));
    }
    if counts.len() < 6 {
        return Err(err(ln(3), format!("counts line too short ({} chars)", counts.len())));
    }
    let n_atoms = int_field(counts, 0, 3, ln(3), "atom count")?;
    let n_bonds = int_field(counts, 3, 6, ln(3), "bond count")?;
    if n_atoms < 0 || n_bonds < 0 {
        return Err(err(ln(3), "negative atom or bond count"));
    }
    let (n_atoms, n_bonds) = (n_atoms as usize, n_bonds as usize);
    if lines.len() < 4 + n_atoms + n_bonds {
        return Err(err(
            ln(lines.len().saturating_sub(1)),
            format!(
                "counts line announces {n_atoms} atoms and {n_bonds} bonds but the record has only {} lines",
                lines.len()
            ),
        ));
    }

    let mut atoms = Vec::with_capacity(n_atoms);
    let mut coords = Vec::with_capacity(n_atoms);
    for i in 0..n_atoms {
        let idx = 4 + i;
        let line = lines[idx];
        if line.len() < 34 {
            return Err(err(ln(idx), format!("atom line too short ({} chars, need 34)", line.len())));
        }
        let mut xyz = [0.0; 3];
        for (k, v) in xyz.iter_mut().enumerate() {
            let f = field(line, 10 * k, 10 * k + 10)
                .ok_or_else(|| err(ln(idx), "malformed coordinate field"))?;
            *v = f
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(ln(idx), format!("non-numeric coordinate {f:?}")))?;
        }
        let sym = field(line, 31, 34).ok_or_else(|| err(ln(idx), "malformed element field"))?;
        let z = super::atomic_number(sym)
            .ok_or_else(|| err(ln(idx), format!("unknown element symbol {sym:?}")))?;
        let mut atom = Atom::new(z);
        if let Some(code) = field(line, 36, 39).filter(|s| !s.is_empty()) {
            let code: i64 = code
                .parse()
                .map_err(|_| err(ln(idx), format!("charge code {code:?} is not an integer")))?;
            atom.formal_charge = match code {
                1 => 3,
                2 => 2,
                3 => 1,
                5 => -1,
                6 => -2,
                7 => -3,
                _ => 0,
            };
        }
        atoms.push(atom);
        coords.push(xyz);
    }

    let mut bonds: Vec<Bond> = Vec::with_capacity(n_bonds);
    let mut seen = std::collections::HashSet::new();
    for i in 0..n_bonds {
        let idx = 4 + n_atoms + i;
        let line = lines[idx];
        if line.len() < 9 {
            return Err(err(ln(idx), format!("bond line too short ({} chars, need 9)", line.len())));
        }
        let a = int_field(line, 0, 3, ln(idx), "first bond atom")?;
        let b = int_field(line, 3, 6, ln(idx), "second bond atom")?;
        for v in [a, b] {
            if v < 1 || v as usize > n_atoms {
                return Err(err(ln(idx), format!("atom index out of range: {v} (1..={n_atoms})")));
            }
        }
        let (a, b) = (a as usize - 1, b as usize - 1);
        if a == b {
            return Err(err(ln(idx), "bond joins an atom to itself"));
        }
        if !seen.insert((a.min(b), a.max(b))) {
            return Err(err(ln(idx), format!("duplicate bond {}-{}", a + 1, b + 1)));
        }
        let bond_type = match int_field(line, 6, 9, ln(idx), "bond type")? {
            1 => BondType::Single,
            2 => BondType::Double,
            3 => BondType::Triple,
            4 => BondType::Aromatic,
            t => return Err(err(ln(idx), format!("unsupported bond type {t}"))),
        };
        let stereo = match field(line, 9, 12).filter(|s| !s.is_empty()) {
            Some(s) => s
                .parse::<i64>()
                .map_err(|_| err(ln(idx), format!("stereo code {s:?} is not an integer")))?,
            None => 0,
        };
        let dir = match (bond_type, stereo) {
            (BondType::Double, 3) => BondDir::EitherDouble,
            (_, 1) => BondDir::BeginWedge,
            (_, 6) => BondDir::BeginDash,
            (_, 4) => BondDir::Unknown,
            _ => BondDir::None,
        };
        bonds.push(Bond {
            a,
            b,
            bond_type,
            dir,
            in_ring: false,
        });
    }

    // properties block
    let mut idx = 4 + n_atoms + n_bonds;
    let mut charges_reset = false;
    while idx < lines.len() {
        let line = lines[idx];
        if line.starts_with("M  END") {
            idx += 1;
            break;
        }
        if line.starts_with("M  CHG") {
            if !charges_reset {
                atoms.iter_mut().for_each(|a| a.formal_charge = 0);
                charges_reset = true;
            }
            let toks: Vec<&str> = line[6..].split_whitespace().collect();
            let count: usize = toks
                .first()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| err(ln(idx), "M  CHG without an entry count"))?;
            if toks.len() < 1 + 2 * count {
                return Err(err(ln(idx), format!("M  CHG announces {count} entries")));
            }
            for pair in toks[1..1 + 2 * count].chunks(2) {
                let a: usize = pair[0]
                    .parse()
                    .map_err(|_| err(ln(idx), format!("bad atom index {:?} in M  CHG", pair[0])))?;
                let c: i32 = pair[1]
                    .parse()
                    .map_err(|_| err(ln(idx), format!("bad charge {:?} in M  CHG", pair[1])))?;
                if a < 1 || a > n_atoms {
                    return Err(err(ln(idx), format!("atom index out of range: {a} in M  CHG")));
                }
                atoms[a - 1].formal_charge = c;
            }
        }
        idx += 1;
    }

    // data items
    let mut labels = BTreeMap::new();
    let mut fingerprint = None;
    let mut split = None;
    while idx < lines.len() {
        let line = lines[idx];
        if !line.starts_with('>') {
            idx += 1;
            continue;
        }
        let name = match (line.find('<'), line.rfind('>')) {
            (Some(s), Some(e)) if e > s => line[s + 1..e].to_string(),
            _ => return Err(err(ln(idx), "data header without <name>")),
        };
        let header_line = ln(idx);
        idx += 1;
        let mut value = String::new();
        while idx < lines.len() && !lines[idx].trim().is_empty() {
            if !value.is_empty() {
                value.push('\n');
            }
            value.push_str(lines[idx].trim());
            idx += 1;
        }
        match name.as_str() {
            "split" => {
                split = Some(match value.as_str() {
                    "train" => Split::Train,
                    "valid" => Split::Valid,
                    "test" => Split::Test,
                    other => return Err(err(header_line, format!("unknown split tag {other:?}"))),
                });
            }
            "fingerprint" => {
                let bits: Result<Vec<u8>> = value
                    .chars()
                    .filter(|c| !c.is_whitespace() && *c != ',')
                    .map(|c| match c {
                        '0' => Ok(0),
                        '1' => Ok(1),
                        _ => Err(err(header_line, format!("fingerprint bit {c:?} not in {{0,1}}"))),
                    })
                    .collect();
                fingerprint = Some(bits?);
            }
            _ => {
                if value.is_empty() || value.eq_ignore_ascii_case("nan") {
                    labels.insert(name, None);
                } else if let Ok(v) = value.parse::<f64>() {
                    labels.insert(name, Some(v));
                }
            }
        }
    }

    // derived atom attributes
    let mut degree = vec![0usize; n_atoms];
    let mut order_sum = vec![0.0f64; n_atoms];
    for b in &bonds {
        for (u, v) in [(b.a, b.b), (b.b, b.a)] {
            degree[u] += 1;
            order_sum[u] += b.bond_type.order();
            if atoms[v].element == 1 {
                atoms[u].num_explicit_h += 1;
            }
            if b.bond_type == BondType::Aromatic {
                atoms[u].aromatic = true;
            }
        }
    }
    for (i, a) in atoms.iter_mut().enumerate() {
        a.chirality = Chirality::Unspecified;
        a.hybridization = estimate_hybridization(a.element, a.formal_charge, degree[i], order_sum[i]);
    }

    let name = lines[0].trim();
    let id = if name.is_empty() {
        format!("mol{record_no}")
    } else {
        name.to_string()
    };
    let mut mol = Molecule::new(id, atoms, bonds, coords).map_err(|e| err(first_line, e.to_string()))?;
    mol.labels = labels;
    mol.fingerprint = fingerprint;
    mol.split = split;
    mol.validate().map_err(|e| err(first_line, e.to_string()))?;
    Ok(mol)
}

/// Serializes molecules as V2000 records. Chirality, hybridization and
/// explicit-H counts are not stored; they are re-derived when read back.
pub fn write_sdf(molecules: &[Molecule]) -> Result<String> {
    let mut s = String::new();
    for m in molecules {
        if m.atoms.len() > 999 || m.bonds.len() > 999 {
            return Err(Error::Data(format!("{}: too large for a V2000 counts line", m.id)));
        }
        let _ = writeln!(s, "{}", m.id);
        let _ = writeln!(s, "  geognn");
        s.push('\n');
        let _ = writeln!(s, "{:3}{:3}  0  0  0  0  0  0  0  0999 V2000", m.atoms.len(), m.bonds.len());
        for (a, c) in m.atoms.iter().zip(&m.coords) {
            let _ = writeln!(
                s,
                "{:10.4}{:10.4}{:10.4} {:<3} 0  0  0  0  0  0  0  0  0  0  0  0",
                c[0],
                c[1],
                c[2],
                a.symbol()
            );
        }
        for b in &m.bonds {
            let t = b.bond_type.index() + 1;
            let stereo = match b.dir {
                BondDir::BeginWedge => 1,
                BondDir::BeginDash => 6,
                BondDir::Unknown => 4,
                BondDir::EitherDouble => 3,
                _ => 0,
            };
            let _ = writeln!(s, "{:3}{:3}{:3}{:3}", b.a + 1, b.b + 1, t, stereo);
        }
        let charged: Vec<(usize, i32)> = m
            .atoms
            .iter()
            .enumerate()
            .filter(|(_, a)| a.formal_charge != 0)
            .map(|(i, a)| (i + 1, a.formal_charge))
            .collect();
        for chunk in charged.chunks(8) {
            let _ = write!(s, "M  CHG{:3}", chunk.len());
            for (i, c) in chunk {
                let _ = write!(s, " {i:3} {c:3}");
            }
            s.push('\n');
        }
        s.push_str("M  END\n");
        for (k, v) in &m.labels {
            let _ = writeln!(s, "> <{k}>");
            match v {
                Some(v) => {
                    let _ = writeln!(s, "{v:?}");
                }
                None => s.push_str("nan\n"),
            }
            s.push('\n');
        }
        if let Some(fp) = &m.fingerprint {
            s.push_str("> <fingerprint>\n");
            fp.iter().for_each(|b| s.push(if *b == 1 { '1' } else { '0' }));
            s.push_str("\n\n");
        }
        if let Some(split) = m.split {
            let _ = writeln!(s, "> <split>\n{split}\n");
        }
        s.push_str("$$$$\n");
    }
    Ok(s)
}
