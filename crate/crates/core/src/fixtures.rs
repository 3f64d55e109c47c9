//! Small hand-built molecules used by tests, benches and examples.

use crate::mol::{Atom, Bond, BondType, Hybridization, Molecule};

fn atom(z: u8, h: u32, hyb: Hybridization) -> Atom {
    Atom {
        num_explicit_h: h,
        hybridization: hyb,
        ..Atom::new(z)
    }
}

fn single(a: usize, b: usize) -> Bond {
    Bond::new(a, b, BondType::Single)
}

/// Water with an H-O-H angle of about 104.5 degrees.
pub fn water() -> Molecule {
    Molecule::new(
        "water",
        vec![
            atom(8, 2, Hybridization::Sp3),
            atom(1, 0, Hybridization::Unknown),
            atom(1, 0, Hybridization::Unknown),
        ],
        vec![single(0, 1), single(0, 2)],
        vec![[0.0, 0.0, 0.0], [0.9572, 0.0, 0.0], [-0.2400, 0.9266, 0.0]],
    )
    .expect("valid fixture")
}

/// Tetrahedral methane, C-H 1.09 Angstrom.
pub fn methane() -> Molecule {
    let s = 1.09 / 3f64.sqrt();
    let mut atoms = vec![atom(6, 4, Hybridization::Sp3)];
    atoms.extend((0..4).map(|_| atom(1, 0, Hybridization::Unknown)));
    Molecule::new(
        "methane",
        atoms,
        (1..5).map(|h| single(0, h)).collect(),
        vec![[0.0; 3], [s, s, s], [s, -s, -s], [-s, s, -s], [-s, -s, s]],
    )
    .expect("valid fixture")
}

/// Two carbons joined by a single bond `length` apart along z.
pub fn diatomic(length: f64) -> Molecule {
    let mut m = Molecule::new(
        "diatomic",
        vec![atom(6, 0, Hybridization::Sp), atom(6, 0, Hybridization::Sp)],
        vec![single(0, 1)],
        vec![[0.0; 3], [0.0, 0.0, length]],
    )
    .expect("valid fixture");
    m.id = format!("diatomic-{length}");
    m
}

pub fn single_atom() -> Molecule {
    Molecule::new("carbon", vec![atom(6, 0, Hybridization::Unknown)], vec![], vec![[0.0; 3]]).expect("valid fixture")
}

/// Methanamine CH3-NH2 with explicit hydrogens (staggered).
pub fn methanamine() -> Molecule {
    let atoms = vec![
        atom(6, 3, Hybridization::Sp3),
        atom(7, 2, Hybridization::Sp3),
        atom(1, 0, Hybridization::Unknown),
        atom(1, 0, Hybridization::Unknown),
        atom(1, 0, Hybridization::Unknown),
        atom(1, 0, Hybridization::Unknown),
        atom(1, 0, Hybridization::Unknown),
    ];
    let bonds = vec![
        single(0, 1),
        single(0, 2),
        single(0, 3),
        single(0, 4),
        single(1, 5),
        single(1, 6),
    ];
    let coords = vec![
        [0.0, 0.0, 0.0],
        [1.471, 0.0, 0.0],
        [-0.363, 1.028, 0.0],
        [-0.363, -0.514, 0.890],
        [-0.363, -0.514, -0.890],
        [1.809, -0.478, 0.830],
        [1.809, -0.478, -0.830],
    ];
    Molecule::new("methanamine", atoms, bonds, coords).expect("valid fixture")
}

/// Triangle of carbons, every bond in the ring.
pub fn cyclopropane() -> Molecule {
    let r = 1.51 / 3f64.sqrt();
    let coords = (0..3)
        .map(|k| {
            let t = k as f64 * 2.0 * std::f64::consts::PI / 3.0;
            [r * t.cos(), r * t.sin(), 0.0]
        })
        .collect();
    Molecule::new(
        "cyclopropane",
        (0..3).map(|_| atom(6, 0, Hybridization::Sp3)).collect(),
        vec![single(0, 1), single(1, 2), single(2, 0)],
        coords,
    )
    .expect("valid fixture")
}

/// Planar 1,2-dichloroethene. Atom order C1 C2 Cl1 Cl2 H1 H2 in both
/// isomers, so topology and atom/bond attributes are identical and only
/// coordinates differ. Geometries are approximate experimental values.
fn dichloroethene(id: &str, cc: f64, ccl: f64, ch: f64, ccl_angle: f64, cch_angle: f64, cis: bool) -> Molecule {
    let (a, b) = (ccl_angle.to_radians(), cch_angle.to_radians());
    let c1 = [-cc / 2.0, 0.0, 0.0];
    let c2 = [cc / 2.0, 0.0, 0.0];
    // substituent directions relative to the C=C axis
    let cl1 = [c1[0] + ccl * a.cos(), ccl * a.sin(), 0.0];
    let h1 = [c1[0] + ch * b.cos(), -ch * b.sin(), 0.0];
    let side = if cis { 1.0 } else { -1.0 };
    let cl2 = [c2[0] - ccl * a.cos(), side * ccl * a.sin(), 0.0];
    let h2 = [c2[0] - ch * b.cos(), -side * ch * b.sin(), 0.0];
    let atoms = vec![
        atom(6, 1, Hybridization::Sp2),
        atom(6, 1, Hybridization::Sp2),
        atom(17, 0, Hybridization::Sp3),
        atom(17, 0, Hybridization::Sp3),
        atom(1, 0, Hybridization::Unknown),
        atom(1, 0, Hybridization::Unknown),
    ];
    let bonds = vec![
        Bond::new(0, 1, BondType::Double),
        single(0, 2),
        single(1, 3),
        single(0, 4),
        single(1, 5),
    ];
    Molecule::new(id, atoms, bonds, vec![c1, c2, cl1, cl2, h1, h2]).expect("valid fixture")
}

pub fn cis_dichloroethene() -> Molecule {
    dichloroethene("cis-1,2-DCE", 1.324, 1.717, 1.083, 123.7, 119.4, true)
}

pub fn trans_dichloroethene() -> Molecule {
    dichloroethene("trans-1,2-DCE", 1.332, 1.727, 1.081, 120.9, 124.8, false)
}
