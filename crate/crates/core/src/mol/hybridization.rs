//! Hybridization estimate for atoms read from files that do not carry it.
//!
//! Steric number = explicit degree + lone pairs, where the lone pairs come
//! from the valence electrons left after bonding. Hydrogens that are not
//! present as explicit atoms are not counted, so heavy-atom-only inputs
//! can come out one class too low. Atoms outside the main group, isolated
//! atoms and steric numbers outside 2..=6 map to `Unknown`.

use super::{valence_electrons, Hybridization};

pub fn estimate_hybridization(element: u8, formal_charge: i32, degree: usize, bond_order_sum: f64) -> Hybridization {
    if degree == 0 {
        return Hybridization::Unknown;
    }
    let Some(valence) = valence_electrons(element) else {
        return Hybridization::Unknown;
    };
    let lone_pairs = if valence >= 4 {
        let nonbonding = valence as i64 - formal_charge as i64 - bond_order_sum.round() as i64;
        (nonbonding.max(0) / 2) as usize
    } else {
        0
    };
    match degree + lone_pairs {
        2 => Hybridization::Sp,
        3 => Hybridization::Sp2,
        4 => Hybridization::Sp3,
        5 => Hybridization::Sp3d,
        6 => Hybridization::Sp3d2,
        _ => Hybridization::Unknown,
    }
}
