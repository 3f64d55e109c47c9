//! Periodic table lookups.

const SYMBOLS: [&str; 118] = [
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S", "Cl",
    "Ar", "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As",
    "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In",
    "Sn", "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd", "Pm", "Sm", "Eu", "Gd", "Tb",
    "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W", "Re", "Os", "Ir", "Pt", "Au", "Hg", "Tl",
    "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th", "Pa", "U", "Np", "Pu", "Am", "Cm", "Bk",
    "Cf", "Es", "Fm", "Md", "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs", "Mt", "Ds", "Rg", "Cn", "Nh",
    "Fl", "Mc", "Lv", "Ts", "Og",
];

pub const MAX_ATOMIC_NUMBER: u8 = 118;

/// Atomic number for a symbol, case-insensitive ("CL" and "cl" both map to 17).
pub fn atomic_number(symbol: &str) -> Option<u8> {
    let s = symbol.trim();
    SYMBOLS
        .iter()
        .position(|e| e.eq_ignore_ascii_case(s))
        .map(|i| i as u8 + 1)
}

pub fn symbol(atomic_number: u8) -> Option<&'static str> {
    match atomic_number {
        1..=MAX_ATOMIC_NUMBER => Some(SYMBOLS[atomic_number as usize - 1]),
        _ => None,
    }
}

/// Valence electron count for main-group elements, `None` for d/f-block.
pub fn valence_electrons(z: u8) -> Option<u8> {
    // Offsets of the first element of each period and the period length.
    let (start, len) = match z {
        1..=2 => return Some(z),
        3..=10 => (3, 8),
        11..=18 => (11, 8),
        19..=36 => (19, 18),
        37..=54 => (37, 18),
        55..=86 => (55, 32),
        87..=118 => (87, 32),
        _ => return None,
    };
    let pos = z - start;
    match len {
        8 => Some(pos + 1),
        18 => match pos {
            0 | 1 => Some(pos + 1),
            12..=17 => Some(pos - 12 + 3),
            _ => None,
        },
        _ => match pos {
            0 | 1 => Some(pos + 1),
            26..=31 => Some(pos - 26 + 3),
            _ => None,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookups() {
        assert_eq!(atomic_number("C"), Some(6));
        assert_eq!(atomic_number("cl"), Some(17));
        assert_eq!(atomic_number("Og"), Some(118));
        assert_eq!(atomic_number("Xx"), None);
        assert_eq!(symbol(8), Some("O"));
        assert_eq!(symbol(0), None);
        for z in 1..=118u8 {
            assert_eq!(atomic_number(symbol(z).unwrap()), Some(z));
        }
    }

    #[test]
    fn main_group_valence() {
        assert_eq!(valence_electrons(1), Some(1));
        assert_eq!(valence_electrons(6), Some(4));
        assert_eq!(valence_electrons(7), Some(5));
        assert_eq!(valence_electrons(8), Some(6));
        assert_eq!(valence_electrons(17), Some(7));
        assert_eq!(valence_electrons(35), Some(7));
        assert_eq!(valence_electrons(33), Some(5));
        assert_eq!(valence_electrons(53), Some(7));
        assert_eq!(valence_electrons(82), Some(4));
        assert_eq!(valence_electrons(26), None);
        assert_eq!(valence_electrons(78), None);
    }
}
