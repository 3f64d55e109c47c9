//! Shared inputs for the criterion benchmarks.

use geognn_core::synth::{generate, SynthConfig};
use geognn_core::{FeatureConfig, Molecule, Sample};

/// Deterministic synthetic molecules.
pub fn molecules(count: usize, seed: u64) -> Vec<Molecule> {
    let cfg = SynthConfig {
        count,
        fingerprint_bits: 4,
        seed,
        ..SynthConfig::default()
    };
    generate(&cfg).expect("synthetic corpus")
}

pub fn samples(count: usize, seed: u64) -> Vec<Sample> {
    let features = FeatureConfig::default();
    molecules(count, seed)
        .into_iter()
        .map(|m| Sample::new(m, &features).expect("featurize"))
        .collect()
}
