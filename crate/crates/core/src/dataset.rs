//! Featurized molecules and train/valid/test partitions.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{encode, EncodedGraph, FeatureConfig};
use crate::geometry::DualGraph;
use crate::mol::{Molecule, Split};

/// A molecule with its dual graph and encoded features.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub molecule: Molecule,
    pub graph: DualGraph,
    pub encoded: EncodedGraph,
}

impl Sample {
    pub fn new(molecule: Molecule, config: &FeatureConfig) -> Result<Self> {
        let graph = DualGraph::build(&molecule)?;
        let encoded = encode(&graph, &molecule, config)?;
        Ok(Sample {
            molecule,
            graph,
            encoded,
        })
    }

    pub fn id(&self) -> &str {
        &self.molecule.id
    }

    /// Label values for `tasks`, `None` where absent or missing.
    pub fn labels_for(&self, tasks: &[String]) -> Vec<Option<f64>> {
        tasks
            .iter()
            .map(|t| self.molecule.labels.get(t).copied().flatten())
            .collect()
    }
}

/// Featurizes molecules in parallel, keeping input order.
pub fn prepare(molecules: Vec<Molecule>, config: &FeatureConfig) -> Result<Vec<Sample>> {
    config.validate()?;
    molecules.into_par_iter().map(|m| Sample::new(m, config)).collect()
}

#[derive(Debug, Clone, Default)]
pub struct DatasetSplit {
    pub train: Vec<Sample>,
    pub valid: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl DatasetSplit {
    /// Partitions by each molecule's split tag; untagged molecules go to
    /// train.
    pub fn from_tags(samples: Vec<Sample>) -> Result<Self> {
        let mut s = DatasetSplit::default();
        for x in samples {
            match x.molecule.split {
                Some(Split::Valid) => s.valid.push(x),
                Some(Split::Test) => s.test.push(x),
                Some(Split::Train) | None => s.train.push(x),
            }
        }
        if s.train.is_empty() {
            return Err(Error::Data("training split is empty".into()));
        }
        Ok(s)
    }

    pub fn get(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }
}

/// Label names present in any sample, sorted.
pub fn label_names<'a>(samples: impl IntoIterator<Item = &'a Sample>) -> Vec<String> {
    let mut names = std::collections::BTreeSet::new();
    for s in samples {
        names.extend(s.molecule.labels.keys().cloned());
    }
    names.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn tags_partition() {
        let cfg = FeatureConfig::default();
        let mut a = fixtures::water();
        a.split = Some(Split::Test);
        let mut b = fixtures::methane();
        b.split = Some(Split::Valid);
        let c = fixtures::diatomic(1.0);
        let s = DatasetSplit::from_tags(prepare(vec![a, b, c], &cfg).unwrap()).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (1, 1, 1));
    }

    #[test]
    fn empty_train_is_an_error() {
        let mut a = fixtures::water();
        a.split = Some(Split::Test);
        let samples = prepare(vec![a], &FeatureConfig::default()).unwrap();
        assert!(matches!(DatasetSplit::from_tags(samples), Err(Error::Data(_))));
    }
}
