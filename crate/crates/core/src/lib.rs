//! Geometry-enhanced graph neural network for molecular property prediction.
//!
//! Molecules are read from SDF or JSON lines, turned into an atom-bond graph
//! and a bond-angle graph, featurized, and fed to a message-passing network
//! that updates atom and bond representations together. The network can be
//! pretrained on geometry-level and graph-level self-supervised tasks and
//! fine-tuned on labelled regression or classification tasks.

pub mod autograd;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod features;
pub mod fixtures;
pub mod geometry;
pub mod model;
pub mod mol;
pub mod pretrain;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod train;

pub use autograd::{Gradients, Graph, NodeId};
pub use checkpoint::{Checkpoint, CheckpointMeta, Stage};
pub use dataset::{DatasetSplit, Sample};
pub use error::{Error, Result};
pub use features::{encode, EncodedGraph, FeatureConfig, FeatureLayout};
pub use geometry::{mask_context, DualGraph, MaskTargets};
pub use model::{Embedding, GeoGnn, ModelConfig, ParamGroup, ParamStore, Precision};
pub use mol::{parse_jsonl, parse_sdf, write_jsonl, write_sdf, Molecule};
pub use pretrain::{LossComponents, PretrainConfig, Task};
pub use rng::SplitMix64;
pub use tensor::Tensor;
pub use train::{FinetuneConfig, FinetuneReport, Metric, Optimizer, TaskType, TrainConfig};
