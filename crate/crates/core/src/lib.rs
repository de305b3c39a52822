//! Topology-perturbation explanations for graph convolutional networks.
//!
//! Dense-matrix GCN with an analytic adjacency gradient, a projected-Adam
//! mask optimizer for preserve/promote/attack explanations, first-order
//! saliency, synthetic benchmarks and evaluation metrics.

pub mod error;
pub mod explain;
pub mod gcn;
pub mod graph;
pub mod metrics;
pub mod optim;
pub mod protocol;
pub mod saliency;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use gcn::{GcnModel, Head, Prediction, Readout, Target};
pub use graph::{Edge, Graph, Mask, PerturbationSpace};
pub use train::{train, TrainConfig, TrainData};
