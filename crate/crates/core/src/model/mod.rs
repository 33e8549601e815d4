//! The inverse-folding network: residue graphs, the layer stack with global
//! context gating, the classification head, metrics and training.

mod checkpoint;
mod config;
mod error;
mod graph;
mod metrics;
mod network;
mod train;

pub use checkpoint::{Checkpoint, MAGIC};
pub use config::{Activation, AtomUpdateMode, ModelConfig, VectorMlpKind};
pub use error::ModelError;
pub use graph::{build_graph, imputed_oxygen, nearest_neighbors, ResidueGraph};
pub use metrics::{argmax_rows, Metrics, SequencePrediction};
pub use network::{forward, global_context_attention, layer_prefix, VfnModel};
pub use train::{
    batch_indices, evaluate, loss_and_gradients, prepare, train, MetricRecord, TrainOptions, TrainOutput,
    TrainSinks,
};
