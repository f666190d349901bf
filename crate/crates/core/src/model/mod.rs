//! The completion network and its checkpoints.

mod checkpoint;
mod config;
mod network;

pub use checkpoint::{ArrayDescriptor, Checkpoint, Manifest, FORMAT_VERSION};
pub use config::ModelConfig;
pub use network::{ForwardOutput, NamedArray, Network, Prediction, Shapes};
