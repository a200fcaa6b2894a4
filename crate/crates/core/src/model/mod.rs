//! The OG-PCL network, its configuration and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod network;

pub use checkpoint::{
    checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, load_checkpoint_strict, save_checkpoint,
    write_embeddings_csv,
};
pub use config::{BlockConfig, BranchConfig, ModelConfig};
pub use network::{Branch, ForwardCache, ForwardOutput, OgPcl, SequenceBatch};
