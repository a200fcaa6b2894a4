//! Occupancy-gated parallel CNN / BiLSTM recognition of human activity from
//! sparse mmWave radar point clouds.

#[cfg(feature = "cli")]
pub mod cli;
pub mod error;
pub mod gradcheck;
pub mod ingest;
pub mod model;
pub mod ogconv;
pub mod ops;
pub mod projection;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Precision, Real, Tensor};
