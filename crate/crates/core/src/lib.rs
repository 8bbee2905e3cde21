pub mod channel;
pub mod codec;
pub mod construction;
pub mod error;
pub mod lattice;
pub mod par;
pub mod polar;
mod quad;
pub mod sim;
pub mod verify;

pub use error::{Error, Result};
pub use lattice::{NoiseModel, PartitionChain};
pub use par::Execution;
