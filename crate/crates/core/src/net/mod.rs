//! Convolutional actor/critic networks with reverse-mode gradients, the squashed
//! Gaussian policy head, Adam and the checkpoint format.

pub mod adam;
pub mod arch;
pub mod checkpoint;
pub mod network;
pub mod policy;
pub mod real;

pub use adam::{Adam, AdamConfig};
pub use arch::{ArchSpec, Layer, LedgerEntry, Shape};
pub use checkpoint::{file_digest, Checkpoint};
pub use network::{Network, Tape};
pub use policy::{deterministic_action, log_prob, sample_action, PolicyOutput, SquashedSample};
pub use real::Real;
