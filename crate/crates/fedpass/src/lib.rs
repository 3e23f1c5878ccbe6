//! A laboratory for passport-obfuscated vertical federated learning: split
//! training across feature-partitioned parties, reference attacks against
//! exchanged embeddings and gradients, baseline defenses, and verifiers for
//! the privacy guarantees claimed for passport obfuscation.

pub mod attacks;
pub mod data;
pub mod defenses;
pub mod error;
pub mod metrics;
pub mod network;
pub mod nn;
pub mod passport;
pub mod protocol;
pub mod runner;
pub mod tensor;
pub mod theory;

pub use error::{Error, Result};
pub use tensor::Tensor;
