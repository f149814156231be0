//! Recurrent spiking networks with learnable intrinsic neuron properties,
//! trained across sequences of related tasks.

pub mod analysis;
pub mod cli;
pub mod container;
pub mod error;
pub mod gradients;
pub mod harness;
pub mod objective;
pub mod plasticity;
pub mod seed;
pub mod snn;
pub mod tasks;
pub mod tensor;

pub use error::{Error, Result};
