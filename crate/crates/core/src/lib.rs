pub mod deck;
pub mod error;
pub mod gate;
pub mod harness;
pub mod nn;
pub mod prune;
pub mod rng;
pub mod spectral;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
