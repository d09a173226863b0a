pub mod bounds;
pub mod cmdp;
pub mod critic;
pub mod discriminator;
pub mod envs;
pub mod error;
pub mod flow;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor;
