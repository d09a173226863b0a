//! Dense networks, optimizers and parameter containers.

mod adam;
pub mod checkpoint;
pub mod gradcheck;
mod mlp;

pub use adam::{Adam, AdamConfig};
pub use mlp::{
    checksum, sigmoid, Activation, Backward, ForwardCache, Gradients, Mlp, MlpSpec,
    OutputActivation,
};
