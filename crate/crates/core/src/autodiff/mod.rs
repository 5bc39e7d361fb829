//! Minimal reverse-mode automatic differentiation for small dense networks.

mod adam;
mod gaussian;
pub mod gradcheck;
mod graph;
mod mlp;
mod params;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use gaussian::{tanh_gaussian_sample, LOG_STD_MAX, LOG_STD_MIN};
pub use graph::{Graph, Var, TANH_BOUND};
pub use mlp::{mlp_forward, Activation, Mlp, MlpSpec};
pub use params::{bind, collect_grads, fingerprint, soft_update, Parameters};
pub use tensor::{matmul, Tensor};
