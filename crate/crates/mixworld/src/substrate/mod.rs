//! Differentiable computation substrate: tensors, reverse-mode gradients,
//! distribution primitives, Adam, splittable RNG, and checkpoint IO.

pub mod checkpoint;
pub mod dist;
pub mod gradcheck;
pub mod graph;
pub mod params;
pub mod rng;
pub mod tensor;

pub use dist::{gaussian_kl, DiagGaussian, GaussNode};
pub use graph::{Graph, NodeId};
pub use params::ParamStore;
pub use rng::RngStream;
pub use tensor::{Scalar, Tensor};
