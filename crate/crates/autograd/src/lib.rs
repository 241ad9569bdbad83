//! Reverse-mode automatic differentiation for small convolutional networks.

pub mod conv;
mod graph;
mod params;
mod real;
mod tensor;

pub use conv::ConvGeom;
pub use graph::{Gradients, Graph, Var};
pub use params::{Adam, Bound, ParamStore};
pub use real::Real;
pub use tensor::Tensor;
