//! Dense tensors, reverse-mode differentiation, layers and optimization.

pub mod adam;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod params;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use graph::{sigmoid, Graph, Var};
pub use layers::{Activation, GruVars, Mode};
pub use params::{Container, Param, ParamStore};
pub use tensor::Tensor;
