//! Dense reverse-mode automatic differentiation and the Adam optimizer.

mod adam;
mod params;
mod tape;
mod tensor;

pub use adam::Adam;
pub use params::{ParamSet, ParamVars};
pub use tape::{sigmoid, softplus, Gradients, Tape, Var};
pub use tensor::Tensor;
