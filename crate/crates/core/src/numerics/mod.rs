//! Tensors, the differentiation tape, and a central-difference gradient
//! checker used as the test oracle for every differentiable path.

mod check;
mod graph;
mod tensor;

pub use check::{finite_difference_check, finite_difference_check_many, relative_error};
pub use graph::{Graph, Var, NORM_EPSILON};
pub use tensor::{l2_norm, Tensor};
