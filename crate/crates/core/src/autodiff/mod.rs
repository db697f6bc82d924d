//! Reverse-mode automatic differentiation over dense `f32` tensors.

mod gradcheck;
mod graph;
pub mod kernels;
mod ops;
mod tensor;

pub use gradcheck::{
    compare_against, finite_difference_check, finite_difference_check_with, relative_error, ElementCheck,
    ElementStatus, GradCheckOptions, GradCheckReport, DEFAULT_FLOOR,
};
pub use graph::{GradMap, Graph, NodeId, Op};
pub use ops::{broadcast_shape, BinaryKind, UnaryKind};
pub(crate) use ops::mask_hash;
pub use tensor::Tensor;
