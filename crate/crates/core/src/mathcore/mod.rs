//! Dense tensors, seeded randomness and reverse-mode differentiation.

mod rng;
mod tape;
mod tensor;

pub use rng::SeededRng;
pub use tape::{Fault, Gradients, NodeId, SparseRows, TableId, Tape};
pub use tensor::{
    elementwise, log_sum_exp, sigmoid, softmax, Activation, Binary, Elementwise, Real, Tensor,
};
