//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Operations on tensors attached to a [`Graph`] are recorded as nodes.
//! [`backward`] walks the graph in reverse; with `create_graph` set, the
//! derivative rules are themselves recorded so gradients can be
//! differentiated again (double backpropagation).

mod backward;
mod gradcheck;
mod ops;
mod tensor;

pub use backward::backward;
pub use gradcheck::grad_check;
pub use ops::{apply, PrimitiveKind};
pub use tensor::{Graph, NodeId, Tensor};

pub(crate) use ops::logsumexp_row;
