//! A small reverse-mode differentiation engine for dense real networks.
//!
//! Only what the simulator needs is provided: dense layers, ReLU, softmax
//! cross-entropy, a few elementwise helpers, and [`CustomOp`] for analytic
//! nodes such as the power amplifier or per-sample linear maps.

mod adamax;
mod tape;
mod tensor;

pub use adamax::{Adamax, AdamaxConfig};
pub use tape::{CustomOp, Gradients, NodeId, Tape};
pub use tensor::RealTensor;
