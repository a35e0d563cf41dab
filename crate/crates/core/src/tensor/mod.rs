//! Dense NHWC tensors with a reverse-mode autodiff tape.

mod element;
mod kernels;
mod tape;
#[allow(clippy::module_inception)]
mod tensor;

pub use element::{gemm, Element, Trans};
pub use tape::{Mode, Tape, Var};
pub use tensor::Tensor;
