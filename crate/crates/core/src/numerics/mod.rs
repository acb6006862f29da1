//! Dense tensors, deterministic randomness, primitive ops with their
//! vector-Jacobian products, and a central-difference gradient oracle.

mod element;
mod fd;
pub mod ops;
mod prng;
mod tensor;

pub use element::{Element, Precision};
pub use fd::finite_difference_grad;
pub use ops::{gelu, gelu_derivative, matmul, matmul_vjp, softmax_rows, softmax_rows_vjp, Unary};
pub use prng::Prng;
pub use tensor::Tensor;
