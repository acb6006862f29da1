//! Dual-residual reversible networks.
//!
//! A pretrained residual stack `x_i = F_i(x_{i-1}) + x_{i-1}` is rewritten as
//!
//! ```text
//! y_i = β · x_{i-1}
//! x_i = (F_i(x_{i-1}) + α · x_{i-1}) + y_{i-1}
//! ```
//!
//! which reduces to the original network at `(α, β) = (1, 0)` and is exactly
//! invertible whenever `β ≠ 0`. Training can then discard intermediate
//! activations and rebuild them from the stage outputs during backprop.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, the training
//! harness and the command line live in the `drrnet` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod analysis;
pub mod blocks;
pub mod error;
pub mod numerics;
pub mod revcore;
pub mod schedule;

pub use error::{Error, Result};
pub use numerics::{Element, Precision, Prng, Tensor};
