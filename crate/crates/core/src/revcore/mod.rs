//! The dual-residual reversible stack.
//!
//! Module `i` of a stage maps `(x_{i-1}, y_{i-1})` to
//!
//! ```text
//! y_i = β · x_{i-1}
//! x_i = (F_i(x_{i-1}) + α · x_{i-1}) + y_{i-1}
//! ```
//!
//! with `y_0 = β · x_0`, and is inverted by
//!
//! ```text
//! x_{i-1} = y_i / β
//! y_{i-1} = x_i − (F_i(x_{i-1}) + α · x_{i-1})
//! ```
//!
//! The head and the stage transitions read `x_N` only, so `∂L/∂y_N = 0` at
//! every stage boundary.

mod coefficients;
mod ledger;
mod network;
mod stage;

pub use coefficients::{Coefficients, Mode};
pub use ledger::{ActivationLedger, LedgerReport};
pub use network::{init_from_pretrained, init_hard, CachedTrace, DrrNetwork, ReversibleTrace};
pub use stage::{reverse_stage, stage_forward, StageActivations};
