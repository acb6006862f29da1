//! F-blocks, the `G(x) = F(x) + α·x` wrapper, and the plain residual network
//! used for pretraining and as the conventional baseline.

mod block;
mod checkpoint;
mod network;

pub use block::{BlockKind, BlockTape, FBlock};
pub use checkpoint::{Checkpoint, ParamRecord, CHECKPOINT_VERSION};
pub use network::{Backbone, NetConfig, Pattern, PlainCache, PlainResidualNetwork, Stage};
