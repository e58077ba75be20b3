//! Convolutional building blocks, the MiniRes network and its checkpoints.

pub mod checkpoint;
pub mod conv;
pub mod network;

pub use checkpoint::{Checkpoint, CheckpointMeta, NamedTensor};
pub use conv::{Conv2d, ConvSpec, PoolSpec};
pub use network::{ForwardCache, Gradients, Network, NetworkConfig, PoolConfig, ShortcutMerge};
