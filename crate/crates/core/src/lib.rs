//! Privacy-preserving pose estimation from film-filtered ("shadow") images.
//!
//! The crate holds the enhancement network and its training loop, the
//! composite restoration loss, synthetic degradation, and the evaluation
//! metrics (keypoint detection rate / precision and entropy-based quality).

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod degrade;
pub mod error;
pub mod features;
pub mod imaging;
pub mod loss;
pub mod nn;
pub mod pose;
pub mod quality;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use imaging::SsimParams;
pub use nn::{Checkpoint, Network, NetworkConfig};
pub use tensor::{ImageTensor, ResizePolicy, Shape};
