//! Core engine for slide-level point-cloud classification under federated
//! training: a dense f64 autodiff graph, point sampling kernels (farthest
//! point / farthest cosine), the point transformer model, the dynamic
//! distribution adjustment loss schedule, a multi-site federated simulator,
//! a synthetic slide generator, and ROC-AUC evaluation.
//!
//! The crate is `no_std`-compatible (with `alloc`); all file formats, CLI
//! plumbing and IO live in the companion `fedpoint` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod augment;
pub mod dda;
pub mod fed;
pub mod gradcheck;
pub mod graph;
pub(crate) mod math;
pub mod metrics;
pub mod model;
pub mod optim;
#[cfg(feature = "oracles")]
pub mod oracles;
pub mod points;
pub mod rng;
pub mod sampling;
pub mod synth;
pub mod tensor;

pub use graph::{Graph, NodeId};
pub use points::{PointSet, SampleIndex};
pub use rng::Rng;
pub use tensor::Tensor;
