//! Few-shot text classification by gradient-based meta-learning.
//!
//! The crate is split along the pipeline:
//!
//! - [`tensor`] / [`graph`]: a tape-based reverse-mode autodiff engine that
//!   supports gradients of gradients, so the meta-objective can be
//!   differentiated through the inner-loop adaptation updates.
//! - [`optim`]: global-norm gradient clipping and Adam.
//! - [`encoder`]: embedding lookup plus the dilated causal convolution (TCN)
//!   and bidirectional LSTM sequence encoders.
//! - [`attention`]: the attentive base learner — feedforward attention,
//!   softmax/sigmoid heads and their losses.
//! - [`model`]: parameter construction and the per-document forward pass.
//! - [`meta`]: MAML/ATAML training, the pretrained and random baselines,
//!   and the meta-test procedure.
//! - [`tasks`]: corpus structures, mini-corpus construction, N-way K-shot
//!   episode sampling and a synthetic phrase benchmark.
//! - [`metrics`]: accuracy, micro/macro F1 and cross-episode aggregation.
//!
//! The crate is `no_std` (with `alloc`); everything that touches files or
//! the command line lives in the companion CLI crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod attention;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod math;
pub mod meta;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod tasks;
pub mod tensor;

pub use error::Error;
pub use graph::{Graph, VarId};
pub use tensor::Tensor;
