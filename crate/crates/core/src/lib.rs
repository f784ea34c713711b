//! Sequence classification with a transformer encoder feeding a GRU.
//!
//! The crate is layered bottom-up:
//!
//! * [`tensor`]: dense tensors, a reverse-mode tape and a gradient checker.
//! * [`textpipe`]: punctuation filtering, tokenization, vocabulary,
//!   front padding/truncation and pretrained embedding loading.
//! * [`nn`]: multi-head self-attention, the encoder block, recurrent cells,
//!   attention pooling and the log-softmax head.
//! * [`model`]: the T-E-GRU classifier and its recurrent/attention baselines,
//!   plus checkpoints.
//! * [`train`]: NLL loss, SGD with step decay, the fit loop and metrics.
//! * [`synthetic`]: a seeded generator for the bundled toy sentiment corpus.

pub mod tensor;
pub mod textpipe;
pub mod nn;
pub mod model;
pub mod train;
pub mod synthetic;
