//! Attribute-level attention for multi-source entity linkage.
//!
//! A record pair is described by two contrastive features per attribute
//! (shared tokens and unique tokens). Each feature is projected into a latent
//! space, a shared attention function scores every feature, and a small
//! classifier reads the attention-weighted features. Domain adaptation acts
//! on the attention scores: the `zero` variant aligns source attention with
//! the mean attention of unlabeled target pairs, the `few` variant reweights
//! a small labeled support set by its distance from source attention
//! centroids, and `hyb` combines both.
//!
//! Modules, bottom-up:
//!
//! * [`data`]: records, pairs, schema alignment, pair files.
//! * [`features`]: tokenization, contrastive features, embeddings.
//! * [`model`]: parameters, forward and backward passes, checkpoints.
//! * [`losses`]: loss terms and the batch objective.
//! * [`training`]: Adam and the four training variants.
//! * [`eval`]: PRAUC and attention reports.
//! * [`synth`]: synthetic multi-source corpora.
//! * [`cli`]: the `adamel` command-line front end.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod features;
pub mod losses;
pub mod model;
pub mod rng;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
