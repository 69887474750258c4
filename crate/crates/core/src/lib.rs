//! Weakly supervised quality estimation for bilingual subtitle translations.
//!
//! The pipeline labels subtitle translation pairs as Good, Loose or Bad
//! without human annotation, then trains a recurrent + convolutional
//! classifier on the result:
//!
//! 1. [`subtitle`] parses SRT files, aligns source and target blocks by
//!    timestamp and tokenizes block text.
//! 2. [`bow`] and [`forest`] score aligned pairs with a bag-of-words
//!    similarity model and a random forest over [`features`].
//! 3. [`labeler`] fuses both scores into weak labels and mixes them with
//!    the synthetic samples produced by [`synth`].
//! 4. [`nn`] trains the hybrid BiLSTM + CNN classifier (and its LSTM-only and
//!    CNN-only baselines); [`eval`] computes the reported metrics.
//!
//! [`toy`] generates a deterministic synthetic bilingual corpus that exercises
//! every stage end to end, and [`cli`] wires the stages into commands.

pub mod bow;
pub mod cli;
pub mod config;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod features;
pub mod forest;
pub mod labeler;
pub mod nn;
pub mod subtitle;
pub mod synth;
pub mod toy;

pub use error::{Error, Result};
