//! Synthesis and frame-level detection of partially fake (spliced) audio.
//!
//! The crate covers the full desk-scale pipeline:
//!
//! * [`audio`] — mono waveforms and lossless WAV I/O.
//! * [`corpus`] — toy corpus synthesis, the three word-level splice
//!   strategies with exact boundary ground truth, frame labels, and
//!   training-chunk sampling.
//! * [`features`] — 240-d log mel filterbank (+deltas) features and the
//!   binary feature-file format used to import external embeddings.
//! * [`nn`] — a minimal reverse-mode autodiff engine with exactly the layer
//!   set the detector needs, plus Adam, the Noam schedule, checkpoint
//!   serialization, and a finite-difference gradient checker.
//! * [`model`] — the boundary detector: ResNet-1D frame embeddings, optional
//!   feature concatenation, Transformer encoder, BiLSTM, per-frame sigmoid.
//! * [`pipeline`] — training loop, chunked-overlap inference with
//!   average-merging, boundary extraction, utterance scoring, EER and
//!   localization metrics.

pub mod audio;
pub mod corpus;
pub mod error;
pub mod features;
pub mod model;
pub mod nn;
pub mod pipeline;

pub use error::{Error, Result};
