//! Cascaded explicit and implicit emotion-intensity control for spectrogram
//! synthesis, with a synthetic corpus that carries ground-truth intensity.
//!
//! The pipeline has three training phases:
//!
//! 1. [`manifold`]: a vector-quantised autoencoder learns per-phoneme emotion
//!    codes from emotional mels, conditioned on the paired neutral mel and
//!    the speaker.
//! 2. [`swer`]: a sliding-window recogniser predicts per-phoneme emotion
//!    probabilities.
//! 3. [`cascade`]: a generator maps probabilities onto the code manifold and
//!    a synthesiser renders mels from phonemes and the generated codes.

pub mod cascade;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod kv;
pub mod manifold;
pub mod numerics;
pub mod pipeline;
pub mod seed;
pub mod swer;

pub use error::{Error, Result};
