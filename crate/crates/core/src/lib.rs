//! Duration-driven text-to-speech: a flow-matching acoustic model fed with
//! duration-expanded phonemes, an autoregressive phoneme-duration model, and
//! preference optimization of the duration model from win/lose pairs.
//!
//! The crate is organised bottom-up:
//!
//! - [`data`]: corpus ingestion, phoneme vocabulary, mel extraction, the
//!   duration-expansion primitive and a synthetic corpus generator.
//! - [`flowmatch`]: optimal-transport paths, the conditional flow-matching
//!   loss, logit-normal timesteps, classifier-free guidance and Euler
//!   integration.
//! - [`acoustic`]: the adaLN-zero transformer acoustic model, speaker encoder,
//!   training loop and EMA.
//! - [`duration`]: the encoder-decoder duration model, its losses and the
//!   constrained sampler.
//! - [`dpo`]: preference pairs, the pairwise objective and its training loop.
//! - [`pipeline`]: end-to-end synthesis, duration control, metrics and the
//!   pair-count sweep.

pub mod acoustic;
pub mod checkpoint;
pub mod data;
pub mod dpo;
pub mod duration;
pub mod error;
pub mod flowmatch;
pub mod nn;
pub mod pipeline;

pub use error::{Error, Result};
