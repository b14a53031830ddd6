//! Autoregressive phoneme-duration model.
//!
//! A bidirectional encoder over phonemes (with a masked-phoneme auxiliary
//! head) feeds a causal decoder that classifies each phoneme's duration into
//! one of 99 frame counts. Both stacks cross-attend to a fixed-length summary
//! of a reference mel clip. Prompt phonemes and durations are prefixed to the
//! target and teacher-forced.

mod loss;
mod model;
mod sampling;
mod train;

pub use loss::{duration_loss, mask_phonemes, masked_lm_loss, token_nll, total_loss};
pub use model::{DecoderState, DurationInput, DurationModel, DurationOutput};
pub use sampling::{filter_logits, sample_durations, sample_index, SamplingParams};
pub use train::{DurationBatch, DurationExample, DurationStepStats, DurationTrainer, CHECKPOINT_KIND};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::MAX_DURATION;
use crate::error::{Error, Result};

/// Duration classes: index = frame count, class 0 is never a target.
pub const NUM_CLASSES: usize = MAX_DURATION as usize + 1;

/// Segment ids distinguishing prompt and target positions.
pub const SEG_PROMPT: u32 = 0;
pub const SEG_TARGET: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DurModelConfig {
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ff_mult: usize,
    pub dropout: f64,
    pub ref_query_len: usize,
    pub n_mels: usize,
    pub vocab_size: usize,
    pub lambda_ml: f64,
    pub lambda_dur: f64,
    pub sentence_mask_prob: f64,
    pub phoneme_mask_prob: f64,
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub ref_clip_seconds: f64,
}

impl Default for DurModelConfig {
    fn default() -> Self {
        Self {
            enc_layers: 2,
            dec_layers: 2,
            hidden: 128,
            heads: 4,
            ff_mult: 4,
            dropout: 0.1,
            ref_query_len: 32,
            n_mels: 80,
            vocab_size: 64,
            lambda_ml: 1.0,
            lambda_dur: 10.0,
            sentence_mask_prob: 0.5,
            phoneme_mask_prob: 0.15,
            peak_lr: 1e-3,
            warmup_steps: 100,
            weight_decay: 0.01,
            grad_clip: 1.0,
            ref_clip_seconds: 3.0,
        }
    }
}

impl DurModelConfig {
    /// Full-size configuration (8 + 8 layers, 512 hidden, 8 heads).
    pub fn full() -> Self {
        Self {
            enc_layers: 8,
            dec_layers: 8,
            hidden: 512,
            heads: 8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "hidden {} not divisible by heads {}",
                self.hidden, self.heads
            )));
        }
        if self.ref_query_len == 0 {
            return Err(Error::Config("ref_query_len must be positive".into()));
        }
        for (name, p) in [
            ("sentence_mask_prob", self.sentence_mask_prob),
            ("phoneme_mask_prob", self.phoneme_mask_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} {p} outside [0, 1]")));
            }
        }
        if self.lambda_ml < 0.0 || self.lambda_dur < 0.0 {
            return Err(Error::Config("loss weights must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// In-context condition: prompt phonemes, their durations and a reference
/// mel clip `[frames, n_mels]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DurationPrompt {
    pub phonemes: Vec<u32>,
    pub durations: Vec<u32>,
    pub ref_mel: Array2<f32>,
}

impl DurationPrompt {
    pub fn validate(&self) -> Result<()> {
        if self.phonemes.len() != self.durations.len() {
            return Err(Error::Validation(format!(
                "prompt has {} phonemes but {} durations",
                self.phonemes.len(),
                self.durations.len()
            )));
        }
        crate::data::check_duration_labels(&self.durations)?;
        if self.ref_mel.nrows() == 0 {
            return Err(Error::Input("empty reference clip".into()));
        }
        Ok(())
    }
}
