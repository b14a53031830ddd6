//! Non-autoregressive flow-matching acoustic model.
//!
//! The input stream is the channel concatenation
//! `[noisy mel | expanded phoneme embedding | repeated speaker embedding]`,
//! projected to the hidden size and processed by transformer blocks whose
//! layer norms are modulated by the timestep through zero-initialized
//! adaptive layer norm (adaLN-zero).

mod ema;
mod model;
mod speaker;
mod train;

pub use ema::{ema_update, Ema};
pub use model::{AcousticModel, CondDrop, DitBlock};
pub use speaker::{cosine, SpeakerEncoder, MIN_CLIP_FRAMES};
pub use train::{dead_parameters, snapshot, AcousticBatch, AcousticTrainer, StepStats, CHECKPOINT_KIND};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowmatch::{CfgParams, TimestepSampling};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NullCondition {
    /// Learned null phoneme and speaker embeddings.
    Learned,
    /// Dropped conditions become zero vectors.
    Zeros,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AcousticConfig {
    pub n_layers: usize,
    pub hidden_dim: usize,
    pub n_heads: usize,
    pub ff_mult: usize,
    pub dropout: f64,
    pub phone_dim: usize,
    pub spk_dim: usize,
    pub speaker_channels: usize,
    pub n_mels: usize,
    /// Phoneme vocabulary size including reserved ids.
    pub vocab_size: usize,
    pub time_dim: usize,
    pub cfg: CfgParams,
    pub timestep: TimestepSampling,
    pub null_condition: NullCondition,
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub ema_decay: f64,
    pub ref_clip_seconds: f64,
}

impl Default for AcousticConfig {
    fn default() -> Self {
        Self {
            n_layers: 4,
            hidden_dim: 128,
            n_heads: 4,
            ff_mult: 4,
            dropout: 0.1,
            phone_dim: 64,
            spk_dim: 192,
            speaker_channels: 128,
            n_mels: 80,
            vocab_size: 64,
            time_dim: 128,
            cfg: CfgParams::default(),
            timestep: TimestepSampling::default(),
            null_condition: NullCondition::Learned,
            peak_lr: 1e-3,
            warmup_steps: 100,
            weight_decay: 0.01,
            grad_clip: 1.0,
            ema_decay: 0.999,
            ref_clip_seconds: 3.0,
        }
    }
}

impl AcousticConfig {
    /// The full-size configuration (22 layers, 1024 hidden, 16 heads).
    pub fn full() -> Self {
        Self {
            n_layers: 22,
            hidden_dim: 1024,
            n_heads: 16,
            phone_dim: 512,
            speaker_channels: 512,
            time_dim: 256,
            peak_lr: 9e-5,
            warmup_steps: 20_000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || !self.hidden_dim.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "hidden_dim {} not divisible by n_heads {}",
                self.hidden_dim, self.n_heads
            )));
        }
        if !(self.hidden_dim / self.n_heads).is_multiple_of(2) {
            return Err(Error::Config("head dimension must be even for rotary encoding".into()));
        }
        if self.spk_dim == 0 || self.n_mels == 0 || self.vocab_size == 0 {
            return Err(Error::Config("spk_dim, n_mels and vocab_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return Err(Error::Config(format!("ema_decay {} outside [0, 1]", self.ema_decay)));
        }
        self.cfg.validate()
    }
}
