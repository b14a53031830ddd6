//! End-to-end inference, duration control and evaluation.
mod acoustic_synth;
mod control;
mod lexicon;
mod sweep;
mod synth;
mod vocoder;

pub use acoustic_synth::{embed_speaker, generate_mel, mel_mse};
pub use control::{aggregate_metrics, duration_control, eval_duration_metrics, DurationMetrics};
pub use lexicon::Lexicon;
pub use sweep::{
    evaluate_policy, style_transfer_sweep, sweep_with_pairs, SweepConfig, SweepReport, SweepRow, SweepRun, CSV_HEADER,
};
pub use synth::{speaker_cosine, SynthesisOutput, SynthesisRequest, Synthesizer};
pub use vocoder::{GriffinLim, Vocoder};
