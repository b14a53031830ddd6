//! Corpus ingestion, phoneme vocabulary, mel extraction and the duration
//! expansion primitive used by every other module.

mod corpus;
mod mel;
pub mod synthetic;
mod vocab;

use std::fmt;

use ndarray::{s, Array2};
use rand::Rng;

pub use corpus::{
    load_manifest, prepare_corpus, read_wav, write_wav, Corpus, CorpusInfo, ManifestRecord,
    PrepareReport,
};
pub use mel::{
    compute_mel, hann_window, hz_to_mel, mel_center_frequencies, mel_filterbank, mel_to_hz,
    read_mel, write_mel, MelConfig, MelStats, Stft, Waveform,
};
pub use vocab::{PhonemeVocab, BOS, MASK, PAD, UNK};

use crate::error::{Error, Result};

/// Longest admissible phoneme duration, in frames.
pub const MAX_DURATION: u32 = 99;

/// One aligned training item.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub speaker: String,
    pub text: String,
    pub phonemes: Vec<u32>,
    /// Frames per phoneme, each in `1..=99`.
    pub durations: Vec<u32>,
    /// `[frames, n_mels]`.
    pub mel: Array2<f32>,
}

impl Utterance {
    pub fn frames(&self) -> usize {
        self.mel.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    LengthMismatch,
    NonPositiveDuration,
    DurationTooLong,
    AlignmentMismatch,
    UnknownPhoneme,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RejectReason::LengthMismatch => "phoneme/duration length mismatch",
            RejectReason::NonPositiveDuration => "nonpositive duration",
            RejectReason::DurationTooLong => "duration>99",
            RejectReason::AlignmentMismatch => "alignment mismatch",
            RejectReason::UnknownPhoneme => "unknown phoneme",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Validation {
    Accepted,
    Rejected(RejectReason),
}

/// Decide whether an utterance is usable for training. Rejection is a value.
pub fn validate_and_filter(utt: &Utterance, vocab: &PhonemeVocab) -> Validation {
    use RejectReason::*;
    if utt.phonemes.len() != utt.durations.len() {
        return Validation::Rejected(LengthMismatch);
    }
    if utt.durations.contains(&0) {
        return Validation::Rejected(NonPositiveDuration);
    }
    if utt.durations.iter().any(|&d| d > MAX_DURATION) {
        return Validation::Rejected(DurationTooLong);
    }
    let total: usize = utt.durations.iter().map(|&d| d as usize).sum();
    if total != utt.frames() {
        return Validation::Rejected(AlignmentMismatch);
    }
    if utt.phonemes.iter().any(|&p| !vocab.is_phoneme(p)) {
        return Validation::Rejected(UnknownPhoneme);
    }
    Validation::Accepted
}

/// Repeat `phonemes[i]` exactly `durations[i]` times.
pub fn expand_phonemes(phonemes: &[u32], durations: &[u32]) -> Result<Vec<u32>> {
    if phonemes.len() != durations.len() {
        return Err(Error::Validation(format!(
            "{} phonemes but {} durations",
            phonemes.len(),
            durations.len()
        )));
    }
    if let Some(i) = durations.iter().position(|&d| d == 0) {
        return Err(Error::Validation(format!("duration at position {i} is zero")));
    }
    let total = durations.iter().map(|&d| d as usize).sum();
    let mut out = Vec::with_capacity(total);
    for (&p, &d) in phonemes.iter().zip(durations) {
        out.extend(std::iter::repeat_n(p, d as usize));
    }
    Ok(out)
}

/// Check that a duration sequence only holds labels in `1..=99`.
pub fn check_duration_labels(durations: &[u32]) -> Result<()> {
    match durations.iter().find(|&&d| d == 0 || d > MAX_DURATION) {
        Some(d) => Err(Error::Validation(format!(
            "duration label {d} outside 1..={MAX_DURATION}"
        ))),
        None => Ok(()),
    }
}

/// Number of frames in a clip of `seconds`.
pub fn clip_frames(seconds: f64, cfg: &MelConfig) -> usize {
    (seconds * cfg.frames_per_second()).round().max(1.0) as usize
}

/// Contiguous random clip of `min(requested, available)` frames.
pub fn slice_reference_clip<R: Rng + ?Sized>(
    mel: &Array2<f32>,
    frames: usize,
    rng: &mut R,
) -> Result<Array2<f32>> {
    let available = mel.nrows();
    if available == 0 {
        return Err(Error::Input("cannot clip an empty mel".into()));
    }
    let len = frames.clamp(1, available);
    let start = rng.random_range(0..=available - len);
    Ok(mel.slice(s![start..start + len, ..]).to_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn utt(durations: Vec<u32>, frames: usize) -> Utterance {
        Utterance {
            id: "u".into(),
            speaker: "s".into(),
            text: String::new(),
            phonemes: vec![4; durations.len()],
            durations,
            mel: Array2::zeros((frames, 80)),
        }
    }

    #[test]
    fn expand_examples() {
        assert_eq!(expand_phonemes(&[7, 8, 9], &[2, 1, 3]).unwrap(), vec![7, 7, 8, 9, 9, 9]);
        assert_eq!(expand_phonemes(&[5], &[1]).unwrap(), vec![5]);
        assert!(expand_phonemes(&[5, 6], &[1]).is_err());
        assert!(expand_phonemes(&[5], &[0]).is_err());
    }

    // Oracle: run-length decoding. Adjacent phonemes must differ for the
    // decoding to be unambiguous.
    fn run_length_decode(xs: &[u32]) -> (Vec<u32>, Vec<u32>) {
        let mut p = Vec::new();
        let mut d: Vec<u32> = Vec::new();
        for &x in xs {
            if p.last() == Some(&x) {
                *d.last_mut().unwrap() += 1;
            } else {
                p.push(x);
                d.push(1);
            }
        }
        (p, d)
    }

    fn distinct_neighbours() -> impl Strategy<Value = (Vec<u32>, Vec<u32>)> {
        prop::collection::vec((0u32..20, 1u32..=99), 1..40).prop_map(|pairs| {
            let mut p: Vec<u32> = Vec::new();
            let mut d = Vec::new();
            for (x, dur) in pairs {
                let x = if p.last() == Some(&x) { x + 20 } else { x };
                p.push(x);
                d.push(dur);
            }
            (p, d)
        })
    }

    proptest! {
        #[test]
        fn expansion_roundtrip((p, d) in distinct_neighbours()) {
            let e = expand_phonemes(&p, &d).unwrap();
            prop_assert_eq!(e.len(), d.iter().map(|&x| x as usize).sum::<usize>());
            prop_assert_eq!(run_length_decode(&e), (p, d));
        }
    }

    #[test]
    fn validation_cases() {
        let vocab = PhonemeVocab::from_symbols(["a"]);
        assert_eq!(
            validate_and_filter(&utt(vec![2, 100], 102), &vocab),
            Validation::Rejected(RejectReason::DurationTooLong)
        );
        assert_eq!(RejectReason::DurationTooLong.to_string(), "duration>99");
        assert_eq!(validate_and_filter(&utt(vec![2, 1, 3], 6), &vocab), Validation::Accepted);
        assert_eq!(
            validate_and_filter(&utt(vec![2, 1, 4], 6), &vocab),
            Validation::Rejected(RejectReason::AlignmentMismatch)
        );
        assert_eq!(RejectReason::AlignmentMismatch.to_string(), "alignment mismatch");
        let mut u = utt(vec![1], 1);
        u.phonemes = vec![9];
        assert_eq!(
            validate_and_filter(&u, &vocab),
            Validation::Rejected(RejectReason::UnknownPhoneme)
        );
    }

    #[test]
    fn clip_bounds_over_many_draws() {
        let mel = Array2::from_shape_fn((1000, 2), |(i, _)| i as f32);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let frames = clip_frames(3.0, &MelConfig::default());
        assert_eq!(frames, 300);
        for _ in 0..2000 {
            let c = slice_reference_clip(&mel, frames, &mut rng).unwrap();
            assert_eq!(c.nrows(), 300);
            let start = c[[0, 0]] as usize;
            assert!(start <= 700);
            // contiguous
            assert_eq!(c[[299, 0]] as usize, start + 299);
        }
    }

    #[test]
    fn clip_clamps_and_is_deterministic() {
        let mel = Array2::from_shape_fn((50, 2), |(i, j)| (i * 2 + j) as f32);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(slice_reference_clip(&mel, 300, &mut rng).unwrap(), mel);
        let big = Array2::from_shape_fn((500, 2), |(i, _)| i as f32);
        let a = slice_reference_clip(&big, 100, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let b = slice_reference_clip(&big, 100, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert_eq!(a, b);
    }
}
