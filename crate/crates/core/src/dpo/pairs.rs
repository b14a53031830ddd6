use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{PairSource, PreferencePair};
use crate::data::Utterance;
use crate::duration::{sample_durations, DurationExample, DurationModel, SamplingParams};
use crate::error::Result;

/// Anything with a phoneme sequence and a duration sequence.
pub trait Candidate {
    fn phonemes(&self) -> &[u32];
    fn durations(&self) -> &[u32];
}

impl Candidate for (Vec<u32>, Vec<u32>) {
    fn phonemes(&self) -> &[u32] {
        &self.0
    }
    fn durations(&self) -> &[u32] {
        &self.1
    }
}

/// Plug-in intelligibility check; returns a rejection reason.
pub trait WerHook {
    fn reject(&self, phonemes: &[u32], durations: &[u32]) -> Option<String>;
}

/// Rejects renditions with abnormally long interior phonemes.
pub struct PauseFilter {
    pub medians: HashMap<u32, f64>,
    /// A non-boundary phoneme longer than `multiple` times its median is a pause.
    pub multiple: f64,
    pub wer: Option<Box<dyn WerHook + Send + Sync>>,
}

impl PauseFilter {
    pub fn new(medians: HashMap<u32, f64>) -> Self {
        Self {
            medians,
            multiple: 4.0,
            wer: None,
        }
    }

    pub fn with_multiple(mut self, multiple: f64) -> Self {
        self.multiple = multiple;
        self
    }

    pub fn check(&self, phonemes: &[u32], durations: &[u32]) -> Option<String> {
        let n = durations.len();
        for i in 1..n.saturating_sub(1) {
            if let Some(&med) = self.medians.get(&phonemes[i]) {
                if durations[i] as f64 > self.multiple * med {
                    return Some("abnormal pause".to_string());
                }
            }
        }
        self.wer.as_ref().and_then(|h| h.reject(phonemes, durations))
    }
}

/// Split candidates into kept and rejected-with-reason.
pub fn prefilter_candidates<T: Candidate>(candidates: Vec<T>, filter: &PauseFilter) -> (Vec<T>, Vec<(T, String)>) {
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    for c in candidates {
        match filter.check(c.phonemes(), c.durations()) {
            None => kept.push(c),
            Some(reason) => rejected.push((c, reason)),
        }
    }
    (kept, rejected)
}

fn item_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Draws per item before it is given up as unpairable.
pub const MAX_LOSER_DRAWS: usize = 16;

/// Ground-truth-versus-model pairs: for each utterance a random same-speaker
/// prompt, the policy's sampled durations as loser and the recorded
/// durations as winner. A draw identical to the recording, or rejected by
/// `filter`, is retried with a fresh prompt up to `MAX_LOSER_DRAWS` times
/// before the item is skipped. Each item draws from its own stream of
/// `seed`, so a pair can be replayed in isolation.
pub fn generate_pairs(
    utts: &[Utterance],
    policy: &DurationModel,
    params: &SamplingParams,
    seed: u64,
    clip_frames: usize,
    filter: Option<&PauseFilter>,
) -> Result<Vec<PreferencePair>> {
    let mut out = Vec::new();
    for i in 0..utts.len() {
        let mut rng = item_rng(seed, i);
        for _ in 0..MAX_LOSER_DRAWS {
            let ex = DurationExample::prompted(utts, i, clip_frames, &mut rng)?;
            let d_l = sample_durations(policy, &ex.prompt, &ex.phonemes, params, &mut rng)?;
            if d_l == ex.durations || filter.is_some_and(|f| f.check(&ex.phonemes, &d_l).is_some()) {
                continue;
            }
            out.push(PreferencePair {
                id: format!("{}-pair", ex.id),
                prompt: ex.prompt,
                phonemes: ex.phonemes,
                d_w: ex.durations,
                d_l,
                source: PairSource::GroundTruth,
            });
            break;
        }
    }
    Ok(out)
}

/// Prefers the rendition whose total length is closer to `scale` times the
/// recorded total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TempoOracle {
    pub scale: f64,
}

impl TempoOracle {
    /// `Some(true)` when `a` wins, `None` on a tie.
    pub fn prefers_first(&self, reference: &[u32], a: &[u32], b: &[u32]) -> Option<bool> {
        let target = self.scale * reference.iter().map(|&d| d as f64).sum::<f64>();
        let da = (a.iter().map(|&d| d as f64).sum::<f64>() - target).abs();
        let db = (b.iter().map(|&d| d as f64).sum::<f64>() - target).abs();
        if da == db {
            None
        } else {
            Some(da < db)
        }
    }
}

/// Two policy samples per utterance ranked by a tempo oracle; ties and
/// identical samples are skipped.
pub fn generate_oracle_pairs(
    utts: &[Utterance],
    policy: &DurationModel,
    params: &SamplingParams,
    oracle: &TempoOracle,
    seed: u64,
    clip_frames: usize,
) -> Result<Vec<PreferencePair>> {
    let mut out = Vec::new();
    for i in 0..utts.len() {
        let mut rng = item_rng(seed, i);
        let ex = DurationExample::prompted(utts, i, clip_frames, &mut rng)?;
        let a = sample_durations(policy, &ex.prompt, &ex.phonemes, params, &mut rng)?;
        let b = sample_durations(policy, &ex.prompt, &ex.phonemes, params, &mut rng)?;
        let Some(first) = oracle.prefers_first(&ex.durations, &a, &b) else {
            continue;
        };
        let (d_w, d_l) = if first { (a, b) } else { (b, a) };
        out.push(PreferencePair {
            id: format!("{}-oracle", ex.id),
            prompt: ex.prompt,
            phonemes: ex.phonemes,
            d_w,
            d_l,
            source: PairSource::Oracle,
        });
    }
    Ok(out)
}
