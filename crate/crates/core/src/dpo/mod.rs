//! Preference optimization of the duration model against a frozen
//! reference policy, plus preference-pair construction and filtering.

mod objective;
mod pairs;
mod train;

pub use objective::{
    bt_preference_prob, dpo_loss, dpo_loss_from_logprobs, pair_margin, seq_logprob, seq_logprobs, softplus,
    token_logprobs,
};
pub use pairs::{generate_oracle_pairs, generate_pairs, MAX_LOSER_DRAWS, prefilter_candidates, Candidate, PauseFilter, TempoOracle, WerHook};
pub use train::{DpoConfig, DpoReport, DpoTrainer};

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{check_duration_labels, read_mel, write_mel, PhonemeVocab};
use crate::duration::{DurationExample, DurationPrompt};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairSource {
    #[serde(rename = "human")]
    Human,
    #[serde(rename = "oracle")]
    Oracle,
    #[serde(rename = "ground-truth")]
    GroundTruth,
}

/// Winner and loser durations for the same target under the same condition.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferencePair {
    pub id: String,
    pub prompt: DurationPrompt,
    pub phonemes: Vec<u32>,
    pub d_w: Vec<u32>,
    pub d_l: Vec<u32>,
    pub source: PairSource,
}

impl PreferencePair {
    pub fn validate(&self) -> Result<()> {
        self.prompt.validate()?;
        let n = self.phonemes.len();
        if n == 0 || self.d_w.len() != n || self.d_l.len() != n {
            return Err(Error::Validation(format!(
                "pair {}: {} phonemes, {} winner and {} loser durations",
                self.id,
                n,
                self.d_w.len(),
                self.d_l.len()
            )));
        }
        check_duration_labels(&self.d_w)?;
        check_duration_labels(&self.d_l)?;
        if self.d_w == self.d_l {
            return Err(Error::Validation(format!("pair {}: winner equals loser", self.id)));
        }
        Ok(())
    }

    pub fn winner(&self) -> DurationExample {
        self.example(&self.d_w)
    }

    pub fn loser(&self) -> DurationExample {
        self.example(&self.d_l)
    }

    fn example(&self, d: &[u32]) -> DurationExample {
        DurationExample {
            id: self.id.clone(),
            prompt: self.prompt.clone(),
            phonemes: self.phonemes.clone(),
            durations: d.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub phonemes: Vec<String>,
    pub durations: Vec<u32>,
    pub ref_mel: PathBuf,
}

/// On-disk JSONL form; phonemes are symbols and the reference clip a path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    pub id: String,
    pub prompt: PromptRecord,
    pub phonemes: Vec<String>,
    pub d_w: Vec<u32>,
    pub d_l: Vec<u32>,
    pub source: PairSource,
}

impl PairRecord {
    /// Resolve symbols and load the clip (relative paths against `base`).
    pub fn resolve(&self, vocab: &PhonemeVocab, base: &Path) -> Result<PreferencePair> {
        let path = if self.prompt.ref_mel.is_absolute() {
            self.prompt.ref_mel.clone()
        } else {
            base.join(&self.prompt.ref_mel)
        };
        let pair = PreferencePair {
            id: self.id.clone(),
            prompt: DurationPrompt {
                phonemes: vocab.encode(&self.prompt.phonemes)?,
                durations: self.prompt.durations.clone(),
                ref_mel: read_mel(&path)
                    .map_err(|e| Error::Input(format!("pair {}: reference mel {}: {e}", self.id, path.display())))?,
            },
            phonemes: vocab.encode(&self.phonemes)?,
            d_w: self.d_w.clone(),
            d_l: self.d_l.clone(),
            source: self.source,
        };
        pair.validate()?;
        Ok(pair)
    }

    pub fn from_pair(pair: &PreferencePair, vocab: &PhonemeVocab, ref_mel: PathBuf) -> Result<Self> {
        Ok(Self {
            id: pair.id.clone(),
            prompt: PromptRecord {
                phonemes: vocab.decode(&pair.prompt.phonemes),
                durations: pair.prompt.durations.clone(),
                ref_mel,
            },
            phonemes: vocab.decode(&pair.phonemes),
            d_w: pair.d_w.clone(),
            d_l: pair.d_l.clone(),
            source: pair.source,
        })
    }
}

/// Write `pairs.jsonl` plus one reference clip per pair under `dir/mels`.
pub fn write_pairs(dir: impl AsRef<Path>, pairs: &[PreferencePair], vocab: &PhonemeVocab) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir.join("mels"))?;
    let path = dir.join("pairs.jsonl");
    let mut out = std::io::BufWriter::new(std::fs::File::create(&path)?);
    for p in pairs {
        let rel = PathBuf::from("mels").join(format!("{}.mel", p.id));
        write_mel(dir.join(&rel), &p.prompt.ref_mel)?;
        let rec = PairRecord::from_pair(p, vocab, rel)?;
        writeln!(out, "{}", serde_json::to_string(&rec)?)?;
    }
    out.flush()?;
    Ok(path)
}

pub fn read_pair_records(path: impl AsRef<Path>) -> Result<Vec<PairRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PairRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Input(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// Read and validate pairs; reference paths resolve against the file's directory.
pub fn read_pairs(path: impl AsRef<Path>, vocab: &PhonemeVocab) -> Result<Vec<PreferencePair>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    read_pair_records(path)?
        .iter()
        .map(|r| r.resolve(vocab, base))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::synthetic_vocab;
    use ndarray::Array2;

    fn pair() -> PreferencePair {
        let v = synthetic_vocab();
        PreferencePair {
            id: "p1".into(),
            prompt: DurationPrompt {
                phonemes: v.encode(&["m", "a"]).unwrap(),
                durations: vec![4, 9],
                ref_mel: Array2::from_shape_fn((12, 80), |(i, j)| (i * 80 + j) as f32 * 0.01),
            },
            phonemes: v.encode(&["t", "a"]).unwrap(),
            d_w: vec![3, 12],
            d_l: vec![3, 7],
            source: PairSource::GroundTruth,
        }
    }

    #[test]
    fn jsonl_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let v = synthetic_vocab();
        let path = write_pairs(dir.path(), &[pair()], &v).unwrap();
        let line = std::fs::read_to_string(&path).unwrap();
        let json: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
        for key in ["id", "prompt", "phonemes", "d_w", "d_l", "source"] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
        assert_eq!(json["source"], "ground-truth");
        assert_eq!(json["prompt"]["phonemes"], serde_json::json!(["m", "a"]));
        let back = read_pairs(&path, &v).unwrap();
        assert_eq!(back, vec![pair()]);
    }

    #[test]
    fn validation_rules() {
        let mut p = pair();
        p.d_l = p.d_w.clone();
        assert!(p.validate().is_err());
        let mut p = pair();
        p.d_l = vec![3];
        assert!(p.validate().is_err());
        let mut p = pair();
        p.d_w = vec![0, 3];
        assert!(p.validate().is_err());
        assert!(pair().validate().is_ok());
    }
}
