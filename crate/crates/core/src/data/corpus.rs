//! JSONL manifests, WAV input and the prepared-corpus directory layout:
//!
//! ```text
//! <dir>/manifest.jsonl   one ManifestRecord per accepted utterance
//! <dir>/vocab.json       phoneme vocabulary
//! <dir>/corpus.json      mel config (with normalization stats) + duration medians
//! <dir>/mels/<id>.mel    normalized log-mel matrices
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::mel::{compute_mel, read_mel, write_mel, MelConfig, MelStats, Waveform};
use super::vocab::PhonemeVocab;
use super::{validate_and_filter, RejectReason, Utterance, Validation};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub speaker: String,
    #[serde(default)]
    pub text: String,
    pub phonemes: Vec<String>,
    pub durations: Vec<u32>,
    pub audio: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mel: Option<PathBuf>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Read a JSONL manifest. Relative paths are resolved against the manifest's
/// directory and every referenced file must exist.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRecord>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut rec: ManifestRecord = serde_json::from_str(&line).map_err(|e| {
            Error::Input(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        rec.audio = resolve(base, &rec.audio);
        if !rec.audio.exists() {
            return Err(Error::Input(format!(
                "{}:{}: missing audio {}",
                path.display(),
                lineno + 1,
                rec.audio.display()
            )));
        }
        if let Some(m) = rec.mel.take() {
            let m = resolve(base, &m);
            if !m.exists() {
                return Err(Error::Input(format!("missing mel {}", m.display())));
            }
            rec.mel = Some(m);
        }
        out.push(rec);
    }
    Ok(out)
}

/// Mono float samples; multi-channel input is averaged.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => reader.samples::<f32>().collect::<std::result::Result<_, _>>()?,
        hound::SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 / scale))
                .collect::<std::result::Result<_, _>>()?
        }
    };
    let samples = interleaved
        .chunks(channels)
        .map(|c| c.iter().sum::<f32>() / channels as f32)
        .collect();
    Ok(Waveform {
        samples,
        sample_rate: spec.sample_rate,
    })
}

/// 16-bit PCM mono.
pub fn write_wav(path: impl AsRef<Path>, wave: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec)?;
    for &s in &wave.samples {
        w.write_sample((s.clamp(-1.0, 1.0) * i16::MAX as f32) as i16)?;
    }
    w.finalize()?;
    Ok(())
}

/// Corpus-level metadata persisted next to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusInfo {
    pub mel: MelConfig,
    /// Median duration per phoneme symbol.
    pub duration_medians: BTreeMap<String, f64>,
}

/// Validated utterances with normalized mels.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub vocab: PhonemeVocab,
    pub mel_cfg: MelConfig,
    pub utterances: Vec<Utterance>,
}

impl Corpus {
    pub fn speakers(&self) -> Vec<String> {
        let mut s: Vec<String> = self.utterances.iter().map(|u| u.speaker.clone()).collect();
        s.sort();
        s.dedup();
        s
    }

    pub fn by_speaker(&self) -> BTreeMap<String, Vec<usize>> {
        let mut m: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, u) in self.utterances.iter().enumerate() {
            m.entry(u.speaker.clone()).or_default().push(i);
        }
        m
    }

    /// Median duration of each phoneme id over the corpus.
    pub fn duration_medians(&self) -> HashMap<u32, f64> {
        duration_medians(self.utterances.iter().map(|u| (&u.phonemes[..], &u.durations[..])))
    }

    pub fn info(&self) -> CorpusInfo {
        CorpusInfo {
            mel: self.mel_cfg.clone(),
            duration_medians: self
                .duration_medians()
                .into_iter()
                .map(|(k, v)| (self.vocab.symbol(k).unwrap_or("<unk>").to_string(), v))
                .collect(),
        }
    }

    /// Persist in the prepared layout. Audio paths are kept as given.
    pub fn save(&self, dir: impl AsRef<Path>, audio: &HashMap<String, PathBuf>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir.join("mels"))?;
        self.vocab.save(dir.join("vocab.json"))?;
        std::fs::write(dir.join("corpus.json"), serde_json::to_string_pretty(&self.info())?)?;
        let mut w = BufWriter::new(File::create(dir.join("manifest.jsonl"))?);
        for u in &self.utterances {
            let mel_rel = PathBuf::from("mels").join(format!("{}.mel", u.id));
            write_mel(dir.join(&mel_rel), &u.mel)?;
            let rec = ManifestRecord {
                id: u.id.clone(),
                speaker: u.speaker.clone(),
                text: u.text.clone(),
                phonemes: self.vocab.decode(&u.phonemes),
                durations: u.durations.clone(),
                audio: audio.get(&u.id).cloned().unwrap_or_else(|| mel_rel.clone()),
                mel: Some(mel_rel),
            };
            writeln!(w, "{}", serde_json::to_string(&rec)?)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let vocab = PhonemeVocab::load(dir.join("vocab.json"))?;
        let info: CorpusInfo =
            serde_json::from_str(&std::fs::read_to_string(dir.join("corpus.json"))?)?;
        let mut utterances = Vec::new();
        for rec in load_manifest(dir.join("manifest.jsonl"))? {
            let mel_path = rec
                .mel
                .clone()
                .ok_or_else(|| Error::Input(format!("{}: prepared record lacks mel", rec.id)))?;
            let mel = read_mel(&mel_path)?;
            let u = Utterance {
                phonemes: vocab.encode(&rec.phonemes)?,
                id: rec.id,
                speaker: rec.speaker,
                text: rec.text,
                durations: rec.durations,
                mel,
            };
            if let Validation::Rejected(r) = validate_and_filter(&u, &vocab) {
                return Err(Error::Validation(format!("{}: {r}", u.id)));
            }
            utterances.push(u);
        }
        Ok(Self {
            vocab,
            mel_cfg: info.mel,
            utterances,
        })
    }
}

pub(crate) fn duration_medians<'a>(
    items: impl IntoIterator<Item = (&'a [u32], &'a [u32])>,
) -> HashMap<u32, f64> {
    let mut all: HashMap<u32, Vec<u32>> = HashMap::new();
    for (p, d) in items {
        for (&ph, &du) in p.iter().zip(d) {
            all.entry(ph).or_default().push(du);
        }
    }
    all.into_iter()
        .map(|(k, mut v)| {
            v.sort_unstable();
            let n = v.len();
            let med = if n % 2 == 1 {
                v[n / 2] as f64
            } else {
                (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
            };
            (k, med)
        })
        .collect()
}

#[derive(Debug, Clone, Default)]
pub struct PrepareReport {
    pub accepted: usize,
    pub rejected: Vec<(String, RejectReason)>,
    pub stats: Option<MelStats>,
}

/// Ingest a raw manifest: extract mels, drop invalid utterances, compute
/// global normalization over the accepted set and write the prepared layout.
pub fn prepare_corpus(
    manifest: impl AsRef<Path>,
    mel_cfg: &MelConfig,
    out_dir: impl AsRef<Path>,
) -> Result<(Corpus, PrepareReport)> {
    let records = load_manifest(manifest)?;
    let mut vocab = PhonemeVocab::new();
    for r in &records {
        for p in &r.phonemes {
            vocab.insert(p);
        }
    }
    let raw_cfg = MelConfig {
        normalization: None,
        ..mel_cfg.clone()
    };
    let mut report = PrepareReport::default();
    let mut accepted = Vec::new();
    let mut audio = HashMap::new();
    for r in records {
        let wave = read_wav(&r.audio)?;
        let mel = compute_mel(&wave, &raw_cfg)?;
        let u = Utterance {
            phonemes: r.phonemes.iter().map(|p| vocab.id_or_unk(p)).collect(),
            id: r.id.clone(),
            speaker: r.speaker,
            text: r.text,
            durations: r.durations,
            mel,
        };
        match validate_and_filter(&u, &vocab) {
            Validation::Accepted => {
                audio.insert(r.id, r.audio);
                accepted.push(u);
            }
            Validation::Rejected(reason) => {
                tracing::warn!(id = %u.id, %reason, "utterance rejected");
                report.rejected.push((u.id, reason));
            }
        }
    }
    let stats = MelStats::from_mels(accepted.iter().map(|u| &u.mel))?;
    for u in &mut accepted {
        stats.normalize(&mut u.mel);
    }
    report.accepted = accepted.len();
    report.stats = Some(stats);
    let corpus = Corpus {
        vocab,
        mel_cfg: MelConfig {
            normalization: Some(stats),
            ..mel_cfg.clone()
        },
        utterances: accepted,
    };
    corpus.save(out_dir, &audio)?;
    Ok((corpus, report))
}

/// Normalize raw log-mels in place with freshly computed corpus statistics.
pub(crate) fn normalize_all(utts: &mut [Utterance]) -> Result<MelStats> {
    let stats = MelStats::from_mels(utts.iter().map(|u| &u.mel))?;
    for u in utts.iter_mut() {
        stats.normalize(&mut u.mel);
    }
    Ok(stats)
}
