use candle_core::Device;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{embed_speaker, generate_mel, Vocoder};
use crate::acoustic::{AcousticModel, AcousticConfig, CHECKPOINT_KIND as ACOUSTIC_KIND};
use crate::checkpoint::Checkpoint;
use crate::data::{check_duration_labels, MelConfig, PhonemeVocab, Waveform};
use crate::duration::{sample_durations, DurModelConfig, DurationModel, DurationPrompt, SamplingParams, CHECKPOINT_KIND as DURATION_KIND};
use crate::error::{Error, Result};
use crate::flowmatch::{CfgParams, SolverConfig};
use crate::nn::ParamStore;

#[derive(Debug, Clone)]
pub struct SynthesisRequest {
    pub phonemes: Vec<u32>,
    /// Condition for the duration model; required unless `durations` is set.
    pub prompt: Option<DurationPrompt>,
    /// Clip for the speaker encoder, `[frames, n_mels]`.
    pub speaker_ref: Array2<f32>,
    pub sampling: SamplingParams,
    pub solver: SolverConfig,
    pub cfg: CfgParams,
    /// Explicit durations bypass the duration model.
    pub durations: Option<Vec<u32>>,
    pub seed: u64,
}

impl SynthesisRequest {
    pub fn new(phonemes: Vec<u32>, speaker_ref: Array2<f32>) -> Self {
        Self {
            phonemes,
            prompt: None,
            speaker_ref,
            sampling: SamplingParams::default(),
            solver: SolverConfig::default(),
            cfg: CfgParams::default(),
            durations: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthesisOutput {
    pub mel: Array2<f32>,
    pub durations: Vec<u32>,
    pub waveform: Option<Waveform>,
}

/// Loaded models plus the corpus conventions they were trained with.
pub struct Synthesizer {
    pub acoustic: AcousticModel,
    pub duration: Option<DurationModel>,
    pub vocab: PhonemeVocab,
    pub mel_cfg: MelConfig,
    pub vocoder: Option<Box<dyn Vocoder>>,
    device: Device,
}

impl Synthesizer {
    pub fn new(
        acoustic: AcousticModel,
        duration: Option<DurationModel>,
        vocab: PhonemeVocab,
        mel_cfg: MelConfig,
        device: &Device,
    ) -> Result<Self> {
        let acfg = acoustic.config();
        if acfg.vocab_size < vocab.len() {
            return Err(Error::Checkpoint(format!(
                "acoustic model embeds {} phoneme ids, vocabulary has {}",
                acfg.vocab_size,
                vocab.len()
            )));
        }
        if acfg.n_mels != mel_cfg.n_mels {
            return Err(Error::Checkpoint(format!(
                "acoustic model produces {} mel bins, mel config has {}",
                acfg.n_mels, mel_cfg.n_mels
            )));
        }
        if let Some(d) = &duration {
            if d.config().vocab_size < vocab.len() || d.config().n_mels != mel_cfg.n_mels {
                return Err(Error::Checkpoint(
                    "duration model vocabulary or mel bins do not match the acoustic model".into(),
                ));
            }
        }
        Ok(Self {
            acoustic,
            duration,
            vocab,
            mel_cfg,
            vocoder: None,
            device: device.clone(),
        })
    }

    /// Acoustic model from its EMA shadow; duration model from raw weights.
    pub fn from_checkpoints(acoustic: &Checkpoint, duration: Option<&Checkpoint>, device: &Device) -> Result<Self> {
        acoustic.expect_kind(ACOUSTIC_KIND)?;
        let acfg: AcousticConfig = acoustic.config_as()?;
        let weights = acoustic.ema.as_ref().unwrap_or(&acoustic.params);
        let am = AcousticModel::new(&acfg, &ParamStore::from_tensors(weights, device)?)?;
        let dm = match duration {
            Some(ck) => {
                ck.expect_kind(DURATION_KIND)?;
                let dcfg: DurModelConfig = ck.config_as()?;
                Some(DurationModel::new(&dcfg, &ParamStore::from_tensors(&ck.params, device)?)?)
            }
            None => None,
        };
        Self::new(am, dm, acoustic.vocab()?, acoustic.mel_config()?, device)
    }

    pub fn with_vocoder(mut self, vocoder: Box<dyn Vocoder>) -> Self {
        self.vocoder = Some(vocoder);
        self
    }

    pub fn resolve_durations(&self, req: &SynthesisRequest) -> Result<Vec<u32>> {
        if req.phonemes.is_empty() {
            return Err(Error::Input("no target phonemes".into()));
        }
        match &req.durations {
            Some(d) => {
                if d.len() != req.phonemes.len() {
                    return Err(Error::Input(format!(
                        "{} durations for {} phonemes",
                        d.len(),
                        req.phonemes.len()
                    )));
                }
                check_duration_labels(d)?;
                Ok(d.clone())
            }
            None => {
                let model = self
                    .duration
                    .as_ref()
                    .ok_or_else(|| Error::Config("no duration model loaded and no explicit durations".into()))?;
                let prompt = req
                    .prompt
                    .as_ref()
                    .ok_or_else(|| Error::Input("sampling durations needs a prompt".into()))?;
                let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
                sample_durations(model, prompt, &req.phonemes, &req.sampling, &mut rng)
            }
        }
    }

    pub fn synthesize(&self, req: &SynthesisRequest) -> Result<SynthesisOutput> {
        req.cfg.validate()?;
        for &p in &req.phonemes {
            if !self.vocab.is_phoneme(p) {
                return Err(Error::Input(format!("id {p} is not a phoneme of the vocabulary")));
            }
        }
        let durations = self.resolve_durations(req)?;
        let speaker = embed_speaker(&self.acoustic, &req.speaker_ref, &self.device)?;
        let mel = generate_mel(
            &self.acoustic,
            &req.phonemes,
            &durations,
            &speaker,
            &req.solver,
            req.cfg.alpha,
            req.seed.wrapping_add(1),
        )?;
        let waveform = match &self.vocoder {
            Some(v) => Some(v.vocode(&mel)?),
            None => None,
        };
        Ok(SynthesisOutput {
            mel,
            durations,
            waveform,
        })
    }
}

/// Cosine similarity of the speaker embeddings of two clips.
pub fn speaker_cosine(model: &AcousticModel, a: &Array2<f32>, b: &Array2<f32>, device: &Device) -> Result<f64> {
    let ea = embed_speaker(model, a, device)?.flatten_all()?.to_vec1::<f32>()?;
    let eb = embed_speaker(model, b, device)?.flatten_all()?.to_vec1::<f32>()?;
    Ok(crate::acoustic::cosine(&ea, &eb))
}
