use candle_core::{DType, Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    duration_loss, mask_phonemes, masked_lm_loss, total_loss, DurModelConfig, DurationInput, DurationModel,
    DurationPrompt, SEG_PROMPT, SEG_TARGET,
};
use crate::checkpoint::Checkpoint;
use crate::data::{check_duration_labels, slice_reference_clip, Utterance, PAD};
use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, scalar, warmup_lr, DropoutCtx, ParamStore};

pub const CHECKPOINT_KIND: &str = "duration";

/// One prompted sequence: prompt prefix plus target, with a reference clip.
#[derive(Debug, Clone, PartialEq)]
pub struct DurationExample {
    pub id: String,
    pub prompt: DurationPrompt,
    pub phonemes: Vec<u32>,
    pub durations: Vec<u32>,
}

impl DurationExample {
    /// Target `utts[target]` prompted by another utterance of the same
    /// speaker (itself when the speaker has only one).
    pub fn prompted<R: Rng + ?Sized>(
        utts: &[Utterance],
        target: usize,
        clip_frames: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let u = utts
            .get(target)
            .ok_or_else(|| Error::Input(format!("utterance index {target} out of range")))?;
        let same: Vec<usize> = (0..utts.len())
            .filter(|&j| j != target && utts[j].speaker == u.speaker)
            .collect();
        let p = if same.is_empty() {
            u
        } else {
            &utts[same[rng.random_range(0..same.len())]]
        };
        Ok(Self {
            id: u.id.clone(),
            prompt: DurationPrompt {
                phonemes: p.phonemes.clone(),
                durations: p.durations.clone(),
                ref_mel: slice_reference_clip(&p.mel, clip_frames, rng)?,
            },
            phonemes: u.phonemes.clone(),
            durations: u.durations.clone(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.prompt.validate()?;
        if self.phonemes.is_empty() || self.phonemes.len() != self.durations.len() {
            return Err(Error::Validation(format!(
                "{}: {} target phonemes with {} durations",
                self.id,
                self.phonemes.len(),
                self.durations.len()
            )));
        }
        check_duration_labels(&self.durations)
    }

    pub fn len(&self) -> usize {
        self.prompt.phonemes.len() + self.phonemes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Padded batch with loss masks.
#[derive(Debug, Clone)]
pub struct DurationBatch {
    pub ids: Vec<String>,
    pub input: DurationInput,
    /// Unmasked phoneme ids `[B, N]`.
    pub targets: Tensor,
    /// 1 where a phoneme was masked for the auxiliary loss.
    pub mlm_mask: Tensor,
    /// 1 on positions whose duration is scored.
    pub dur_mask: Tensor,
    pub prompt_lens: Vec<usize>,
}

fn to_tensor_u32(rows: &[Vec<u32>], n: usize, pad: u32, device: &Device) -> Result<Tensor> {
    let mut flat = Vec::with_capacity(rows.len() * n);
    for r in rows {
        flat.extend_from_slice(r);
        flat.extend(std::iter::repeat_n(pad, n - r.len()));
    }
    Ok(Tensor::from_vec(flat, (rows.len(), n), device)?)
}

fn to_tensor_f32(rows: &[Vec<f32>], n: usize, device: &Device) -> Result<Tensor> {
    let mut flat = Vec::with_capacity(rows.len() * n);
    for r in rows {
        flat.extend_from_slice(r);
        flat.extend(std::iter::repeat_n(0.0, n - r.len()));
    }
    Ok(Tensor::from_vec(flat, (rows.len(), n), device)?)
}

impl DurationBatch {
    /// `score_prompt` includes the prompt region in the duration loss;
    /// `masking` gives `(sentence_prob, phoneme_prob)` for the auxiliary
    /// objective.
    pub fn new<R: Rng + ?Sized>(
        examples: &[DurationExample],
        score_prompt: bool,
        masking: Option<(f64, f64, &mut R)>,
        device: &Device,
    ) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::Input("empty duration batch".into()));
        }
        for e in examples {
            e.validate()?;
        }
        let n = examples.iter().map(|e| e.len()).max().unwrap_or(0);
        let mut phon = Vec::new();
        let mut masked = Vec::new();
        let mut mlm = Vec::new();
        let mut segs = Vec::new();
        let mut durs = Vec::new();
        let mut dmask = Vec::new();
        let mut masking = masking;
        for e in examples {
            let p_len = e.prompt.phonemes.len();
            let ids: Vec<u32> = e.prompt.phonemes.iter().chain(&e.phonemes).copied().collect();
            let (m_ids, m_pos) = match masking.as_mut() {
                Some((sp, pp, rng)) => mask_phonemes(&ids, *rng, *sp, *pp),
                None => (ids.clone(), vec![false; ids.len()]),
            };
            segs.push(
                (0..ids.len())
                    .map(|i| if i < p_len { SEG_PROMPT } else { SEG_TARGET })
                    .collect(),
            );
            durs.push(e.prompt.durations.iter().chain(&e.durations).copied().collect());
            dmask.push(
                (0..ids.len())
                    .map(|i| if score_prompt || i >= p_len { 1.0 } else { 0.0 })
                    .collect(),
            );
            mlm.push(m_pos.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect());
            phon.push(ids);
            masked.push(m_ids);
        }
        let ref_len = examples.iter().map(|e| e.prompt.ref_mel.nrows()).min().unwrap_or(0);
        let n_mels = examples[0].prompt.ref_mel.ncols();
        let mut ref_data = Vec::with_capacity(examples.len() * ref_len * n_mels);
        for e in examples {
            if e.prompt.ref_mel.ncols() != n_mels {
                return Err(Error::Shape("reference clips differ in mel bins".into()));
            }
            ref_data.extend(e.prompt.ref_mel.outer_iter().take(ref_len).flat_map(|r| r.to_vec()));
        }
        Ok(Self {
            ids: examples.iter().map(|e| e.id.clone()).collect(),
            input: DurationInput {
                phonemes: to_tensor_u32(&masked, n, PAD, device)?,
                segments: to_tensor_u32(&segs, n, SEG_TARGET, device)?,
                durations: to_tensor_u32(&durs, n, 1, device)?,
                ref_mel: Tensor::from_vec(ref_data, (examples.len(), ref_len, n_mels), device)?,
                lengths: examples.iter().map(|e| e.len()).collect(),
            },
            targets: to_tensor_u32(&phon, n, PAD, device)?,
            mlm_mask: to_tensor_f32(&mlm, n, device)?,
            dur_mask: to_tensor_f32(&dmask, n, device)?,
            prompt_lens: examples.iter().map(|e| e.prompt.phonemes.len()).collect(),
        })
    }

    /// Batch for scoring target durations: no masking, prompt excluded.
    pub fn scoring(examples: &[DurationExample], device: &Device) -> Result<Self> {
        Self::new(examples, false, None::<(f64, f64, &mut ChaCha8Rng)>, device)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of scored duration tokens.
    pub fn scored_tokens(&self) -> Result<f64> {
        scalar(&self.dur_mask.sum_all()?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DurationStepStats {
    pub step: usize,
    /// Weighted loss per scored duration token.
    pub loss: f64,
    pub l_ml: f64,
    pub l_dur: f64,
    pub grad_norm: f64,
}

pub struct DurationTrainer {
    pub cfg: DurModelConfig,
    pub store: ParamStore,
    pub model: DurationModel,
    pub step: usize,
    opt: AdamW,
    rng: ChaCha8Rng,
}

impl DurationTrainer {
    pub fn new(cfg: &DurModelConfig, seed: u64, device: &Device) -> Result<Self> {
        Self::with_store(cfg, ParamStore::new(seed, DType::F32, device), seed)
    }

    pub fn with_store(cfg: &DurModelConfig, store: ParamStore, seed: u64) -> Result<Self> {
        let model = DurationModel::new(cfg, &store)?;
        let opt = AdamW::new(
            store.vars(),
            ParamsAdamW {
                lr: warmup_lr(cfg.peak_lr, cfg.warmup_steps, 0),
                weight_decay: cfg.weight_decay,
                ..ParamsAdamW::default()
            },
        )?;
        Ok(Self {
            cfg: cfg.clone(),
            store,
            model,
            step: 0,
            opt,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0xd0_5eed),
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint, seed: u64, device: &Device) -> Result<Self> {
        ck.expect_kind(CHECKPOINT_KIND)?;
        let cfg: DurModelConfig = ck.config_as()?;
        let store = ParamStore::from_tensors(&ck.params, device)?;
        let mut tr = Self::with_store(&cfg, store, seed)?;
        if tr.store.num_params() != ck.params.values().map(|t| t.elem_count()).sum::<usize>() {
            return Err(Error::Checkpoint("checkpoint has parameters the model does not use".into()));
        }
        tr.step = ck.step as usize;
        Ok(tr)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        Checkpoint::new(CHECKPOINT_KIND, &self.cfg, self.step as u64, self.store.tensors()?)
    }

    pub fn train_step(&mut self, batch: &DurationBatch) -> Result<DurationStepStats> {
        let mut drop = DropoutCtx::train(self.cfg.dropout, self.rng.next_u64());
        let out = self.model.forward(&batch.input, &mut drop)?;
        let l_ml = masked_lm_loss(&out.mlm_logits, &batch.targets, &batch.mlm_mask)?;
        let l_dur = duration_loss(&out.dur_logits, &batch.input.durations, Some(&batch.dur_mask))?;
        let total = total_loss(&l_ml, &l_dur, self.cfg.lambda_ml, self.cfg.lambda_dur)?;
        let objective = (total / batch.scored_tokens()?.max(1.0))?;
        let loss = scalar(&objective)?;
        if !loss.is_finite() {
            return Err(Error::Numeric {
                step: Some(self.step),
                msg: format!("duration loss is {loss} (batch {:?})", batch.ids),
            });
        }
        let mut grads = objective.backward()?;
        let grad_norm = clip_grad_norm(&mut grads, &self.store.vars(), self.cfg.grad_clip)?;
        self.opt
            .set_learning_rate(warmup_lr(self.cfg.peak_lr, self.cfg.warmup_steps, self.step));
        self.opt.step(&grads)?;
        let stats = DurationStepStats {
            step: self.step,
            loss,
            l_ml: scalar(&l_ml)?,
            l_dur: scalar(&l_dur)?,
            grad_norm,
        };
        self.step += 1;
        Ok(stats)
    }

    /// Train on random prompted examples from `utts`.
    pub fn fit(
        &mut self,
        utts: &[Utterance],
        steps: usize,
        batch_size: usize,
        clip_frames: usize,
        mut on_step: impl FnMut(&DurationStepStats),
    ) -> Result<Vec<f64>> {
        if utts.is_empty() {
            return Err(Error::Input("no training utterances".into()));
        }
        let device = self.store.device().clone();
        let mut losses = Vec::with_capacity(steps);
        for _ in 0..steps {
            let mut examples = Vec::with_capacity(batch_size);
            for _ in 0..batch_size {
                let i = self.rng.random_range(0..utts.len());
                examples.push(DurationExample::prompted(utts, i, clip_frames, &mut self.rng)?);
            }
            let mut mask_rng = ChaCha8Rng::seed_from_u64(self.rng.next_u64());
            let batch = DurationBatch::new(
                &examples,
                true,
                Some((self.cfg.sentence_mask_prob, self.cfg.phoneme_mask_prob, &mut mask_rng)),
                &device,
            )?;
            let stats = self.train_step(&batch)?;
            on_step(&stats);
            losses.push(stats.loss);
        }
        Ok(losses)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{generate_corpus, SyntheticConfig};
    use crate::data::MelConfig;

    fn small_cfg(vocab: usize) -> DurModelConfig {
        DurModelConfig {
            enc_layers: 1,
            dec_layers: 1,
            hidden: 32,
            heads: 2,
            ref_query_len: 4,
            vocab_size: vocab,
            warmup_steps: 0,
            ..DurModelConfig::default()
        }
    }

    #[test]
    fn loss_decreases_on_tiny_corpus() {
        let c = generate_corpus(
            &SyntheticConfig {
                n_utterances: 4,
                ..SyntheticConfig::default()
            },
            &MelConfig::default(),
            None,
        )
        .unwrap();
        let mut tr = DurationTrainer::new(&small_cfg(c.vocab.len()), 0, &Device::Cpu).unwrap();
        let losses = tr.fit(&c.utterances, 60, 4, 100, |_| {}).unwrap();
        let head: f64 = losses[..10].iter().sum::<f64>() / 10.0;
        let tail: f64 = losses[50..].iter().sum::<f64>() / 10.0;
        assert!(tail < head, "{head} -> {tail}");
    }

    #[test]
    fn prompt_exclusion_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ex = DurationExample {
            id: "x".into(),
            prompt: DurationPrompt {
                phonemes: vec![4, 5],
                durations: vec![3, 4],
                ref_mel: ndarray::Array2::zeros((12, 80)),
            },
            phonemes: vec![6, 7, 8],
            durations: vec![5, 6, 7],
        };
        let b = DurationBatch::scoring(std::slice::from_ref(&ex), &Device::Cpu).unwrap();
        assert_eq!(b.dur_mask.to_vec2::<f32>().unwrap(), vec![vec![0., 0., 1., 1., 1.]]);
        assert_eq!(b.scored_tokens().unwrap(), 3.0);
        let b = DurationBatch::new(&[ex], true, Some((1.0, 1.0, &mut rng)), &Device::Cpu).unwrap();
        assert_eq!(b.mlm_mask.to_vec2::<f32>().unwrap(), vec![vec![1.; 5]]);
    }
}
