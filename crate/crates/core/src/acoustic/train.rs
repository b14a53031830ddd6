use std::collections::{BTreeMap, HashSet};

use candle_core::backprop::GradStore;
use candle_core::{DType, Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use ndarray::Array2;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{AcousticConfig, AcousticModel, CondDrop, Ema, MIN_CLIP_FRAMES};
use crate::checkpoint::Checkpoint;
use crate::data::{expand_phonemes, slice_reference_clip, Utterance, PAD};
use crate::error::{Error, Result};
use crate::flowmatch::{cfm_loss, sample_timestep_logitnormal};
use crate::nn::{clip_grad_norm, length_mask, warmup_lr, DropoutCtx, ParamStore};

pub const CHECKPOINT_KIND: &str = "acoustic";

/// A padded training batch.
#[derive(Debug, Clone)]
pub struct AcousticBatch {
    pub ids: Vec<String>,
    /// Clean target mels `[B, T, n_mels]`, zero padded.
    pub mel: Tensor,
    /// Expanded phoneme ids `[B, T]`, padded with the pad id.
    pub phonemes: Tensor,
    /// Reference clips `[B, T_ref, n_mels]` for the speaker encoder.
    pub ref_clips: Tensor,
    pub lengths: Vec<usize>,
}

fn stack_mels(mels: &[&Array2<f32>], len: usize, device: &Device) -> Result<Tensor> {
    let n_mels = mels[0].ncols();
    let mut data = vec![0f32; mels.len() * len * n_mels];
    for (b, m) in mels.iter().enumerate() {
        if m.ncols() != n_mels {
            return Err(Error::Shape(format!("mel bins differ: {} vs {n_mels}", m.ncols())));
        }
        for (t, row) in m.outer_iter().take(len).enumerate() {
            let off = (b * len + t) * n_mels;
            for (k, v) in row.iter().enumerate() {
                data[off + k] = *v;
            }
        }
    }
    Ok(Tensor::from_vec(data, (mels.len(), len, n_mels), device)?)
}

impl AcousticBatch {
    /// Build a batch from utterances and one reference clip per item. Clips
    /// are cropped to the shortest one.
    pub fn new(items: &[&Utterance], refs: &[Array2<f32>], device: &Device) -> Result<Self> {
        if items.is_empty() || items.len() != refs.len() {
            return Err(Error::Input(format!(
                "batch needs one reference per item ({} items, {} refs)",
                items.len(),
                refs.len()
            )));
        }
        let lengths: Vec<usize> = items.iter().map(|u| u.frames()).collect();
        let max_len = *lengths.iter().max().unwrap_or(&0);
        let mut ids = vec![PAD; items.len() * max_len];
        for (b, u) in items.iter().enumerate() {
            let expanded = expand_phonemes(&u.phonemes, &u.durations)?;
            if expanded.len() != u.frames() {
                return Err(Error::Validation(format!(
                    "{}: durations sum to {} but mel has {} frames",
                    u.id,
                    expanded.len(),
                    u.frames()
                )));
            }
            ids[b * max_len..b * max_len + expanded.len()].copy_from_slice(&expanded);
        }
        let ref_len = refs.iter().map(|r| r.nrows()).min().unwrap_or(0);
        if ref_len < MIN_CLIP_FRAMES {
            return Err(Error::Input(format!(
                "reference clip of {ref_len} frames is shorter than {MIN_CLIP_FRAMES}"
            )));
        }
        let mels: Vec<&Array2<f32>> = items.iter().map(|u| &u.mel).collect();
        let ref_refs: Vec<&Array2<f32>> = refs.iter().collect();
        Ok(Self {
            ids: items.iter().map(|u| u.id.clone()).collect(),
            mel: stack_mels(&mels, max_len, device)?,
            phonemes: Tensor::from_vec(ids, (items.len(), max_len), device)?,
            ref_clips: stack_mels(&ref_refs, ref_len, device)?,
            lengths,
        })
    }

    /// Batch of `indices` into `utts`, each paired with a reference clip cut
    /// from a different utterance of the same speaker when one exists.
    pub fn sample<R: Rng + ?Sized>(
        utts: &[Utterance],
        indices: &[usize],
        clip_frames: usize,
        rng: &mut R,
        device: &Device,
    ) -> Result<Self> {
        let mut items = Vec::with_capacity(indices.len());
        let mut refs = Vec::with_capacity(indices.len());
        for &i in indices {
            let u = utts
                .get(i)
                .ok_or_else(|| Error::Input(format!("utterance index {i} out of range")))?;
            let same: Vec<usize> = (0..utts.len())
                .filter(|&j| j != i && utts[j].speaker == u.speaker)
                .collect();
            let src = if same.is_empty() {
                u
            } else {
                &utts[same[rng.random_range(0..same.len())]]
            };
            refs.push(slice_reference_clip(&src.mel, clip_frames, rng)?);
            items.push(u);
        }
        Self::new(&items, &refs, device)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub lr: f64,
}

/// Owns the model, optimizer, EMA shadow and training randomness.
pub struct AcousticTrainer {
    pub cfg: AcousticConfig,
    pub store: ParamStore,
    pub model: AcousticModel,
    pub ema: Ema,
    pub step: usize,
    opt: AdamW,
    rng: ChaCha8Rng,
}

impl AcousticTrainer {
    pub fn new(cfg: &AcousticConfig, seed: u64, device: &Device) -> Result<Self> {
        Self::with_store(cfg, ParamStore::new(seed, DType::F32, device), seed)
    }

    pub fn with_store(cfg: &AcousticConfig, store: ParamStore, seed: u64) -> Result<Self> {
        let model = AcousticModel::new(cfg, &store)?;
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
            ema: Ema::new(cfg.ema_decay),
            step: 0,
            opt,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_ac05),
        })
    }

    /// Resume from a checkpoint. Optimizer moments start fresh.
    pub fn from_checkpoint(ck: &Checkpoint, seed: u64, device: &Device) -> Result<Self> {
        ck.expect_kind(CHECKPOINT_KIND)?;
        let cfg: AcousticConfig = ck.config_as()?;
        let store = ParamStore::from_tensors(&ck.params, device)?;
        let mut tr = Self::with_store(&cfg, store, seed)?;
        if tr.store.num_params() != ck.params.values().map(|t| t.elem_count()).sum::<usize>() {
            return Err(Error::Checkpoint("checkpoint has parameters the model does not use".into()));
        }
        tr.step = ck.step as usize;
        if let Some(shadow) = &ck.ema {
            tr.ema = Ema::from_shadow(cfg.ema_decay, shadow.clone());
        }
        Ok(tr)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(CHECKPOINT_KIND, &self.cfg, self.step as u64, self.store.tensors()?)?;
        ck.ema = self.ema.shadow().cloned();
        Ok(ck)
    }

    fn draw_drop(&mut self, batch: usize) -> CondDrop {
        let p = self.cfg.cfg.cond_drop_prob;
        let mut drop = CondDrop::none(batch);
        for i in 0..batch {
            if self.cfg.cfg.joint_drop {
                let d = self.rng.random::<f64>() < p;
                drop.phonemes[i] = d;
                drop.speaker[i] = d;
            } else {
                drop.phonemes[i] = self.rng.random::<f64>() < p;
                drop.speaker[i] = self.rng.random::<f64>() < p;
            }
        }
        drop
    }

    /// Loss of one random draw of `(t, x0, drop)` and its gradients.
    pub fn loss_and_grads(&mut self, batch: &AcousticBatch) -> Result<(f64, GradStore)> {
        let b = batch.len();
        let dev = batch.mel.device().clone();
        let dtype = self.store.dtype();
        let ts: Vec<f64> = (0..b)
            .map(|_| sample_timestep_logitnormal(&mut self.rng, self.cfg.timestep.mean, self.cfg.timestep.std))
            .collect::<Result<_>>()?;
        let t = Tensor::from_vec(ts, b, &dev)?.to_dtype(dtype)?;
        let n = batch.mel.elem_count();
        let noise: Vec<f32> = (0..n).map(|_| self.rng.sample(StandardNormal)).collect();
        let x0 = Tensor::from_vec(noise, batch.mel.shape(), &dev)?.to_dtype(dtype)?;
        let x1 = batch.mel.to_dtype(dtype)?;
        let drop = self.draw_drop(b);
        let mut dropout = DropoutCtx::train(self.cfg.dropout, self.rng.next_u64());
        let mask = length_mask(&batch.lengths, x1.dim(1)?, dtype, &dev)?;
        let spk = self.model.encode_speaker(&batch.ref_clips)?;
        let model = &self.model;
        let loss = cfm_loss(
            |phi, t| {
                model.forward(
                    phi,
                    &batch.phonemes,
                    &spk,
                    t,
                    &drop,
                    Some(&batch.lengths),
                    &mut dropout,
                )
            },
            &x1,
            &x0,
            &t,
            Some(&mask),
        )
        .map_err(|e| match e {
            Error::Numeric { msg, .. } => Error::Numeric {
                step: Some(self.step),
                msg: format!("{msg} (batch {:?})", batch.ids),
            },
            other => other,
        })?;
        let value = crate::nn::scalar(&loss)?;
        Ok((value, loss.backward()?))
    }

    pub fn train_step(&mut self, batch: &AcousticBatch) -> Result<StepStats> {
        let (loss, mut grads) = self.loss_and_grads(batch)?;
        let vars = self.store.vars();
        let grad_norm = clip_grad_norm(&mut grads, &vars, self.cfg.grad_clip)?;
        if !grad_norm.is_finite() {
            return Err(Error::Numeric {
                step: Some(self.step),
                msg: format!("gradient norm is {grad_norm} (batch {:?})", batch.ids),
            });
        }
        let lr = warmup_lr(self.cfg.peak_lr, self.cfg.warmup_steps, self.step);
        self.opt.set_learning_rate(lr);
        self.opt.step(&grads)?;
        self.ema.update(&self.store)?;
        let stats = StepStats {
            step: self.step,
            loss,
            grad_norm,
            lr,
        };
        self.step += 1;
        Ok(stats)
    }

    /// Train for `steps` steps on random batches drawn from `utts`.
    pub fn fit(
        &mut self,
        utts: &[Utterance],
        steps: usize,
        batch_size: usize,
        clip_frames: usize,
        mut on_step: impl FnMut(&StepStats),
    ) -> Result<Vec<f64>> {
        if utts.is_empty() {
            return Err(Error::Input("no training utterances".into()));
        }
        let device = self.store.device().clone();
        let mut losses = Vec::with_capacity(steps);
        for _ in 0..steps {
            let idx: Vec<usize> = (0..batch_size.min(utts.len()))
                .map(|_| self.rng.random_range(0..utts.len()))
                .collect();
            let batch = AcousticBatch::sample(utts, &idx, clip_frames, &mut self.rng, &device)?;
            let stats = self.train_step(&batch)?;
            on_step(&stats);
            losses.push(stats.loss);
        }
        Ok(losses)
    }

    /// Model built from the EMA shadow (the raw parameters before any step).
    pub fn ema_model(&self) -> Result<AcousticModel> {
        let tensors = match self.ema.shadow() {
            Some(s) => s.clone(),
            None => self.store.tensors()?,
        };
        let store = ParamStore::from_tensors(&tensors, self.store.device())?;
        AcousticModel::new(&self.cfg, &store)
    }
}

/// Names of parameters whose gradient is exactly zero (or absent).
pub fn dead_parameters(store: &ParamStore, grads: &GradStore) -> Result<HashSet<String>> {
    let mut dead = HashSet::new();
    for (name, var) in store.named_vars() {
        let alive = match grads.get(var.as_tensor()) {
            Some(g) => crate::nn::scalar(&g.abs()?.sum_all()?)? > 0.0,
            None => false,
        };
        if !alive {
            dead.insert(name);
        }
    }
    Ok(dead)
}

/// Snapshot of a store's parameters keyed by name.
pub fn snapshot(store: &ParamStore) -> Result<BTreeMap<String, Vec<f32>>> {
    store
        .tensors()?
        .into_iter()
        .map(|(k, t)| Ok((k, t.flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()?)))
        .collect()
}
