use candle_core::{DType, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{seq_logprobs, PreferencePair};
use crate::duration::{DurModelConfig, DurationBatch, DurationExample, DurationModel};
use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, scalar, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DpoConfig {
    pub beta: f64,
    pub lr: f64,
    pub steps: usize,
    /// When set, overrides `steps` with this many passes over the pairs.
    pub epochs: Option<usize>,
    pub batch_size: usize,
    pub grad_clip: f64,
    /// Abort when the loss exceeds this multiple of the initial loss.
    pub divergence_factor: f64,
    pub seed: u64,
}

impl Default for DpoConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            lr: 1e-4,
            steps: 100,
            epochs: None,
            batch_size: 8,
            grad_clip: 1.0,
            divergence_factor: 10.0,
            seed: 0,
        }
    }
}

impl DpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(Error::Config(format!("beta {} must be > 0", self.beta)));
        }
        if self.lr < 0.0 || self.batch_size == 0 {
            return Err(Error::Config("lr must be >= 0 and batch_size > 0".into()));
        }
        Ok(())
    }

    /// Optimizer steps for a run over `n_pairs` pairs.
    pub fn steps_for(&self, n_pairs: usize) -> usize {
        match self.epochs {
            Some(e) => (e * n_pairs).div_ceil(self.batch_size.min(n_pairs).max(1)),
            None => self.steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpoReport {
    pub losses: Vec<f64>,
    pub mean_margin_before: f64,
    pub mean_margin_after: f64,
    pub reference_fingerprint: String,
}

/// Policy being optimized plus the frozen reference it started from.
pub struct DpoTrainer {
    pub cfg: DpoConfig,
    pub store: ParamStore,
    pub policy: DurationModel,
    reference: DurationModel,
    reference_store: ParamStore,
    reference_fingerprint: String,
    opt: AdamW,
}

fn examples(pairs: &[&PreferencePair]) -> Vec<DurationExample> {
    pairs
        .iter()
        .map(|p| p.winner())
        .chain(pairs.iter().map(|p| p.loser()))
        .collect()
}

impl DpoTrainer {
    /// Both policy and reference start as independent copies of `snapshot`.
    pub fn new(model_cfg: &DurModelConfig, snapshot: &ParamStore, cfg: &DpoConfig) -> Result<Self> {
        cfg.validate()?;
        let store = snapshot.deep_clone()?;
        let reference_store = snapshot.deep_clone()?;
        let policy = DurationModel::new(model_cfg, &store)?;
        let reference = DurationModel::new(model_cfg, &reference_store)?;
        let opt = AdamW::new(
            store.vars(),
            ParamsAdamW {
                lr: cfg.lr,
                weight_decay: 0.0,
                ..ParamsAdamW::default()
            },
        )?;
        Ok(Self {
            cfg: cfg.clone(),
            reference_fingerprint: reference_store.fingerprint()?,
            store,
            policy,
            reference,
            reference_store,
            opt,
        })
    }

    pub fn reference(&self) -> &DurationModel {
        &self.reference
    }

    pub fn reference_fingerprint(&self) -> &str {
        &self.reference_fingerprint
    }

    /// Summed log-probabilities of winners and losers under the reference.
    pub fn reference_logprobs(&self, pairs: &[&PreferencePair]) -> Result<(Vec<f64>, Vec<f64>)> {
        let device = self.reference_store.device();
        let batch = DurationBatch::scoring(&examples(pairs), device)?;
        let lp = seq_logprobs(&self.reference, &batch)?.detach().to_dtype(DType::F64)?.to_vec1::<f64>()?;
        let n = pairs.len();
        Ok((lp[..n].to_vec(), lp[n..].to_vec()))
    }

    /// Mean log-ratio margin over `pairs` (before `beta`).
    pub fn mean_margin(&self, pairs: &[PreferencePair]) -> Result<f64> {
        if pairs.is_empty() {
            return Ok(0.0);
        }
        let refs: Vec<&PreferencePair> = pairs.iter().collect();
        let mut total = 0.0;
        for chunk in refs.chunks(self.cfg.batch_size) {
            let (rw, rl) = self.reference_logprobs(chunk)?;
            let batch = DurationBatch::scoring(&examples(chunk), self.store.device())?;
            let lp = seq_logprobs(&self.policy, &batch)?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
            let n = chunk.len();
            for i in 0..n {
                total += (lp[i] - rw[i]) - (lp[n + i] - rl[i]);
            }
        }
        Ok(total / pairs.len() as f64)
    }

    /// One optimizer step on `pairs`; returns the mean DPO loss before the update.
    pub fn step(&mut self, pairs: &[&PreferencePair], ref_w: &[f64], ref_l: &[f64]) -> Result<f64> {
        let device = self.store.device().clone();
        let n = pairs.len();
        let batch = DurationBatch::scoring(&examples(pairs), &device)?;
        let lp = seq_logprobs(&self.policy, &batch)?;
        let dtype = lp.dtype();
        let refs: Vec<f64> = ref_w.iter().zip(ref_l).map(|(w, l)| w - l).collect();
        let refs = Tensor::from_vec(refs, n, &device)?.to_dtype(dtype)?;
        let margin = ((lp.narrow(0, 0, n)? - lp.narrow(0, n, n)?)? - refs)?;
        let x = (margin * -self.cfg.beta)?;
        // softplus(x) = relu(x) + ln(1 + exp(-|x|))
        let sp = (x.relu()? + x.abs()?.neg()?.exp()?.affine(1.0, 1.0)?.log()?)?;
        let loss = sp.mean_all()?;
        let value = scalar(&loss)?;
        if !value.is_finite() {
            return Err(Error::Numeric {
                step: None,
                msg: format!("DPO loss is {value} on pairs {:?}", pairs.iter().map(|p| &p.id).collect::<Vec<_>>()),
            });
        }
        let mut grads = loss.backward()?;
        clip_grad_norm(&mut grads, &self.store.vars(), self.cfg.grad_clip)?;
        self.opt.step(&grads)?;
        Ok(value)
    }

    /// Run `cfg.steps` minibatch steps over shuffled pairs.
    pub fn train(&mut self, pairs: &[PreferencePair], mut on_step: impl FnMut(usize, f64)) -> Result<DpoReport> {
        if pairs.is_empty() {
            return Err(Error::Input("no preference pairs".into()));
        }
        for p in pairs {
            p.validate()?;
        }
        let mean_margin_before = self.mean_margin(pairs)?;
        let all: Vec<&PreferencePair> = pairs.iter().collect();
        let (mut ref_w, mut ref_l) = (Vec::new(), Vec::new());
        for chunk in all.chunks(self.cfg.batch_size) {
            let (w, l) = self.reference_logprobs(chunk)?;
            ref_w.extend(w);
            ref_l.extend(l);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        let mut order: Vec<usize> = Vec::new();
        let steps = self.cfg.steps_for(pairs.len());
        let mut losses = Vec::with_capacity(steps);
        let mut initial: Option<f64> = None;
        for step in 0..steps {
            let mut idx = Vec::with_capacity(self.cfg.batch_size);
            while idx.len() < self.cfg.batch_size.min(pairs.len()) {
                if order.is_empty() {
                    order = (0..pairs.len()).collect();
                    order.shuffle(&mut rng);
                }
                idx.push(order.pop().expect("refilled above"));
            }
            let chunk: Vec<&PreferencePair> = idx.iter().map(|&i| &pairs[i]).collect();
            let w: Vec<f64> = idx.iter().map(|&i| ref_w[i]).collect();
            let l: Vec<f64> = idx.iter().map(|&i| ref_l[i]).collect();
            let loss = self.step(&chunk, &w, &l)?;
            let first = *initial.get_or_insert(loss);
            if loss > self.cfg.divergence_factor * first {
                return Err(Error::Divergence(format!(
                    "DPO loss {loss:.4} at step {step} exceeds {}x the initial {first:.4}; pairs {:?}",
                    self.cfg.divergence_factor,
                    chunk.iter().map(|p| &p.id).collect::<Vec<_>>()
                )));
            }
            on_step(step, loss);
            losses.push(loss);
        }
        let fp = self.reference_store.fingerprint()?;
        if fp != self.reference_fingerprint {
            return Err(Error::Validation("reference policy changed during DPO".into()));
        }
        Ok(DpoReport {
            losses,
            mean_margin_before,
            mean_margin_after: self.mean_margin(pairs)?,
            reference_fingerprint: fp,
        })
    }
}
