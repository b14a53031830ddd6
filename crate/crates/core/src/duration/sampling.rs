use std::collections::BTreeSet;

use candle_core::{DType, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DurationModel, DurationPrompt, SEG_PROMPT, SEG_TARGET};
use crate::error::{Error, Result};
use crate::nn::DropoutCtx;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingParams {
    pub top_k: usize,
    pub top_p: f64,
    pub temperature: f64,
    pub repetition_penalty: f64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            top_k: 6,
            top_p: 0.5,
            temperature: 0.9,
            repetition_penalty: 1.0,
        }
    }
}

impl SamplingParams {
    pub fn greedy() -> Self {
        Self {
            top_k: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.top_k < 1 {
            return Err(Error::Config("top_k must be >= 1".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config(format!("top_p {} outside (0, 1]", self.top_p)));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!("temperature {} must be > 0", self.temperature)));
        }
        if !(self.repetition_penalty >= 1.0) {
            return Err(Error::Config(format!(
                "repetition_penalty {} must be >= 1",
                self.repetition_penalty
            )));
        }
        Ok(())
    }
}

/// Turn raw logits into the sampling distribution.
///
/// Order: repetition penalty on labels in `history`, temperature, top-k,
/// nucleus (smallest prefix with mass >= top_p), renormalization. Ties in
/// the ranking go to the lower index.
pub fn filter_logits(logits: &[f64], params: &SamplingParams, history: &[u32]) -> Result<Vec<f64>> {
    params.validate()?;
    if logits.iter().any(|x| x.is_nan()) {
        return Err(Error::Numeric {
            step: None,
            msg: "NaN in logits".into(),
        });
    }
    let mut z = logits.to_vec();
    let seen: BTreeSet<usize> = history.iter().map(|&h| h as usize).collect();
    for i in seen {
        if let Some(x) = z.get_mut(i) {
            *x = if *x > 0.0 {
                *x / params.repetition_penalty
            } else {
                *x * params.repetition_penalty
            };
        }
    }
    for x in z.iter_mut() {
        *x /= params.temperature;
    }
    let mut order: Vec<usize> = (0..z.len()).filter(|&i| z[i] > f64::NEG_INFINITY).collect();
    if order.is_empty() {
        return Err(Error::Numeric {
            step: None,
            msg: "all logits are -inf".into(),
        });
    }
    order.sort_by(|&a, &b| z[b].total_cmp(&z[a]).then(a.cmp(&b)));
    order.truncate(params.top_k);

    let max = z[order[0]];
    let weights: Vec<f64> = order.iter().map(|&i| (z[i] - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut keep = 0;
    let mut mass = 0.0;
    for w in &weights {
        mass += w / total;
        keep += 1;
        if mass >= params.top_p {
            break;
        }
    }
    let kept_total: f64 = weights[..keep].iter().sum();
    let mut probs = vec![0.0; z.len()];
    for (&i, w) in order[..keep].iter().zip(&weights) {
        probs[i] = w / kept_total;
    }
    Ok(probs)
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Sample one duration label per target phoneme, continuing the prompt.
///
/// The prompt is teacher-forced through the decoder cache; class 0 is never
/// sampled. The output always has exactly `target.len()` labels.
pub fn sample_durations<R: Rng + ?Sized>(
    model: &DurationModel,
    prompt: &DurationPrompt,
    target: &[u32],
    params: &SamplingParams,
    rng: &mut R,
) -> Result<Vec<u32>> {
    prompt.validate()?;
    params.validate()?;
    if target.is_empty() {
        return Err(Error::Input("no target phonemes".into()));
    }
    let dev = model.device().clone();
    let mut eval = DropoutCtx::eval();
    let (frames, n_mels) = prompt.ref_mel.dim();
    let ref_mel = Tensor::from_vec(
        prompt.ref_mel.iter().copied().collect::<Vec<f32>>(),
        (1, frames, n_mels),
        &dev,
    )?;
    let (feature_ref, _) = model.pool_reference(&ref_mel, &mut eval)?;

    let p_len = prompt.phonemes.len();
    let ids: Vec<u32> = prompt.phonemes.iter().chain(target).copied().collect();
    let segs: Vec<u32> = (0..ids.len())
        .map(|i| if i < p_len { SEG_PROMPT } else { SEG_TARGET })
        .collect();
    let n = ids.len();
    let h = model.encode(
        &Tensor::from_vec(ids, (1, n), &dev)?,
        &Tensor::from_vec(segs, (1, n), &dev)?,
        &feature_ref,
        None,
        &mut eval,
    )?;
    let h = h.squeeze(0)?;

    let mut state = model.start_decoding(&feature_ref)?;
    let mut history: Vec<u32> = Vec::with_capacity(n);
    for (i, &d) in prompt.durations.iter().enumerate() {
        model.decode_step(&mut state, i, &h.narrow(0, i, 1)?, history.last().copied())?;
        history.push(d);
    }
    let mut out = Vec::with_capacity(target.len());
    for i in p_len..n {
        let logits = model.decode_step(&mut state, i, &h.narrow(0, i, 1)?, history.last().copied())?;
        let mut logits = logits.to_dtype(DType::F64)?.to_vec1::<f64>()?;
        logits[0] = f64::NEG_INFINITY;
        let probs = filter_logits(&logits, params, &history)?;
        let d = sample_index(&probs, rng) as u32;
        history.push(d);
        out.push(d);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn p(k: usize, top_p: f64, t: f64, pen: f64) -> SamplingParams {
        SamplingParams {
            top_k: k,
            top_p,
            temperature: t,
            repetition_penalty: pen,
        }
    }

    #[test]
    fn two_survivors() {
        let probs = filter_logits(&[2.0, 1.0, 0.0, -1.0], &p(2, 1.0, 1.0, 1.0), &[]).unwrap();
        let e = 1f64.exp();
        assert!((probs[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((probs[1] - 1.0 / (e + 1.0)).abs() < 1e-12);
        assert_eq!(&probs[2..], &[0.0, 0.0]);
        assert!((probs[0] - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn top1_is_argmax_with_low_index_ties() {
        let probs = filter_logits(&[0.5, 3.0, 3.0, 1.0], &p(1, 0.9, 0.7, 1.0), &[]).unwrap();
        assert_eq!(probs, vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn penalty_and_errors() {
        let probs = filter_logits(&[2.0, 2.0], &p(1, 1.0, 1.0, 2.0), &[0]).unwrap();
        assert_eq!(probs, vec![0.0, 1.0]);
        let neg = filter_logits(&[-1.0, -1.5], &p(1, 1.0, 1.0, 2.0), &[0, 0]).unwrap();
        assert_eq!(neg, vec![0.0, 1.0]);
        assert!(filter_logits(&[f64::NEG_INFINITY; 3], &p(2, 1.0, 1.0, 1.0), &[]).is_err());
        assert!(filter_logits(&[1.0], &p(0, 1.0, 1.0, 1.0), &[]).is_err());
        assert!(filter_logits(&[1.0], &p(1, 1.0, 0.0, 1.0), &[]).is_err());
    }

    #[test]
    fn sample_index_respects_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let probs = [0.0, 0.25, 0.0, 0.75];
        let mut counts = [0usize; 4];
        for _ in 0..4000 {
            counts[sample_index(&probs, &mut rng)] += 1;
        }
        assert_eq!(counts[0] + counts[2], 0);
        assert!((counts[3] as f64 / 4000.0 - 0.75).abs() < 0.03);
    }
}
