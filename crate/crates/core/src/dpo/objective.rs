use candle_core::{DType, Tensor, D};

use super::PreferencePair;
use crate::duration::{DurationBatch, DurationExample, DurationModel};
use crate::error::{Error, Result};
use crate::nn::{log_softmax_last, DropoutCtx};

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `-ln sigmoid(beta * ((pi_w - ref_w) - (pi_l - ref_l)))`.
pub fn dpo_loss_from_logprobs(pi_w: f64, pi_l: f64, ref_w: f64, ref_l: f64, beta: f64) -> f64 {
    softplus(-beta * ((pi_w - ref_w) - (pi_l - ref_l)))
}

/// Per-item teacher-forced log-probability of the scored durations, `[B]`.
/// Differentiable; dropout is off.
pub fn seq_logprobs(model: &DurationModel, batch: &DurationBatch) -> Result<Tensor> {
    let out = model.forward(&batch.input, &mut DropoutCtx::eval())?;
    let logp = log_softmax_last(&out.dur_logits)?;
    let (b, n, c) = logp.dims3()?;
    let labels = batch.input.durations.flatten_all()?.to_vec1::<u32>()?;
    let mut onehot = vec![0f32; b * n * c];
    for (i, &l) in labels.iter().enumerate() {
        onehot[i * c + l as usize] = 1.0;
    }
    let onehot = Tensor::from_vec(onehot, (b, n, c), logp.device())?.to_dtype(logp.dtype())?;
    let picked = (logp * onehot)?.sum(D::Minus1)?;
    let mask = batch.dur_mask.to_dtype(picked.dtype())?;
    Ok((picked * mask)?.sum(1)?)
}

/// Log-probability of each target duration (prompt excluded).
pub fn token_logprobs(model: &DurationModel, example: &DurationExample) -> Result<Vec<f64>> {
    let batch = DurationBatch::scoring(std::slice::from_ref(example), model.device())?;
    let logp = model.log_probs(&batch.input)?.to_dtype(DType::F64)?.squeeze(0)?;
    let p_len = example.prompt.phonemes.len();
    let rows = logp.to_vec2::<f64>()?;
    let out: Vec<f64> = example
        .durations
        .iter()
        .enumerate()
        .map(|(i, &d)| rows[p_len + i][d as usize])
        .collect();
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric {
            step: None,
            msg: format!("non-finite duration log-probability for {}", example.id),
        });
    }
    Ok(out)
}

/// `log pi(d | c)` summed over the target region.
pub fn seq_logprob(model: &DurationModel, example: &DurationExample) -> Result<f64> {
    Ok(token_logprobs(model, example)?.iter().sum())
}

/// Log-ratio margin `(log pi(d_w) - log ref(d_w)) - (log pi(d_l) - log ref(d_l))`.
pub fn pair_margin(policy: &DurationModel, reference: &DurationModel, pair: &PreferencePair) -> Result<f64> {
    let (w, l) = (pair.winner(), pair.loser());
    Ok((seq_logprob(policy, &w)? - seq_logprob(reference, &w)?)
        - (seq_logprob(policy, &l)? - seq_logprob(reference, &l)?))
}

pub fn dpo_loss(policy: &DurationModel, reference: &DurationModel, pair: &PreferencePair, beta: f64) -> Result<f64> {
    Ok(softplus(-beta * pair_margin(policy, reference, pair)?))
}

/// Bradley-Terry probability that the winner is preferred, `sigmoid(beta * margin)`.
pub fn bt_preference_prob(
    policy: &DurationModel,
    reference: &DurationModel,
    pair: &PreferencePair,
    beta: f64,
) -> Result<f64> {
    Ok(crate::flowmatch::sigmoid(beta * pair_margin(policy, reference, pair)?))
}
