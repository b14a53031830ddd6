use serde::{Deserialize, Serialize};

use crate::data::MAX_DURATION;
use crate::error::{Error, Result};

/// Scale selected durations by `scale` (all of them when `indices` is
/// `None`), rounding half up and clamping to `1..=99`.
pub fn duration_control(durations: &[u32], scale: f64, indices: Option<&[usize]>) -> Result<Vec<u32>> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Input(format!("duration scale {scale} must be positive")));
    }
    let mut out = durations.to_vec();
    let apply = |d: u32| ((d as f64 * scale + 0.5).floor() as i64).clamp(1, MAX_DURATION as i64) as u32;
    match indices {
        None => out.iter_mut().for_each(|d| *d = apply(*d)),
        Some(idx) => {
            for &i in idx {
                let d = out.get_mut(i).ok_or_else(|| {
                    Error::Input(format!("index {i} outside a sequence of {}", durations.len()))
                })?;
                *d = apply(*d);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DurationMetrics {
    pub exact_match: f64,
    pub mean_abs_err: f64,
    pub total_len_err: f64,
}

/// Exact-match rate, mean absolute frame error and relative total-length
/// error of `predicted` against `reference`.
pub fn eval_duration_metrics(predicted: &[u32], reference: &[u32]) -> Result<DurationMetrics> {
    if predicted.len() != reference.len() || reference.is_empty() {
        return Err(Error::Input(format!(
            "cannot compare {} predicted with {} reference durations",
            predicted.len(),
            reference.len()
        )));
    }
    let n = reference.len() as f64;
    let exact = predicted.iter().zip(reference).filter(|(a, b)| a == b).count() as f64;
    let abs: f64 = predicted
        .iter()
        .zip(reference)
        .map(|(&a, &b)| (a as f64 - b as f64).abs())
        .sum();
    let total_p: f64 = predicted.iter().map(|&d| d as f64).sum();
    let total_r: f64 = reference.iter().map(|&d| d as f64).sum();
    Ok(DurationMetrics {
        exact_match: exact / n,
        mean_abs_err: abs / n,
        total_len_err: (total_p - total_r).abs() / total_r.max(1.0),
    })
}

/// Metrics over many sequences: token-weighted exact match and mean
/// absolute error, sequence-averaged total-length error.
pub fn aggregate_metrics(pairs: &[(Vec<u32>, Vec<u32>)]) -> Result<DurationMetrics> {
    if pairs.is_empty() {
        return Err(Error::Input("no sequences to evaluate".into()));
    }
    let mut tokens = 0.0;
    let (mut exact, mut abs, mut total) = (0.0, 0.0, 0.0);
    for (p, r) in pairs {
        let m = eval_duration_metrics(p, r)?;
        let n = r.len() as f64;
        tokens += n;
        exact += m.exact_match * n;
        abs += m.mean_abs_err * n;
        total += m.total_len_err;
    }
    Ok(DurationMetrics {
        exact_match: exact / tokens,
        mean_abs_err: abs / tokens,
        total_len_err: total / pairs.len() as f64,
    })
}
