use candle_core::{DType, Tensor};
use rand::Rng;

use super::NUM_CLASSES;
use crate::data::{MASK, MAX_DURATION};
use crate::error::{shape_err, Error, Result};
use crate::nn::log_softmax_last;

/// Select the sentence with `sentence_prob`, then mask each phoneme with
/// `phoneme_prob`. Returns the masked ids and the masked positions.
pub fn mask_phonemes<R: Rng + ?Sized>(
    ids: &[u32],
    rng: &mut R,
    sentence_prob: f64,
    phoneme_prob: f64,
) -> (Vec<u32>, Vec<bool>) {
    let mut masked = ids.to_vec();
    let mut positions = vec![false; ids.len()];
    if rng.random::<f64>() < sentence_prob {
        for (id, pos) in masked.iter_mut().zip(positions.iter_mut()) {
            if rng.random::<f64>() < phoneme_prob {
                *id = MASK;
                *pos = true;
            }
        }
    }
    (masked, positions)
}

/// `-sum_i weight_i * log softmax(logits_i)[label_i]` over all positions.
///
/// `logits`: `[..., C]`; `labels`: `[...]` (u32); `weights`: `[...]` or
/// `None` for all ones.
pub fn token_nll(logits: &Tensor, labels: &Tensor, weights: Option<&Tensor>) -> Result<Tensor> {
    let dims = logits.dims();
    let classes = *dims.last().ok_or_else(|| shape_err("logits must have a class axis"))?;
    if labels.dims() != &dims[..dims.len() - 1] {
        return Err(shape_err(format!(
            "labels {:?} do not match logits {:?}",
            labels.dims(),
            dims
        )));
    }
    let flat = labels.flatten_all()?.to_vec1::<u32>()?;
    let mut onehot = vec![0f32; flat.len() * classes];
    for (i, &l) in flat.iter().enumerate() {
        if l as usize >= classes {
            return Err(Error::Validation(format!("label {l} outside {classes} classes")));
        }
        onehot[i * classes + l as usize] = 1.0;
    }
    let onehot = Tensor::from_vec(onehot, dims, logits.device())?.to_dtype(logits.dtype())?;
    let picked = (log_softmax_last(logits)? * onehot)?.sum(candle_core::D::Minus1)?;
    let picked = match weights {
        Some(w) => picked.mul(&w.to_dtype(logits.dtype())?)?,
        None => picked,
    };
    Ok(picked.sum_all()?.neg()?)
}

/// Summed cross-entropy over masked positions (`mask` 1 = masked).
/// Zero when nothing is masked.
pub fn masked_lm_loss(logits: &Tensor, targets: &Tensor, mask: &Tensor) -> Result<Tensor> {
    token_nll(logits, targets, Some(mask))
}

/// Summed duration cross-entropy under teacher forcing. `mask` selects the
/// positions that count (padding and, where wanted, the prompt excluded).
pub fn duration_loss(logits: &Tensor, durations: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
    if logits.dims().last() != Some(&NUM_CLASSES) {
        return Err(shape_err(format!("duration logits {:?} need {NUM_CLASSES} classes", logits.dims())));
    }
    let labels = durations.flatten_all()?.to_vec1::<u32>()?;
    let weights = match mask {
        Some(m) => m.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?,
        None => vec![1.0; labels.len()],
    };
    for (l, w) in labels.iter().zip(&weights) {
        if *w != 0.0 && (*l == 0 || *l > MAX_DURATION) {
            return Err(Error::Validation(format!("duration label {l} outside 1..={MAX_DURATION}")));
        }
    }
    token_nll(logits, durations, mask)
}

/// `lambda_ml * l_ml + lambda_dur * l_dur`.
pub fn total_loss(l_ml: &Tensor, l_dur: &Tensor, lambda_ml: f64, lambda_dur: f64) -> Result<Tensor> {
    Ok(((l_ml * lambda_ml)? + (l_dur * lambda_dur)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar(t: &Tensor) -> f64 {
        t.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
    }

    #[test]
    fn mask_extremes_and_rate() {
        let ids: Vec<u32> = (4..24).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (m, pos) = mask_phonemes(&ids, &mut rng, 0.0, 1.0);
        assert_eq!(m, ids);
        assert!(pos.iter().all(|p| !p));
        let (m, pos) = mask_phonemes(&ids, &mut rng, 1.0, 1.0);
        assert!(m.iter().all(|&x| x == MASK));
        assert!(pos.iter().all(|&p| p));

        let trials = 10_000;
        let mut hits = 0usize;
        for _ in 0..trials {
            let (_, pos) = mask_phonemes(&ids, &mut rng, 0.5, 0.15);
            hits += pos.iter().filter(|&&p| p).count();
        }
        let rate = hits as f64 / (trials * ids.len()) as f64;
        assert!((rate - 0.075).abs() <= 0.005, "rate {rate}");
    }

    #[test]
    fn masked_lm_cases() {
        let dev = Device::Cpu;
        let v = 7usize;
        let logits = Tensor::zeros((1, 4, v), DType::F64, &dev).unwrap();
        let targets = Tensor::new(&[[4u32, 5, 6, 4]], &dev).unwrap();
        let none = Tensor::zeros((1, 4), DType::F64, &dev).unwrap();
        assert_eq!(scalar(&masked_lm_loss(&logits, &targets, &none).unwrap()), 0.0);
        let three = Tensor::new(&[[1f64, 0., 1., 1.]], &dev).unwrap();
        let l = scalar(&masked_lm_loss(&logits, &targets, &three).unwrap());
        assert!((l - 3.0 * (v as f64).ln()).abs() < 1e-12);
        let mut perfect = vec![vec![vec![-1e4f64; v]; 4]];
        for (i, &t) in [4usize, 5, 6, 4].iter().enumerate() {
            perfect[0][i][t] = 1e4;
        }
        let perfect = Tensor::new(perfect, &dev).unwrap();
        assert!(scalar(&masked_lm_loss(&perfect, &targets, &three).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn duration_loss_cases() {
        let dev = Device::Cpu;
        let n = 5;
        let uniform = Tensor::zeros((n, NUM_CLASSES), DType::F64, &dev).unwrap();
        let labels = Tensor::new(&[1u32, 5, 99, 20, 3], &dev).unwrap();
        let l = scalar(&duration_loss(&uniform, &labels, None).unwrap());
        assert!((l - n as f64 * 100f64.ln()).abs() < 1e-10);

        let bad = Tensor::new(&[1u32, 0, 3, 3, 3], &dev).unwrap();
        assert!(matches!(duration_loss(&uniform, &bad, None), Err(Error::Validation(_))));
        let too_big = Tensor::new(&[1u32, 100, 3, 3, 3], &dev).unwrap();
        assert!(duration_loss(&uniform, &too_big, None).is_err());
    }

    #[test]
    fn duration_loss_matches_enumeration() {
        let dev = Device::Cpu;
        let raw: Vec<Vec<f64>> = (0..3)
            .map(|i| (0..NUM_CLASSES).map(|c| ((i * 31 + c * 17) % 23) as f64 / 7.0 - 1.5).collect())
            .collect();
        let labels = [4u32, 17, 2];
        let mut expect = 0.0;
        for (row, &l) in raw.iter().zip(&labels) {
            let z: f64 = row.iter().map(|x| x.exp()).sum();
            expect -= (row[l as usize].exp() / z).ln();
        }
        let logits = Tensor::new(raw, &dev).unwrap();
        let got = scalar(&duration_loss(&logits, &Tensor::new(&labels, &dev).unwrap(), None).unwrap());
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn total_loss_weights() {
        let dev = Device::Cpu;
        let a = Tensor::new(2f64, &dev).unwrap();
        let b = Tensor::new(3f64, &dev).unwrap();
        assert_eq!(scalar(&total_loss(&a, &b, 1.0, 10.0).unwrap()), 32.0);
        assert_eq!(scalar(&total_loss(&a, &b, 1.0, 0.0).unwrap()), 2.0);
    }
}
