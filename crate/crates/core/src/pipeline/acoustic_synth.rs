use candle_core::{DType, Tensor};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::acoustic::AcousticModel;
use crate::data::expand_phonemes;
use crate::error::{Error, Result};
use crate::flowmatch::{euler_integrate, SolverConfig};

/// Generate a normalized mel for phonemes with given durations.
///
/// `speaker`: `[1, spk_dim]`. The initial noise is drawn from `seed`, so equal
/// inputs give bit-identical output.
pub fn generate_mel(
    model: &AcousticModel,
    phonemes: &[u32],
    durations: &[u32],
    speaker: &Tensor,
    solver: &SolverConfig,
    alpha: f64,
    seed: u64,
) -> Result<Array2<f32>> {
    let expanded = expand_phonemes(phonemes, durations)?;
    let frames = expanded.len();
    let n_mels = model.config().n_mels;
    let dev = speaker.device();
    let ids = Tensor::from_vec(expanded, (1, frames), dev)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f32> = (0..frames * n_mels)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let x0 = Tensor::from_vec(noise, (1, frames, n_mels), dev)?.to_dtype(speaker.dtype())?;
    let x1 = euler_integrate(
        |x, t| model.guided_field(x, &ids, speaker, t, alpha),
        &x0,
        solver.steps,
    )?;
    let flat = x1.squeeze(0)?.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    let mel = Array2::from_shape_vec((frames, n_mels), flat)
        .map_err(|e| Error::Shape(e.to_string()))?;
    Ok(mel)
}

/// Speaker embedding `[1, spk_dim]` of one clip.
pub fn embed_speaker(model: &AcousticModel, clip: &Array2<f32>, device: &candle_core::Device) -> Result<Tensor> {
    let (t, m) = clip.dim();
    let data: Vec<f32> = clip.iter().copied().collect();
    let x = Tensor::from_vec(data, (1, t, m), device)?;
    model.encode_speaker(&x)
}

/// Per-bin mean squared error between two mels of equal shape.
pub fn mel_mse(a: &Array2<f32>, b: &Array2<f32>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("mel shapes differ: {:?} vs {:?}", a.dim(), b.dim())));
    }
    let n = a.len() as f64;
    Ok(a.iter().zip(b).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>() / n)
}
