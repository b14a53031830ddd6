use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;

use crate::data::{mel_filterbank, MelConfig, Stft, Waveform};
use crate::error::{Error, Result};

/// Mel-to-waveform converter.
pub trait Vocoder: Send + Sync {
    fn name(&self) -> &str;
    fn sample_rate(&self) -> u32;
    /// `mel`: `[frames, n_mels]` in the units the acoustic model produces.
    fn vocode(&self, mel: &Array2<f32>) -> Result<Waveform>;
}

/// Phase reconstruction by alternating projections. Produces
/// `frames * hop` samples at the mel sample rate.
#[derive(Debug, Clone)]
pub struct GriffinLim {
    pub mel: MelConfig,
    pub iterations: usize,
    pub seed: u64,
}

impl GriffinLim {
    pub fn new(mel: MelConfig) -> Self {
        Self {
            mel,
            iterations: 32,
            seed: 0,
        }
    }

    /// Linear magnitudes `[frames, n_bins]` from a (possibly normalized) log-mel.
    pub fn magnitudes(&self, mel: &Array2<f32>) -> Result<Array2<f32>> {
        if mel.ncols() != self.mel.n_mels {
            return Err(Error::Shape(format!(
                "mel has {} bins, vocoder expects {}",
                mel.ncols(),
                self.mel.n_mels
            )));
        }
        let log = match &self.mel.normalization {
            Some(stats) => stats.denormalize(mel),
            None => mel.clone(),
        };
        let lin = log.mapv(f32::exp);
        let fb = mel_filterbank(&self.mel);
        let weight = fb.sum_axis(ndarray::Axis(0)).mapv(|w| w.max(1e-6));
        Ok(lin.dot(&fb) / &weight)
    }
}

impl Vocoder for GriffinLim {
    fn name(&self) -> &str {
        "griffin-lim"
    }

    fn sample_rate(&self) -> u32 {
        self.mel.sample_rate
    }

    fn vocode(&self, mel: &Array2<f32>) -> Result<Waveform> {
        let frames = mel.nrows();
        if frames == 0 {
            return Err(Error::Input("cannot vocode an empty mel".into()));
        }
        let mag = self.magnitudes(mel)?;
        let n_bins = self.mel.n_bins();
        let stft = Stft::new(self.mel.frame_size, self.mel.hop);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut phase: Vec<Complex<f32>> = (0..frames * n_bins)
            .map(|_| Complex::from_polar(1.0, rng.random_range(0.0..std::f32::consts::TAU)))
            .collect();
        let mut samples = Vec::new();
        for it in 0..=self.iterations {
            let spec: Vec<Complex<f32>> = phase
                .iter()
                .zip(mag.iter())
                .map(|(p, &m)| p * m)
                .collect();
            samples = stft.synthesize(frames, &spec);
            if it == self.iterations {
                break;
            }
            let (_, re) = stft.analyze(&samples);
            for (p, c) in phase.iter_mut().zip(re) {
                let n = c.norm();
                *p = if n > 1e-12 { c / n } else { Complex::new(1.0, 0.0) };
            }
        }
        let peak = samples.iter().fold(0f32, |a, &x| a.max(x.abs()));
        if peak > 1.0 {
            samples.iter_mut().for_each(|x| *x /= peak);
        }
        Ok(Waveform {
            samples,
            sample_rate: self.mel.sample_rate,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::compute_mel;

    #[test]
    fn output_length_is_frames_times_hop() {
        let cfg = MelConfig::default();
        let mel = Array2::from_elem((37, cfg.n_mels), -3.0f32);
        let gl = GriffinLim {
            iterations: 4,
            ..GriffinLim::new(cfg.clone())
        };
        let wave = gl.vocode(&mel).unwrap();
        assert_eq!(wave.samples.len(), 37 * cfg.hop);
        assert_eq!(wave.sample_rate, 16_000);
    }

    #[test]
    fn resynthesis_keeps_spectral_peak() {
        let cfg = MelConfig::default();
        let samples: Vec<f32> = (0..8000)
            .map(|i| 0.5 * (2.0 * std::f32::consts::PI * 440.0 * i as f32 / 16000.0).sin())
            .collect();
        let wave = Waveform {
            samples,
            sample_rate: 16000,
        };
        let mel = compute_mel(&wave, &cfg).unwrap();
        let out = GriffinLim::new(cfg.clone()).vocode(&mel).unwrap();
        let mel2 = compute_mel(&out, &cfg).unwrap();
        let argmax = |m: &Array2<f32>, r: usize| {
            m.row(r)
                .iter()
                .enumerate()
                .fold((0, f32::MIN), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
                .0
        };
        assert_eq!(argmax(&mel, 25), argmax(&mel2, 25));
    }
}
