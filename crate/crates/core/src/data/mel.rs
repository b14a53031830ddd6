//! Log-mel feature extraction and the binary mel container.
//!
//! Frames are center-padded with zeros: frame `i` is centred on sample
//! `i * hop`, so a waveform of `n` samples yields `ceil(n / hop)` frames.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Global normalization statistics of log-mel values over a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MelStats {
    pub mean: f64,
    pub std: f64,
}

impl MelStats {
    /// Mean and standard deviation over every element of every matrix.
    pub fn from_mels<'a>(mels: impl IntoIterator<Item = &'a Array2<f32>>) -> Result<Self> {
        let (mut n, mut sum, mut sq) = (0usize, 0f64, 0f64);
        for m in mels {
            for &v in m.iter() {
                n += 1;
                sum += v as f64;
                sq += (v as f64) * (v as f64);
            }
        }
        if n == 0 {
            return Err(Error::Input("cannot compute statistics of an empty corpus".into()));
        }
        let mean = sum / n as f64;
        let var = (sq / n as f64 - mean * mean).max(0.0);
        Ok(Self {
            mean,
            std: var.sqrt().max(1e-8),
        })
    }

    pub fn normalize(&self, mel: &mut Array2<f32>) {
        let (m, s) = (self.mean as f32, self.std as f32);
        mel.mapv_inplace(|v| (v - m) / s);
    }

    pub fn denormalize(&self, mel: &Array2<f32>) -> Array2<f32> {
        let (m, s) = (self.mean as f32, self.std as f32);
        mel.mapv(|v| v * s + m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_mels: usize,
    pub hop: usize,
    /// FFT size and window length, in samples.
    pub frame_size: usize,
    pub fmin: f64,
    pub fmax: f64,
    /// Magnitudes are clamped to this value before the natural log.
    pub log_floor: f64,
    /// Applied after log compression when present.
    pub normalization: Option<MelStats>,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            n_mels: 80,
            hop: 160,
            frame_size: 1024,
            fmin: 0.0,
            fmax: 8_000.0,
            log_floor: 1e-5,
            normalization: None,
        }
    }
}

impl MelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.n_mels == 0 || self.sample_rate == 0 {
            return Err(Error::Config("hop, n_mels and sample_rate must be positive".into()));
        }
        if self.frame_size < self.hop {
            return Err(Error::Config(format!(
                "frame_size {} smaller than hop {}",
                self.frame_size, self.hop
            )));
        }
        if !(self.fmin >= 0.0 && self.fmax > self.fmin && self.fmax <= self.sample_rate as f64 / 2.0) {
            return Err(Error::Config(format!(
                "invalid band [{}, {}] for sample rate {}",
                self.fmin, self.fmax, self.sample_rate
            )));
        }
        Ok(())
    }

    pub fn frames_for(&self, n_samples: usize) -> usize {
        n_samples.div_ceil(self.hop)
    }

    pub fn frames_per_second(&self) -> f64 {
        self.sample_rate as f64 / self.hop as f64
    }

    pub fn n_bins(&self) -> usize {
        self.frame_size / 2 + 1
    }

    /// The value every bin takes for digital silence, before normalization.
    pub fn log_floor_value(&self) -> f32 {
        self.log_floor.ln() as f32
    }
}

/// Mono audio with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Centre frequencies of the triangular filters, in Hz.
pub fn mel_center_frequencies(cfg: &MelConfig) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
    (1..=cfg.n_mels)
        .map(|k| mel_to_hz(lo + (hi - lo) * k as f64 / (cfg.n_mels + 1) as f64))
        .collect()
}

/// Triangular filterbank `[n_mels, n_bins]` with unit peaks.
pub fn mel_filterbank(cfg: &MelConfig) -> Array2<f32> {
    let (lo, hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|k| mel_to_hz(lo + (hi - lo) * k as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let n_bins = cfg.n_bins();
    let bin_hz = cfg.sample_rate as f64 / cfg.frame_size as f64;
    let mut fb = Array2::<f32>::zeros((cfg.n_mels, n_bins));
    for m in 0..cfg.n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        for b in 0..n_bins {
            let f = b as f64 * bin_hz;
            let w = if f >= left && f <= center {
                (f - left) / (center - left)
            } else if f > center && f <= right {
                (right - f) / (right - center)
            } else {
                0.0
            };
            fb[[m, b]] = w as f32;
        }
    }
    fb
}

/// Periodic Hann window.
pub fn hann_window(n: usize) -> Vec<f32> {
    (0..n)
        .map(|i| (0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()) as f32)
        .collect()
}

/// Center-padded short-time Fourier transform shared by feature extraction
/// and Griffin-Lim.
pub struct Stft {
    n_fft: usize,
    hop: usize,
    window: Vec<f32>,
    forward: Arc<dyn Fft<f32>>,
    inverse: Arc<dyn Fft<f32>>,
}

impl Stft {
    pub fn new(n_fft: usize, hop: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n_fft,
            hop,
            window: hann_window(n_fft),
            forward: planner.plan_fft_forward(n_fft),
            inverse: planner.plan_fft_inverse(n_fft),
        }
    }

    /// Complex spectra, `frames x (n_fft/2 + 1)`, row-major.
    pub fn analyze(&self, samples: &[f32]) -> (usize, Vec<Complex<f32>>) {
        let frames = samples.len().div_ceil(self.hop);
        let n_bins = self.n_fft / 2 + 1;
        let half = (self.n_fft / 2) as isize;
        let mut out = Vec::with_capacity(frames * n_bins);
        let mut buf = vec![Complex::new(0f32, 0f32); self.n_fft];
        for i in 0..frames {
            let start = (i * self.hop) as isize - half;
            for (j, slot) in buf.iter_mut().enumerate() {
                let idx = start + j as isize;
                let x = if idx >= 0 && (idx as usize) < samples.len() {
                    samples[idx as usize]
                } else {
                    0.0
                };
                *slot = Complex::new(x * self.window[j], 0.0);
            }
            self.forward.process(&mut buf);
            out.extend_from_slice(&buf[..n_bins]);
        }
        (frames, out)
    }

    /// Weighted overlap-add inverse; returns `frames * hop` samples.
    pub fn synthesize(&self, frames: usize, spectra: &[Complex<f32>]) -> Vec<f32> {
        let n_bins = self.n_fft / 2 + 1;
        let half = self.n_fft / 2;
        let total = frames * self.hop;
        let padded = total + self.n_fft;
        let mut acc = vec![0f32; padded];
        let mut norm = vec![0f32; padded];
        let mut buf = vec![Complex::new(0f32, 0f32); self.n_fft];
        for i in 0..frames {
            let row = &spectra[i * n_bins..(i + 1) * n_bins];
            buf[..n_bins].copy_from_slice(row);
            for k in 1..self.n_fft - n_bins + 1 {
                buf[self.n_fft - k] = row[k].conj();
            }
            self.inverse.process(&mut buf);
            // Frame i starts at i*hop - half in signal coordinates, i.e. i*hop in padded ones.
            let base = i * self.hop;
            for j in 0..self.n_fft {
                let w = self.window[j];
                acc[base + j] += buf[j].re / self.n_fft as f32 * w;
                norm[base + j] += w * w;
            }
        }
        (0..total)
            .map(|s| {
                let p = s + half;
                if norm[p] > 1e-8 {
                    acc[p] / norm[p]
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Log-mel spectrogram `[frames, n_mels]`.
pub fn compute_mel(wave: &Waveform, cfg: &MelConfig) -> Result<Array2<f32>> {
    cfg.validate()?;
    if wave.samples.is_empty() {
        return Err(Error::Input("empty waveform".into()));
    }
    if wave.sample_rate != cfg.sample_rate {
        return Err(Error::Config(format!(
            "waveform sample rate {} does not match configured {}",
            wave.sample_rate, cfg.sample_rate
        )));
    }
    let stft = Stft::new(cfg.frame_size, cfg.hop);
    let (frames, spectra) = stft.analyze(&wave.samples);
    let fb = mel_filterbank(cfg);
    let n_bins = cfg.n_bins();
    let mut mag = Array2::<f32>::zeros((frames, n_bins));
    for (i, c) in spectra.iter().enumerate() {
        mag[[i / n_bins, i % n_bins]] = c.norm();
    }
    let floor = cfg.log_floor as f32;
    let mut mel = mag.dot(&fb.t()).mapv(|v| v.max(floor).ln());
    if let Some(stats) = &cfg.normalization {
        stats.normalize(&mut mel);
    }
    Ok(mel)
}

const MEL_MAGIC: &[u8; 4] = b"MEL1";

/// Write a mel matrix: magic, `u32` rows, `u32` cols (little endian), then
/// row-major `f32` values.
pub fn write_mel(path: impl AsRef<Path>, mel: &Array2<f32>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MEL_MAGIC)?;
    w.write_all(&(mel.nrows() as u32).to_le_bytes())?;
    w.write_all(&(mel.ncols() as u32).to_le_bytes())?;
    for v in mel.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_mel(path: impl AsRef<Path>) -> Result<Array2<f32>> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path)?);
    let mut head = [0u8; 12];
    r.read_exact(&mut head)?;
    if &head[..4] != MEL_MAGIC {
        return Err(Error::Input(format!("{}: not a mel container", path.display())));
    }
    let rows = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != rows * cols * 4 {
        return Err(Error::Input(format!(
            "{}: expected {} values, found {} bytes",
            path.display(),
            rows * cols,
            bytes.len()
        )));
    }
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Input(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, seconds: f64, sr: u32) -> Waveform {
        let n = (seconds * sr as f64) as usize;
        Waveform {
            samples: (0..n)
                .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / sr as f64).sin() as f32 * 0.5)
                .collect(),
            sample_rate: sr,
        }
    }

    #[test]
    fn one_second_is_one_hundred_frames() {
        let cfg = MelConfig::default();
        let mel = compute_mel(&sine(440.0, 1.0, 16_000), &cfg).unwrap();
        assert_eq!(mel.dim(), (100, 80));
        assert!(mel.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn frame_count_is_ceil_of_len_over_hop() {
        let cfg = MelConfig::default();
        for n in [1usize, 159, 160, 161, 16_001] {
            let w = Waveform {
                samples: vec![0.1; n],
                sample_rate: 16_000,
            };
            let mel = compute_mel(&w, &cfg).unwrap();
            assert_eq!(mel.nrows(), n.div_ceil(160), "len {n}");
        }
    }

    #[test]
    fn silence_hits_log_floor() {
        let cfg = MelConfig::default();
        let w = Waveform {
            samples: vec![0.0; 4000],
            sample_rate: 16_000,
        };
        let mel = compute_mel(&w, &cfg).unwrap();
        let floor = (1e-5f64).ln() as f32;
        assert!(mel.iter().all(|&v| v == floor));
    }

    #[test]
    fn sine_peaks_at_nearest_filter() {
        let cfg = MelConfig::default();
        let mel = compute_mel(&sine(440.0, 1.0, 16_000), &cfg).unwrap();
        // centres recomputed from the HTK formula directly
        let lo = 0.0;
        let hi = 2595.0 * (1.0f64 + 8000.0 / 700.0).log10();
        let centers: Vec<f64> = (1..=80)
            .map(|k| {
                let m = lo + (hi - lo) * k as f64 / 81.0;
                700.0 * (10f64.powf(m / 2595.0) - 1.0)
            })
            .collect();
        let nearest = centers
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - 440.0).abs().partial_cmp(&(b.1 - 440.0).abs()).unwrap())
            .unwrap()
            .0;
        // interior frames only; the padded edges see half a window
        for row in mel.rows().into_iter().skip(4).take(90) {
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(argmax, nearest);
        }
    }

    #[test]
    fn deterministic() {
        let cfg = MelConfig::default();
        let w = sine(300.0, 0.3, 16_000);
        let a = compute_mel(&w, &cfg).unwrap();
        let b = compute_mel(&w, &cfg).unwrap();
        assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn errors() {
        let cfg = MelConfig::default();
        let empty = Waveform {
            samples: vec![],
            sample_rate: 16_000,
        };
        assert!(matches!(compute_mel(&empty, &cfg), Err(Error::Input(_))));
        let wrong = Waveform {
            samples: vec![0.0; 100],
            sample_rate: 22_050,
        };
        assert!(matches!(compute_mel(&wrong, &cfg), Err(Error::Config(_))));
        let bad = MelConfig {
            hop: 2048,
            ..MelConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn container_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.mel");
        let m = Array2::from_shape_fn((3, 4), |(i, j)| i as f32 * 0.5 - j as f32);
        write_mel(&p, &m).unwrap();
        assert_eq!(read_mel(&p).unwrap(), m);
    }

    #[test]
    fn istft_reconstructs_interior() {
        let w = sine(500.0, 0.2, 16_000);
        let stft = Stft::new(1024, 160);
        let (frames, spec) = stft.analyze(&w.samples);
        let y = stft.synthesize(frames, &spec);
        assert_eq!(y.len(), frames * 160);
        for i in 600..2600 {
            assert!((y[i] - w.samples[i]).abs() < 1e-3, "sample {i}");
        }
    }
}
