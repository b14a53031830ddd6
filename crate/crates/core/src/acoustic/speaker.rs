use candle_core::{Tensor, D};

use crate::error::{Error, Result};
use crate::nn::{Init, Linear, ParamBuilder};

/// Shortest reference clip the encoder accepts, in frames.
pub const MIN_CLIP_FRAMES: usize = 10;

/// Dilated 1-D convolution over `[B, T, C]`, same-length output.
#[derive(Debug, Clone)]
struct DilatedConv {
    /// `[K, out, in]`
    weight: Tensor,
    bias: Tensor,
    kernel: usize,
    dilation: usize,
}

impl DilatedConv {
    fn new(c_in: usize, c_out: usize, kernel: usize, dilation: usize, pb: ParamBuilder) -> Result<Self> {
        let bound = 1.0 / ((c_in * kernel) as f64).sqrt();
        Ok(Self {
            weight: pb.get(&[kernel, c_out, c_in], "weight", Init::Uniform(bound))?,
            bias: pb.get(&[c_out], "bias", Init::Zeros)?,
            kernel,
            dilation,
        })
    }

    fn forward(&self, xs: &Tensor) -> Result<Tensor> {
        let t = xs.dim(1)?;
        let pad = self.dilation * (self.kernel - 1) / 2;
        let padded = xs.pad_with_zeros(1, pad, pad)?;
        let mut out: Option<Tensor> = None;
        for k in 0..self.kernel {
            let tap = padded.narrow(1, k * self.dilation, t)?;
            let w = self.weight.get(k)?.t()?;
            let y = tap.broadcast_matmul(&w)?;
            out = Some(match out {
                None => y,
                Some(acc) => (acc + y)?,
            });
        }
        Ok(out.expect("kernel size is positive").broadcast_add(&self.bias)?)
    }
}

/// Reference-clip speaker encoder: dilated convolutions, attentive
/// statistics pooling and a projection to a unit-norm embedding.
#[derive(Debug, Clone)]
pub struct SpeakerEncoder {
    convs: Vec<DilatedConv>,
    att_hidden: Linear,
    att_out: Linear,
    proj: Linear,
}

impl SpeakerEncoder {
    pub fn new(n_mels: usize, channels: usize, out_dim: usize, pb: ParamBuilder) -> Result<Self> {
        let layout = [(5, 1), (3, 2), (3, 3)];
        let mut convs = Vec::new();
        let mut c_in = n_mels;
        for (i, (k, d)) in layout.into_iter().enumerate() {
            convs.push(DilatedConv::new(c_in, channels, k, d, pb.pp(format!("conv{i}")))?);
            c_in = channels;
        }
        let att_dim = (channels / 4).max(8);
        Ok(Self {
            convs,
            att_hidden: Linear::new(channels, att_dim, pb.pp("att_hidden"))?,
            att_out: Linear::new(att_dim, channels, pb.pp("att_out"))?,
            proj: Linear::new(2 * channels, out_dim, pb.pp("proj"))?,
        })
    }

    /// `clip`: `[B, T, n_mels]` with `T >= MIN_CLIP_FRAMES`. Returns `[B, out_dim]`
    /// rows of unit L2 norm.
    pub fn forward(&self, clip: &Tensor) -> Result<Tensor> {
        let (_, t, _) = clip.dims3()?;
        if t < MIN_CLIP_FRAMES {
            return Err(Error::Input(format!(
                "reference clip has {t} frames, need at least {MIN_CLIP_FRAMES}"
            )));
        }
        let mut h = clip.clone();
        for conv in &self.convs {
            h = conv.forward(&h)?.relu()?;
        }
        let scores = self.att_out.forward(&self.att_hidden.forward(&h)?.tanh()?)?;
        let w = candle_nn::ops::softmax(&scores, 1)?;
        let mean = (&w * &h)?.sum(1)?;
        let second = (&w * h.sqr()?)?.sum(1)?;
        let std = (second - mean.sqr()?)?.clamp(1e-6, f64::MAX)?.sqrt()?;
        let e = self.proj.forward(&Tensor::cat(&[mean, std], D::Minus1)?)?;
        let norm = (e.sqr()?.sum_keepdim(D::Minus1)? + 1e-12)?.sqrt()?;
        Ok(e.broadcast_div(&norm)?)
    }
}

/// Cosine similarity of two embedding vectors.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;
    use candle_core::{DType, Device};

    fn encoder(store: &ParamStore) -> SpeakerEncoder {
        SpeakerEncoder::new(8, 16, 12, store.builder()).unwrap()
    }

    #[test]
    fn unit_norm_output() {
        let store = ParamStore::new(1, DType::F32, &Device::Cpu);
        let enc = encoder(&store);
        let clip = Tensor::randn(0f32, 1., (3, 20, 8), &Device::Cpu).unwrap();
        let e = enc.forward(&clip).unwrap();
        assert_eq!(e.dims(), &[3, 12]);
        for row in e.to_vec2::<f32>().unwrap() {
            let n: f32 = row.iter().map(|x| x * x).sum::<f32>().sqrt();
            assert!((n - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn short_clip_rejected() {
        let store = ParamStore::new(1, DType::F32, &Device::Cpu);
        let enc = encoder(&store);
        let clip = Tensor::zeros((1, MIN_CLIP_FRAMES - 1, 8), DType::F32, &Device::Cpu).unwrap();
        assert!(matches!(enc.forward(&clip), Err(Error::Input(_))));
    }

    #[test]
    fn conv_matches_direct_sum() {
        let dev = Device::Cpu;
        let store = ParamStore::new(3, DType::F64, &dev);
        let conv = DilatedConv::new(2, 3, 3, 2, store.builder()).unwrap();
        let x = Tensor::randn(0f64, 1., (1, 7, 2), &dev).unwrap();
        let y = conv.forward(&x).unwrap().to_vec3::<f64>().unwrap();
        let xv = x.to_vec3::<f64>().unwrap();
        let w = conv.weight.to_vec3::<f64>().unwrap();
        for t in 0..7 {
            for o in 0..3 {
                let mut s = 0.0;
                for k in 0..3 {
                    let src = t as isize + (k as isize - 1) * 2;
                    if (0..7).contains(&src) {
                        for i in 0..2 {
                            s += w[k][o][i] * xv[0][src as usize][i];
                        }
                    }
                }
                assert!((y[0][t][o] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cosine_basics() {
        assert!((cosine(&[1.0, 0.0], &[2.0, 0.0]) - 1.0).abs() < 1e-12);
        assert!(cosine(&[1.0, 0.0], &[0.0, 3.0]).abs() < 1e-12);
        assert_eq!(cosine(&[0.0], &[1.0]), 0.0);
    }
}
