use candle_core::{DType, Tensor, D};

use super::{AcousticConfig, NullCondition, SpeakerEncoder};
use crate::error::{shape_err, Result};
use crate::flowmatch::cfg_field;
use crate::nn::{
    key_padding_mask, layer_norm, silu, timestep_features, Attention, DropoutCtx, Embedding, FeedForward,
    Init, Linear, ParamBuilder, ParamStore, Rope,
};

const LN_EPS: f64 = 1e-6;
/// Timesteps in (0, 1) are scaled before the sinusoidal features.
const TIME_SCALE: f64 = 1000.0;

/// Per-item condition dropout flags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CondDrop {
    pub phonemes: Vec<bool>,
    pub speaker: Vec<bool>,
}

impl CondDrop {
    pub fn none(batch: usize) -> Self {
        Self {
            phonemes: vec![false; batch],
            speaker: vec![false; batch],
        }
    }

    pub fn all(batch: usize) -> Self {
        Self {
            phonemes: vec![true; batch],
            speaker: vec![true; batch],
        }
    }

    pub fn uniform(batch: usize, drop: bool) -> Self {
        if drop {
            Self::all(batch)
        } else {
            Self::none(batch)
        }
    }

    fn len(&self) -> usize {
        self.phonemes.len()
    }
}

fn modulate(x: &Tensor, shift: &Tensor, scale: &Tensor) -> Result<Tensor> {
    Ok(x.broadcast_mul(&(scale + 1.0)?)?.broadcast_add(shift)?)
}

/// Transformer block with adaLN-zero conditioning on the timestep.
#[derive(Debug, Clone)]
pub struct DitBlock {
    modulation: Linear,
    attn: Attention,
    ff: FeedForward,
    hidden: usize,
}

impl DitBlock {
    pub fn new(cfg: &AcousticConfig, pb: ParamBuilder) -> Result<Self> {
        let h = cfg.hidden_dim;
        Ok(Self {
            modulation: Linear::zeros(h, 6 * h, pb.pp("modulation"))?,
            attn: Attention::new(h, cfg.n_heads, pb.pp("attn"))?,
            ff: FeedForward::new(h, cfg.ff_mult * h, pb.pp("ff"))?,
            hidden: h,
        })
    }

    /// `x`: `[B, T, H]`, `c`: `[B, H]`, `mask`: additive key mask.
    pub fn forward(
        &self,
        x: &Tensor,
        c: &Tensor,
        mask: Option<&Tensor>,
        rope: &Rope,
        drop: &mut DropoutCtx,
    ) -> Result<Tensor> {
        let h = self.hidden;
        let m = self.modulation.forward(&silu(c)?)?.unsqueeze(1)?;
        let part = |i: usize| m.narrow(D::Minus1, i * h, h);
        let (shift1, scale1, gate1) = (part(0)?, part(1)?, part(2)?);
        let (shift2, scale2, gate2) = (part(3)?, part(4)?, part(5)?);

        let a_in = modulate(&layer_norm(x, LN_EPS)?, &shift1, &scale1)?;
        let a = self.attn.forward(&a_in, &a_in, mask, Some(rope), drop)?;
        let x = (x + drop.apply(&a)?.broadcast_mul(&gate1)?)?;

        let f_in = modulate(&layer_norm(&x, LN_EPS)?, &shift2, &scale2)?;
        let f = self.ff.forward(&f_in, drop)?;
        Ok((&x + drop.apply(&f)?.broadcast_mul(&gate2)?)?)
    }
}

#[derive(Debug, Clone)]
pub struct AcousticModel {
    cfg: AcousticConfig,
    phone_emb: Embedding,
    null_phone: Option<Tensor>,
    null_speaker: Option<Tensor>,
    in_proj: Linear,
    time_in: Linear,
    time_out: Linear,
    blocks: Vec<DitBlock>,
    final_mod: Linear,
    out: Linear,
    speaker: SpeakerEncoder,
    dtype: DType,
}

impl AcousticModel {
    pub fn new(cfg: &AcousticConfig, store: &ParamStore) -> Result<Self> {
        cfg.validate()?;
        let pb = store.builder();
        let h = cfg.hidden_dim;
        let (null_phone, null_speaker) = match cfg.null_condition {
            NullCondition::Learned => (
                Some(pb.get(&[cfg.phone_dim], "null_phone", Init::Normal(0.02))?),
                Some(pb.get(&[cfg.spk_dim], "null_speaker", Init::Normal(0.02))?),
            ),
            NullCondition::Zeros => (None, None),
        };
        let blocks = (0..cfg.n_layers)
            .map(|i| DitBlock::new(cfg, pb.pp(format!("blocks.{i}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            phone_emb: Embedding::new(cfg.vocab_size, cfg.phone_dim, 1.0, pb.pp("phone_emb"))?,
            null_phone,
            null_speaker,
            in_proj: Linear::new(cfg.n_mels + cfg.phone_dim + cfg.spk_dim, h, pb.pp("in_proj"))?,
            time_in: Linear::new(cfg.time_dim, h, pb.pp("time_in"))?,
            time_out: Linear::new(h, h, pb.pp("time_out"))?,
            blocks,
            final_mod: Linear::zeros(h, 2 * h, pb.pp("final_mod"))?,
            out: Linear::with_init(h, cfg.n_mels, Init::Normal(0.02), true, pb.pp("out"))?,
            speaker: SpeakerEncoder::new(cfg.n_mels, cfg.speaker_channels, cfg.spk_dim, pb.pp("speaker"))?,
            cfg: cfg.clone(),
            dtype: store.dtype(),
        })
    }

    pub fn config(&self) -> &AcousticConfig {
        &self.cfg
    }

    pub fn blocks(&self) -> &[DitBlock] {
        &self.blocks
    }

    pub fn speaker_encoder(&self) -> &SpeakerEncoder {
        &self.speaker
    }

    /// Speaker embedding of a `[B, T, n_mels]` reference clip.
    pub fn encode_speaker(&self, clip: &Tensor) -> Result<Tensor> {
        self.speaker.forward(&clip.to_dtype(self.dtype)?)
    }

    /// Timestep conditioning vector `[B, H]`.
    pub fn time_condition(&self, t: &Tensor) -> Result<Tensor> {
        let feats = timestep_features(&t.to_dtype(self.dtype)?, self.cfg.time_dim, TIME_SCALE)?;
        self.time_out.forward(&silu(&self.time_in.forward(&feats)?)?)
    }

    fn flags(&self, flags: &[bool], rank: usize, like: &Tensor) -> Result<Tensor> {
        let v: Vec<f32> = flags.iter().map(|&d| if d { 1.0 } else { 0.0 }).collect();
        let mut shape = vec![1usize; rank];
        shape[0] = flags.len();
        Ok(Tensor::from_vec(v, shape, like.device())?.to_dtype(self.dtype)?)
    }

    fn replace(&self, emb: &Tensor, null: Option<&Tensor>, d: &Tensor) -> Result<Tensor> {
        let keep = emb.broadcast_mul(&d.affine(-1.0, 1.0)?)?;
        match null {
            Some(n) => Ok(keep.broadcast_add(&n.broadcast_mul(d)?)?),
            None => Ok(keep),
        }
    }

    /// Input stream before the transformer: `[B, T, H]`.
    pub fn embed_inputs(
        &self,
        x_t: &Tensor,
        phonemes: &Tensor,
        speaker: &Tensor,
        drop: &CondDrop,
    ) -> Result<Tensor> {
        let (b, t, m) = x_t.dims3()?;
        if phonemes.dims() != [b, t] {
            return Err(shape_err(format!(
                "expanded phonemes {:?} do not match mel frames [{b}, {t}]",
                phonemes.dims()
            )));
        }
        if m != self.cfg.n_mels {
            return Err(shape_err(format!("mel has {m} bins, model expects {}", self.cfg.n_mels)));
        }
        if speaker.dims() != [b, self.cfg.spk_dim] {
            return Err(shape_err(format!(
                "speaker embedding {:?}, expected [{b}, {}]",
                speaker.dims(),
                self.cfg.spk_dim
            )));
        }
        if drop.len() != b || drop.speaker.len() != b {
            return Err(shape_err(format!("drop flags for {} items, batch is {b}", drop.len())));
        }
        let x_t = x_t.to_dtype(self.dtype)?;
        let ph = self.phone_emb.forward(phonemes)?;
        let ph = self.replace(&ph, self.null_phone.as_ref(), &self.flags(&drop.phonemes, 3, &ph)?)?;
        let spk = speaker.to_dtype(self.dtype)?;
        let spk = self.replace(&spk, self.null_speaker.as_ref(), &self.flags(&drop.speaker, 2, &spk)?)?;
        let spk = spk.unsqueeze(1)?.broadcast_as((b, t, self.cfg.spk_dim))?;
        let stream = Tensor::cat(&[&x_t, &ph, &spk.contiguous()?], D::Minus1)?;
        self.in_proj.forward(&stream)
    }

    /// Predicted field with the shape of `x_t`.
    ///
    /// `phonemes`: `[B, T]` u32 expanded ids; `speaker`: `[B, spk_dim]`;
    /// `t`: `[B]`; `lengths` masks padded frames out of attention.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        x_t: &Tensor,
        phonemes: &Tensor,
        speaker: &Tensor,
        t: &Tensor,
        drop: &CondDrop,
        lengths: Option<&[usize]>,
        dropout: &mut DropoutCtx,
    ) -> Result<Tensor> {
        let (b, frames, _) = x_t.dims3()?;
        if t.dims() != [b] {
            return Err(shape_err(format!("t has shape {:?}, expected [{b}]", t.dims())));
        }
        let mut x = self.embed_inputs(x_t, phonemes, speaker, drop)?;
        let c = self.time_condition(t)?;
        let mask = match lengths {
            Some(l) => Some(key_padding_mask(l, frames, self.dtype, x.device())?),
            None => None,
        };
        let rope = Rope::new(frames, self.cfg.hidden_dim / self.cfg.n_heads, self.dtype, x.device())?;
        for block in &self.blocks {
            x = block.forward(&x, &c, mask.as_ref(), &rope, dropout)?;
        }
        let h = self.cfg.hidden_dim;
        let fm = self.final_mod.forward(&silu(&c)?)?.unsqueeze(1)?;
        let shift = fm.narrow(D::Minus1, 0, h)?;
        let scale = fm.narrow(D::Minus1, h, h)?;
        self.out.forward(&modulate(&layer_norm(&x, LN_EPS)?, &shift, &scale)?)
    }

    /// Guided field for inference on a single item at scalar time `t`.
    /// Conditional and unconditional passes share one batch.
    pub fn guided_field(
        &self,
        x: &Tensor,
        phonemes: &Tensor,
        speaker: &Tensor,
        t: f64,
        alpha: f64,
    ) -> Result<Tensor> {
        let b = x.dim(0)?;
        let mut eval = DropoutCtx::eval();
        if alpha == 0.0 {
            let tt = Tensor::full(t as f32, b, x.device())?;
            return self.forward(x, phonemes, speaker, &tt, &CondDrop::none(b), None, &mut eval);
        }
        let xx = Tensor::cat(&[x, x], 0)?;
        let pp = Tensor::cat(&[phonemes, phonemes], 0)?;
        let ss = Tensor::cat(&[speaker, speaker], 0)?;
        let tt = Tensor::full(t as f32, 2 * b, x.device())?;
        let mut drop = CondDrop::none(b);
        drop.phonemes.extend(vec![true; b]);
        drop.speaker.extend(vec![true; b]);
        let v = self.forward(&xx, &pp, &ss, &tt, &drop, None, &mut eval)?;
        cfg_field(&v.narrow(0, 0, b)?, &v.narrow(0, b, b)?, alpha)
    }
}
