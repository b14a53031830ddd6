use candle_core::{DType, Device, Tensor};

use super::{DurModelConfig, NUM_CLASSES};
use crate::error::{shape_err, Error, Result};
use crate::nn::{
    causal_mask, key_padding_mask, sinusoidal_positions, Attention, DropoutCtx, Embedding, FeedForward,
    Init, LayerNorm, Linear, ParamBuilder, ParamStore,
};

/// Pre-norm layer: self-attention, cross-attention to the reference
/// features, feed-forward.
#[derive(Debug, Clone)]
struct Layer {
    ln_self: LayerNorm,
    self_attn: Attention,
    ln_cross: LayerNorm,
    cross_attn: Attention,
    ln_ff: LayerNorm,
    ff: FeedForward,
}

impl Layer {
    fn new(cfg: &DurModelConfig, pb: ParamBuilder) -> Result<Self> {
        let h = cfg.hidden;
        Ok(Self {
            ln_self: LayerNorm::new(h, pb.pp("ln_self"))?,
            self_attn: Attention::new(h, cfg.heads, pb.pp("self_attn"))?,
            ln_cross: LayerNorm::new(h, pb.pp("ln_cross"))?,
            cross_attn: Attention::new(h, cfg.heads, pb.pp("cross_attn"))?,
            ln_ff: LayerNorm::new(h, pb.pp("ln_ff"))?,
            ff: FeedForward::new(h, cfg.ff_mult * h, pb.pp("ff"))?,
        })
    }

    fn forward(&self, x: &Tensor, feature_ref: &Tensor, mask: Option<&Tensor>, drop: &mut DropoutCtx) -> Result<Tensor> {
        let a_in = self.ln_self.forward(x)?;
        let a = self.self_attn.forward(&a_in, &a_in, mask, None, drop)?;
        let x = (x + drop.apply(&a)?)?;
        let c = self
            .cross_attn
            .forward(&self.ln_cross.forward(&x)?, feature_ref, None, None, drop)?;
        let x = (x + drop.apply(&c)?)?;
        let f = self.ff.forward(&self.ln_ff.forward(&x)?, drop)?;
        Ok((x + drop.apply(&f)?)?)
    }
}

/// Padded model input.
#[derive(Debug, Clone)]
pub struct DurationInput {
    /// `[B, N]` phoneme ids, possibly with mask ids.
    pub phonemes: Tensor,
    /// `[B, N]` prompt/target segment ids.
    pub segments: Tensor,
    /// `[B, N]` duration labels; position `n` feeds step `n + 1`.
    pub durations: Tensor,
    /// `[B, T_ref, n_mels]`.
    pub ref_mel: Tensor,
    pub lengths: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct DurationOutput {
    pub h: Tensor,
    pub mlm_logits: Tensor,
    pub dur_logits: Tensor,
    /// Reference pooling weights `[B, heads, queries, T_ref]`.
    pub ref_weights: Tensor,
}

/// Incremental decoding cache for one sequence.
#[derive(Debug, Clone)]
pub struct DecoderState {
    pos: usize,
    self_kv: Vec<Option<(Tensor, Tensor)>>,
    cross_kv: Vec<(Tensor, Tensor)>,
}

impl DecoderState {
    pub fn position(&self) -> usize {
        self.pos
    }
}

#[derive(Debug, Clone)]
pub struct DurationModel {
    cfg: DurModelConfig,
    phone_emb: Embedding,
    segment_emb: Embedding,
    dur_emb: Embedding,
    ref_proj: Linear,
    ref_queries: Tensor,
    ref_attn: Attention,
    encoder: Vec<Layer>,
    enc_norm: LayerNorm,
    decoder: Vec<Layer>,
    dec_norm: LayerNorm,
    mlm_head: Linear,
    dur_head: Linear,
    dtype: DType,
}

impl DurationModel {
    pub fn new(cfg: &DurModelConfig, store: &ParamStore) -> Result<Self> {
        cfg.validate()?;
        let pb = store.builder();
        let h = cfg.hidden;
        let layers = |n: usize, name: &str| -> Result<Vec<Layer>> {
            (0..n).map(|i| Layer::new(cfg, pb.pp(format!("{name}.{i}")))).collect()
        };
        Ok(Self {
            phone_emb: Embedding::new(cfg.vocab_size, h, 1.0, pb.pp("phone_emb"))?,
            segment_emb: Embedding::new(2, h, 0.02, pb.pp("segment_emb"))?,
            dur_emb: Embedding::new(NUM_CLASSES, h, 1.0, pb.pp("dur_emb"))?,
            ref_proj: Linear::new(cfg.n_mels, h, pb.pp("ref_proj"))?,
            ref_queries: pb.get(&[cfg.ref_query_len, h], "ref_queries", Init::Normal(1.0))?,
            ref_attn: Attention::new(h, cfg.heads, pb.pp("ref_attn"))?,
            encoder: layers(cfg.enc_layers, "encoder")?,
            enc_norm: LayerNorm::new(h, pb.pp("enc_norm"))?,
            decoder: layers(cfg.dec_layers, "decoder")?,
            dec_norm: LayerNorm::new(h, pb.pp("dec_norm"))?,
            mlm_head: Linear::new(h, cfg.vocab_size, pb.pp("mlm_head"))?,
            dur_head: Linear::new(h, NUM_CLASSES, pb.pp("dur_head"))?,
            cfg: cfg.clone(),
            dtype: store.dtype(),
        })
    }

    pub fn config(&self) -> &DurModelConfig {
        &self.cfg
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        self.ref_queries.device()
    }

    /// Fixed-length reference features `[B, ref_query_len, H]` and the
    /// pooling attention weights.
    pub fn pool_reference(&self, ref_mel: &Tensor, drop: &mut DropoutCtx) -> Result<(Tensor, Tensor)> {
        let (b, frames, m) = ref_mel.dims3()?;
        if frames == 0 {
            return Err(Error::Input("empty reference clip".into()));
        }
        if m != self.cfg.n_mels {
            return Err(shape_err(format!("reference has {m} bins, expected {}", self.cfg.n_mels)));
        }
        let kv = self.ref_proj.forward(&ref_mel.to_dtype(self.dtype)?)?;
        let q = self
            .ref_queries
            .unsqueeze(0)?
            .broadcast_as((b, self.cfg.ref_query_len, self.cfg.hidden))?
            .contiguous()?;
        self.ref_attn.forward_with_weights(&q, &kv, None, None, drop)
    }

    fn positions(&self, offset: usize, len: usize, device: &Device) -> Result<Tensor> {
        sinusoidal_positions(offset, len, self.cfg.hidden, self.dtype, device)
    }

    /// Bidirectional encoder: `[B, N]` ids to hidden states `[B, N, H]`.
    pub fn encode(
        &self,
        phonemes: &Tensor,
        segments: &Tensor,
        feature_ref: &Tensor,
        lengths: Option<&[usize]>,
        drop: &mut DropoutCtx,
    ) -> Result<Tensor> {
        let (_, n) = phonemes.dims2()?;
        if n == 0 {
            return Err(Error::Input("empty phoneme sequence".into()));
        }
        if segments.dims() != phonemes.dims() {
            return Err(shape_err("segment ids do not match phonemes"));
        }
        let mut x = (self.phone_emb.forward(phonemes)? + self.segment_emb.forward(segments)?)?
            .broadcast_add(&self.positions(0, n, phonemes.device())?)?;
        x = drop.apply(&x)?;
        let mask = match lengths {
            Some(l) => Some(key_padding_mask(l, n, self.dtype, phonemes.device())?),
            None => None,
        };
        for layer in &self.encoder {
            x = layer.forward(&x, feature_ref, mask.as_ref(), drop)?;
        }
        self.enc_norm.forward(&x)
    }

    pub fn mlm_logits(&self, h: &Tensor) -> Result<Tensor> {
        self.mlm_head.forward(h)
    }

    /// Previous-duration embeddings: zero vector at the first position.
    fn shifted_duration_embeddings(&self, durations: &Tensor) -> Result<Tensor> {
        let (b, n) = durations.dims2()?;
        let e = self.dur_emb.forward(durations)?;
        let zero = Tensor::zeros((b, 1, self.cfg.hidden), self.dtype, durations.device())?;
        if n == 1 {
            return Ok(zero);
        }
        Ok(Tensor::cat(&[&zero, &e.narrow(1, 0, n - 1)?], 1)?)
    }

    /// Teacher-forced decoder logits `[B, N, NUM_CLASSES]`.
    pub fn decode_teacher(
        &self,
        h: &Tensor,
        durations: &Tensor,
        feature_ref: &Tensor,
        lengths: Option<&[usize]>,
        drop: &mut DropoutCtx,
    ) -> Result<Tensor> {
        let (b, n, _) = h.dims3()?;
        if durations.dims() != [b, n] {
            return Err(shape_err(format!(
                "durations {:?} do not match hidden states [{b}, {n}]",
                durations.dims()
            )));
        }
        let dev = h.device();
        let mut x = (h + self.shifted_duration_embeddings(durations)?)?
            .broadcast_add(&self.positions(0, n, dev)?)?;
        let mut mask = causal_mask(n, self.dtype, dev)?;
        if let Some(l) = lengths {
            mask = mask.broadcast_add(&key_padding_mask(l, n, self.dtype, dev)?)?;
        }
        for layer in &self.decoder {
            x = layer.forward(&x, feature_ref, Some(&mask), drop)?;
        }
        self.dur_head.forward(&self.dec_norm.forward(&x)?)
    }

    pub fn forward(&self, input: &DurationInput, drop: &mut DropoutCtx) -> Result<DurationOutput> {
        let (feature_ref, ref_weights) = self.pool_reference(&input.ref_mel, drop)?;
        let lengths = Some(input.lengths.as_slice());
        let h = self.encode(&input.phonemes, &input.segments, &feature_ref, lengths, drop)?;
        let mlm_logits = self.mlm_logits(&h)?;
        let dur_logits = self.decode_teacher(&h, &input.durations, &feature_ref, lengths, drop)?;
        Ok(DurationOutput {
            h,
            mlm_logits,
            dur_logits,
            ref_weights,
        })
    }

    /// Fresh cache for decoding against `feature_ref` (`[1, Q, H]`).
    pub fn start_decoding(&self, feature_ref: &Tensor) -> Result<DecoderState> {
        let cross_kv = self
            .decoder
            .iter()
            .map(|l| l.cross_attn.project_kv(feature_ref))
            .collect::<Result<Vec<_>>>()?;
        Ok(DecoderState {
            pos: 0,
            self_kv: vec![None; self.decoder.len()],
            cross_kv,
        })
    }

    /// Logits `[NUM_CLASSES]` for position `n` given its hidden state
    /// `h_n` (`[1, H]`) and the previous label (`None` at `n = 0`).
    pub fn decode_step(
        &self,
        state: &mut DecoderState,
        n: usize,
        h_n: &Tensor,
        prev: Option<u32>,
    ) -> Result<Tensor> {
        if n != state.pos {
            return Err(Error::Input(format!(
                "decode_step called for position {n} but the cache is at {}",
                state.pos
            )));
        }
        if (n == 0) != prev.is_none() {
            return Err(Error::Input("previous duration is required exactly for positions after the first".into()));
        }
        let dev = h_n.device();
        let mut x = h_n.unsqueeze(0)?;
        if let Some(d) = prev {
            if d as usize >= NUM_CLASSES {
                return Err(Error::Validation(format!("duration label {d} out of range")));
            }
            let id = Tensor::new(&[[d]], dev)?;
            x = (x + self.dur_emb.forward(&id)?)?;
        }
        x = x.broadcast_add(&self.positions(n, 1, dev)?)?;
        let mut eval = DropoutCtx::eval();
        for (i, layer) in self.decoder.iter().enumerate() {
            let a_in = layer.ln_self.forward(&x)?;
            let q = layer.self_attn.project_q(&a_in)?;
            let (k, v) = layer.self_attn.project_kv(&a_in)?;
            let (k, v) = match state.self_kv[i].take() {
                None => (k, v),
                Some((pk, pv)) => (Tensor::cat(&[&pk, &k], 2)?, Tensor::cat(&[&pv, &v], 2)?),
            };
            let (a, _) = layer.self_attn.attend(&q, &k, &v, None, &mut eval)?;
            state.self_kv[i] = Some((k, v));
            x = (x + a)?;
            let (ck, cv) = &state.cross_kv[i];
            let cq = layer.cross_attn.project_q(&layer.ln_cross.forward(&x)?)?;
            let (c, _) = layer.cross_attn.attend(&cq, ck, cv, None, &mut eval)?;
            x = (x + c)?;
            x = (&x + layer.ff.forward(&layer.ln_ff.forward(&x)?, &mut eval)?)?;
        }
        state.pos += 1;
        Ok(self
            .dur_head
            .forward(&self.dec_norm.forward(&x)?)?
            .squeeze(0)?
            .squeeze(0)?)
    }

    /// Teacher-forced duration log-probabilities `[B, N, NUM_CLASSES]`
    /// in evaluation mode.
    pub fn log_probs(&self, input: &DurationInput) -> Result<Tensor> {
        let out = self.forward(input, &mut DropoutCtx::eval())?;
        crate::nn::log_softmax_last(&out.dur_logits)
    }
}
