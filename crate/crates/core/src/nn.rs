//! Small neural-network toolkit shared by the acoustic and duration models.
//!
//! Candle's CPU RNG cannot be seeded and a few of its fused kernels have no
//! backward pass, so parameters are created through [`ParamBuilder`] (seeded,
//! deterministic creation order) and layers are composed from differentiable
//! primitive ops only.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use candle_core::{DType, Device, Tensor, Var, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Additive value used for masked attention logits.
pub const MASK_NEG: f64 = -1e9;

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Const(f64),
    Normal(f64),
    /// Uniform in `[-bound, bound]`.
    Uniform(f64),
}

struct StoreInner {
    vars: Mutex<BTreeMap<String, Var>>,
    rng: Mutex<ChaCha8Rng>,
    dtype: DType,
    device: Device,
    /// When set, asking for a missing parameter is an error instead of a fresh init.
    strict: bool,
}

/// Named, trainable parameters of one model.
#[derive(Clone)]
pub struct ParamStore {
    inner: Arc<StoreInner>,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType, device: &Device) -> Self {
        Self {
            inner: Arc::new(StoreInner {
                vars: Mutex::new(BTreeMap::new()),
                rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
                dtype,
                device: device.clone(),
                strict: false,
            }),
        }
    }

    /// A store pre-populated with existing tensors; building a model from it
    /// fails if the model asks for a parameter that is not present.
    pub fn from_tensors(tensors: &BTreeMap<String, Tensor>, device: &Device) -> Result<Self> {
        let dtype = tensors
            .values()
            .next()
            .map(|t| t.dtype())
            .unwrap_or(DType::F32);
        let mut vars = BTreeMap::new();
        for (name, t) in tensors {
            vars.insert(name.clone(), Var::from_tensor(&t.to_device(device)?)?);
        }
        Ok(Self {
            inner: Arc::new(StoreInner {
                vars: Mutex::new(vars),
                rng: Mutex::new(ChaCha8Rng::seed_from_u64(0)),
                dtype,
                device: device.clone(),
                strict: true,
            }),
        })
    }

    pub fn builder(&self) -> ParamBuilder {
        ParamBuilder {
            store: self.clone(),
            path: Vec::new(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.inner.dtype
    }

    pub fn device(&self) -> &Device {
        &self.inner.device
    }

    pub fn vars(&self) -> Vec<Var> {
        self.inner.vars.lock().unwrap().values().cloned().collect()
    }

    pub fn named_vars(&self) -> Vec<(String, Var)> {
        self.inner
            .vars
            .lock()
            .unwrap()
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    /// Snapshot of the current values (detached copies).
    pub fn tensors(&self) -> Result<BTreeMap<String, Tensor>> {
        let vars = self.inner.vars.lock().unwrap();
        let mut out = BTreeMap::new();
        for (k, v) in vars.iter() {
            out.insert(k.clone(), v.as_tensor().detach().copy()?);
        }
        Ok(out)
    }

    /// Deep copy with independent storage.
    pub fn deep_clone(&self) -> Result<Self> {
        Self::from_tensors(&self.tensors()?, &self.inner.device)
    }

    /// Overwrite every parameter with the value of the same name in `tensors`.
    pub fn load(&self, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        let vars = self.inner.vars.lock().unwrap();
        if vars.len() != tensors.len() {
            return Err(Error::Checkpoint(format!(
                "parameter count mismatch: model has {}, source has {}",
                vars.len(),
                tensors.len()
            )));
        }
        for (k, v) in vars.iter() {
            let src = tensors
                .get(k)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {k}")))?;
            if src.dims() != v.dims() {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for {k}: {:?} vs {:?}",
                    v.dims(),
                    src.dims()
                )));
            }
            v.set(&src.to_dtype(v.dtype())?)?;
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.inner
            .vars
            .lock()
            .unwrap()
            .values()
            .map(|v| v.elem_count())
            .sum()
    }

    /// SHA-256 over names and raw parameter bytes, in name order.
    pub fn fingerprint(&self) -> Result<String> {
        let mut hasher = Sha256::new();
        for (name, t) in self.tensors()? {
            hasher.update(name.as_bytes());
            let flat = t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
            for x in flat {
                hasher.update(x.to_le_bytes());
            }
        }
        Ok(hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect())
    }

    fn get_or_init(&self, name: String, shape: &[usize], init: Init) -> Result<Tensor> {
        let mut vars = self.inner.vars.lock().unwrap();
        if let Some(v) = vars.get(&name) {
            if v.dims() != shape {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    v.dims()
                )));
            }
            return Ok(v.as_tensor().clone());
        }
        if self.inner.strict {
            return Err(Error::Checkpoint(format!("missing parameter {name}")));
        }
        let n: usize = shape.iter().product();
        let values: Vec<f64> = {
            let mut rng = self.inner.rng.lock().unwrap();
            match init {
                Init::Zeros => vec![0.0; n],
                Init::Const(c) => vec![c; n],
                Init::Normal(std) => (0..n)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut *rng);
                        std * z
                    })
                    .collect(),
                Init::Uniform(b) => (0..n).map(|_| rng.random_range(-b..=b)).collect(),
            }
        };
        let t = Tensor::from_vec(values, shape, &self.inner.device)?.to_dtype(self.inner.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        vars.insert(name, var);
        Ok(out)
    }
}

/// Hierarchical view into a [`ParamStore`], in the style of a var builder.
#[derive(Clone)]
pub struct ParamBuilder {
    store: ParamStore,
    path: Vec<String>,
}

impl ParamBuilder {
    pub fn pp(&self, name: impl ToString) -> Self {
        let mut path = self.path.clone();
        path.push(name.to_string());
        Self {
            store: self.store.clone(),
            path,
        }
    }

    pub fn get(&self, shape: &[usize], name: &str, init: Init) -> Result<Tensor> {
        let full = if self.path.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.path.join("."))
        };
        self.store.get_or_init(full, shape, init)
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn device(&self) -> &Device {
        self.store.device()
    }
}

/// Dropout randomness for one forward pass. `eval()` disables dropout.
pub struct DropoutCtx {
    rng: Option<ChaCha8Rng>,
    pub p: f64,
}

impl DropoutCtx {
    pub fn eval() -> Self {
        Self { rng: None, p: 0.0 }
    }

    pub fn train(p: f64, seed: u64) -> Self {
        Self {
            rng: Some(ChaCha8Rng::seed_from_u64(seed)),
            p,
        }
    }

    pub fn is_train(&self) -> bool {
        self.rng.is_some()
    }

    pub fn apply(&mut self, xs: &Tensor) -> Result<Tensor> {
        let p = self.p;
        let Some(rng) = self.rng.as_mut() else {
            return Ok(xs.clone());
        };
        if p <= 0.0 {
            return Ok(xs.clone());
        }
        let scale = 1.0 / (1.0 - p);
        let mask: Vec<f32> = (0..xs.elem_count())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { scale as f32 })
            .collect();
        let mask = Tensor::from_vec(mask, xs.shape(), xs.device())?.to_dtype(xs.dtype())?;
        Ok(xs.mul(&mask)?)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, pb: ParamBuilder) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Self::with_init(in_dim, out_dim, Init::Uniform(bound), true, pb)
    }

    pub fn zeros(in_dim: usize, out_dim: usize, pb: ParamBuilder) -> Result<Self> {
        Self::with_init(in_dim, out_dim, Init::Zeros, true, pb)
    }

    pub fn with_init(
        in_dim: usize,
        out_dim: usize,
        init: Init,
        bias: bool,
        pb: ParamBuilder,
    ) -> Result<Self> {
        let weight = pb.get(&[out_dim, in_dim], "weight", init)?;
        let bias = if bias {
            Some(pb.get(&[out_dim], "bias", Init::Zeros)?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, xs: &Tensor) -> Result<Tensor> {
        let w = self.weight.t()?;
        let out = match xs.rank() {
            2 => xs.matmul(&w)?,
            _ => xs.broadcast_matmul(&w)?,
        };
        match &self.bias {
            Some(b) => Ok(out.broadcast_add(b)?),
            None => Ok(out),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: Tensor,
    dim: usize,
}

impl Embedding {
    pub fn new(n: usize, dim: usize, std: f64, pb: ParamBuilder) -> Result<Self> {
        let table = pb.get(&[n, dim], "weight", Init::Normal(std))?;
        Ok(Self { table, dim })
    }

    /// `ids` of any shape; output has a trailing `dim` axis.
    pub fn forward(&self, ids: &Tensor) -> Result<Tensor> {
        let mut dims = ids.dims().to_vec();
        let flat = ids.flatten_all()?;
        let out = self.table.index_select(&flat, 0)?;
        dims.push(self.dim);
        Ok(out.reshape(dims)?)
    }
}

/// Layer normalization over the last axis without affine parameters.
pub fn layer_norm(xs: &Tensor, eps: f64) -> Result<Tensor> {
    let mean = xs.mean_keepdim(D::Minus1)?;
    let centered = xs.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
    Ok(centered.broadcast_div(&(var + eps)?.sqrt()?)?)
}

/// Layer norm with learned gain and bias.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    gain: Tensor,
    bias: Tensor,
}

impl LayerNorm {
    pub fn new(dim: usize, pb: ParamBuilder) -> Result<Self> {
        Ok(Self {
            gain: pb.get(&[dim], "weight", Init::Const(1.0))?,
            bias: pb.get(&[dim], "bias", Init::Zeros)?,
        })
    }

    pub fn forward(&self, xs: &Tensor) -> Result<Tensor> {
        Ok(layer_norm(xs, 1e-5)?
            .broadcast_mul(&self.gain)?
            .broadcast_add(&self.bias)?)
    }
}

pub fn silu(xs: &Tensor) -> Result<Tensor> {
    Ok(xs.mul(&candle_nn::ops::sigmoid(xs)?)?)
}

pub fn softmax_last(xs: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::softmax(xs, D::Minus1)?)
}

pub fn log_softmax_last(xs: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::log_softmax(xs, D::Minus1)?)
}

/// Sinusoidal features of a scalar per batch item: `[B] -> [B, dim]`.
pub fn timestep_features(t: &Tensor, dim: usize, scale: f64) -> Result<Tensor> {
    let half = dim / 2;
    let freqs: Vec<f64> = (0..half)
        .map(|i| (-(10000f64.ln()) * i as f64 / half as f64).exp() * scale)
        .collect();
    let freqs = Tensor::from_vec(freqs, (1, half), t.device())?.to_dtype(t.dtype())?;
    let args = t.unsqueeze(1)?.broadcast_mul(&freqs)?;
    Ok(Tensor::cat(&[args.cos()?, args.sin()?], 1)?)
}

/// Absolute sinusoidal position table `[len, dim]` starting at `offset`.
pub fn sinusoidal_positions(
    offset: usize,
    len: usize,
    dim: usize,
    dtype: DType,
    device: &Device,
) -> Result<Tensor> {
    let mut table = vec![0f64; len * dim];
    for p in 0..len {
        let pos = (offset + p) as f64;
        for i in 0..dim / 2 {
            let freq = (-(10000f64.ln()) * (2 * i) as f64 / dim as f64).exp();
            table[p * dim + 2 * i] = (pos * freq).sin();
            table[p * dim + 2 * i + 1] = (pos * freq).cos();
        }
    }
    Ok(Tensor::from_vec(table, (len, dim), device)?.to_dtype(dtype)?)
}

/// Rotary position tables for a head dimension.
#[derive(Debug, Clone)]
pub struct Rope {
    cos: Tensor,
    sin: Tensor,
}

impl Rope {
    /// Tables for positions `0..len`, shaped `[len, head_dim]`.
    pub fn new(len: usize, head_dim: usize, dtype: DType, device: &Device) -> Result<Self> {
        let half = head_dim / 2;
        let mut cos = vec![0f64; len * head_dim];
        let mut sin = vec![0f64; len * head_dim];
        for p in 0..len {
            for i in 0..half {
                let theta = p as f64 * 10000f64.powf(-((2 * i) as f64) / head_dim as f64);
                cos[p * head_dim + i] = theta.cos();
                cos[p * head_dim + i + half] = theta.cos();
                sin[p * head_dim + i] = theta.sin();
                sin[p * head_dim + i + half] = theta.sin();
            }
        }
        Ok(Self {
            cos: Tensor::from_vec(cos, (len, head_dim), device)?.to_dtype(dtype)?,
            sin: Tensor::from_vec(sin, (len, head_dim), device)?.to_dtype(dtype)?,
        })
    }

    /// `xs`: `[B, H, T, head_dim]`.
    pub fn apply(&self, xs: &Tensor) -> Result<Tensor> {
        let (_, _, t, hd) = xs.dims4()?;
        let half = hd / 2;
        let x1 = xs.narrow(D::Minus1, 0, half)?;
        let x2 = xs.narrow(D::Minus1, half, half)?;
        let rotated = Tensor::cat(&[x2.neg()?, x1], D::Minus1)?;
        let cos = self.cos.narrow(0, 0, t)?;
        let sin = self.sin.narrow(0, 0, t)?;
        Ok(xs.broadcast_mul(&cos)?.add(&rotated.broadcast_mul(&sin)?)?)
    }
}

/// Multi-head attention with separate query and key/value inputs.
#[derive(Debug, Clone)]
pub struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    n_heads: usize,
    head_dim: usize,
}

impl Attention {
    pub fn new(dim: usize, n_heads: usize, pb: ParamBuilder) -> Result<Self> {
        Self::with_kv_dim(dim, dim, n_heads, pb)
    }

    pub fn with_kv_dim(dim: usize, kv_dim: usize, n_heads: usize, pb: ParamBuilder) -> Result<Self> {
        if n_heads == 0 || !dim.is_multiple_of(n_heads) {
            return Err(Error::Config(format!(
                "hidden size {dim} not divisible by {n_heads} heads"
            )));
        }
        Ok(Self {
            q: Linear::new(dim, dim, pb.pp("q"))?,
            k: Linear::new(kv_dim, dim, pb.pp("k"))?,
            v: Linear::new(kv_dim, dim, pb.pp("v"))?,
            o: Linear::new(dim, dim, pb.pp("o"))?,
            n_heads,
            head_dim: dim / n_heads,
        })
    }

    fn split_heads(&self, xs: &Tensor) -> Result<Tensor> {
        let (b, t, _) = xs.dims3()?;
        Ok(xs
            .reshape((b, t, self.n_heads, self.head_dim))?
            .transpose(1, 2)?
            .contiguous()?)
    }

    /// Project keys and values once; `[B, H, Tk, head_dim]` each.
    pub fn project_kv(&self, kv: &Tensor) -> Result<(Tensor, Tensor)> {
        Ok((
            self.split_heads(&self.k.forward(kv)?)?,
            self.split_heads(&self.v.forward(kv)?)?,
        ))
    }

    pub fn project_q(&self, xq: &Tensor) -> Result<Tensor> {
        self.split_heads(&self.q.forward(xq)?)
    }

    /// Attend with already split heads. `mask` is additive and broadcastable
    /// to `[B, H, Tq, Tk]`. Returns the merged output and attention weights.
    pub fn attend(
        &self,
        q: &Tensor,
        k: &Tensor,
        v: &Tensor,
        mask: Option<&Tensor>,
        drop: &mut DropoutCtx,
    ) -> Result<(Tensor, Tensor)> {
        let (b, _, tq, _) = q.dims4()?;
        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let mut scores = (q.matmul(&k.t()?)? * scale)?;
        if let Some(m) = mask {
            scores = scores.broadcast_add(m)?;
        }
        let weights = softmax_last(&scores)?;
        let out = drop.apply(&weights)?.matmul(v)?;
        let out = out
            .transpose(1, 2)?
            .reshape((b, tq, self.n_heads * self.head_dim))?;
        Ok((self.o.forward(&out)?, weights))
    }

    pub fn forward(
        &self,
        xq: &Tensor,
        kv: &Tensor,
        mask: Option<&Tensor>,
        rope: Option<&Rope>,
        drop: &mut DropoutCtx,
    ) -> Result<Tensor> {
        Ok(self.forward_with_weights(xq, kv, mask, rope, drop)?.0)
    }

    pub fn forward_with_weights(
        &self,
        xq: &Tensor,
        kv: &Tensor,
        mask: Option<&Tensor>,
        rope: Option<&Rope>,
        drop: &mut DropoutCtx,
    ) -> Result<(Tensor, Tensor)> {
        let mut q = self.project_q(xq)?;
        let (mut k, v) = self.project_kv(kv)?;
        if let Some(r) = rope {
            q = r.apply(&q)?;
            k = r.apply(&k)?;
        }
        self.attend(&q, &k, &v, mask, drop)
    }
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    pub fn new(dim: usize, hidden: usize, pb: ParamBuilder) -> Result<Self> {
        Ok(Self {
            up: Linear::new(dim, hidden, pb.pp("up"))?,
            down: Linear::new(hidden, dim, pb.pp("down"))?,
        })
    }

    pub fn forward(&self, xs: &Tensor, drop: &mut DropoutCtx) -> Result<Tensor> {
        let h = self.up.forward(xs)?.gelu()?;
        self.down.forward(&drop.apply(&h)?)
    }
}

/// Additive key-padding mask `[B, 1, 1, T]` from valid lengths.
pub fn key_padding_mask(
    lengths: &[usize],
    max_len: usize,
    dtype: DType,
    device: &Device,
) -> Result<Tensor> {
    let b = lengths.len();
    let mut m = vec![0f64; b * max_len];
    for (i, &len) in lengths.iter().enumerate() {
        for j in len..max_len {
            m[i * max_len + j] = MASK_NEG;
        }
    }
    Ok(Tensor::from_vec(m, (b, 1, 1, max_len), device)?.to_dtype(dtype)?)
}

/// Additive causal mask `[1, 1, T, T]`.
pub fn causal_mask(len: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let mut m = vec![0f64; len * len];
    for i in 0..len {
        for j in i + 1..len {
            m[i * len + j] = MASK_NEG;
        }
    }
    Ok(Tensor::from_vec(m, (1, 1, len, len), device)?.to_dtype(dtype)?)
}

/// `[B, T]` matrix of 1.0 for valid positions and 0.0 for padding.
pub fn length_mask(lengths: &[usize], max_len: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let b = lengths.len();
    let mut m = vec![0f64; b * max_len];
    for (i, &len) in lengths.iter().enumerate() {
        for j in 0..len.min(max_len) {
            m[i * max_len + j] = 1.0;
        }
    }
    Ok(Tensor::from_vec(m, (b, max_len), device)?.to_dtype(dtype)?)
}

/// Scalar tensor value as f64.
pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Rescale gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(
    grads: &mut candle_core::backprop::GradStore,
    vars: &[Var],
    max_norm: f64,
) -> Result<f64> {
    let mut total = 0f64;
    for v in vars {
        if let Some(g) = grads.get(v.as_tensor()) {
            total += scalar(&g.sqr()?.sum_all()?)?;
        }
    }
    let norm = total.sqrt();
    if norm.is_finite() && norm > max_norm && max_norm > 0.0 {
        let factor = max_norm / (norm + 1e-6);
        for v in vars {
            if let Some(g) = grads.get(v.as_tensor()) {
                let scaled = (g * factor)?;
                grads.insert(v.as_tensor(), scaled);
            }
        }
    }
    Ok(norm)
}

/// Linear warmup then constant learning rate.
pub fn warmup_lr(peak: f64, warmup: usize, step: usize) -> f64 {
    if warmup == 0 {
        peak
    } else {
        peak * ((step + 1) as f64 / warmup as f64).min(1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builder_is_deterministic_per_seed() {
        let dev = Device::Cpu;
        let a = ParamStore::new(7, DType::F32, &dev);
        let b = ParamStore::new(7, DType::F32, &dev);
        Linear::new(4, 3, a.builder().pp("l")).unwrap();
        Linear::new(4, 3, b.builder().pp("l")).unwrap();
        assert_eq!(a.fingerprint().unwrap(), b.fingerprint().unwrap());
        let c = ParamStore::new(8, DType::F32, &dev);
        Linear::new(4, 3, c.builder().pp("l")).unwrap();
        assert_ne!(a.fingerprint().unwrap(), c.fingerprint().unwrap());
    }

    #[test]
    fn strict_store_rejects_missing() {
        let dev = Device::Cpu;
        let store = ParamStore::from_tensors(&BTreeMap::new(), &dev).unwrap();
        assert!(Linear::new(2, 2, store.builder()).is_err());
    }

    #[test]
    fn layer_norm_zero_mean_unit_var() {
        let dev = Device::Cpu;
        let x = Tensor::new(&[[1f64, 2., 3., 4.]], &dev).unwrap();
        let y = layer_norm(&x, 0.0).unwrap().to_vec2::<f64>().unwrap();
        let mean: f64 = y[0].iter().sum::<f64>() / 4.0;
        let var: f64 = y[0].iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rope_preserves_norm() {
        let dev = Device::Cpu;
        let rope = Rope::new(5, 4, DType::F64, &dev).unwrap();
        let x = Tensor::randn(0f64, 1., (1, 1, 5, 4), &dev).unwrap();
        let y = rope.apply(&x).unwrap();
        let nx = x.sqr().unwrap().sum(D::Minus1).unwrap().to_vec3::<f64>().unwrap();
        let ny = y.sqr().unwrap().sum(D::Minus1).unwrap().to_vec3::<f64>().unwrap();
        for (a, b) in nx[0][0].iter().zip(&ny[0][0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn eval_dropout_is_identity() {
        let dev = Device::Cpu;
        let x = Tensor::ones((3, 3), DType::F32, &dev).unwrap();
        let y = DropoutCtx::eval().apply(&x).unwrap();
        assert_eq!(x.to_vec2::<f32>().unwrap(), y.to_vec2::<f32>().unwrap());
    }
}
