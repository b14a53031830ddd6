//! Flow-matching math: straight-line (optimal-transport) probability paths,
//! their target field, the conditional flow-matching loss, logit-normal
//! timestep sampling, classifier-free guidance and fixed-step Euler
//! integration.
//!
//! Time runs from noise at `t = 0` to data at `t = 1`.

use candle_core::{DType, Tensor};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::nn::scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CfgParams {
    /// Extrapolation coefficient: `(1 + alpha) v_cond - alpha v_uncond`.
    pub alpha: f64,
    /// Probability that conditions are replaced by null embeddings in training.
    pub cond_drop_prob: f64,
    /// Drop phoneme and speaker conditions together (`true`) or independently.
    pub joint_drop: bool,
}

impl Default for CfgParams {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            cond_drop_prob: 0.3,
            joint_drop: true,
        }
    }
}

impl CfgParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) {
            return Err(Error::Config(format!("cfg alpha {} must be >= 0", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.cond_drop_prob) {
            return Err(Error::Config(format!(
                "cond_drop_prob {} outside [0, 1]",
                self.cond_drop_prob
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverMethod {
    Euler,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub method: SolverMethod,
    pub steps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: SolverMethod::Euler,
            steps: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimestepSampling {
    pub mean: f64,
    pub std: f64,
}

impl Default for TimestepSampling {
    fn default() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(shape_err(format!("{what}: {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// Broadcast a per-item time vector `[B]` against `like` (`[B, ...]`).
fn expand_time(t: &Tensor, like: &Tensor) -> Result<Tensor> {
    let mut shape = vec![1usize; like.rank()];
    if t.rank() == 0 {
        return Ok(t.to_dtype(like.dtype())?.reshape(shape)?);
    }
    shape[0] = t.dim(0)?;
    Ok(t.to_dtype(like.dtype())?.reshape(shape)?)
}

/// `phi_t = (1 - t) x0 + t x1` for a scalar `t`.
pub fn ot_interpolate(x0: &Tensor, x1: &Tensor, t: f64) -> Result<Tensor> {
    same_shape(x0, x1, "ot_interpolate")?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Input(format!("t = {t} outside [0, 1]")));
    }
    Ok(((x0 * (1.0 - t))? + (x1 * t)?)?)
}

/// Per-item interpolation with `t` of shape `[B]` (or a scalar tensor).
pub fn ot_interpolate_batch(x0: &Tensor, x1: &Tensor, t: &Tensor) -> Result<Tensor> {
    same_shape(x0, x1, "ot_interpolate")?;
    let t = expand_time(t, x0)?;
    let one_minus = t.affine(-1.0, 1.0)?;
    Ok((x0.broadcast_mul(&one_minus)? + x1.broadcast_mul(&t)?)?)
}

/// Target field of the straight path, `x1 - x0`; independent of `t`.
pub fn target_field(x0: &Tensor, x1: &Tensor) -> Result<Tensor> {
    same_shape(x0, x1, "target_field")?;
    Ok((x1 - x0)?)
}

/// Mean squared error between a predicted and target field, restricted to
/// valid elements when `mask` (`[B, T]`, 1 = valid) is given.
pub fn field_mse(pred: &Tensor, target: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
    same_shape(pred, target, "field_mse")?;
    let sq = (pred - target)?.sqr()?;
    match mask {
        None => Ok(sq.mean_all()?),
        Some(m) => {
            let feat = pred.dim(candle_core::D::Minus1)? as f64;
            let m = m.to_dtype(pred.dtype())?.unsqueeze(candle_core::D::Minus1)?;
            let num = sq.broadcast_mul(&m)?.sum_all()?;
            let denom = (m.sum_all()? * feat)?;
            Ok(num.div(&denom)?)
        }
    }
}

/// Conditional flow-matching loss for one draw of `(x0, t)`.
///
/// `field_model` receives `phi_t` and `t` and must return a field of the
/// same shape; the condition is whatever the closure captures.
pub fn cfm_loss<F>(field_model: F, x1: &Tensor, x0: &Tensor, t: &Tensor, mask: Option<&Tensor>) -> Result<Tensor>
where
    F: FnOnce(&Tensor, &Tensor) -> Result<Tensor>,
{
    let phi = ot_interpolate_batch(x0, x1, t)?;
    let target = target_field(x0, x1)?;
    let pred = field_model(&phi, t)?;
    same_shape(&pred, &target, "field model output")?;
    let loss = field_mse(&pred, &target, mask)?;
    let v = scalar(&loss)?;
    if !v.is_finite() {
        return Err(Error::Numeric {
            step: None,
            msg: format!("flow-matching loss is {v}"),
        });
    }
    Ok(loss)
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// `t = sigmoid(z)`, `z ~ N(mean, std)`, kept strictly inside `(0, 1)`.
pub fn sample_timestep_logitnormal<R: Rng + ?Sized>(rng: &mut R, mean: f64, std: f64) -> Result<f64> {
    if !(std > 0.0) {
        return Err(Error::Config(format!("logit-normal std {std} must be > 0")));
    }
    let z = Normal::new(mean, std)
        .map_err(|e| Error::Config(e.to_string()))?
        .sample(rng);
    Ok(sigmoid(z).clamp(f64::EPSILON, 1.0 - f64::EPSILON))
}

/// Classifier-free guidance. At `alpha == 0` returns `v_cond` unchanged.
pub fn cfg_field(v_cond: &Tensor, v_uncond: &Tensor, alpha: f64) -> Result<Tensor> {
    same_shape(v_cond, v_uncond, "cfg_field")?;
    if alpha == 0.0 {
        return Ok(v_cond.clone());
    }
    Ok(((v_cond * (1.0 + alpha))? - (v_uncond * alpha)?)?)
}

fn check_finite(x: &Tensor, step: usize) -> Result<()> {
    let s = scalar(&x.to_dtype(DType::F64)?.sum_all()?)?;
    if !s.is_finite() {
        return Err(Error::Numeric {
            step: Some(step),
            msg: "ODE state became non-finite".into(),
        });
    }
    Ok(())
}

/// Fixed-step forward Euler from `t = 0` to `t = 1`. `field_fn(x, t)`.
pub fn euler_integrate<F>(mut field_fn: F, x_init: &Tensor, steps: usize) -> Result<Tensor>
where
    F: FnMut(&Tensor, f64) -> Result<Tensor>,
{
    if steps == 0 {
        return Err(Error::Config("solver needs at least one step".into()));
    }
    let dt = 1.0 / steps as f64;
    let mut x = x_init.clone();
    for k in 0..steps {
        let t = k as f64 * dt;
        let v = field_fn(&x, t)?;
        same_shape(&v, &x, "field")?;
        x = (x + (v * dt)?)?;
        check_finite(&x, k)?;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t1(v: &[f64]) -> Tensor {
        Tensor::new(v, &Device::Cpu).unwrap()
    }

    fn vals(t: &Tensor) -> Vec<f64> {
        t.flatten_all().unwrap().to_vec1::<f64>().unwrap()
    }

    #[test]
    fn ot_endpoints_and_midpoint() {
        let x0 = t1(&[0.3, -1.2, 4.0]);
        let x1 = t1(&[2.0, 0.5, -7.0]);
        assert_eq!(vals(&ot_interpolate(&x0, &x1, 0.0).unwrap()), vals(&x0));
        assert_eq!(vals(&ot_interpolate(&x0, &x1, 1.0).unwrap()), vals(&x1));
        let mid = ot_interpolate(&t1(&[0.0]), &t1(&[2.0]), 0.5).unwrap();
        assert_eq!(vals(&mid), vec![1.0]);
        assert!(ot_interpolate(&x0, &t1(&[1.0]), 0.5).is_err());
    }

    #[test]
    fn target_field_cases() {
        let x = t1(&[1.0, 2.0]);
        assert_eq!(vals(&target_field(&x, &x).unwrap()), vec![0.0, 0.0]);
        assert_eq!(vals(&target_field(&t1(&[0.0]), &t1(&[1.0])).unwrap()), vec![1.0]);
    }

    #[test]
    fn cfm_loss_cases() {
        let dev = Device::Cpu;
        let x0 = Tensor::zeros((1, 3, 2), DType::F64, &dev).unwrap();
        let x1 = Tensor::ones((1, 3, 2), DType::F64, &dev).unwrap();
        let t = t1(&[0.4]);
        let exact = cfm_loss(|_, _| target_field(&x0, &x1), &x1, &x0, &t, None).unwrap();
        assert_eq!(scalar(&exact).unwrap(), 0.0);
        let zeros = cfm_loss(|p, _| Ok(p.zeros_like()?), &x1, &x0, &t, None).unwrap();
        assert_eq!(scalar(&zeros).unwrap(), 1.0);
        let nan = cfm_loss(|p, _| Ok((p.zeros_like()? / 0.0)?), &x1, &x0, &t, None);
        assert!(matches!(nan, Err(Error::Numeric { .. })));
    }

    #[test]
    fn masked_mse_ignores_padding() {
        let dev = Device::Cpu;
        let pred = Tensor::new(&[[[1f64], [5.0]]], &dev).unwrap();
        let target = Tensor::new(&[[[0f64], [0.0]]], &dev).unwrap();
        let mask = Tensor::new(&[[1f64, 0.0]], &dev).unwrap();
        assert_eq!(scalar(&field_mse(&pred, &target, Some(&mask)).unwrap()).unwrap(), 1.0);
    }

    #[test]
    fn logitnormal_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut sum = 0.0;
        let n = 100_000;
        for _ in 0..n {
            let t = sample_timestep_logitnormal(&mut rng, 0.0, 1.0).unwrap();
            assert!(t > 0.0 && t < 1.0);
            sum += (t / (1.0 - t)).ln();
        }
        assert!((sum / n as f64).abs() <= 0.02);
        let mut hi: Vec<f64> = (0..2001)
            .map(|_| sample_timestep_logitnormal(&mut rng, 5.0, 1.0).unwrap())
            .collect();
        hi.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(hi[1000] > 0.99);
        assert!(sample_timestep_logitnormal(&mut rng, 0.0, 0.0).is_err());
    }

    #[test]
    fn cfg_cases() {
        let c = t1(&[1.0, -2.5]);
        let u = t1(&[0.0, 3.0]);
        assert_eq!(vals(&cfg_field(&c, &u, 0.0).unwrap()), vals(&c));
        assert_eq!(vals(&cfg_field(&c, &c, 3.7).unwrap()), vals(&c));
        assert_eq!(vals(&cfg_field(&t1(&[1.0]), &t1(&[0.0]), 2.0).unwrap()), vec![3.0]);
    }

    #[test]
    fn euler_constant_field_is_exact() {
        let x = t1(&[1.0, 2.0]);
        for steps in [1, 3, 32] {
            let out = euler_integrate(|x, _| Ok((x.ones_like()? * 0.5)?), &x, steps).unwrap();
            let v = vals(&out);
            assert!((v[0] - 1.5).abs() < 1e-12 && (v[1] - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn euler_decay_and_first_order() {
        let x = t1(&[1.0]);
        let run = |steps| vals(&euler_integrate(|x, _| Ok(x.neg()?), &x, steps).unwrap())[0];
        let e = (-1f64).exp();
        let (r32, r64) = (run(32), run(64));
        assert!((r32 - e).abs() <= 0.01);
        let ratio = (r32 - e).abs() / (r64 - e).abs();
        assert!((1.8..=2.2).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn euler_reports_blowup_step() {
        let x = t1(&[1.0]);
        let err = euler_integrate(|x, _| Ok((x * 1e308)?), &x, 4).unwrap_err();
        assert!(matches!(err, Error::Numeric { step: Some(_), .. }));
        assert!(euler_integrate(|x, _| Ok(x.clone()), &x, 0).is_err());
    }
}
