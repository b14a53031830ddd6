use std::collections::BTreeMap;

use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::nn::ParamStore;

/// `shadow <- decay * shadow + (1 - decay) * params`, name by name.
pub fn ema_update(
    shadow: &mut BTreeMap<String, Tensor>,
    params: &BTreeMap<String, Tensor>,
    decay: f64,
) -> Result<()> {
    if shadow.len() != params.len() || shadow.keys().zip(params.keys()).any(|(a, b)| a != b) {
        return Err(Error::Validation("EMA shadow and parameters differ in names".into()));
    }
    for (name, s) in shadow.iter_mut() {
        let p = &params[name];
        if s.dims() != p.dims() {
            return Err(Error::Validation(format!(
                "EMA shape mismatch for {name}: {:?} vs {:?}",
                s.dims(),
                p.dims()
            )));
        }
        *s = if decay == 1.0 {
            continue;
        } else if decay == 0.0 {
            p.detach().copy()?
        } else {
            ((&*s * decay)? + (p.detach() * (1.0 - decay))?)?
        };
    }
    Ok(())
}

/// Exponential moving average of a model's parameters.
#[derive(Debug, Clone)]
pub struct Ema {
    pub decay: f64,
    shadow: Option<BTreeMap<String, Tensor>>,
}

impl Ema {
    pub fn new(decay: f64) -> Self {
        Self { decay, shadow: None }
    }

    pub fn from_shadow(decay: f64, shadow: BTreeMap<String, Tensor>) -> Self {
        Self {
            decay,
            shadow: Some(shadow),
        }
    }

    /// First call copies the parameters; later calls average.
    pub fn update(&mut self, store: &ParamStore) -> Result<()> {
        match &mut self.shadow {
            None => self.shadow = Some(store.tensors()?),
            Some(shadow) => {
                let params: BTreeMap<String, Tensor> = store
                    .named_vars()
                    .into_iter()
                    .map(|(k, v)| (k, v.as_tensor().detach()))
                    .collect();
                ema_update(shadow, &params, self.decay)?;
            }
        }
        Ok(())
    }

    pub fn shadow(&self) -> Option<&BTreeMap<String, Tensor>> {
        self.shadow.as_ref()
    }

    pub fn is_initialized(&self) -> bool {
        self.shadow.is_some()
    }
}
