//! Single-file checkpoint container shared by the acoustic and duration
//! models: a safetensors file holding parameters (`param/<name>`), an
//! optional EMA shadow (`ema/<name>`) and string metadata carrying the
//! model kind, JSON config and step counter.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{Device, Tensor};
use safetensors::SafeTensors;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::data::{MelConfig, PhonemeVocab};
use crate::error::{Error, Result};

pub const FORMAT: &str = "durflow-checkpoint-v1";
const PARAM: &str = "param/";
const EMA: &str = "ema/";
const EXTRA: &str = "extra.";

/// Extra keys for the phoneme vocabulary and mel configuration (JSON).
pub const EXTRA_VOCAB: &str = "vocab";
pub const EXTRA_MEL: &str = "mel";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub kind: String,
    pub config: serde_json::Value,
    pub step: u64,
    pub params: BTreeMap<String, Tensor>,
    pub ema: Option<BTreeMap<String, Tensor>>,
    /// Free-form string entries, e.g. the phoneme vocabulary as JSON.
    pub extra: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new(kind: &str, config: &impl Serialize, step: u64, params: BTreeMap<String, Tensor>) -> Result<Self> {
        Ok(Self {
            kind: kind.to_string(),
            config: serde_json::to_value(config)?,
            step,
            params,
            ema: None,
            extra: BTreeMap::new(),
        })
    }

    /// Record the vocabulary and mel configuration the model was trained with.
    pub fn with_corpus_info(mut self, vocab: &PhonemeVocab, mel: &MelConfig) -> Result<Self> {
        self.extra.insert(EXTRA_VOCAB.into(), serde_json::to_string(vocab)?);
        self.extra.insert(EXTRA_MEL.into(), serde_json::to_string(mel)?);
        Ok(self)
    }

    pub fn vocab(&self) -> Result<PhonemeVocab> {
        let raw = self
            .extra
            .get(EXTRA_VOCAB)
            .ok_or_else(|| Error::Checkpoint(format!("{} checkpoint carries no vocabulary", self.kind)))?;
        Ok(serde_json::from_str(raw)?)
    }

    pub fn mel_config(&self) -> Result<MelConfig> {
        let raw = self
            .extra
            .get(EXTRA_MEL)
            .ok_or_else(|| Error::Checkpoint(format!("{} checkpoint carries no mel configuration", self.kind)))?;
        Ok(serde_json::from_str(raw)?)
    }

    pub fn config_as<T: DeserializeOwned>(&self) -> Result<T> {
        Ok(serde_json::from_value(self.config.clone())?)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!(
                "expected a {kind} checkpoint, found {}",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut meta = HashMap::new();
        meta.insert("format".to_string(), FORMAT.to_string());
        meta.insert("kind".to_string(), self.kind.clone());
        meta.insert("config".to_string(), serde_json::to_string(&self.config)?);
        meta.insert("step".to_string(), self.step.to_string());
        for (k, v) in &self.extra {
            meta.insert(format!("{EXTRA}{k}"), v.clone());
        }
        let mut tensors: Vec<(String, &Tensor)> = self
            .params
            .iter()
            .map(|(k, t)| (format!("{PARAM}{k}"), t))
            .collect();
        if let Some(ema) = &self.ema {
            tensors.extend(ema.iter().map(|(k, t)| (format!("{EMA}{k}"), t)));
        }
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        let tmp = path.with_extension("tmp");
        safetensors::serialize_to_file(tensors, Some(meta), &tmp)
            .map_err(|e| Error::Checkpoint(format!("writing {}: {e}", path.display())))?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, device: &Device) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Checkpoint(format!("reading {}: {e}", path.display())))?;
        let (_, header) = SafeTensors::read_metadata(&bytes)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        let meta = header.metadata().clone().unwrap_or_default();
        let field = |k: &str| {
            meta.get(k)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("{}: missing metadata field {k}", path.display())))
        };
        let format = field("format")?;
        if format != FORMAT {
            return Err(Error::Checkpoint(format!("unsupported checkpoint format {format}")));
        }
        let step = field("step")?
            .parse()
            .map_err(|e| Error::Checkpoint(format!("bad step: {e}")))?;
        let config = serde_json::from_str(&field("config")?)?;
        let extra = meta
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(EXTRA).map(|k| (k.to_string(), v.clone())))
            .collect();

        let tensors = candle_core::safetensors::load_buffer(&bytes, device)?;
        let mut params = BTreeMap::new();
        let mut ema = BTreeMap::new();
        for (name, t) in tensors {
            if let Some(n) = name.strip_prefix(PARAM) {
                params.insert(n.to_string(), t);
            } else if let Some(n) = name.strip_prefix(EMA) {
                ema.insert(n.to_string(), t);
            } else {
                return Err(Error::Checkpoint(format!("unexpected tensor {name}")));
            }
        }
        Ok(Self {
            kind: field("kind")?,
            config,
            step,
            params,
            ema: if ema.is_empty() { None } else { Some(ema) },
            extra,
        })
    }
}
