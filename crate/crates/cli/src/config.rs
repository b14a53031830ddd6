use std::path::Path;

use anyhow::{bail, Context};
use durflow_core::acoustic::AcousticConfig;
use durflow_core::data::synthetic::SyntheticConfig;
use durflow_core::data::MelConfig;
use durflow_core::dpo::DpoConfig;
use durflow_core::duration::{DurModelConfig, SamplingParams};
use durflow_core::flowmatch::{CfgParams, SolverConfig};
use durflow_core::pipeline::SweepConfig;
use serde::{Deserialize, Serialize};

use crate::UsageError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 8,
            log_every: 50,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PairsConfig {
    /// Interior phonemes longer than this multiple of their corpus median
    /// mark a rendition as an abnormal pause; 0 disables the filter.
    pub pause_multiple: f64,
}

impl Default for PairsConfig {
    fn default() -> Self {
        Self { pause_multiple: 4.0 }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub mel: MelConfig,
    pub synthetic: SyntheticConfig,
    pub acoustic: AcousticConfig,
    pub duration: DurModelConfig,
    pub train: TrainConfig,
    pub dpo: DpoConfig,
    pub pairs: PairsConfig,
    pub sampling: SamplingParams,
    pub solver: SolverConfig,
    pub cfg: CfgParams,
    pub sweep: SweepConfig,
}

/// A `--set` value: any TOML literal, otherwise a bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(root: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), UsageError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(UsageError(format!("malformed key {key}")));
    }
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| UsageError(format!("{key}: {p} is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Defaults, then the file, then each `key=value` override in order.
pub fn load(file: Option<&Path>, overrides: &[String]) -> anyhow::Result<Config> {
    let mut root = match file {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            toml::from_str::<toml::Table>(&text).map_err(|e| UsageError(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for o in overrides {
        let Some((k, v)) = o.split_once('=') else {
            bail!(UsageError(format!("--set expects key=value, got {o}")));
        };
        set_path(&mut root, k.trim(), parse_value(v.trim()))?;
    }
    let cfg: Config = toml::Value::Table(root)
        .try_into()
        .map_err(|e: toml::de::Error| UsageError(format!("invalid configuration: {e}")))?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_layer_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "[train]\nsteps = 5\nbatch_size = 2\n[sampling]\ntop_k = 3\n").unwrap();
        let c = load(Some(&p), &["train.steps=7".into(), "dpo.beta=0.5".into()]).unwrap();
        assert_eq!(c.train.steps, 7);
        assert_eq!(c.train.batch_size, 2);
        assert_eq!(c.sampling.top_k, 3);
        assert_eq!(c.dpo.beta, 0.5);
        assert_eq!(c.acoustic, AcousticConfig::default());
    }

    #[test]
    fn unknown_section_is_usage_error() {
        let err = load(None, &["nonsense.x=1".into()]).unwrap_err();
        assert!(err.downcast_ref::<UsageError>().is_some());
        let err = load(None, &["novalue".into()]).unwrap_err();
        assert!(err.downcast_ref::<UsageError>().is_some());
    }

    #[test]
    fn string_values_need_no_quotes() {
        let c = load(None, &["synthetic.style=storytelling".into()]).unwrap();
        assert_eq!(format!("{:?}", c.synthetic.style), "Storytelling");
    }
}
