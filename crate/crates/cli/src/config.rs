//! Run configuration: one TOML file, environment overrides, then flags.

use std::path::{Path, PathBuf};

use groupsr_core::backbone::{BackboneSpec, ToyConfig};
use groupsr_core::codec::CodecConfig;
use groupsr_core::degrade::DegradeConfig;
use groupsr_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Environment variables starting with this override config keys; sections
/// are separated by a double underscore, e.g. `GROUPSR__TRAIN__TOTAL_STEPS=10`.
pub const ENV_PREFIX: &str = "GROUPSR__";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Share of clips that get a CRF from `crf_set`; the rest stay uncompressed.
    pub fraction_compressed: f64,
    pub crf_set: Vec<u32>,
    pub frame_rate: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            fraction_compressed: 0.5,
            crf_set: vec![15, 25, 35],
            frame_rate: 25.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Stage-one codec archive used by train, infer, bench and roundtrip.
    pub codec_archive: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Master seed: model init, CRF mix and the training data order.
    pub seed: u64,
    pub codec: CodecConfig,
    pub backbone: BackboneSpec,
    pub toy: ToyConfig,
    pub degrade: DegradeConfig,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub paths: Paths,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            codec: CodecConfig::default(),
            backbone: BackboneSpec::new("toy", 4),
            toy: ToyConfig::default(),
            degrade: DegradeConfig::default(),
            dataset: DatasetConfig::default(),
            train: TrainConfig::default(),
            paths: Paths::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> CliResult<()> {
        self.codec.validate()?;
        self.backbone.validate()?;
        self.degrade.validate()?;
        self.train.validate()?;
        if self.backbone.scale != self.degrade.scale {
            return Err(CliError::Config(format!(
                "backbone.scale {} differs from degrade.scale {}",
                self.backbone.scale, self.degrade.scale
            )));
        }
        if !(0.0..=1.0).contains(&self.dataset.fraction_compressed) {
            return Err(CliError::Config("dataset.fraction_compressed must lie in [0, 1]".into()));
        }
        if !(self.dataset.frame_rate > 0.0) {
            return Err(CliError::Config("dataset.frame_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Reads `path` (or the defaults), applies `GROUPSR__` overrides from `vars`,
/// and validates.
pub fn load(path: Option<&Path>, vars: impl IntoIterator<Item = (String, String)>) -> CliResult<PipelineConfig> {
    let mut doc = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            text.parse::<toml::Table>()
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    let mut overrides: Vec<(String, String)> = vars.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    overrides.sort();
    for (key, value) in overrides {
        apply_override(&mut doc, &key[ENV_PREFIX.len()..], &value)?;
    }
    if doc.get("train").and_then(|t| t.get("seed")).is_some() {
        return Err(CliError::Config("train.seed is derived from the top-level seed; set `seed` instead".into()));
    }
    let mut cfg: PipelineConfig = toml::Value::Table(doc)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
    cfg.train.seed = cfg.seed;
    cfg.validate()?;
    Ok(cfg)
}

fn apply_override(doc: &mut toml::Table, key: &str, raw: &str) -> CliResult<()> {
    let parts: Vec<String> = key.split("__").map(|p| p.to_ascii_lowercase()).collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("malformed override {ENV_PREFIX}{key}")));
    }
    // values are TOML literals; anything that does not parse is a string
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, sections) = parts.split_last().expect("at least one part");
    let mut table = doc;
    for s in sections {
        table = table
            .entry(s.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("{ENV_PREFIX}{key}: `{s}` is not a section")))?;
    }
    table.insert(last.clone(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vars(v: &[(&str, &str)]) -> Vec<(String, String)> {
        v.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn defaults_validate() {
        let cfg = load(None, vec![]).unwrap();
        assert_eq!(cfg, PipelineConfig::default());
    }

    #[test]
    fn overrides_and_unknown_keys() {
        let cfg = load(
            None,
            vars(&[
                ("GROUPSR__TRAIN__TOTAL_STEPS", "12"),
                ("GROUPSR__SEED", "5"),
                ("GROUPSR__CODEC__FLOW__METHOD", "zero"),
                ("GROUPSR_FFMPEG", "/bin/false"),
            ]),
        )
        .unwrap();
        assert_eq!(cfg.train.total_steps, 12);
        assert_eq!(cfg.train.seed, 5);
        assert!(matches!(cfg.codec.flow, groupsr_core::flow::FlowMethod::Zero));
        let err = load(None, vars(&[("GROUPSR__TRAIN__TOTAL_STEP", "3")])).unwrap_err();
        assert_eq!(err.code(), 2);
        let err = load(None, vars(&[("GROUPSR__TRAIN__SEED", "3")])).unwrap_err();
        assert_eq!(err.code(), 2);
    }

    #[test]
    fn scale_mismatch_is_rejected() {
        let err = load(None, vars(&[("GROUPSR__DEGRADE__SCALE", "2")])).unwrap_err();
        assert!(err.line().contains("differs"));
    }
}
