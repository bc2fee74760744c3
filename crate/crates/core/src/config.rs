//! Experiment configuration: one TOML document with `data`, `augment`,
//! `model`, `loss` and `train` sections, overridable by dotted paths.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::AugmentConfig;
use crate::data::{SynthConfig, WindowConfig};
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::model::ArchConfig;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Directory holding `manifest.json` and `sessions/`.
    pub dataset_dir: PathBuf,
    /// Held-out user for personalization.
    pub user: Option<String>,
    pub window: WindowConfig,
    pub synth: SynthConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dataset_dir: PathBuf::from("data"),
            user: None,
            window: WindowConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub experiment_id: String,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub augment: AugmentConfig,
    pub model: ArchConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment_id: "default".into(),
            output_dir: PathBuf::from("runs"),
            data: DataConfig::default(),
            augment: AugmentConfig::default(),
            model: ArchConfig::default(),
            loss: LossConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML, applies `(dotted.path, value)` overrides, then validates.
    ///
    /// Override values are read as TOML literals, falling back to bare strings.
    pub fn from_toml_str(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut doc: toml::Table =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("config is not valid TOML: {e}")))?;
        for (path, raw) in overrides {
            apply_override(&mut doc, path, raw)?;
        }
        let cfg: ExperimentConfig = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| Error::InvalidConfig(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[(String, String)]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, overrides)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(format!("config does not serialize: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.experiment_id.is_empty()
            || !self.experiment_id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
        {
            return Err(Error::InvalidConfig(format!(
                "experiment_id {:?} must be non-empty and use only [A-Za-z0-9._-]",
                self.experiment_id
            )));
        }
        self.data.window.validate()?;
        self.data.synth.validate()?;
        self.augment.validate()?;
        self.model.validate()?;
        self.loss.validate()?;
        self.train.validate()
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn apply_override(doc: &mut toml::Table, path: &str, raw: &str) -> Result<()> {
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::InvalidConfig(format!("malformed override key {path:?}")));
    }
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, parents) = keys.split_last().expect("non-empty");
    let mut table = doc;
    for k in parents {
        let entry = table
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::InvalidConfig(format!("override {path:?}: {k:?} is not a section")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}
