//! Resolved run configuration: a TOML file of dotted keys plus `key=value`
//! overrides, e.g.
//!
//! ```toml
//! model.d_model = 64
//! train.peak_lr = 1e-5
//! frontend.window_s = 30.0
//! mixture.speech = 0.8
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::MixtureSpec;
use crate::error::{Error, Result};
use crate::frontend::FrontendConfig;
use crate::model::ModelConfig;
use crate::probe::ProbeConfig;
use crate::synth::SynthConfig;
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub frontend: FrontendConfig,
    pub probe: ProbeConfig,
    pub mixture: MixtureSpec,
    pub synth: SynthConfig,
}

impl RunConfig {
    /// Reads `path` (if any), applies `overrides` in order, and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                text.parse::<toml::Table>()
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.frontend.validate()?;
        self.probe.validate()?;
        self.mixture.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.synth.validate()?;
        if self.frontend.n_mels != self.model.n_mels {
            return Err(Error::Config(format!(
                "frontend.n_mels {} differs from model.n_mels {}",
                self.frontend.n_mels, self.model.n_mels
            )));
        }
        let frames = self.frontend.n_frames();
        if frames % 2 != 0 || frames / 2 > self.model.max_encoder_frames {
            return Err(Error::Config(format!(
                "frontend yields {frames} mel frames; the encoder accepts an even count up to {}",
                2 * self.model.max_encoder_frames
            )));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Writes the resolved configuration as `resolved_config.toml`.
    pub fn echo_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("resolved_config.toml");
        fs::write(&path, self.to_toml()).map_err(|e| Error::io(&path, e))
    }
}

/// Applies `section.key=value`. The value is parsed as a TOML literal and
/// falls back to a plain string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key {key:?}")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {p} is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
