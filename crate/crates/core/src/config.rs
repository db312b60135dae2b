//! Run configuration: TOML file with `[synth]`, `[model]`, `[loss]`,
//! `[train]` and `[eval]` sections layered over a named profile.
//!
//! Resolution order is profile defaults, then the file, then `section.key=value`
//! overrides. The resolved result is what gets echoed next to run outputs.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::blur_synth::SynthConfig;
use crate::error::{Error, Result};
use crate::network::NetworkConfig;
use crate::objectives::LossConfig;
use crate::trainer::{EvalOptions, TrainConfig};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub model: NetworkConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub eval: EvalOptions,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Profile {
    /// Full-size model and schedule: 128x128 crops, k = 5, 80 epochs.
    Paper,
    /// Small model and short run for a single CPU core: 64x64, k = 4, width x0.25.
    Desk,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            other => Err(Error::Config(format!(
                "unknown profile {other:?} (expected paper or desk)"
            ))),
        }
    }
}

impl RunConfig {
    pub fn profile(profile: Profile) -> Self {
        match profile {
            Profile::Paper => Self::default(),
            Profile::Desk => {
                let mut c = Self::default();
                c.synth.output_size = 64;
                c.synth.crop_size = 64;
                c.synth.samples_per_panorama = 4;
                c.model.levels = 4;
                c.model.width_multiplier = 0.25;
                c.train.lr = 3e-3;
                c.train.epochs = 500;
                c.train.decay_epochs = Vec::new();
                c.train.input_size = 64;
                c.train.max_iterations = 500;
                c.train.checkpoint_every = 0;
                c
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.model.validate()?;
        self.loss.weights(self.model.levels)?;
        self.train.validate()?;
        if self.train.input_size > 0 {
            self.model.check_input(self.train.input_size, self.train.input_size)?;
        }
        if self.eval.input_size > 0 {
            self.model.check_input(self.eval.input_size, self.eval.input_size)?;
        }
        if !(self.eval.rotation_bin_deg > 0.0) {
            return Err(Error::Config("eval.rotation_bin_deg must be positive".into()));
        }
        Ok(())
    }

    /// Profile defaults overlaid with `text` and then `overrides`.
    pub fn resolve(profile: Profile, text: Option<&str>, overrides: &[String]) -> Result<Self> {
        let mut value = toml::Value::try_from(Self::profile(profile))
            .map_err(|e| Error::Config(format!("cannot serialize profile: {e}")))?;
        if let Some(text) = text {
            let file: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
            merge(&mut value, file);
        }
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: Self = value
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, profile: Profile, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::resolve(profile, Some(&text), overrides).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes to TOML")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    /// SHA-256 of the canonical JSON form of the whole configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("run config serializes");
        format!("{:x}", Sha256::digest(json.as_bytes()))
    }

    /// Four runs, each toggling off one of local warping, the image
    /// transformer, the consistency loss and the penalty.
    pub fn ablations(&self) -> Vec<(String, RunConfig)> {
        let mut out = Vec::new();
        let mut c = self.clone();
        c.model.use_lw = false;
        out.push(("no_lw".to_string(), c));
        let mut c = self.clone();
        c.model.use_itn = false;
        out.push(("no_itn".to_string(), c));
        let mut c = self.clone();
        c.loss.use_tcl = false;
        out.push(("no_tcl".to_string(), c));
        let mut c = self.clone();
        c.loss.use_pt = false;
        out.push(("no_pt".to_string(), c));
        out
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Applies `section.key=value`; `value` is parsed as TOML, or taken as a
/// bare string when that fails.
fn apply_override(value: &mut toml::Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not of the form section.key=value")))?;
    let parsed = toml::from_str::<toml::Table>(&format!("v = {}", raw.trim()))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.len() < 2 || keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("override key {path:?} must be section.key")));
    }
    let mut cur = value;
    for k in &keys[..keys.len() - 1] {
        cur = cur
            .get_mut(*k)
            .ok_or_else(|| Error::Config(format!("unknown config section {k:?} in override {spec:?}")))?;
    }
    let table = cur
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("{path:?} does not name a table entry")))?;
    let last = keys[keys.len() - 1];
    if !table.contains_key(last) {
        return Err(Error::Config(format!("unknown config key {path:?}")));
    }
    table.insert(last.to_string(), parsed);
    Ok(())
}
