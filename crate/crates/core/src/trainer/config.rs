use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::{AgeGroup, SynthConfig};
use crate::error::{Error, Result};
use crate::losses::{LossWeights, QMode};
use crate::networks::ModelConfig;

/// Optimizer and schedule settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerSettings {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub adam_eps: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Checkpoint every this many steps; 0 writes only the final one.
    pub checkpoint_every: u64,
    pub q_mode: QMode,
    /// Which aged bracket of a manifest dataset to train on.
    pub age_group: AgeGroup,
}

impl Default for TrainerSettings {
    fn default() -> Self {
        TrainerSettings {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 1,
            epochs: 30,
            seed: 0,
            checkpoint_every: 0,
            q_mode: QMode::SampleOne,
            age_group: AgeGroup::Old,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    #[default]
    Synth,
    Manifest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSettings {
    pub source: DataSource,
    /// Used when `source = "manifest"`; relative paths resolve against the
    /// working directory.
    pub manifest: PathBuf,
    pub synth: SynthConfig,
}

impl Default for DataSettings {
    fn default() -> Self {
        DataSettings {
            source: DataSource::Synth,
            manifest: PathBuf::from("manifest.txt"),
            synth: SynthConfig::default(),
        }
    }
}

/// Everything that determines a training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub weights: LossWeights,
    pub trainer: TrainerSettings,
    pub data: DataSettings,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.weights.validate()?;
        let t = &self.trainer;
        if !(t.lr.is_finite() && t.lr > 0.0) {
            return Err(Error::Config(format!("trainer.lr must be > 0, got {}", t.lr)));
        }
        for (name, b) in [("beta1", t.beta1), ("beta2", t.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("trainer.{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(t.adam_eps.is_finite() && t.adam_eps > 0.0) {
            return Err(Error::Config(format!("trainer.adam_eps must be > 0, got {}", t.adam_eps)));
        }
        if t.epochs == 0 {
            return Err(Error::Config("trainer.epochs must be at least 1".into()));
        }
        if t.batch_size == 0 {
            return Err(Error::Config("trainer.batch_size must be at least 1".into()));
        }
        if self.data.source == DataSource::Synth {
            let s = &self.data.synth;
            if s.image_size != self.model.image_size || s.occupations != self.model.occupations {
                return Err(Error::Config(format!(
                    "data.synth ({}px, {} occupations) disagrees with model ({}px, {} occupations)",
                    s.image_size, s.occupations, self.model.image_size, self.model.occupations
                )));
            }
        }
        Ok(())
    }

    /// Parses TOML over the defaults, then applies `key.path=value`
    /// overrides. Each override must name an existing key and keep its type.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut tree = toml::Value::try_from(TrainConfig::default()).map_err(|e| Error::Config(e.to_string()))?;
        let file: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        merge(&mut tree, toml::Value::Table(file), "")?;
        for o in overrides {
            apply_override(&mut tree, o)?;
        }
        let cfg: TrainConfig = tree.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn kind(v: &toml::Value) -> &'static str {
    v.type_str()
}

fn merge(base: &mut toml::Value, over: toml::Value, path: &str) -> Result<()> {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                let sub = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v, &sub)?,
                    None => return Err(Error::Config(format!("unknown config key {sub}"))),
                }
            }
            Ok(())
        }
        (slot, v) => {
            let compatible = kind(slot) == kind(&v) || (slot.is_float() && v.is_integer());
            if !compatible {
                return Err(Error::Config(format!(
                    "config key {path} expects {}, got {}",
                    kind(slot),
                    kind(&v)
                )));
            }
            *slot = match v {
                toml::Value::Integer(i) if slot.is_float() => toml::Value::Float(i as f64),
                v => v,
            };
            Ok(())
        }
    }
}

/// Applies one `a.b.c=value` override. The value is read as a TOML literal,
/// falling back to a bare string.
pub fn apply_override(tree: &mut toml::Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()));
    let mut over = value;
    for part in key.rsplit('.') {
        let mut t = toml::Table::new();
        t.insert(part.to_owned(), over);
        over = toml::Value::Table(t);
    }
    merge(tree, over, "")
}
