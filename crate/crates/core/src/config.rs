//! Experiment configuration: one TOML file per experiment, optionally based
//! on a built-in recipe, with command-line overrides on top.
//!
//! Precedence is flags > file > recipe defaults. Unknown keys are errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baseline::BaselineConfig;
use crate::classify::ClassifierConfig;
use crate::error::{Error, Result};
use crate::recipes;
use crate::seed;
use crate::synth::DatasetConfig;
use crate::train::ModelConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractConfig {
    /// Write translation PNGs for this many images (in id order).
    pub save_images: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Test images shown per class.
    pub rows_per_class: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { rows_per_class: 2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Root of every random stream; see [`Seeds`].
    pub seed: u64,
    /// Defaults to `runs/<name>`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub baseline: BaselineConfig,
    #[serde(default)]
    pub extract: ExtractConfig,
    #[serde(default)]
    pub grid: GridConfig,
}

/// Named sub-seeds derived from the experiment seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Seeds {
    pub data: u64,
    pub init: u64,
    pub train: u64,
    pub sampling: u64,
}

impl ExperimentConfig {
    pub fn seeds(&self) -> Seeds {
        Seeds {
            data: seed::derive(self.seed, "data"),
            init: seed::derive(self.seed, "init"),
            train: seed::derive(self.seed, "train"),
            sampling: seed::derive(self.seed, "sampling"),
        }
    }

    pub fn output_root(&self) -> PathBuf {
        self.output_dir
            .clone()
            .unwrap_or_else(|| Path::new("runs").join(&self.name))
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Config("experiment name must not be empty".into()));
        }
        self.dataset.validate()?;
        self.model.validate()?;
        self.classifier.validate()?;
        self.baseline.validate()?;
        let k = self.dataset.n_classes();
        if self.model.kind == crate::train::GanKind::CycleGan && k != 2 {
            return Err(Error::Config(format!("CycleGAN experiments need 2 classes, dataset has {k}")));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialise config: {e}")))
    }

    /// Parses a config document; a top-level `recipe = "<name>"` key pulls in
    /// that recipe's settings as defaults.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(format!("invalid TOML: {e}")))?;
        Self::from_table(table, &[])
    }

    /// Like [`from_toml_str`](Self::from_toml_str), then applies `key=value`
    /// overrides with dotted keys (`model.iterations=500`).
    pub fn from_table(mut table: toml::Table, overrides: &[String]) -> Result<Self> {
        let mut value = match table.remove("recipe") {
            Some(toml::Value::String(name)) => {
                let mut base = to_value(&recipes::experiment(&name)?)?;
                merge(&mut base, toml::Value::Table(table));
                base
            }
            Some(other) => return Err(Error::Config(format!("recipe must be a string, got {other}"))),
            None => toml::Value::Table(table),
        };
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg = ExperimentConfig::deserialize(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::format("config", path, e.to_string()))?;
        Self::from_table(table, overrides)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }
}

fn to_value(cfg: &ExperimentConfig) -> Result<toml::Value> {
    toml::Value::try_from(cfg).map_err(|e| Error::Config(format!("cannot serialise config: {e}")))
}

/// Recursively merges `over` into `base`: tables merge key by key, anything
/// else is replaced.
pub fn merge(base: &mut toml::Value, over: toml::Value) {
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

/// Applies one `dotted.key=value` override. The value is parsed as TOML and
/// falls back to a plain string.
fn apply_override(root: &mut toml::Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not key=value")))?;
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut node = root;
    for (i, part) in parts.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {} is not a table", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    Err(Error::Config("empty override key".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recipes_round_trip_through_toml() {
        for name in recipes::RECIPES {
            let cfg = recipes::experiment(name).unwrap();
            let text = cfg.to_toml().unwrap();
            assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg, "{name}");
        }
    }

    #[test]
    fn file_overrides_recipe_and_flags_override_file() {
        let table: toml::Table = "recipe = \"fruits2\"\nseed = 11\n[model]\niterations = 7\n".parse().unwrap();
        let cfg = ExperimentConfig::from_table(table.clone(), &[]).unwrap();
        assert_eq!(cfg.seed, 11);
        assert_eq!(cfg.model.iterations, 7);
        assert_eq!(cfg.model.batch_size, recipes::experiment("fruits2").unwrap().model.batch_size);
        let cfg = ExperimentConfig::from_table(table, &["model.iterations=9".into(), "name=x".into()]).unwrap();
        assert_eq!(cfg.model.iterations, 9);
        assert_eq!(cfg.name, "x");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml_str("recipe = \"cells3\"\n[model]\niteratoins = 5\n").is_err());
        assert!(ExperimentConfig::from_toml_str("recipe = \"cells3\"\ntypo = 1\n").is_err());
        assert!(ExperimentConfig::from_toml_str("recipe = \"nope\"\n").is_err());
    }

    #[test]
    fn sub_seeds_are_distinct() {
        let s = recipes::experiment("fruits2").unwrap().seeds();
        let all = [s.data, s.init, s.train, s.sampling];
        for i in 0..4 {
            for j in i + 1..4 {
                assert_ne!(all[i], all[j]);
            }
        }
    }
}
