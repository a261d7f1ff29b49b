//! Run configuration: one TOML file plus `--set key=value` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};
use trajrisk_core::data::{PreprocessConfig, SplitUnit};
use trajrisk_core::predictor::{Ablation, Channels, FeatureSet, ModelConfig};
use trajrisk_core::risk::{CandidateGrid, RiskParams};
use trajrisk_core::train::TrainConfig;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Every artifact is written under this directory.
    pub output_dir: PathBuf,
    /// Seed of the parameter initialization.
    pub init_seed: u64,
    pub data: DataConfig,
    pub preprocess: PreprocessConfig,
    pub model: ModelConfig,
    pub ablation: AblationConfig,
    pub train: TrainConfig,
    pub risk: RiskParams,
    pub candidates: CandidateGrid,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("out"),
            init_seed: 0,
            data: DataConfig::default(),
            preprocess: PreprocessConfig::default(),
            model: ModelConfig::default(),
            ablation: AblationConfig::default(),
            train: TrainConfig::default(),
            risk: RiskParams::default(),
            candidates: CandidateGrid::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub ngsim: Vec<PathBuf>,
    pub highd: Vec<HighdFiles>,
    /// Sample store directory; `<output_dir>/store` when unset.
    pub store: Option<PathBuf>,
    pub split_seed: u64,
    pub split_unit: SplitUnit,
}

/// A highD recording: per-frame tracks plus the recording metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HighdFiles {
    pub tracks: PathBuf,
    pub meta: PathBuf,
}

/// Ablation by label, e.g. `channels = "ch1+ch3"`, `features = "pos/abs"`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    #[serde(deserialize_with = "label")]
    pub channels: String,
    pub features: String,
}

/// A label that may also be written as a bare number (`channels = 1`).
fn label<'de, D: Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Label {
        Text(String),
        Number(u64),
    }
    Ok(match Label::deserialize(d)? {
        Label::Text(s) => s,
        Label::Number(n) => n.to_string(),
    })
}

impl Default for AblationConfig {
    fn default() -> Self {
        let a = Ablation::default();
        Self {
            channels: a.channels.label().into(),
            features: a.features.to_string(),
        }
    }
}

impl AblationConfig {
    /// Accepts `ch1+ch2` as well as the short form `1+2`.
    pub fn resolve(&self) -> Result<Ablation, CliError> {
        let label = self
            .channels
            .split('+')
            .map(|c| if c.starts_with("ch") { c.to_string() } else { format!("ch{c}") })
            .collect::<Vec<_>>()
            .join("+");
        let channels = Channels::parse(&label).ok_or_else(|| {
            let known: Vec<&str> = Channels::ALL.iter().map(|c| c.label()).collect();
            CliError::Input(format!("ablation.channels `{}`; expected one of {}", self.channels, known.join(", ")))
        })?;
        let features = FeatureSet::parse(&self.features).ok_or_else(|| {
            let known: Vec<String> = FeatureSet::ALL.iter().map(|f| f.to_string()).collect();
            CliError::Input(format!("ablation.features `{}`; expected one of {}", self.features, known.join(", ")))
        })?;
        Ok(Ablation { channels, features })
    }
}

fn input(msg: impl Into<String>) -> CliError {
    CliError::Input(msg.into())
}

/// Value of an override: TOML syntax when it parses, a bare string otherwise.
fn override_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| input(format!("override `{spec}` is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(input(format!("override key `{key}`")));
    }
    let (last, parents) = path.split_last().expect("split yields one element");
    let mut t = table;
    for p in parents {
        let entry = t.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        t = entry.as_table_mut().ok_or_else(|| input(format!("override `{key}`: `{p}` is not a section")))?;
    }
    t.insert(last.to_string(), override_value(raw.trim()));
    Ok(())
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    /// Reads `path` (defaults when `None`), applies overrides and validates.
    /// Relative paths are taken relative to the config file.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let (mut table, base) = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| input(format!("{}: {e}", p.display())))?;
                let table: toml::Table = toml::from_str(&text).map_err(|e| input(format!("{}: {e}", p.display())))?;
                (table, p.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (toml::Table::new(), PathBuf::new()),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: RunConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| input(format!("config: {e}")))?;
        resolve(&base, &mut cfg.output_dir);
        for p in &mut cfg.data.ngsim {
            resolve(&base, p);
        }
        for h in &mut cfg.data.highd {
            resolve(&base, &mut h.tracks);
            resolve(&base, &mut h.meta);
        }
        if let Some(s) = &mut cfg.data.store {
            resolve(&base, s);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.model.validate()?;
        self.train.validate()?;
        self.risk.validate()?;
        self.ablation.resolve()?;
        let pre = &self.preprocess;
        if !(pre.cutoff_hz > 0.0 && pre.cutoff_hz.is_finite()) {
            return Err(input(format!("preprocess.cutoff_hz {}", pre.cutoff_hz)));
        }
        if pre.windows.history_len != self.model.history_len || pre.windows.future_len != self.model.future_len {
            return Err(input("preprocess.windows and model disagree on history_len/future_len"));
        }
        let c = &self.candidates;
        if c.ax.is_empty() || c.ax.iter().any(|a| !a.is_finite()) || !(c.tf > 0.0 && c.tf.is_finite()) {
            return Err(input("candidates need a non-empty finite ax grid and a positive tf"));
        }
        Ok(())
    }

    pub fn ablation(&self) -> Ablation {
        self.ablation.resolve().expect("validated on load")
    }

    pub fn store_dir(&self) -> PathBuf {
        self.data.store.clone().unwrap_or_else(|| self.output_dir.join("store"))
    }

    /// Hex SHA-256 of the compact JSON of everything but `output_dir`.
    pub fn fingerprint(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        v.as_object_mut().expect("config is an object").remove("output_dir");
        Sha256::digest(v.to_string().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
