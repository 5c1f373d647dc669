//! Run configuration: one JSON file, `key=value` overrides, defaults.

use std::path::{Path, PathBuf};

use rccl::corpus::UkpColumns;
use rccl::synthlab::SynthConfig;
use rccl::train::LONG_TEXT_MASK_RATIO;
use rccl::{Error, Result, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Overrides the URL of a `service:` fill choice.
pub const FILL_URL_ENV: &str = "RCCL_FILL_URL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    /// Canonical one-object-per-line dump.
    #[default]
    Jsonl,
    Semeval,
    Vast,
    Ukp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub format: DataFormat,
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Corpus for the prior-injection stage.
    pub pretrain: Option<PathBuf>,
    /// JSON object of target → alias tokens.
    pub aliases: Option<PathBuf>,
    pub min_count: usize,
    pub ukp: UkpColumns,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            format: DataFormat::Jsonl,
            train: None,
            dev: None,
            test: None,
            pretrain: None,
            aliases: None,
            min_count: 1,
            ukp: UkpColumns::default(),
        }
    }
}

impl DataConfig {
    pub fn paths(&self) -> impl Iterator<Item = &PathBuf> {
        [&self.train, &self.dev, &self.test, &self.pretrain, &self.aliases].into_iter().flatten()
    }
}

/// Input a command requires.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Needs {
    Nothing,
    AnySplit,
    Train,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FillChoice {
    Ngram,
    Service(String),
}

impl FillChoice {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "ngram" => Ok(FillChoice::Ngram),
            other => match other.strip_prefix("service:") {
                Some(url) if !url.is_empty() => Ok(FillChoice::Service(url.to_string())),
                _ => Err(Error::Config(format!("fill must be \"ngram\" or \"service:<url>\", got {s:?}"))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub train: TrainConfig,
    /// Generate the data instead of reading `data` files.
    pub synth: Option<SynthConfig>,
    /// `ngram` or `service:<url>`.
    pub fill: String,
    /// Use the n-gram filler when the fill service is unreachable.
    pub fill_fallback: bool,
    /// Trained parameters and their vocabulary, for `eval`, `bias-probe` and
    /// `generate`.
    pub model: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: DataConfig::default(),
            train: TrainConfig::default(),
            synth: None,
            fill: "ngram".into(),
            fill_fallback: false,
            model: None,
            vocab: None,
            output: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    /// Reads `file` (if any), applies `overrides` in order, then fills
    /// defaults. The mask ratio defaults to the long-text value for VAST
    /// unless set explicitly.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut value = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?
            }
            None => Value::Object(Map::new()),
        };
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let explicit_ratio = value.pointer("/train/mask_ratio").is_some();
        let mut cfg: RunConfig = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.data.format == DataFormat::Vast && !explicit_ratio {
            cfg.train.mask_ratio = LONG_TEXT_MASK_RATIO;
        }
        if let Ok(url) = std::env::var(FILL_URL_ENV) {
            if matches!(FillChoice::parse(&cfg.fill), Ok(FillChoice::Service(_))) {
                cfg.fill = format!("service:{url}");
            }
        }
        Ok(cfg)
    }

    pub fn fill_choice(&self) -> Result<FillChoice> {
        FillChoice::parse(&self.fill)
    }

    /// Checks the configuration for a command that reads `needs`.
    pub fn validate(&self, needs: Needs) -> Result<()> {
        self.train.validate()?;
        self.fill_choice()?;
        if self.data.min_count == 0 {
            return Err(Error::Config("data.min_count must be >= 1".into()));
        }
        if let Some(s) = &self.synth {
            s.validate()?;
            if self.data.train.is_some() {
                return Err(Error::Config("give either synth or data.train, not both".into()));
            }
        } else {
            let d = &self.data;
            match needs {
                Needs::Train if d.train.is_none() => {
                    return Err(Error::Config("no training data: set data.train or synth".into()))
                }
                Needs::AnySplit if d.train.is_none() && d.dev.is_none() && d.test.is_none() => {
                    return Err(Error::Config("no data: set data.train, data.dev, data.test or synth".into()))
                }
                _ => {}
            }
        }
        for p in self.data.paths().chain(&self.model).chain(&self.vocab) {
            if !p.exists() {
                return Err(Error::Config(format!("{} does not exist", p.display())));
            }
        }
        if self.model.is_some() != self.vocab.is_some() {
            return Err(Error::Config("model and vocab must be given together".into()));
        }
        Ok(())
    }
}

/// Applies `path.to.key=value`; the value is parsed as JSON, falling back to
/// a plain string.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key {key:?}")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        if !node.is_object() {
            return Err(Error::Config(format!("override {key:?} descends into a non-object")));
        }
        node = node
            .as_object_mut()
            .expect("checked")
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
        if node.is_null() {
            *node = Value::Object(Map::new());
        }
    }
    match node.as_object_mut() {
        Some(obj) => {
            obj.insert(parts[parts.len() - 1].to_string(), value);
            Ok(())
        }
        None => Err(Error::Config(format!("override {key:?} descends into a non-object"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn override_beats_file_beats_default() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"train": {"gamma": 0.5, "margin": 2.0}}"#).unwrap();
        let cfg = RunConfig::load(Some(&path), &["train.gamma=0.25".into()]).unwrap();
        assert_eq!(cfg.train.gamma, 0.25);
        assert_eq!(cfg.train.margin, 2.0);
        assert_eq!(cfg.train.patience, 5);
    }

    #[test]
    fn vast_ratio_default_unless_explicit() {
        let cfg = RunConfig::load(None, &["data.format=vast".into()]).unwrap();
        assert_eq!(cfg.train.mask_ratio, LONG_TEXT_MASK_RATIO);
        let cfg = RunConfig::load(None, &["data.format=vast".into(), "train.mask_ratio=0.3".into()]).unwrap();
        assert_eq!(cfg.train.mask_ratio, 0.3);
        let cfg = RunConfig::load(None, &[]).unwrap();
        assert_eq!(cfg.train.mask_ratio, 0.2);
    }

    #[test]
    fn nested_override_creates_sections() {
        let cfg = RunConfig::load(None, &["synth.seed=7".into(), "train.strategy=aug-only".into()]).unwrap();
        assert_eq!(cfg.synth.unwrap().seed, 7);
        assert_eq!(cfg.train.strategy, rccl::NegativeStrategy::AugOnly);
    }

    #[test]
    fn bad_configs_are_config_errors() {
        for o in ["nokey", "train.bogus=1", "train.gamma=\"x\"", ".a=1"] {
            assert!(matches!(RunConfig::load(None, &[o.into()]), Err(Error::Config(_))), "{o}");
        }
        let cfg = RunConfig::load(None, &["fill=bert".into()]).unwrap();
        assert!(matches!(cfg.validate(Needs::Nothing), Err(Error::Config(_))));
        let cfg = RunConfig::load(None, &[]).unwrap();
        assert!(matches!(cfg.validate(Needs::Train), Err(Error::Config(_))));
        let cfg = RunConfig::load(None, &["data.train=/no/such/file".into()]).unwrap();
        assert!(matches!(cfg.validate(Needs::Train), Err(Error::Config(_))));
    }

    #[test]
    fn fill_choices() {
        assert_eq!(FillChoice::parse("ngram").unwrap(), FillChoice::Ngram);
        assert_eq!(
            FillChoice::parse("service:http://127.0.0.1:8000").unwrap(),
            FillChoice::Service("http://127.0.0.1:8000".into())
        );
        assert!(FillChoice::parse("service:").is_err());
    }
}
