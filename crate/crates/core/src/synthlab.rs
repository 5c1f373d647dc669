//! Symbolic stance corpus with a known Bayes oracle and a controllable
//! target prior.
//!
//! Every task comment holds filler words plus exactly one indicator word whose
//! stance is the gold label. A separate pretraining corpus pairs each target
//! with indicators of a designated stance more often than chance, so a model
//! trained on it acquires a measurable per-target prior.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{self, Dataset, Sample, Split, StanceLabel};
use crate::error::{Error, Result};
use crate::seed;
use crate::textproc::tokenize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub targets: usize,
    pub samples_per_target: usize,
    pub indicators_per_stance: usize,
    pub fillers: usize,
    /// Tokens per comment, the indicator included.
    pub comment_length: usize,
    /// Prior strength per target, in `[0, 1]`.
    pub bias: Vec<f64>,
    /// Stance favoured by the prior of every biased target.
    pub designated: StanceLabel,
    pub pretrain_size: usize,
    pub dev_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            targets: 3,
            samples_per_target: 150,
            indicators_per_stance: 3,
            fillers: 30,
            comment_length: 8,
            bias: vec![0.8, 0.0, 0.0],
            designated: StanceLabel::Against,
            pretrain_size: 3000,
            dev_fraction: 0.2,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.targets == 0
            || self.samples_per_target == 0
            || self.indicators_per_stance == 0
            || self.fillers == 0
            || self.comment_length == 0
            || self.pretrain_size == 0
        {
            return bad("synth counts must be >= 1");
        }
        if self.bias.len() != self.targets {
            return bad("synth bias needs one entry per target");
        }
        if self.bias.iter().any(|b| !(0.0..=1.0).contains(b)) {
            return bad("synth bias entries must lie in [0, 1]");
        }
        let f = self.dev_fraction + self.test_fraction;
        if self.dev_fraction < 0.0 || self.test_fraction < 0.0 || f >= 1.0 {
            return bad("dev_fraction + test_fraction must lie in [0, 1)");
        }
        Ok(())
    }

    /// Probability that a pretraining sample of `target` carries the
    /// designated stance: the bias, but never below chance.
    pub fn designated_probability(&self, target: usize) -> f64 {
        self.bias[target].max(1.0 / 3.0)
    }
}

pub fn target_name(t: usize) -> String {
    format!("t{t}")
}

pub fn indicator(stance: StanceLabel, target: usize, j: usize) -> String {
    let prefix = match stance {
        StanceLabel::Favor => "fav",
        StanceLabel::Against => "aga",
        StanceLabel::Neutral => "neu",
    };
    format!("{prefix}t{target}x{j}")
}

pub fn filler(k: usize) -> String {
    format!("w{k}")
}

/// Indicator-to-label map plus the generating configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSpec {
    pub indicators: BTreeMap<String, StanceLabel>,
    pub targets: Vec<String>,
    pub bias: Vec<f64>,
    pub designated: StanceLabel,
}

impl OracleSpec {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub pretrain: Dataset,
    pub train: Dataset,
    pub dev: Dataset,
    pub test: Dataset,
    pub oracle: OracleSpec,
}

fn comment(cfg: &SynthConfig, rng: &mut seed::Rng, stance: StanceLabel, target: usize) -> String {
    let slot = rng.gen_range(0..cfg.comment_length);
    let words: Vec<String> = (0..cfg.comment_length)
        .map(|i| {
            if i == slot {
                indicator(stance, target, rng.gen_range(0..cfg.indicators_per_stance))
            } else {
                filler(rng.gen_range(0..cfg.fillers))
            }
        })
        .collect();
    words.join(" ")
}

const TASK: u64 = 0;
const PRETRAIN: u64 = 1;

pub fn generate_synth(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let n_dev = (cfg.samples_per_target as f64 * cfg.dev_fraction).round() as usize;
    let n_test = (cfg.samples_per_target as f64 * cfg.test_fraction).round() as usize;
    let n_train = cfg.samples_per_target.saturating_sub(n_dev + n_test);

    let (mut train, mut dev, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for t in 0..cfg.targets {
        let mut rng = seed::child_rng(cfg.seed, &[TASK, t as u64]);
        for i in 0..cfg.samples_per_target {
            let stance = StanceLabel::ALL[rng.gen_range(0..3)];
            let (split, bucket) = if i < n_train {
                ("train", &mut train)
            } else if i < n_train + n_dev {
                ("dev", &mut dev)
            } else {
                ("test", &mut test)
            };
            let text = comment(cfg, &mut rng, stance, t);
            bucket.push(Sample::new(format!("{split}-t{t}-{i}"), text, target_name(t), Some(stance)));
        }
    }

    let mut pretrain = Vec::with_capacity(cfg.pretrain_size);
    let mut rng = seed::child_rng(cfg.seed, &[PRETRAIN]);
    for i in 0..cfg.pretrain_size {
        let t = i % cfg.targets;
        let p = cfg.designated_probability(t);
        let stance = if rng.gen::<f64>() < p {
            cfg.designated
        } else {
            let others: Vec<StanceLabel> = StanceLabel::ALL.into_iter().filter(|&s| s != cfg.designated).collect();
            others[rng.gen_range(0..2)]
        };
        let text = comment(cfg, &mut rng, stance, t);
        pretrain.push(Sample::new(format!("pre-t{t}-{i}"), text, target_name(t), Some(stance)));
    }

    let mut indicators = BTreeMap::new();
    for t in 0..cfg.targets {
        for stance in StanceLabel::ALL {
            for j in 0..cfg.indicators_per_stance {
                indicators.insert(indicator(stance, t, j), stance);
            }
        }
    }
    Ok(SynthData {
        pretrain: Dataset::new("synth-pretrain", Split::Train, pretrain)?,
        train: Dataset::new("synth", Split::Train, train)?,
        dev: Dataset::new("synth", Split::Dev, dev)?,
        test: Dataset::new("synth", Split::Test, test)?,
        oracle: OracleSpec {
            indicators,
            targets: (0..cfg.targets).map(target_name).collect(),
            bias: cfg.bias.clone(),
            designated: cfg.designated,
        },
    })
}

/// Label of the single indicator word in `s`.
pub fn bayes_oracle(spec: &OracleSpec, s: &Sample) -> Result<StanceLabel> {
    let found: Vec<StanceLabel> = tokenize(&s.comment)
        .iter()
        .filter_map(|t| spec.indicators.get(t).copied())
        .collect();
    match found.as_slice() {
        [label] => Ok(*label),
        _ => Err(Error::Invalid(format!(
            "sample {:?} has {} indicator words, expected exactly one",
            s.id,
            found.len()
        ))),
    }
}

impl SynthData {
    /// Writes `pretrain.jsonl`, `train.jsonl`, `dev.jsonl`, `test.jsonl` and
    /// `oracle.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<Vec<std::path::PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        for (name, d) in [
            ("pretrain.jsonl", &self.pretrain),
            ("train.jsonl", &self.train),
            ("dev.jsonl", &self.dev),
            ("test.jsonl", &self.test),
        ] {
            let path = dir.join(name);
            corpus::save_jsonl(d, &path)?;
            written.push(path);
        }
        let path = dir.join("oracle.json");
        self.oracle.save(&path)?;
        written.push(path);
        Ok(written)
    }
}
