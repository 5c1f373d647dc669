//! Command-line front end: argument parsing, run configuration, and one
//! function per command. Every command writes `manifest.json` into the
//! output directory.

pub mod config;
mod fallback;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rccl::corpus::{self, Dataset, Split, VAST_LABEL_MAPPING};
use rccl::encoder::EncoderParams;
use rccl::eval::{self, BiasProbeReport, EvalReport};
use rccl::fillclient::{ClientConfig, FillClient};
use rccl::maskfill::{CounterfactualRecord, FillModel};
use rccl::manifest::RunManifest;
use rccl::synthlab::{self, SynthConfig};
use rccl::textproc::{self, AliasMap};
use rccl::train::{self, RcclOutcome, TrainOutcome};
use rccl::{Error, NegativeStrategy, Result, TokenizedDataset, Vocabulary};
use serde::Serialize;

pub use config::{DataConfig, DataFormat, FillChoice, Needs, RunConfig, FILL_URL_ENV};
use fallback::Fallback;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "rccl", version, about = "Counterfactual contrastive training for stance detection")]
pub struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one configuration key, e.g. `train.gamma=0.2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    MaskRatio,
    PosCount,
    NegCount,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Per-target label counts of every configured split.
    Stats,
    /// Cross-entropy training (after the prior stage when a pretrain corpus is set).
    Train,
    /// Counterfactual generation and relabeling.
    Generate,
    /// The full two-stage pipeline.
    Rccl,
    /// Scores a saved model on the test split (dev when test is absent).
    Eval,
    /// The full pipeline with a given negative-sampling strategy.
    Ablate {
        #[arg(long)]
        strategy: NegativeStrategy,
    },
    /// Macro-F1 of the full pipeline over values of one hyperparameter.
    Sweep {
        #[arg(long, value_enum)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Label distribution of a saved model on context-ablated inputs.
    BiasProbe {
        /// Also write an SVG bar chart.
        #[arg(long)]
        plot: bool,
    },
    /// Writes a synthetic biased corpus.
    Synth {
        #[arg(long)]
        seed: Option<u64>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Stats => "stats",
            Command::Train => "train",
            Command::Generate => "generate",
            Command::Rccl => "rccl",
            Command::Eval => "eval",
            Command::Ablate { .. } => "ablate",
            Command::Sweep { .. } => "sweep",
            Command::BiasProbe { .. } => "bias-probe",
            Command::Synth { .. } => "synth",
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        e if e.is_data_error() => EXIT_DATA,
        _ => EXIT_FAILURE,
    }
}

/// Parses the configuration and runs `cli.command`.
pub fn run(cli: &Cli) -> Result<RunManifest> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    dispatch_recording(&cli.command, cfg, cli.config.as_deref())
}

/// Runs `command` and writes its manifest.
pub fn dispatch(command: &Command, cfg: RunConfig) -> Result<RunManifest> {
    dispatch_recording(command, cfg, None)
}

/// Which splits a command reads.
fn needs(command: &Command) -> Needs {
    match command {
        Command::Synth { .. } => Needs::Nothing,
        Command::Stats | Command::Eval | Command::BiasProbe { .. } => Needs::AnySplit,
        _ => Needs::Train,
    }
}

/// [`dispatch`], also hashing the configuration file into the manifest.
pub fn dispatch_recording(command: &Command, mut cfg: RunConfig, config_file: Option<&Path>) -> Result<RunManifest> {
    match command {
        Command::Ablate { strategy } => cfg.train.strategy = *strategy,
        Command::Synth { seed: Some(seed) } => cfg.synth.get_or_insert_with(SynthConfig::default).seed = *seed,
        Command::Synth { seed: None } => {
            cfg.synth.get_or_insert_with(SynthConfig::default);
        }
        _ => {}
    }
    cfg.validate(needs(command))?;
    let out = cfg.output.clone();
    fs::create_dir_all(&out).map_err(|e| Error::Config(format!("cannot create {}: {e}", out.display())))?;
    let mut m = RunManifest::new(command.name(), cfg.train.seed, &cfg)?;
    if let Some(path) = config_file {
        m.add_input(path)?;
    }
    match command {
        Command::Stats => stats(&cfg, &mut m)?,
        Command::Train => train_cmd(&cfg, &mut m)?,
        Command::Generate => generate(&cfg, &mut m)?,
        Command::Rccl | Command::Ablate { .. } => rccl_cmd(&cfg, &mut m)?,
        Command::Eval => eval_cmd(&cfg, &mut m)?,
        Command::Sweep { param, values } => sweep(&cfg, *param, values, &mut m)?,
        Command::BiasProbe { plot } => bias_probe(&cfg, *plot, &mut m)?,
        Command::Synth { .. } => synth(&cfg, &mut m)?,
    }
    m.save(out.join("manifest.json"))?;
    Ok(m)
}

/// Raw splits of a run, read from files or generated.
pub struct Splits {
    pub train: Dataset,
    pub dev: Dataset,
    pub test: Dataset,
    pub pretrain: Option<Dataset>,
}

impl Splits {
    pub fn load(cfg: &RunConfig, m: &mut RunManifest) -> Result<Self> {
        if let Some(s) = &cfg.synth {
            let d = synthlab::generate_synth(s)?;
            return Ok(Splits { train: d.train, dev: d.dev, test: d.test, pretrain: Some(d.pretrain) });
        }
        let data = &cfg.data;
        let mut read = |path: &Option<PathBuf>, split: Split| -> Result<Dataset> {
            let Some(path) = path else {
                return Ok(Dataset::empty(split.to_string(), split));
            };
            m.add_input(path)?;
            match data.format {
                DataFormat::Jsonl => corpus::load_jsonl(path, split),
                DataFormat::Semeval => corpus::load_semeval(path, split),
                DataFormat::Vast => corpus::load_vast(path, split),
                DataFormat::Ukp => corpus::load_ukp(path, split, &data.ukp),
            }
        };
        let train = read(&data.train, Split::Train)?;
        let dev = read(&data.dev, Split::Dev)?;
        let test = read(&data.test, Split::Test)?;
        let pretrain = match &data.pretrain {
            Some(_) => Some(read(&data.pretrain, Split::Train)?),
            None => None,
        };
        Ok(Splits { train, dev, test, pretrain })
    }

    /// Distinct targets across splits, first-seen order.
    pub fn targets(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        [&self.train, &self.dev, &self.test]
            .into_iter()
            .flat_map(|d| d.targets())
            .filter(|t| seen.insert(t.clone()))
            .collect()
    }
}

/// Tokenized splits sharing one vocabulary.
pub struct Prepared {
    pub splits: Splits,
    pub vocab: Vocabulary,
    pub train: TokenizedDataset,
    pub dev: TokenizedDataset,
    pub test: TokenizedDataset,
    pub pretrain: Option<TokenizedDataset>,
}

impl Prepared {
    /// Builds the vocabulary from the train split unless `vocab` is given.
    pub fn new(cfg: &RunConfig, splits: Splits, vocab: Option<Vocabulary>, m: &mut RunManifest) -> Result<Self> {
        let aliases = match &cfg.data.aliases {
            Some(path) => {
                m.add_input(path)?;
                AliasMap::load(path)?
            }
            None => AliasMap::default(),
        };
        let vocab = match vocab {
            Some(v) => v,
            None => textproc::build_vocab(&splits.train, cfg.data.min_count)?,
        };
        let tok = |d: &Dataset| TokenizedDataset::new(d, &vocab, &aliases);
        Ok(Prepared {
            train: tok(&splits.train)?,
            dev: tok(&splits.dev)?,
            test: tok(&splits.test)?,
            pretrain: splits.pretrain.as_ref().map(tok).transpose()?,
            vocab,
            splits,
        })
    }

    /// Test split, or dev when no test split is configured.
    pub fn eval_split(&self) -> Option<&TokenizedDataset> {
        [&self.test, &self.dev].into_iter().find(|d| !d.is_empty())
    }
}

fn fill_model(cfg: &RunConfig, p: &Prepared) -> Result<Box<dyn FillModel>> {
    let ngram = rccl::maskfill::ngram_fill_model(&p.splits.train, &p.vocab)?;
    match cfg.fill_choice()? {
        FillChoice::Ngram => Ok(Box::new(ngram)),
        FillChoice::Service(url) => {
            let client = FillClient::new(&url, p.vocab.clone(), ClientConfig::default());
            if cfg.fill_fallback {
                Ok(Box::new(Fallback::new(client, ngram)))
            } else {
                Ok(Box::new(client))
            }
        }
    }
}

fn load_model(cfg: &RunConfig, m: &mut RunManifest) -> Result<Option<(EncoderParams, Vocabulary)>> {
    match (&cfg.model, &cfg.vocab) {
        (Some(model), Some(vocab)) => {
            m.add_input(model)?;
            m.add_input(vocab)?;
            let v = Vocabulary::load(vocab)?;
            Ok(Some((EncoderParams::load(model, &v)?, v)))
        }
        _ => Ok(None),
    }
}

fn require_model(cfg: &RunConfig, m: &mut RunManifest) -> Result<(EncoderParams, Vocabulary)> {
    load_model(cfg, m)?.ok_or_else(|| Error::Config("this command needs model and vocab".into()))
}

/// Evaluation results plus the bias probe, as written to `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    /// Which split `scores` come from.
    pub split: Option<String>,
    pub scores: Option<EvalReport>,
    pub bias_probe: BiasProbeReport,
    pub label_mapping: String,
}

fn report(f: &EncoderParams, p: &Prepared) -> Result<Report> {
    let (split, scores) = match p.eval_split() {
        Some(d) => (Some(d.split.to_string()), Some(eval::evaluate(f, d)?)),
        None => (None, None),
    };
    Ok(Report {
        split,
        scores,
        bias_probe: eval::bias_probe(f, &p.splits.targets(), &p.vocab)?,
        label_mapping: VAST_LABEL_MAPPING.to_string(),
    })
}

fn write(path: &Path, text: &str, m: &mut RunManifest) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    m.add_output(path)
}

fn write_json(path: &Path, value: &impl Serialize, m: &mut RunManifest) -> Result<()> {
    write(path, &(serde_json::to_string_pretty(value)? + "\n"), m)
}

fn write_report(out: &Path, r: &Report, m: &mut RunManifest) -> Result<()> {
    write_json(&out.join("report.json"), r, m)?;
    let csv = match &r.scores {
        Some(s) => s.to_csv(),
        None => r.bias_probe.to_csv(),
    };
    write(&out.join("report.csv"), &csv, m)
}

fn write_model(out: &Path, f: &EncoderParams, v: &Vocabulary, m: &mut RunManifest) -> Result<()> {
    let model = out.join("model.json");
    f.save(&model, v)?;
    m.add_output(&model)?;
    let vocab = out.join("vocab.json");
    v.save(&vocab)?;
    m.add_output(&vocab)
}

fn write_counterfactuals(out: &Path, kept: &[rccl::maskfill::CounterfactualSample], p: &Prepared, m: &mut RunManifest) -> Result<()> {
    let targets: std::collections::HashMap<&str, &str> = p
        .splits
        .train
        .samples()
        .iter()
        .map(|s| (s.id.as_str(), s.target.as_str()))
        .collect();
    let mut text = String::new();
    for cf in kept {
        let target = targets.get(cf.parent_id.as_str()).copied().unwrap_or_default();
        text.push_str(&serde_json::to_string(&CounterfactualRecord::new(cf, target, &p.vocab))?);
        text.push('\n');
    }
    write(&out.join("counterfactuals.jsonl"), &text, m)
}

fn record_warnings(m: &mut RunManifest, outcomes: &[&TrainOutcome]) {
    for o in outcomes {
        m.warnings.extend(o.warnings.iter().cloned());
    }
}

fn stats(cfg: &RunConfig, m: &mut RunManifest) -> Result<()> {
    let splits = Splits::load(cfg, m)?;
    let mut csv = String::from("split,");
    csv.push_str(corpus::stats(&Dataset::empty("", Split::Train)).to_csv().lines().next().unwrap_or_default());
    csv.push('\n');
    let mut tables = serde_json::Map::new();
    for (name, d) in [("train", &splits.train), ("dev", &splits.dev), ("test", &splits.test)] {
        if d.is_empty() {
            continue;
        }
        let table = corpus::stats(d);
        for line in table.to_csv().lines().skip(1) {
            csv.push_str(&format!("{name},{line}\n"));
        }
        tables.insert(name.into(), serde_json::to_value(&table)?);
    }
    let out = &cfg.output;
    write(&out.join("stats.csv"), &csv, m)?;
    write_json(&out.join("stats.json"), &tables, m)
}

/// Stage 1, preceded by the prior stage when a pretraining corpus exists.
fn stage1(cfg: &RunConfig, p: &Prepared, m: &mut RunManifest) -> Result<EncoderParams> {
    let mut init = train::initial_params(p.vocab.len(), &cfg.train);
    if let Some(corpus) = &p.pretrain {
        let prior = train::pretrain_prior(corpus, init, &cfg.train)?;
        m.detail("prior", &prior)?;
        init = prior.into_params();
    }
    let out = train::train_stage1(&p.train, &p.dev, init, &cfg.train)?;
    record_warnings(m, &[&out]);
    m.detail("stage1", &out)?;
    Ok(out.into_params())
}

fn train_cmd(cfg: &RunConfig, m: &mut RunManifest) -> Result<()> {
    let p = Prepared::new(cfg, Splits::load(cfg, m)?, None, m)?;
    let f = stage1(cfg, &p, m)?;
    write_model(&cfg.output, &f, &p.vocab, m)?;
    write_report(&cfg.output, &report(&f, &p)?, m)
}

fn generate(cfg: &RunConfig, m: &mut RunManifest) -> Result<()> {
    let loaded = load_model(cfg, m)?;
    let splits = Splits::load(cfg, m)?;
    let (f, p) = match loaded {
        Some((f, v)) => (f, Prepared::new(cfg, splits, Some(v), m)?),
        None => {
            let p = Prepared::new(cfg, splits, None, m)?;
            (stage1(cfg, &p, m)?, p)
        }
    };
    let fm = fill_model(cfg, &p)?;
    let generation = train::generate_counterfactuals(&p.train, fm.as_ref(), &cfg.train)?;
    let generated = generation.samples.len();
    let fresh: Vec<_> = generation.samples.into_iter().filter(|c| !c.duplicate).collect();
    let duplicates = generated - fresh.len();
    let kept = train::relabel(&f, fresh, cfg.train.confidence_threshold)?;
    m.detail("generated", &generated)?;
    m.detail("duplicates", &duplicates)?;
    m.detail("kept", &kept.len())?;
    m.detail("skipped", &generation.skipped)?;
    write_counterfactuals(&cfg.output, &kept, &p, m)
}

fn run_pipeline(cfg: &RunConfig, p: &Prepared) -> Result<RcclOutcome> {
    let fm = fill_model(cfg, p)?;
    train::run_rccl(&p.train, &p.dev, p.pretrain.as_ref(), p.vocab.len(), fm.as_ref(), &cfg.train)
}

fn record_outcome(m: &mut RunManifest, o: &RcclOutcome) -> Result<()> {
    if let Some(prior) = &o.prior {
        m.detail("prior", prior)?;
    }
    m.detail("stage1", &o.stage1)?;
    m.detail("stage2", &o.stage2)?;
    m.detail("generated", &o.generated)?;
    m.detail("duplicates", &o.duplicates)?;
    m.detail("kept", &o.kept.len())?;
    m.detail("active_sets", &o.active_sets)?;
    m.detail("skipped", &o.skipped)?;
    record_warnings(m, &[&o.stage1, &o.stage2]);
    Ok(())
}

fn rccl_cmd(cfg: &RunConfig, m: &mut RunManifest) -> Result<()> {
    let p = Prepared::new(cfg, Splits::load(cfg, m)?, None, m)?;
    let o = run_pipeline(cfg, &p)?;
    record_outcome(m, &o)?;
    let out = &cfg.output;
    let f = o.stage2.params();
    write_model(out, f, &p.vocab, m)?;
    write_counterfactuals(out, &o.kept, &p, m)?;
    m.detail("stage1_report", &report(o.stage1.params(), &p)?)?;
    write_report(out, &report(f, &p)?, m)
}

fn eval_cmd(cfg: &RunConfig, m: &mut RunManifest) -> Result<()> {
    let (f, v) = require_model(cfg, m)?;
    let p = Prepared::new(cfg, Splits::load(cfg, m)?, Some(v), m)?;
    if p.eval_split().is_none() {
        return Err(Error::Config("eval needs data.test or data.dev".into()));
    }
    write_report(&cfg.output, &report(&f, &p)?, m)
}

fn sweep(cfg: &RunConfig, param: SweepParam, values: &[f64], m: &mut RunManifest) -> Result<()> {
    let p = Prepared::new(cfg, Splits::load(cfg, m)?, None, m)?;
    let name = match param {
        SweepParam::MaskRatio => "mask-ratio",
        SweepParam::PosCount => "pos-count",
        SweepParam::NegCount => "neg-count",
    };
    let mut csv = String::from("param,value,split,macro_f1,favor_against_f1,kept,active_sets\n");
    for &value in values {
        let mut c = cfg.clone();
        let count = || {
            if value >= 1.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(Error::Config(format!("{name} values must be positive integers, got {value}")))
            }
        };
        match param {
            SweepParam::MaskRatio => c.train.mask_ratio = value,
            SweepParam::PosCount => c.train.positives = count()?,
            SweepParam::NegCount => c.train.negatives = count()?,
        }
        c.train.validate()?;
        let o = run_pipeline(&c, &p)?;
        let r = report(o.stage2.params(), &p)?;
        let (split, f1, fa) = match &r.scores {
            Some(s) => (r.split.clone().unwrap_or_default(), s.overall.macro_f1, s.overall.favor_against_f1),
            None => (String::new(), f64::NAN, f64::NAN),
        };
        csv.push_str(&format!("{name},{value},{split},{f1},{fa},{},{}\n", o.kept.len(), o.active_sets));
        record_warnings(m, &[&o.stage1, &o.stage2]);
    }
    write(&cfg.output.join("sweep.csv"), &csv, m)
}

fn bias_probe(cfg: &RunConfig, plot: bool, m: &mut RunManifest) -> Result<()> {
    let (f, v) = require_model(cfg, m)?;
    let splits = Splits::load(cfg, m)?;
    let probe = eval::bias_probe(&f, &splits.targets(), &v)?;
    let out = &cfg.output;
    write_json(&out.join("bias_probe.json"), &probe, m)?;
    write(&out.join("bias_probe.csv"), &probe.to_csv(), m)?;
    if plot {
        write(&out.join("bias_probe.svg"), &probe.to_svg(), m)?;
    }
    Ok(())
}

fn synth(cfg: &RunConfig, m: &mut RunManifest) -> Result<()> {
    let s = cfg.synth.as_ref().expect("dispatch supplies a synth config");
    let data = synthlab::generate_synth(s)?;
    for path in data.save(&cfg.output)? {
        m.add_output(path)?;
    }
    Ok(())
}
