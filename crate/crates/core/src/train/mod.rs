//! Two-stage training: a cross-entropy classifier, counterfactual generation
//! and relabeling, then joint cross-entropy and margin-ranking training.

mod contrast;
mod optim;
mod prior;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::StanceLabel;
use crate::encoder::{self, Batch, ContrastGroup, Dims, EncoderParams, LossBreakdown};
use crate::error::{Error, Result};
use crate::eval;
use crate::losses::{ContrastConfig, Metric};
use crate::maskfill::{self, CounterfactualSample, FillModel};
use crate::seed;
use crate::textproc::{TokenizedDataset, TokenizedSample};

pub use contrast::{
    build_contrast_set, build_contrast_sets, nearest_neighbors, relabel, representations, select_negatives_ib,
    select_ss, ContrastSet, Selection,
};
pub use optim::{Adam, EarlyStopping, Verdict, BETA1, BETA2, EPSILON};
pub use prior::{ablate_context, pretrain_prior};

pub const SHORT_TEXT_MASK_RATIO: f64 = 0.2;
pub const LONG_TEXT_MASK_RATIO: f64 = 0.08;

// seed-derivation paths
const STAGE_PRIOR: u64 = 0;
const STAGE_ONE: u64 = 1;
const STAGE_TWO: u64 = 2;
const INIT: u64 = 10;
const GENERATE: u64 = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NegativeStrategy {
    /// Relabeled counterfactuals of the anchor.
    #[default]
    Rssg,
    /// Other members of the same batch.
    Ib,
    /// Nearest neighbours in the training set.
    Ss,
    /// Counterfactuals in the cross-entropy term only; no contrastive term.
    AugOnly,
}

impl NegativeStrategy {
    pub const ALL: [NegativeStrategy; 4] = [Self::Rssg, Self::Ib, Self::Ss, Self::AugOnly];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Rssg => "rssg",
            Self::Ib => "ib",
            Self::Ss => "ss",
            Self::AugOnly => "aug-only",
        }
    }
}

impl fmt::Display for NegativeStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NegativeStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?} (expected rssg, ib, ss or aug-only)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub gamma: f64,
    pub margin: f64,
    pub metric: Metric,
    pub mask_ratio: f64,
    pub positives: usize,
    pub negatives: usize,
    /// Candidates drawn per anchor; `4 * (positives + negatives)` when unset.
    pub candidates: Option<usize>,
    pub confidence_threshold: f64,
    pub weight_decay: f64,
    pub patience: usize,
    pub max_epochs: usize,
    /// Epoch budget of the optional prior-injection stage.
    pub pretrain_epochs: usize,
    pub seed: u64,
    pub strategy: NegativeStrategy,
    /// Kept for configuration parity; no loss uses it.
    pub temperature: f64,
    pub fill_chunk: usize,
    /// Whether kept counterfactuals join the cross-entropy term.
    pub augment: bool,
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub init_range: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 3e-3,
            batch_size: 16,
            gamma: 0.1,
            margin: 1.0,
            metric: Metric::CosineDistance,
            mask_ratio: SHORT_TEXT_MASK_RATIO,
            positives: 3,
            negatives: 3,
            candidates: None,
            confidence_threshold: 0.7,
            weight_decay: 1e-5,
            patience: 5,
            max_epochs: 100,
            pretrain_epochs: 20,
            seed: 0,
            strategy: NegativeStrategy::Rssg,
            temperature: 0.07,
            fill_chunk: maskfill::DEFAULT_CHUNK,
            augment: true,
            embedding_dim: 64,
            hidden_dim: 64,
            init_range: 0.05,
        }
    }
}

impl TrainConfig {
    pub fn candidate_count(&self) -> usize {
        self.candidates.unwrap_or(4 * (self.positives + self.negatives))
    }

    /// Loss settings, with the contrastive weight zeroed for `aug-only`.
    pub fn contrast(&self) -> ContrastConfig {
        ContrastConfig {
            margin: self.margin,
            gamma: if self.strategy == NegativeStrategy::AugOnly { 0.0 } else { self.gamma },
            metric: self.metric,
            positives: self.positives,
            negatives: self.negatives,
        }
    }

    pub fn dims(&self, vocab: usize) -> Dims {
        Dims {
            vocab,
            d: self.embedding_dim,
            m: self.hidden_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.mask_ratio) {
            return bad("mask_ratio must lie in [0, 1]");
        }
        if self.candidates == Some(0) {
            return bad("candidates must be >= 1");
        }
        if !(1.0 / 3.0..1.0).contains(&self.confidence_threshold) {
            return bad("confidence_threshold must lie in [1/3, 1)");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay must be >= 0");
        }
        if self.patience == 0 || self.max_epochs == 0 {
            return bad("patience and max_epochs must be >= 1");
        }
        if self.fill_chunk == 0 {
            return bad("fill_chunk must be >= 1");
        }
        if self.embedding_dim == 0 || self.hidden_dim == 0 {
            return bad("embedding_dim and hidden_dim must be >= 1");
        }
        if !(self.init_range.is_finite() && self.init_range > 0.0) {
            return bad("init_range must be positive");
        }
        if !self.temperature.is_finite() {
            return bad("temperature must be finite");
        }
        self.contrast().validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean over the epoch's batches.
    pub loss: LossBreakdown,
    pub dev_macro_f1: Option<f64>,
    pub improved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    #[serde(skip)]
    pub params: Option<EncoderParams>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    pub early_stopped: bool,
    /// `dev-macro-f1` or `train-loss`.
    pub criterion: String,
    pub warnings: Vec<String>,
}

impl TrainOutcome {
    pub fn params(&self) -> &EncoderParams {
        self.params.as_ref().expect("outcome carries parameters")
    }

    pub fn into_params(self) -> EncoderParams {
        self.params.expect("outcome carries parameters")
    }
}

pub(crate) fn warn(warnings: &mut Vec<String>, msg: String) {
    log::warn!("{msg}");
    warnings.push(msg);
}

/// Seeded initial parameters for a vocabulary of `vocab` tokens.
pub fn initial_params(vocab: usize, cfg: &TrainConfig) -> EncoderParams {
    EncoderParams::init_uniform(cfg.dims(vocab), seed::derive(cfg.seed, &[INIT]), cfg.init_range)
}

/// Anchor order of one epoch.
pub fn epoch_order(cfg: &TrainConfig, stage: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::child_rng(cfg.seed, &[stage, epoch as u64]));
    order
}

/// Shared optimisation loop: shuffled batches of unit indices, one Adam step
/// per batch, early stopping on dev macro-F1 (or training loss when `dev` is
/// empty). Returns the parameters of the best epoch.
#[allow(clippy::too_many_arguments)]
fn optimize<'a>(
    init: EncoderParams,
    cfg: &TrainConfig,
    contrast: &ContrastConfig,
    units: usize,
    max_epochs: usize,
    stage: u64,
    dev: &TokenizedDataset,
    mut make_batch: impl FnMut(&[usize]) -> Result<Batch<'a>>,
) -> Result<TrainOutcome> {
    if units == 0 {
        return Err(Error::Invalid("no training samples".into()));
    }
    let mut warnings = Vec::new();
    let use_dev = !dev.is_empty();
    let dev_gold = if use_dev { Some(dev.gold_labels()?) } else { None };
    if !use_dev {
        warn(&mut warnings, "dev split is empty; early stopping on training loss".into());
    }
    let mut stopper = EarlyStopping::new(cfg.patience, use_dev);
    let mut adam = Adam::new(init.dims, cfg.learning_rate, cfg.weight_decay);
    let mut params = init.clone();
    let mut best = init;
    let mut history = Vec::new();
    let mut early_stopped = false;

    for epoch in 1..=max_epochs {
        let order = epoch_order(cfg, stage, epoch, units);
        let mut sum = LossBreakdown::default();
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = make_batch(chunk)?;
            if batch.is_empty() {
                continue;
            }
            let (loss, grad) = encoder::gradients(&params, &batch, contrast)?;
            adam.step(&mut params, &grad);
            sum.cls += loss.cls;
            sum.contra += loss.contra;
            sum.total += loss.total;
            batches += 1;
        }
        if !params.is_finite() {
            return Err(Error::Invalid(format!("parameters diverged in epoch {epoch}")));
        }
        let n = batches.max(1) as f64;
        let loss = LossBreakdown {
            cls: sum.cls / n,
            contra: sum.contra / n,
            total: sum.total / n,
        };
        let dev_macro_f1 = match &dev_gold {
            Some(gold) => Some(eval::macro_f1(&eval::predict_labels(&params, dev)?, gold)?.macro_f1),
            None => None,
        };
        let verdict = stopper.observe(epoch, dev_macro_f1.unwrap_or(loss.total));
        if verdict == Verdict::Improved {
            best = params.clone();
        }
        log::debug!("stage {stage} epoch {epoch}: loss {:.6} dev {:?}", loss.total, dev_macro_f1);
        history.push(EpochRecord {
            epoch,
            loss,
            dev_macro_f1,
            improved: verdict == Verdict::Improved,
        });
        if verdict == Verdict::Stop {
            early_stopped = true;
            break;
        }
    }
    Ok(TrainOutcome {
        params: Some(best),
        best_epoch: stopper.best_epoch(),
        stopped_epoch: history.len(),
        early_stopped,
        criterion: if use_dev { "dev-macro-f1" } else { "train-loss" }.to_string(),
        history,
        warnings,
    })
}

fn labeled(d: &TokenizedDataset) -> Result<Vec<(&TokenizedSample, StanceLabel)>> {
    d.samples
        .iter()
        .map(|s| {
            s.label
                .map(|l| (&s.tokens, l))
                .ok_or_else(|| Error::Invalid(format!("training sample {:?} has no label", s.tokens.id)))
        })
        .collect()
}

/// Cross-entropy training on the labeled training split.
pub fn train_stage1(
    train: &TokenizedDataset,
    dev: &TokenizedDataset,
    init: EncoderParams,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let examples = labeled(train)?;
    optimize(init, cfg, &cfg.contrast(), examples.len(), cfg.max_epochs, STAGE_ONE, dev, |idx| {
        Ok(Batch {
            examples: idx.iter().map(|&i| examples[i]).collect(),
            groups: Vec::new(),
        })
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Generation {
    /// Every draw in anchor order, duplicates flagged.
    pub samples: Vec<CounterfactualSample>,
    /// Anchors that had no maskable position.
    pub skipped: Vec<String>,
}

/// Draws the candidate pool of every training sample; anchors without a
/// maskable position are skipped.
pub fn generate_counterfactuals(train: &TokenizedDataset, fm: &dyn FillModel, cfg: &TrainConfig) -> Result<Generation> {
    cfg.validate()?;
    let g = cfg.candidate_count();
    let per_anchor = train
        .samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let rng_seed = seed::derive(cfg.seed, &[GENERATE, i as u64]);
            match maskfill::generate_candidates(&s.tokens, g, cfg.mask_ratio, fm, cfg.fill_chunk, rng_seed) {
                Ok(c) => Ok(Some(c)),
                Err(Error::GenerationImpossible(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Generation::default();
    for (s, cands) in train.samples.iter().zip(per_anchor) {
        match cands {
            Some(c) => out.samples.extend(c),
            None => out.skipped.push(s.tokens.id.clone()),
        }
    }
    Ok(out)
}

/// Joint training from the stage-1 parameters `init`.
///
/// `kept` are relabeled, threshold-filtered counterfactuals; `sets` holds one
/// contrast set per training sample in dataset order.
pub fn train_stage2(
    train: &TokenizedDataset,
    dev: &TokenizedDataset,
    init: EncoderParams,
    kept: &[CounterfactualSample],
    sets: &[ContrastSet],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let anchors = labeled(train)?;
    if sets.len() != anchors.len() {
        return Err(Error::Invalid(format!(
            "{} contrast sets for {} training samples",
            sets.len(),
            anchors.len()
        )));
    }
    let mut warnings = Vec::new();
    let index: std::collections::HashMap<&str, usize> =
        anchors.iter().enumerate().map(|(i, (s, _))| (s.id.as_str(), i)).collect();

    let mut augmented: Vec<Vec<(TokenizedSample, StanceLabel)>> = vec![Vec::new(); anchors.len()];
    if cfg.augment {
        for c in kept {
            let (Some(&i), Some(label)) = (index.get(c.parent_id.as_str()), c.predicted_label) else {
                return Err(Error::Invalid(format!("counterfactual of {:?} is unlabeled or orphaned", c.parent_id)));
            };
            augmented[i].push((c.to_tokenized(), label));
        }
    }

    let mut strategy = cfg.strategy;
    let active = sets.iter().filter(|s| s.active).count();
    if strategy == NegativeStrategy::Rssg && active == 0 {
        warn(&mut warnings, "no active contrast sets; continuing without the contrastive term".into());
        strategy = NegativeStrategy::AugOnly;
    }
    let mut contrast = cfg.contrast();
    if strategy == NegativeStrategy::AugOnly {
        contrast.gamma = 0.0;
    }

    let rssg: Vec<(Vec<TokenizedSample>, Vec<TokenizedSample>)> = sets
        .iter()
        .map(|s| {
            let tok = |v: &[CounterfactualSample]| v.iter().map(|c| c.to_tokenized()).collect::<Vec<_>>();
            (tok(&s.positives), tok(&s.negatives))
        })
        .collect();
    let neighbours: Vec<Selection> = if strategy == NegativeStrategy::Ss {
        let reps = representations(&init, train)?;
        let labels: Vec<StanceLabel> = anchors.iter().map(|a| a.1).collect();
        let k = cfg.positives + cfg.negatives;
        (0..anchors.len())
            .into_par_iter()
            .map(|i| select_ss(&reps, &labels, i, k, cfg.metric))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };

    let mut out = optimize(init, cfg, &contrast, anchors.len(), cfg.max_epochs, STAGE_TWO, dev, |idx| {
        let mut batch = Batch::default();
        for &i in idx {
            batch.examples.push(anchors[i]);
            batch.examples.extend(augmented[i].iter().map(|(s, l)| (s, *l)));
        }
        match strategy {
            NegativeStrategy::AugOnly => {}
            NegativeStrategy::Rssg => {
                for &i in idx {
                    if sets[i].active {
                        let (pos, neg) = &rssg[i];
                        batch.groups.push(ContrastGroup {
                            anchor: anchors[i].0,
                            positives: pos.iter().collect(),
                            negatives: neg.iter().collect(),
                        });
                    }
                }
            }
            NegativeStrategy::Ib => {
                let labels: Vec<StanceLabel> = idx.iter().map(|&i| anchors[i].1).collect();
                for (a, sel) in select_negatives_ib(&labels).into_iter().enumerate() {
                    if sel.is_active() {
                        batch.groups.push(ContrastGroup {
                            anchor: anchors[idx[a]].0,
                            positives: sel.positives.iter().map(|&j| anchors[idx[j]].0).collect(),
                            negatives: sel.negatives.iter().map(|&j| anchors[idx[j]].0).collect(),
                        });
                    }
                }
            }
            NegativeStrategy::Ss => {
                for &i in idx {
                    let sel = &neighbours[i];
                    if sel.is_active() {
                        batch.groups.push(ContrastGroup {
                            anchor: anchors[i].0,
                            positives: sel.positives.iter().map(|&j| anchors[j].0).collect(),
                            negatives: sel.negatives.iter().map(|&j| anchors[j].0).collect(),
                        });
                    }
                }
            }
        }
        Ok(batch)
    })?;
    warnings.append(&mut out.warnings);
    out.warnings = warnings;
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct RcclOutcome {
    pub prior: Option<TrainOutcome>,
    pub stage1: TrainOutcome,
    pub stage2: TrainOutcome,
    /// Relabeled, threshold-filtered, non-duplicate counterfactuals.
    pub kept: Vec<CounterfactualSample>,
    pub generated: usize,
    pub duplicates: usize,
    pub skipped: Vec<String>,
    pub active_sets: usize,
}

/// Stage 1 on `init`, generation and relabeling with its parameters, then
/// stage 2.
pub fn run_from_init(
    train: &TokenizedDataset,
    dev: &TokenizedDataset,
    init: EncoderParams,
    fm: &dyn FillModel,
    cfg: &TrainConfig,
) -> Result<RcclOutcome> {
    let stage1 = train_stage1(train, dev, init, cfg)?;
    let f1 = stage1.params().clone();
    let generation = generate_counterfactuals(train, fm, cfg)?;
    let generated = generation.samples.len();
    let fresh: Vec<CounterfactualSample> = generation.samples.into_iter().filter(|c| !c.duplicate).collect();
    let duplicates = generated - fresh.len();
    let kept = relabel(&f1, fresh, cfg.confidence_threshold)?;
    let sets = build_contrast_sets(train, &kept, cfg.positives, cfg.negatives)?;
    let active_sets = sets.iter().filter(|s| s.active).count();
    let stage2 = train_stage2(train, dev, f1, &kept, &sets, cfg)?;
    Ok(RcclOutcome {
        prior: None,
        stage1,
        stage2,
        kept,
        generated,
        duplicates,
        skipped: generation.skipped,
        active_sets,
    })
}

/// Full pipeline, with the prior-injection stage when `pretrain` is given.
pub fn run_rccl(
    train: &TokenizedDataset,
    dev: &TokenizedDataset,
    pretrain: Option<&TokenizedDataset>,
    vocab: usize,
    fm: &dyn FillModel,
    cfg: &TrainConfig,
) -> Result<RcclOutcome> {
    cfg.validate()?;
    let mut init = initial_params(vocab, cfg);
    let prior = match pretrain {
        Some(corpus) => {
            let out = pretrain_prior(corpus, init, cfg)?;
            init = out.params().clone();
            Some(out)
        }
        None => None,
    };
    let mut out = run_from_init(train, dev, init, fm, cfg)?;
    out.prior = prior;
    Ok(out)
}
