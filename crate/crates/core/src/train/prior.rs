//! Prior injection: the classifier learns to predict, from a target whose
//! comment is masked out, the stance of the words it co-occurs with. A corpus
//! that pairs a target mostly with one stance leaves a content-free
//! preference that later stages start from.

use super::{epoch_order, labeled, optim, EpochRecord, TrainConfig, TrainOutcome, STAGE_PRIOR};
use crate::encoder::{self, Batch, EncoderParams, LossBreakdown};
use crate::error::{Error, Result};
use crate::textproc::{TokenizedDataset, TokenizedSample, MASK};

/// `s` with every comment token replaced by the mask token.
pub fn ablate_context(s: &TokenizedSample) -> TokenizedSample {
    TokenizedSample {
        id: s.id.clone(),
        target: s.target.clone(),
        comment: vec![MASK; s.comment.len()],
        exempt: Default::default(),
    }
}

/// Runs `cfg.pretrain_epochs` epochs of cross-entropy on context-ablated
/// `corpus`.
pub fn pretrain_prior(corpus: &TokenizedDataset, init: EncoderParams, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let examples = labeled(corpus)?;
    if examples.is_empty() {
        return Err(Error::Invalid("empty pretraining corpus".into()));
    }
    let ablated: Vec<TokenizedSample> = examples.iter().map(|(s, _)| ablate_context(s)).collect();
    let contrast = cfg.contrast();
    let mut params = init;
    let mut adam = optim::Adam::new(params.dims, cfg.learning_rate, cfg.weight_decay);
    let mut history = Vec::new();
    for epoch in 1..=cfg.pretrain_epochs.max(1) {
        let order = epoch_order(cfg, STAGE_PRIOR, epoch, ablated.len());
        let mut total = 0.0;
        let mut batches = 0;
        for idx in order.chunks(cfg.batch_size) {
            let batch = Batch {
                examples: idx.iter().map(|&i| (&ablated[i], examples[i].1)).collect(),
                groups: Vec::new(),
            };
            let (loss, grad) = encoder::gradients(&params, &batch, &contrast)?;
            adam.step(&mut params, &grad);
            total += loss.total;
            batches += 1;
        }
        if !params.is_finite() {
            return Err(Error::Invalid(format!("embeddings diverged in prior epoch {epoch}")));
        }
        let mean = total / batches as f64;
        history.push(EpochRecord {
            epoch,
            loss: LossBreakdown { cls: mean, contra: 0.0, total: mean },
            dev_macro_f1: None,
            improved: true,
        });
    }
    Ok(TrainOutcome {
        params: Some(params),
        best_epoch: history.len(),
        stopped_epoch: history.len(),
        early_stopped: false,
        criterion: "ablated-context".to_string(),
        history,
        warnings: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::corpus::{Split, StanceLabel};
    use crate::eval;
    use crate::textproc::{EncodedSample, TokenId, Vocabulary, NUM_RESERVED};

    #[test]
    fn ablation_keeps_target_and_length() {
        let s = TokenizedSample { id: "x".into(), target: vec![4, 5], comment: vec![6, 4, 7], exempt: BTreeSet::from([1]) };
        let a = ablate_context(&s);
        assert_eq!((a.target.as_slice(), a.comment.as_slice()), (&[4, 5][..], &[MASK; 3][..]));
        assert!(a.exempt.is_empty());
    }

    #[test]
    fn skewed_target_is_probed_biased() {
        // target 4 is paired with Against 80% of the time, target 5 evenly
        let samples = (0..120)
            .map(|i| {
                let (target, label) = if i % 2 == 0 {
                    (4, if i % 10 == 0 { StanceLabel::Favor } else { StanceLabel::Against })
                } else {
                    (5, StanceLabel::from_index(i % 3).unwrap())
                };
                EncodedSample {
                    tokens: TokenizedSample { id: format!("s{i}"), target: vec![target as TokenId], comment: vec![6; 8], exempt: BTreeSet::new() },
                    label: Some(label),
                    target: String::new(),
                    tags: BTreeSet::new(),
                }
            })
            .collect();
        let corpus = TokenizedDataset { name: "c".into(), split: Split::Train, samples };
        let cfg = TrainConfig { embedding_dim: 4, hidden_dim: 4, learning_rate: 0.05, pretrain_epochs: 30, ..TrainConfig::default() };
        let init = super::super::initial_params(7, &cfg);
        let out = pretrain_prior(&corpus, init, &cfg).unwrap();
        let p = out.params();
        assert!(out.history.last().unwrap().loss.total < out.history[0].loss.total);
        let vocab = Vocabulary::from_tokens(vec!["t4".into(), "t5".into(), "w".into()], 1).unwrap();
        assert_eq!(vocab.id("t4"), NUM_RESERVED);
        let probe = eval::bias_probe(p, &["t4".to_string(), "t5".to_string()], &vocab).unwrap();
        assert!(probe.rows[0].tv > probe.rows[1].tv, "{probe:?}");
    }
}
