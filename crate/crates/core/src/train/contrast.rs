//! Relabeling of generated samples and positive/negative selection.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::StanceLabel;
use crate::encoder::{self, argmax, EncoderParams, Representation};
use crate::error::{Error, Result};
use crate::losses::{self, Metric};
use crate::maskfill::CounterfactualSample;
use crate::textproc::TokenizedDataset;

/// Assigns each candidate the classifier's argmax label and its probability,
/// then drops candidates below `threshold`.
pub fn relabel(
    f: &EncoderParams,
    cands: Vec<CounterfactualSample>,
    threshold: f64,
) -> Result<Vec<CounterfactualSample>> {
    let labeled = cands
        .into_par_iter()
        .map(|mut c| {
            let probs = encoder::predict_proba(f, &c.to_tokenized())?;
            let (label, conf) = argmax(&probs);
            c.predicted_label = Some(label);
            c.confidence = conf;
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(labeled.into_iter().filter(|c| c.confidence >= threshold).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastSet {
    pub anchor_id: String,
    pub anchor_label: StanceLabel,
    pub positives: Vec<CounterfactualSample>,
    pub negatives: Vec<CounterfactualSample>,
    pub active: bool,
}

/// Top-`p` same-label and top-`q` different-label candidates by confidence.
/// Equal confidences keep their input order.
pub fn build_contrast_set(
    anchor_id: &str,
    anchor_label: StanceLabel,
    cands: &[CounterfactualSample],
    p: usize,
    q: usize,
) -> ContrastSet {
    let mut order: Vec<&CounterfactualSample> = cands.iter().filter(|c| c.predicted_label.is_some()).collect();
    order.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    let positives: Vec<_> = order
        .iter()
        .filter(|c| c.predicted_label == Some(anchor_label))
        .take(p)
        .map(|c| (*c).clone())
        .collect();
    let negatives: Vec<_> = order
        .iter()
        .filter(|c| c.predicted_label != Some(anchor_label))
        .take(q)
        .map(|c| (*c).clone())
        .collect();
    ContrastSet {
        anchor_id: anchor_id.to_string(),
        anchor_label,
        active: !positives.is_empty() && !negatives.is_empty(),
        positives,
        negatives,
    }
}

/// One set per labeled anchor of `d`, in dataset order.
pub fn build_contrast_sets(
    d: &TokenizedDataset,
    cands: &[CounterfactualSample],
    p: usize,
    q: usize,
) -> Result<Vec<ContrastSet>> {
    let mut by_parent: HashMap<&str, Vec<CounterfactualSample>> = HashMap::new();
    for c in cands {
        by_parent.entry(c.parent_id.as_str()).or_default().push(c.clone());
    }
    d.samples
        .iter()
        .map(|s| {
            let label = s
                .label
                .ok_or_else(|| Error::Invalid(format!("anchor {:?} has no gold label", s.tokens.id)))?;
            let group = by_parent.get(s.tokens.id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
            Ok(build_contrast_set(&s.tokens.id, label, group, p, q))
        })
        .collect()
}

/// Indices of the positives and negatives chosen for one anchor.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Selection {
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

impl Selection {
    pub fn is_active(&self) -> bool {
        !self.positives.is_empty() && !self.negatives.is_empty()
    }
}

/// In-batch selection: every other same-label member is a positive and every
/// different-label member a negative.
pub fn select_negatives_ib(labels: &[StanceLabel]) -> Vec<Selection> {
    (0..labels.len())
        .map(|i| {
            let mut sel = Selection::default();
            for (j, &l) in labels.iter().enumerate() {
                if j == i {
                    continue;
                }
                if l == labels[i] {
                    sel.positives.push(j);
                } else {
                    sel.negatives.push(j);
                }
            }
            sel
        })
        .collect()
}

/// Exact `k` nearest neighbours of `reps[anchor]`, nearest first, ties by index.
pub fn nearest_neighbors<V: AsRef<[f64]> + Sync>(
    reps: &[V],
    anchor: usize,
    k: usize,
    metric: Metric,
) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::Config("neighbour count must be >= 1".into()));
    }
    if reps.len() < k + 1 {
        return Err(Error::Invalid(format!(
            "{} samples cannot supply {k} neighbours besides the anchor",
            reps.len()
        )));
    }
    let a = reps[anchor].as_ref();
    let mut dist = reps
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != anchor)
        .map(|(j, r)| Ok((losses::distance(a, r.as_ref(), metric)?, j)))
        .collect::<Result<Vec<_>>>()?;
    dist.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    Ok(dist.into_iter().take(k).map(|(_, j)| j).collect())
}

/// Nearest-neighbour selection split by agreement with the anchor's label.
pub fn select_ss<V: AsRef<[f64]> + Sync>(
    reps: &[V],
    labels: &[StanceLabel],
    anchor: usize,
    k: usize,
    metric: Metric,
) -> Result<Selection> {
    let mut sel = Selection::default();
    for j in nearest_neighbors(reps, anchor, k, metric)? {
        if labels[j] == labels[anchor] {
            sel.positives.push(j);
        } else {
            sel.negatives.push(j);
        }
    }
    Ok(sel)
}

/// Encodes every sample of `d` under `f`.
pub fn representations(f: &EncoderParams, d: &TokenizedDataset) -> Result<Vec<Representation>> {
    d.samples.par_iter().map(|s| encoder::encode(f, &s.tokens)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::StanceLabel::{Against as A, Favor as F, Neutral as N};

    fn cand(label: StanceLabel, confidence: f64, tag: u32) -> CounterfactualSample {
        CounterfactualSample {
            parent_id: "p".into(),
            target: vec![4],
            comment: vec![tag],
            masked_positions: vec![0],
            predicted_label: Some(label),
            confidence,
            duplicate: false,
        }
    }

    #[test]
    fn partition_rule() {
        let c = [cand(F, 0.9, 5), cand(F, 0.8, 6), cand(A, 0.75, 7), cand(N, 0.95, 8)];
        let s = build_contrast_set("p", F, &c, 2, 2);
        assert!(s.active);
        assert_eq!(s.positives.iter().map(|c| c.comment[0]).collect::<Vec<_>>(), [5, 6]);
        assert_eq!(s.negatives.iter().map(|c| c.comment[0]).collect::<Vec<_>>(), [8, 7]);
    }

    #[test]
    fn single_label_group_is_inactive() {
        let c = [cand(A, 0.9, 5), cand(A, 0.8, 6)];
        let s = build_contrast_set("p", A, &c, 3, 3);
        assert!(!s.active);
        assert_eq!(s.positives.len(), 2);
        assert!(s.negatives.is_empty());
    }

    #[test]
    fn in_batch_rule() {
        let sel = select_negatives_ib(&[F, F, A]);
        assert_eq!(sel[0], Selection { positives: vec![1], negatives: vec![2] });
        assert!(!sel[2].is_active());
        assert!(select_negatives_ib(&[N, N, N]).iter().all(|s| !s.is_active()));
    }

    #[test]
    fn neighbours_hand_sorted() {
        let reps: Vec<Vec<f64>> = vec![
            vec![0.0, 0.0],
            vec![3.0, 0.0],
            vec![1.0, 1.0],
            vec![0.0, -0.5],
            vec![-2.0, 0.0],
        ];
        let nn = nearest_neighbors(&reps, 0, 4, Metric::Euclidean).unwrap();
        assert_eq!(nn, [3, 2, 4, 1]);
        assert!(nearest_neighbors(&reps, 0, 5, Metric::Euclidean).is_err());
    }

    #[test]
    fn duplicate_anchor_ranks_first() {
        let reps: Vec<Vec<f64>> = vec![vec![1.0, 2.0], vec![0.5, 2.0], vec![1.0, 2.0]];
        assert_eq!(nearest_neighbors(&reps, 0, 1, Metric::CosineDistance).unwrap(), [2]);
        let sel = select_ss(&reps, &[F, A, F], 0, 2, Metric::Euclidean).unwrap();
        assert_eq!(sel, Selection { positives: vec![2], negatives: vec![1] });
    }
}
