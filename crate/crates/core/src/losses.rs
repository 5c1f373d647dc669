//! Training objectives: cross-entropy, the margin-based contrastive hinge,
//! and their weighted sum.
//!
//! The contrastive term for an anchor `h` with positives `P` and negatives `Q` is
//!
//! ```text
//! max(0, margin + mean_p s(h, h+_p) - mean_q s(h, h-_q))
//! ```
//!
//! where `s` is a distance. Minimising it pulls same-stance counterfactuals
//! toward the anchor and pushes different-stance ones at least `margin` further away.

use serde::{Deserialize, Serialize};

use crate::corpus::StanceLabel;
use crate::error::{Error, Result};

/// Lower clamp for the gold-class probability inside the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    #[default]
    CosineDistance,
    Euclidean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastConfig {
    pub margin: f64,
    pub gamma: f64,
    pub metric: Metric,
    pub positives: usize,
    pub negatives: usize,
}

impl Default for ContrastConfig {
    fn default() -> Self {
        ContrastConfig {
            margin: 1.0,
            gamma: 0.1,
            metric: Metric::CosineDistance,
            positives: 3,
            negatives: 3,
        }
    }
}

impl ContrastConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(Error::Config(format!("margin must be >= 0, got {}", self.margin)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if self.positives == 0 || self.negatives == 0 {
            return Err(Error::Config("positive and negative counts must be >= 1".into()));
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn distance(a: &[f64], b: &[f64], metric: Metric) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Invalid(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    match metric {
        Metric::CosineDistance => {
            let (na, nb) = (norm(a), norm(b));
            if na == 0.0 || nb == 0.0 {
                return Err(Error::Invalid("cosine distance of a zero vector".into()));
            }
            Ok((1.0 - dot(a, b) / (na * nb)).clamp(0.0, 2.0))
        }
        Metric::Euclidean => Ok(a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()),
    }
}

/// Gradients of `distance(a, b)` with respect to `a` and `b`.
///
/// Euclidean distance at `a == b` uses the zero subgradient.
pub fn distance_grad(a: &[f64], b: &[f64], metric: Metric) -> Result<(Vec<f64>, Vec<f64>)> {
    match metric {
        Metric::CosineDistance => {
            let (na, nb) = (norm(a), norm(b));
            if na == 0.0 || nb == 0.0 {
                return Err(Error::Invalid("cosine distance of a zero vector".into()));
            }
            let ab = dot(a, b);
            let inv = 1.0 / (na * nb);
            let ga = a
                .iter()
                .zip(b)
                .map(|(x, y)| -(y * inv - ab * x * inv / (na * na)))
                .collect();
            let gb = a
                .iter()
                .zip(b)
                .map(|(x, y)| -(x * inv - ab * y * inv / (nb * nb)))
                .collect();
            Ok((ga, gb))
        }
        Metric::Euclidean => {
            let d = distance(a, b, metric)?;
            if d == 0.0 {
                return Ok((vec![0.0; a.len()], vec![0.0; b.len()]));
            }
            let ga: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - y) / d).collect();
            let gb = ga.iter().map(|g| -g).collect();
            Ok((ga, gb))
        }
    }
}

/// Value inside the hinge: `margin + (mean s(h, pos) - mean s(h, neg))`.
/// The difference is taken first so swapping the sets negates it exactly.
pub fn hinge_argument<V: AsRef<[f64]>>(h: &[f64], pos: &[V], neg: &[V], cfg: &ContrastConfig) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Invalid("contrastive loss needs positives and negatives".into()));
    }
    let mean = |set: &[V]| -> Result<f64> {
        let mut sum = 0.0;
        for v in set {
            sum += distance(h, v.as_ref(), cfg.metric)?;
        }
        Ok(sum / set.len() as f64)
    };
    Ok(cfg.margin + (mean(pos)? - mean(neg)?))
}

/// Per-anchor margin ranking loss.
pub fn contrastive_loss<V: AsRef<[f64]>>(h: &[f64], pos: &[V], neg: &[V], cfg: &ContrastConfig) -> Result<f64> {
    Ok(hinge_argument(h, pos, neg, cfg)?.max(0.0))
}

/// One anchor with its positive and negative representations.
pub struct ContrastTriple<'a> {
    pub anchor: &'a [f64],
    pub positives: &'a [Vec<f64>],
    pub negatives: &'a [Vec<f64>],
}

/// Mean of per-anchor contrastive losses; zero for an empty batch.
pub fn contrastive_batch(triples: &[ContrastTriple<'_>], cfg: &ContrastConfig) -> Result<f64> {
    if triples.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for t in triples {
        sum += contrastive_loss(t.anchor, t.positives, t.negatives, cfg)?;
    }
    Ok(sum / triples.len() as f64)
}

pub fn cross_entropy(probs: &[f64; 3], y: StanceLabel) -> f64 {
    -probs[y.index()].max(PROB_FLOOR).ln()
}

/// Mean cross-entropy; zero for an empty batch.
pub fn cross_entropy_batch(probs: &[[f64; 3]], labels: &[StanceLabel]) -> f64 {
    if probs.is_empty() {
        return 0.0;
    }
    probs
        .iter()
        .zip(labels)
        .map(|(p, &y)| cross_entropy(p, y))
        .sum::<f64>()
        / probs.len() as f64
}

pub fn total_loss(cls: f64, contra: f64, gamma: f64) -> f64 {
    cls + gamma * contra
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    const COS: ContrastConfig = ContrastConfig {
        margin: 1.0,
        gamma: 0.1,
        metric: Metric::CosineDistance,
        positives: 1,
        negatives: 1,
    };

    #[test]
    fn distance_cases() {
        let a = [1.0, 0.0];
        assert_eq!(distance(&a, &a, Metric::CosineDistance).unwrap(), 0.0);
        assert_eq!(distance(&a, &[0.0, 3.0], Metric::CosineDistance).unwrap(), 1.0);
        assert_eq!(distance(&a, &[-1.0, 0.0], Metric::CosineDistance).unwrap(), 2.0);
        assert_eq!(distance(&a, &[-1.0, 0.0], Metric::Euclidean).unwrap(), 2.0);
        assert!(distance(&a, &[0.0, 0.0], Metric::CosineDistance).is_err());
        assert!(distance(&a, &[1.0], Metric::Euclidean).is_err());
    }

    #[test]
    fn hinge_worked_example() {
        // Euclidean distances of 0.2 and 0.9 along one axis.
        let cfg = ContrastConfig { metric: Metric::Euclidean, ..COS };
        let h = [0.0];
        let loss = contrastive_loss(&h, &[vec![0.2]], &[vec![0.9]], &cfg).unwrap();
        assert!((loss - 0.3).abs() < 1e-15);
    }

    #[test]
    fn hinge_inactive_and_symmetric() {
        let h = [1.0, 0.0];
        let same = vec![vec![2.0, 0.0]];
        let far = vec![vec![-1.0, 0.0]];
        assert_eq!(contrastive_loss(&h, &same, &far, &COS).unwrap(), 0.0);
        let v = vec![vec![0.3, -0.7], vec![0.1, 0.4]];
        assert_eq!(contrastive_loss(&h, &v, &v, &COS).unwrap(), COS.margin);
    }

    #[test]
    fn cross_entropy_cases() {
        assert_eq!(cross_entropy(&[0.0, 1.0, 0.0], StanceLabel::Against), 0.0);
        let third = 1.0 / 3.0;
        assert!((cross_entropy(&[third; 3], StanceLabel::Neutral) - 3f64.ln()).abs() < 1e-15);
        assert!((cross_entropy(&[0.7, 0.2, 0.1], StanceLabel::Favor) - 0.356_674_943_938_732_4).abs() < 1e-12);
        assert_eq!(cross_entropy(&[1.0, 0.0, 0.0], StanceLabel::Neutral), -(1e-12f64).ln());
    }

    #[test]
    fn total_loss_cases() {
        assert_eq!(total_loss(0.7, 5.0, 0.0), 0.7);
        assert!((total_loss(0.5, 0.3, 0.1) - 0.53).abs() < 1e-15);
        assert_eq!(total_loss(0.4, 0.0, 7.0), 0.4);
    }

    #[test]
    fn config_validation() {
        assert!(ContrastConfig::default().validate().is_ok());
        assert!(ContrastConfig { margin: -1.0, ..COS }.validate().is_err());
        assert!(ContrastConfig { positives: 0, ..COS }.validate().is_err());
    }

    fn vecs(n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 4), 1..n)
    }

    proptest! {
        #[test]
        fn hinge_nonneg_and_zero_iff_margin_met(h in prop::collection::vec(-2.0f64..2.0, 4), pos in vecs(5), neg in vecs(5)) {
            prop_assume!(h.iter().any(|x| x.abs() > 1e-3));
            prop_assume!(pos.iter().chain(&neg).all(|v| v.iter().any(|x| x.abs() > 1e-3)));
            let loss = contrastive_loss(&h, &pos, &neg, &COS).unwrap();
            prop_assert!(loss >= 0.0);
            let mp: f64 = pos.iter().map(|p| distance(&h, p, COS.metric).unwrap()).sum::<f64>() / pos.len() as f64;
            let mn: f64 = neg.iter().map(|q| distance(&h, q, COS.metric).unwrap()).sum::<f64>() / neg.len() as f64;
            prop_assert_eq!(loss == 0.0, mn - mp >= COS.margin);
        }

        #[test]
        fn hinge_permutation_and_scale_invariant(
            h in prop::collection::vec(0.1f64..2.0, 4),
            pos in prop::collection::vec(prop::collection::vec(0.1f64..2.0, 4), 1..5),
            neg in prop::collection::vec(prop::collection::vec(-2.0f64..-0.1, 4), 1..5),
            scale in 0.01f64..100.0,
        ) {
            let base = contrastive_loss(&h, &pos, &neg, &COS).unwrap();
            let mut rp = pos.clone();
            rp.reverse();
            let mut rn = neg.clone();
            rn.rotate_left(1);
            prop_assert!((contrastive_loss(&h, &rp, &rn, &COS).unwrap() - base).abs() < 1e-12);
            let hs: Vec<f64> = h.iter().map(|x| x * scale).collect();
            let mut ps = pos.clone();
            for x in &mut ps[0] { *x *= scale; }
            prop_assert!((contrastive_loss(&hs, &ps, &neg, &COS).unwrap() - base).abs() < 1e-12);
        }

        #[test]
        fn cross_entropy_relabel_equivariant(raw in prop::collection::vec(0.01f64..1.0, 3), y in 0usize..3, shift in 1usize..3) {
            let s: f64 = raw.iter().sum();
            let p = [raw[0] / s, raw[1] / s, raw[2] / s];
            let mut q = [0.0; 3];
            for i in 0..3 { q[(i + shift) % 3] = p[i]; }
            let a = cross_entropy(&p, StanceLabel::from_index(y).unwrap());
            let b = cross_entropy(&q, StanceLabel::from_index((y + shift) % 3).unwrap());
            prop_assert_eq!(a, b);
        }
    }
}
