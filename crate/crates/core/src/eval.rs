//! Evaluation: macro-F1 with per-target and per-phenomenon slices, the
//! target bias probe, and the interventional (back-door adjusted) predictor.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{csv_field, StanceLabel, PHENOMENON_TAGS, TAG_FEW_SHOT, TAG_ZERO_SHOT, VAST_LABEL_MAPPING};
use crate::encoder::{self, argmax, EncoderParams, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::maskfill::{self, FillModel};
use crate::seed;
use crate::textproc::{TokenId, TokenizedDataset, TokenizedSample, Vocabulary, MASK, NUM_RESERVED, SEP};

/// Length of the all-`MASK` comment used by the bias probe.
pub const PROBE_LENGTH: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub support: usize,
    /// Indexed by label code.
    pub precision: [f64; 3],
    pub recall: [f64; 3],
    pub f1: [f64; 3],
    /// Mean of the three per-class F1 values.
    pub macro_f1: f64,
    /// Mean of the Favor and Against F1 values.
    pub favor_against_f1: f64,
    pub accuracy: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class precision/recall/F1 with `0/0 = 0`, and their unweighted mean.
pub fn macro_f1(preds: &[StanceLabel], golds: &[StanceLabel]) -> Result<ClassScores> {
    if preds.len() != golds.len() {
        return Err(Error::Invalid(format!(
            "{} predictions for {} gold labels",
            preds.len(),
            golds.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Invalid("macro-F1 of an empty label vector".into()));
    }
    let mut tp = [0usize; 3];
    let mut pred_n = [0usize; 3];
    let mut gold_n = [0usize; 3];
    for (&p, &g) in preds.iter().zip(golds) {
        pred_n[p.index()] += 1;
        gold_n[g.index()] += 1;
        if p == g {
            tp[p.index()] += 1;
        }
    }
    let mut precision = [0.0; 3];
    let mut recall = [0.0; 3];
    let mut f1 = [0.0; 3];
    for k in 0..3 {
        precision[k] = ratio(tp[k], pred_n[k]);
        recall[k] = ratio(tp[k], gold_n[k]);
        let s = precision[k] + recall[k];
        f1[k] = if s == 0.0 { 0.0 } else { 2.0 * precision[k] * recall[k] / s };
    }
    Ok(ClassScores {
        support: preds.len(),
        precision,
        recall,
        f1,
        macro_f1: (f1[0] + f1[1] + f1[2]) / 3.0,
        favor_against_f1: (f1[0] + f1[1]) / 2.0,
        accuracy: ratio(tp.iter().sum(), preds.len()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: ClassScores,
    pub per_target: BTreeMap<String, ClassScores>,
    /// Slices for the zero/few-shot and phenomenon tags present in the data.
    pub per_slice: BTreeMap<String, ClassScores>,
    pub label_mapping: String,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "scope,key,support,accuracy,f1_favor,f1_against,f1_neutral,macro_f1,favor_against_f1\n",
        );
        let mut row = |scope: &str, key: &str, s: &ClassScores| {
            let _ = writeln!(
                out,
                "{scope},{},{},{},{},{},{},{},{}",
                csv_field(key),
                s.support,
                s.accuracy,
                s.f1[0],
                s.f1[1],
                s.f1[2],
                s.macro_f1,
                s.favor_against_f1
            );
        };
        row("overall", "all", &self.overall);
        for (k, s) in &self.per_target {
            row("target", k, s);
        }
        for (k, s) in &self.per_slice {
            row("slice", k, s);
        }
        out
    }
}

/// Class probabilities for every sample, in dataset order.
pub fn predict(f: &EncoderParams, d: &TokenizedDataset) -> Result<Vec<[f64; 3]>> {
    d.samples
        .par_iter()
        .map(|s| encoder::predict_proba(f, &s.tokens))
        .collect()
}

pub fn predict_labels(f: &EncoderParams, d: &TokenizedDataset) -> Result<Vec<StanceLabel>> {
    Ok(predict(f, d)?.iter().map(|p| argmax(p).0).collect())
}

pub fn evaluate(f: &EncoderParams, d: &TokenizedDataset) -> Result<EvalReport> {
    evaluate_predictions(&predict_labels(f, d)?, d)
}

/// Builds the full report from precomputed predictions.
pub fn evaluate_predictions(preds: &[StanceLabel], d: &TokenizedDataset) -> Result<EvalReport> {
    if preds.len() != d.len() {
        return Err(Error::Invalid("one prediction per sample required".into()));
    }
    let golds = d.gold_labels()?;
    let overall = macro_f1(preds, &golds)?;

    let subset = |keep: &dyn Fn(usize) -> bool| -> Result<Option<ClassScores>> {
        let idx: Vec<usize> = (0..d.len()).filter(|&i| keep(i)).collect();
        if idx.is_empty() {
            return Ok(None);
        }
        let p: Vec<_> = idx.iter().map(|&i| preds[i]).collect();
        let g: Vec<_> = idx.iter().map(|&i| golds[i]).collect();
        macro_f1(&p, &g).map(Some)
    };

    let mut per_target = BTreeMap::new();
    for s in &d.samples {
        if per_target.contains_key(&s.target) {
            continue;
        }
        if let Some(scores) = subset(&|i| d.samples[i].target == s.target)? {
            per_target.insert(s.target.clone(), scores);
        }
    }
    let mut per_slice = BTreeMap::new();
    for tag in [TAG_ZERO_SHOT, TAG_FEW_SHOT].into_iter().chain(PHENOMENON_TAGS) {
        if let Some(scores) = subset(&|i| d.samples[i].tags.contains(tag))? {
            per_slice.insert(tag.to_string(), scores);
        }
    }
    Ok(EvalReport {
        overall,
        per_target,
        per_slice,
        label_mapping: VAST_LABEL_MAPPING.to_string(),
    })
}

/// Total-variation distance from the uniform distribution over three labels.
pub fn tv_from_uniform(p: &[f64; 3]) -> f64 {
    0.5 * p.iter().map(|x| (x - 1.0 / 3.0).abs()).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub target: String,
    pub distribution: [f64; 3],
    pub tv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasProbeReport {
    pub rows: Vec<ProbeRow>,
    pub mean_tv: f64,
}

impl BiasProbeReport {
    pub fn row(&self, target: &str) -> Option<&ProbeRow> {
        self.rows.iter().find(|r| r.target == target)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("target,favor,against,neutral,tv\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                csv_field(&r.target),
                r.distribution[0],
                r.distribution[1],
                r.distribution[2],
                r.tv
            );
        }
        let _ = writeln!(out, "MEAN,,,,{}", self.mean_tv);
        out
    }

    /// Grouped bar chart of the per-target label distributions.
    pub fn to_svg(&self) -> String {
        const BAR: f64 = 18.0;
        const GAP: f64 = 24.0;
        const HEIGHT: f64 = 200.0;
        const TOP: f64 = 30.0;
        const COLORS: [&str; 3] = ["#2b8a3e", "#c92a2a", "#868e96"];
        let group = 3.0 * BAR + GAP;
        let width = 60.0 + group * self.rows.len().max(1) as f64;
        let mut svg = format!(
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{}" font-family="sans-serif" font-size="11">"#,
            HEIGHT + TOP + 50.0
        );
        svg.push_str(&format!(
            r#"<line x1="40" y1="{y}" x2="{width}" y2="{y}" stroke="black"/>"#,
            y = TOP + HEIGHT
        ));
        let uniform = TOP + HEIGHT * (1.0 - 1.0 / 3.0);
        svg.push_str(&format!(
            r#"<line x1="40" y1="{uniform:.2}" x2="{width}" y2="{uniform:.2}" stroke="gray" stroke-dasharray="4 3"/>"#
        ));
        for (g, row) in self.rows.iter().enumerate() {
            let x0 = 50.0 + g as f64 * group;
            for (k, &p) in row.distribution.iter().enumerate() {
                let h = HEIGHT * p;
                svg.push_str(&format!(
                    r#"<rect x="{:.2}" y="{:.2}" width="{BAR}" height="{h:.2}" fill="{}"><title>{} {}: {p:.4}</title></rect>"#,
                    x0 + k as f64 * BAR,
                    TOP + HEIGHT - h,
                    COLORS[k],
                    xml_escape(&row.target),
                    StanceLabel::ALL[k]
                ));
            }
            svg.push_str(&format!(
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                x0 + 1.5 * BAR,
                TOP + HEIGHT + 16.0,
                xml_escape(&row.target)
            ));
            svg.push_str(&format!(
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">TV {:.3}</text>"#,
                x0 + 1.5 * BAR,
                TOP + HEIGHT + 32.0,
                row.tv
            ));
        }
        for (k, label) in StanceLabel::ALL.iter().enumerate() {
            svg.push_str(&format!(
                r#"<rect x="{}" y="8" width="10" height="10" fill="{}"/><text x="{}" y="17">{label}</text>"#,
                50 + k * 80,
                COLORS[k],
                64 + k * 80
            ));
        }
        svg.push_str("</svg>\n");
        svg
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Probe input for `target`: target tokens, separator, [`PROBE_LENGTH`] masks.
pub fn probe_sequence(target: &str, v: &Vocabulary) -> Vec<TokenId> {
    let mut seq = v.encode(&crate::textproc::tokenize(target));
    seq.push(SEP);
    seq.extend(std::iter::repeat(MASK).take(PROBE_LENGTH));
    seq
}

/// Predicted label distribution of each target with its comment ablated.
pub fn bias_probe(f: &EncoderParams, targets: &[String], v: &Vocabulary) -> Result<BiasProbeReport> {
    let rows = targets
        .iter()
        .map(|t| {
            let h = encoder::encode_ids(f, probe_sequence(t, v))?;
            let distribution = encoder::classify(f, &h);
            Ok(ProbeRow {
                target: t.clone(),
                tv: tv_from_uniform(&distribution),
                distribution,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean_tv = if rows.is_empty() {
        0.0
    } else {
        rows.iter().map(|r| r.tv).sum::<f64>() / rows.len() as f64
    };
    Ok(BiasProbeReport { rows, mean_tv })
}

/// Interventional prediction together with the per-fill outputs it averages.
#[derive(Debug, Clone, PartialEq)]
pub struct InterventionalPrediction {
    pub mean: [f64; 3],
    pub per_fill: Vec<[f64; 3]>,
}

fn average(outputs: Vec<[f64; 3]>) -> InterventionalPrediction {
    // Running mean, so identical fills reproduce the single-fill output exactly.
    let mut mean = outputs[0];
    for (i, p) in outputs.iter().enumerate().skip(1) {
        for k in 0..NUM_CLASSES {
            mean[k] += (p[k] - mean[k]) / (i + 1) as f64;
        }
    }
    InterventionalPrediction { mean, per_fill: outputs }
}

/// Uniform average of the classifier over `k` counterfactual fills of `s`.
pub fn predict_interventional(
    f: &EncoderParams,
    s: &TokenizedSample,
    fm: &dyn FillModel,
    k: usize,
    ratio: f64,
    chunk: usize,
    rng_seed: u64,
) -> Result<InterventionalPrediction> {
    if k == 0 {
        return Err(Error::Config("interventional prediction needs k >= 1 fills".into()));
    }
    let outputs = (0..k as u64)
        .map(|i| {
            let m = maskfill::mask(s, ratio, seed::derive(rng_seed, &[i, 0]))?;
            let cf = maskfill::fill(&m, fm, chunk, seed::derive(rng_seed, &[i, 1]))?;
            encoder::predict_proba(f, &cf.to_tokenized())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(average(outputs))
}

/// Exhaustive-enumeration mode: masks `s` once, then averages the classifier
/// over every assignment of non-reserved vocabulary tokens to the blanks.
pub fn predict_interventional_exhaustive(
    f: &EncoderParams,
    s: &TokenizedSample,
    ratio: f64,
    rng_seed: u64,
) -> Result<InterventionalPrediction> {
    let m = maskfill::mask(s, ratio, rng_seed)?;
    let choices: Vec<TokenId> = (NUM_RESERVED..f.dims.vocab as TokenId).collect();
    if choices.is_empty() && !m.masked_positions.is_empty() {
        return Err(Error::Invalid("no fillable tokens in the vocabulary".into()));
    }
    let blanks = &m.masked_positions;
    let mut digits = vec![0usize; blanks.len()];
    let mut outputs = Vec::new();
    loop {
        let mut cf = s.clone();
        for (&pos, &d) in blanks.iter().zip(&digits) {
            cf.comment[pos] = choices[d];
        }
        outputs.push(encoder::predict_proba(f, &cf)?);
        // odometer increment
        let mut i = 0;
        while i < digits.len() {
            digits[i] += 1;
            if digits[i] < choices.len() {
                break;
            }
            digits[i] = 0;
            i += 1;
        }
        if i == digits.len() {
            break;
        }
    }
    Ok(average(outputs))
}
