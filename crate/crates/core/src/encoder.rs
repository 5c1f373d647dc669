//! Desk-scale text encoder and stance classifier.
//!
//! ```text
//! e = mean(embedding[t] for t in [target tokens, SEP, comment tokens])
//! h = tanh(W_h e + b_h)
//! p = softmax(W_c h + b_c)
//! ```
//!
//! All arithmetic is `f64`. [`gradients`] returns the exact gradient of
//! `mean CE + gamma * mean hinge` for a batch, flowing through anchor,
//! positive and negative representations alike.

use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::StanceLabel;
use crate::error::{Error, Result};
use crate::losses::{self, ContrastConfig};
use crate::seed;
use crate::textproc::{TokenId, TokenizedSample, Vocabulary};

pub const NUM_CLASSES: usize = 3;
pub const MODEL_FORMAT_VERSION: u32 = 1;
const INIT_RANGE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub vocab: usize,
    /// Embedding width.
    pub d: usize,
    /// Hidden width.
    pub m: usize,
}

/// All trainable weights. Matrices are row-major.
///
/// The same shape doubles as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub dims: Dims,
    /// `vocab × d`
    pub embedding: Vec<f64>,
    /// `m × d`
    pub w_h: Vec<f64>,
    pub b_h: Vec<f64>,
    /// `3 × m`
    pub w_c: Vec<f64>,
    pub b_c: Vec<f64>,
}

/// Hidden representation `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct Representation(pub Vec<f64>);

impl AsRef<[f64]> for Representation {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl EncoderParams {
    pub fn zeros(dims: Dims) -> Self {
        EncoderParams {
            dims,
            embedding: vec![0.0; dims.vocab * dims.d],
            w_h: vec![0.0; dims.m * dims.d],
            b_h: vec![0.0; dims.m],
            w_c: vec![0.0; NUM_CLASSES * dims.m],
            b_c: vec![0.0; NUM_CLASSES],
        }
    }

    /// Weights uniform in `[-0.05, 0.05]`, biases zero.
    pub fn init(dims: Dims, seed: u64) -> Self {
        Self::init_uniform(dims, seed, INIT_RANGE)
    }

    pub fn init_uniform(dims: Dims, seed: u64, range: f64) -> Self {
        let mut p = Self::zeros(dims);
        let mut rng = seed::rng(seed);
        for x in p.embedding.iter_mut().chain(p.w_h.iter_mut()).chain(p.w_c.iter_mut()) {
            *x = rng.gen_range(-range..=range);
        }
        p
    }

    pub fn slices(&self) -> [&[f64]; 5] {
        [&self.embedding, &self.w_h, &self.b_h, &self.w_c, &self.b_c]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 5] {
        [
            &mut self.embedding,
            &mut self.w_h,
            &mut self.b_h,
            &mut self.w_c,
            &mut self.b_c,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|x| x.is_finite()))
    }

    /// Reads parameter `i` in the flat order embedding, w_h, b_h, w_c, b_c.
    pub fn get_flat(&self, mut i: usize) -> f64 {
        for s in self.slices() {
            if i < s.len() {
                return s[i];
            }
            i -= s.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_flat(&mut self, mut i: usize, value: f64) {
        for s in self.slices_mut() {
            if i < s.len() {
                s[i] = value;
                return;
            }
            i -= s.len();
        }
        panic!("parameter index out of range");
    }

    fn check_shapes(&self) -> Result<()> {
        let Dims { vocab, d, m } = self.dims;
        let ok = self.embedding.len() == vocab * d
            && self.w_h.len() == m * d
            && self.b_h.len() == m
            && self.w_c.len() == NUM_CLASSES * m
            && self.b_c.len() == NUM_CLASSES;
        if ok {
            Ok(())
        } else {
            Err(Error::Format("parameter arrays do not match their dimensions".into()))
        }
    }

    pub fn save(&self, path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string(&ModelFile::from_params(self, vocab))?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ModelFile = serde_json::from_str(&text)?;
        file.into_params(vocab)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub d: usize,
    pub m: usize,
}

/// On-disk model document. Matrices are nested row lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub vocab_hash: String,
    pub dims: ModelDims,
    pub embedding: Vec<Vec<f64>>,
    pub w_h: Vec<Vec<f64>>,
    pub b_h: Vec<f64>,
    pub w_c: Vec<Vec<f64>>,
    pub b_c: Vec<f64>,
}

fn rows(flat: &[f64], width: usize) -> Vec<Vec<f64>> {
    flat.chunks(width.max(1)).map(<[f64]>::to_vec).collect()
}

fn flatten(name: &str, m: Vec<Vec<f64>>, height: usize, width: usize) -> Result<Vec<f64>> {
    if m.len() != height || m.iter().any(|r| r.len() != width) {
        return Err(Error::Format(format!("{name} must be {height}x{width}")));
    }
    Ok(m.into_iter().flatten().collect())
}

impl ModelFile {
    pub fn from_params(p: &EncoderParams, vocab: &Vocabulary) -> Self {
        ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            vocab_hash: vocab.hash(),
            dims: ModelDims { d: p.dims.d, m: p.dims.m },
            embedding: rows(&p.embedding, p.dims.d),
            w_h: rows(&p.w_h, p.dims.d),
            b_h: p.b_h.clone(),
            w_c: rows(&p.w_c, p.dims.m),
            b_c: p.b_c.clone(),
        }
    }

    /// Validates version, vocabulary hash and every array shape.
    pub fn into_params(self, vocab: &Vocabulary) -> Result<EncoderParams> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported model format version {}",
                self.format_version
            )));
        }
        if self.vocab_hash != vocab.hash() {
            return Err(Error::Format("model was trained with a different vocabulary".into()));
        }
        let ModelDims { d, m } = self.dims;
        let dims = Dims { vocab: vocab.len(), d, m };
        let p = EncoderParams {
            dims,
            embedding: flatten("embedding", self.embedding, vocab.len(), d)?,
            w_h: flatten("w_h", self.w_h, m, d)?,
            b_h: self.b_h,
            w_c: flatten("w_c", self.w_c, NUM_CLASSES, m)?,
            b_c: self.b_c,
        };
        p.check_shapes()?;
        if !p.is_finite() {
            return Err(Error::Format("model contains non-finite values".into()));
        }
        Ok(p)
    }
}

/// Intermediate values of one forward pass, kept for backpropagation.
struct Trace {
    seq: Vec<TokenId>,
    pooled: Vec<f64>,
    h: Vec<f64>,
}

fn forward_ids(p: &EncoderParams, seq: Vec<TokenId>) -> Result<Trace> {
    let Dims { vocab, d, m } = p.dims;
    if seq.is_empty() {
        return Err(Error::Invalid("cannot encode an empty sequence".into()));
    }
    let mut pooled = vec![0.0; d];
    for &t in &seq {
        let t = t as usize;
        if t >= vocab {
            return Err(Error::Invalid(format!("token id {t} outside vocabulary of {vocab}")));
        }
        for (acc, e) in pooled.iter_mut().zip(&p.embedding[t * d..(t + 1) * d]) {
            *acc += e;
        }
    }
    let inv = 1.0 / seq.len() as f64;
    pooled.iter_mut().for_each(|x| *x *= inv);
    let h = (0..m)
        .map(|j| {
            let row = &p.w_h[j * d..(j + 1) * d];
            (p.b_h[j] + row.iter().zip(&pooled).map(|(w, e)| w * e).sum::<f64>()).tanh()
        })
        .collect();
    Ok(Trace { seq, pooled, h })
}

pub fn encode(p: &EncoderParams, s: &TokenizedSample) -> Result<Representation> {
    encode_ids(p, s.sequence())
}

/// Encodes an explicit model-input sequence.
pub fn encode_ids(p: &EncoderParams, seq: Vec<TokenId>) -> Result<Representation> {
    Ok(Representation(forward_ids(p, seq)?.h))
}

pub fn softmax(logits: &[f64; NUM_CLASSES]) -> [f64; NUM_CLASSES] {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps = logits.map(|z| (z - max).exp());
    let sum: f64 = exps.iter().sum();
    exps.map(|e| e / sum)
}

pub fn classify(p: &EncoderParams, h: &Representation) -> [f64; NUM_CLASSES] {
    classify_hidden(p, &h.0)
}

fn classify_hidden(p: &EncoderParams, h: &[f64]) -> [f64; NUM_CLASSES] {
    let m = p.dims.m;
    let mut logits = [0.0; NUM_CLASSES];
    for (k, z) in logits.iter_mut().enumerate() {
        *z = p.b_c[k] + p.w_c[k * m..(k + 1) * m].iter().zip(h).map(|(w, x)| w * x).sum::<f64>();
    }
    softmax(&logits)
}

pub fn predict_proba(p: &EncoderParams, s: &TokenizedSample) -> Result<[f64; NUM_CLASSES]> {
    Ok(classify(p, &encode(p, s)?))
}

/// Argmax with ties resolved toward the lowest label code.
pub fn argmax(probs: &[f64; NUM_CLASSES]) -> (StanceLabel, f64) {
    let mut best = 0;
    for k in 1..NUM_CLASSES {
        if probs[k] > probs[best] {
            best = k;
        }
    }
    (StanceLabel::from_index(best).expect("three classes"), probs[best])
}

/// An anchor with the counterfactual representations it is contrasted against.
#[derive(Debug, Clone)]
pub struct ContrastGroup<'a> {
    pub anchor: &'a TokenizedSample,
    pub positives: Vec<&'a TokenizedSample>,
    pub negatives: Vec<&'a TokenizedSample>,
}

/// One optimisation batch: cross-entropy examples plus contrast groups.
#[derive(Debug, Clone, Default)]
pub struct Batch<'a> {
    pub examples: Vec<(&'a TokenizedSample, StanceLabel)>,
    pub groups: Vec<ContrastGroup<'a>>,
}

impl Batch<'_> {
    pub fn is_empty(&self) -> bool {
        self.examples.is_empty() && self.groups.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cls: f64,
    pub contra: f64,
    pub total: f64,
}

/// Loss of a batch without gradients.
pub fn batch_loss(p: &EncoderParams, batch: &Batch<'_>, cfg: &ContrastConfig) -> Result<LossBreakdown> {
    let mut cls = 0.0;
    for (s, y) in &batch.examples {
        cls += losses::cross_entropy(&predict_proba(p, s)?, *y);
    }
    if !batch.examples.is_empty() {
        cls /= batch.examples.len() as f64;
    }
    let mut contra = 0.0;
    for g in &batch.groups {
        let h = encode(p, g.anchor)?;
        let pos = g.positives.iter().map(|s| encode(p, s)).collect::<Result<Vec<_>>>()?;
        let neg = g.negatives.iter().map(|s| encode(p, s)).collect::<Result<Vec<_>>>()?;
        contra += losses::contrastive_loss(&h.0, &pos, &neg, cfg)?;
    }
    if !batch.groups.is_empty() {
        contra /= batch.groups.len() as f64;
    }
    Ok(LossBreakdown {
        cls,
        contra,
        total: losses::total_loss(cls, contra, cfg.gamma),
    })
}

/// Backpropagates `dh` (gradient w.r.t. `h`) into `grad`.
fn backprop_hidden(p: &EncoderParams, trace: &Trace, dh: &[f64], grad: &mut EncoderParams) {
    let Dims { d, m, .. } = p.dims;
    let mut de = vec![0.0; d];
    for j in 0..m {
        let dz = dh[j] * (1.0 - trace.h[j] * trace.h[j]);
        if dz == 0.0 {
            continue;
        }
        grad.b_h[j] += dz;
        let wrow = &p.w_h[j * d..(j + 1) * d];
        let grow = &mut grad.w_h[j * d..(j + 1) * d];
        for k in 0..d {
            grow[k] += dz * trace.pooled[k];
            de[k] += dz * wrow[k];
        }
    }
    let inv = 1.0 / trace.seq.len() as f64;
    for &t in &trace.seq {
        let row = &mut grad.embedding[t as usize * d..(t as usize + 1) * d];
        for (g, x) in row.iter_mut().zip(&de) {
            *g += x * inv;
        }
    }
}

/// Loss and exact gradient of `mean CE + gamma * mean hinge` over `batch`.
pub fn gradients(
    p: &EncoderParams,
    batch: &Batch<'_>,
    cfg: &ContrastConfig,
) -> Result<(LossBreakdown, EncoderParams)> {
    if batch.is_empty() {
        return Err(Error::Invalid("gradient of an empty batch".into()));
    }
    let m = p.dims.m;
    let mut grad = EncoderParams::zeros(p.dims);
    let mut loss = LossBreakdown::default();

    if !batch.examples.is_empty() {
        let scale = 1.0 / batch.examples.len() as f64;
        for (s, y) in &batch.examples {
            let trace = forward_ids(p, s.sequence())?;
            let probs = classify_hidden(p, &trace.h);
            loss.cls += losses::cross_entropy(&probs, *y) * scale;
            if probs[y.index()] < losses::PROB_FLOOR {
                // clamped branch of the log is constant
                continue;
            }
            let mut dlogits = probs;
            dlogits[y.index()] -= 1.0;
            let mut dh = vec![0.0; m];
            for k in 0..NUM_CLASSES {
                let g = dlogits[k] * scale;
                grad.b_c[k] += g;
                for j in 0..m {
                    grad.w_c[k * m + j] += g * trace.h[j];
                    dh[j] += g * p.w_c[k * m + j];
                }
            }
            backprop_hidden(p, &trace, &dh, &mut grad);
        }
    }

    if !batch.groups.is_empty() && cfg.gamma != 0.0 {
        let scale = cfg.gamma / batch.groups.len() as f64;
        for g in &batch.groups {
            let anchor = forward_ids(p, g.anchor.sequence())?;
            let pos = g.positives.iter().map(|s| forward_ids(p, s.sequence())).collect::<Result<Vec<_>>>()?;
            let neg = g.negatives.iter().map(|s| forward_ids(p, s.sequence())).collect::<Result<Vec<_>>>()?;
            let pos_h: Vec<&[f64]> = pos.iter().map(|t| t.h.as_slice()).collect();
            let neg_h: Vec<&[f64]> = neg.iter().map(|t| t.h.as_slice()).collect();
            let arg = losses::hinge_argument(&anchor.h, &pos_h, &neg_h, cfg)?;
            loss.contra += arg.max(0.0) / batch.groups.len() as f64;
            if arg <= 0.0 {
                continue;
            }
            let mut d_anchor = vec![0.0; m];
            for (set, sign) in [(&pos, 1.0), (&neg, -1.0)] {
                let w = sign * scale / set.len() as f64;
                for t in set {
                    let (ga, gb) = losses::distance_grad(&anchor.h, &t.h, cfg.metric)?;
                    for j in 0..m {
                        d_anchor[j] += w * ga[j];
                    }
                    let d_other: Vec<f64> = gb.iter().map(|x| w * x).collect();
                    backprop_hidden(p, t, &d_other, &mut grad);
                }
            }
            backprop_hidden(p, &anchor, &d_anchor, &mut grad);
        }
    } else if !batch.groups.is_empty() {
        loss.contra = batch_loss(p, &Batch { examples: Vec::new(), groups: batch.groups.clone() }, cfg)?.contra;
    }

    loss.total = losses::total_loss(loss.cls, loss.contra, cfg.gamma);
    Ok((loss, grad))
}
