//! Relative stance sample generation.
//!
//! A counterfactual is produced in two steps: [`mask`] replaces a fixed
//! fraction of the maskable (non target-related) comment tokens by `MASK`,
//! then [`fill`] asks a [`FillModel`] for candidates and fills the blanks a
//! few at a time, each group conditioned on what was already filled.

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, StanceLabel};
use crate::error::{Error, Result};
use crate::seed;
use crate::textproc::{self, is_reserved, TokenId, TokenizedSample, Vocabulary, MASK, NUM_RESERVED};

/// Attempts per draw before a duplicate is kept and flagged.
pub const MAX_ATTEMPTS: u64 = 5;
pub const DEFAULT_CHUNK: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedSample {
    pub parent_id: String,
    pub target: Vec<TokenId>,
    /// Parent comment with `MASK` at every masked position.
    pub comment: Vec<TokenId>,
    /// Ascending.
    pub masked_positions: Vec<usize>,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualSample {
    pub parent_id: String,
    pub target: Vec<TokenId>,
    pub comment: Vec<TokenId>,
    pub masked_positions: Vec<usize>,
    pub predicted_label: Option<StanceLabel>,
    pub confidence: f64,
    /// Token-identical to the parent or an earlier draw after all attempts.
    pub duplicate: bool,
}

impl CounterfactualSample {
    pub fn to_tokenized(&self) -> TokenizedSample {
        TokenizedSample {
            id: self.parent_id.clone(),
            target: self.target.clone(),
            comment: self.comment.clone(),
            exempt: Default::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub token: TokenId,
    pub score: f64,
}

/// Source of fill candidates for blanks in a token context.
///
/// `candidates(context, blanks)` returns one ranked list per entry of
/// `blanks`; `context` holds `MASK` at every unfilled position.
pub trait FillModel: Send + Sync {
    fn vocab_size(&self) -> usize;

    fn candidates(&self, context: &[TokenId], blanks: &[usize]) -> Result<Vec<Vec<Candidate>>>;
}

impl<F: FillModel + ?Sized> FillModel for &F {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn candidates(&self, context: &[TokenId], blanks: &[usize]) -> Result<Vec<Vec<Candidate>>> {
        (**self).candidates(context, blanks)
    }
}

impl<F: FillModel + ?Sized> FillModel for Box<F> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn candidates(&self, context: &[TokenId], blanks: &[usize]) -> Result<Vec<Vec<Candidate>>> {
        (**self).candidates(context, blanks)
    }
}

/// Number of positions to mask: round-half-up of `ratio * available`,
/// at least one when `ratio > 0`, never more than `available`.
pub fn mask_count(ratio: f64, available: usize) -> usize {
    if ratio <= 0.0 || available == 0 {
        return 0;
    }
    // The epsilon keeps exact halves such as 0.15 * 10 from rounding down.
    let n = (ratio * available as f64 + 0.5 + 1e-9).floor() as usize;
    n.clamp(1, available)
}

pub fn mask(s: &TokenizedSample, ratio: f64, rng_seed: u64) -> Result<MaskedSample> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Config(format!("mask ratio must be in [0, 1], got {ratio}")));
    }
    let candidates = s.non_exempt();
    if ratio > 0.0 && candidates.is_empty() {
        return Err(Error::GenerationImpossible(s.id.clone()));
    }
    let count = mask_count(ratio, candidates.len());
    let mut rng = seed::rng(rng_seed);
    let mut positions: Vec<usize> = index::sample(&mut rng, candidates.len(), count)
        .into_iter()
        .map(|i| candidates[i])
        .collect();
    positions.sort_unstable();
    let mut comment = s.comment.clone();
    for &p in &positions {
        comment[p] = MASK;
    }
    Ok(MaskedSample {
        parent_id: s.id.clone(),
        target: s.target.clone(),
        comment,
        masked_positions: positions,
        ratio,
    })
}

fn choose(cands: &[Candidate], vocab_size: usize, rng: &mut seed::Rng) -> Option<TokenId> {
    let usable: Vec<&Candidate> = cands
        .iter()
        .filter(|c| !is_reserved(c.token) && (c.token as usize) < vocab_size && c.score.is_finite())
        .collect();
    let first = usable.first()?;
    let total: f64 = usable.iter().map(|c| c.score.max(0.0)).sum();
    if total <= 0.0 {
        return Some(first.token);
    }
    let mut u = rng.gen::<f64>() * total;
    for c in &usable {
        u -= c.score.max(0.0);
        if u < 0.0 {
            return Some(c.token);
        }
    }
    usable.iter().rev().find(|c| c.score > 0.0).map(|c| c.token)
}

/// Fills the blanks of `m` in seeded-random order, `chunk` blanks per model call.
pub fn fill(m: &MaskedSample, f: &dyn FillModel, chunk: usize, rng_seed: u64) -> Result<CounterfactualSample> {
    if chunk == 0 {
        return Err(Error::Config("fill chunk must be >= 1".into()));
    }
    let mut rng = seed::rng(rng_seed);
    let mut order = m.masked_positions.clone();
    order.shuffle(&mut rng);
    let mut context = m.comment.clone();
    for group in order.chunks(chunk) {
        let ranked = f.candidates(&context, group)?;
        if ranked.len() != group.len() {
            return Err(Error::Protocol(format!(
                "fill model answered {} blanks, {} requested",
                ranked.len(),
                group.len()
            )));
        }
        for (&pos, cands) in group.iter().zip(&ranked) {
            context[pos] = choose(cands, f.vocab_size(), &mut rng).ok_or(Error::Fill { position: pos })?;
        }
    }
    Ok(CounterfactualSample {
        parent_id: m.parent_id.clone(),
        target: m.target.clone(),
        comment: context,
        masked_positions: m.masked_positions.clone(),
        predicted_label: None,
        confidence: 0.0,
        duplicate: false,
    })
}

/// Interpolated bigram/unigram filler estimated on a training corpus.
///
/// `score(w) = 0.7 P(w | left) + 0.3 P(w)`, both add-one smoothed over the
/// non-reserved vocabulary. The left context of a blank is the token
/// immediately before it; a missing or masked left neighbour contributes a
/// uniform bigram term.
#[derive(Debug, Clone)]
pub struct NgramFillModel {
    vocab_size: usize,
    unigram: Vec<u64>,
    unigram_total: u64,
    /// `bigram[left][w]` counts, only for non-reserved `w`.
    bigram: Vec<std::collections::HashMap<TokenId, u64>>,
    left_total: Vec<u64>,
    top_k: Option<usize>,
}

pub const BIGRAM_WEIGHT: f64 = 0.7;
pub const UNIGRAM_WEIGHT: f64 = 0.3;

impl NgramFillModel {
    pub fn from_sequences<'a>(vocab_size: usize, seqs: impl IntoIterator<Item = &'a [TokenId]>) -> Self {
        let mut unigram = vec![0u64; vocab_size];
        let mut bigram = vec![std::collections::HashMap::new(); vocab_size];
        let mut left_total = vec![0u64; vocab_size];
        for seq in seqs {
            for (i, &w) in seq.iter().enumerate() {
                if is_reserved(w) || w as usize >= vocab_size {
                    continue;
                }
                unigram[w as usize] += 1;
                if i > 0 {
                    let left = seq[i - 1] as usize;
                    if left < vocab_size {
                        *bigram[left].entry(w).or_insert(0) += 1;
                        left_total[left] += 1;
                    }
                }
            }
        }
        let unigram_total = unigram.iter().sum();
        NgramFillModel {
            vocab_size,
            unigram,
            unigram_total,
            bigram,
            left_total,
            top_k: None,
        }
    }

    /// Truncates every candidate list to its `k` best entries.
    pub fn with_top_k(mut self, k: usize) -> Self {
        self.top_k = Some(k.max(1));
        self
    }

    fn num_candidates(&self) -> usize {
        self.vocab_size.saturating_sub(NUM_RESERVED as usize)
    }

    pub fn score(&self, left: Option<TokenId>, w: TokenId) -> f64 {
        let c = self.num_candidates() as f64;
        let uni = (self.unigram[w as usize] as f64 + 1.0) / (self.unigram_total as f64 + c);
        let bi = match left.filter(|&l| l != MASK && (l as usize) < self.vocab_size) {
            Some(l) => {
                let count = self.bigram[l as usize].get(&w).copied().unwrap_or(0) as f64;
                (count + 1.0) / (self.left_total[l as usize] as f64 + c)
            }
            None => 1.0 / c,
        };
        BIGRAM_WEIGHT * bi + UNIGRAM_WEIGHT * uni
    }

    pub fn ranked(&self, left: Option<TokenId>) -> Vec<Candidate> {
        let mut out: Vec<Candidate> = (NUM_RESERVED..self.vocab_size as TokenId)
            .map(|w| Candidate { token: w, score: self.score(left, w) })
            .collect();
        out.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.token.cmp(&b.token)));
        if let Some(k) = self.top_k {
            out.truncate(k);
        }
        out
    }
}

impl FillModel for NgramFillModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn candidates(&self, context: &[TokenId], blanks: &[usize]) -> Result<Vec<Vec<Candidate>>> {
        blanks
            .iter()
            .map(|&b| {
                if b >= context.len() {
                    return Err(Error::Invalid(format!("blank {b} outside context of {}", context.len())));
                }
                let left = b.checked_sub(1).map(|i| context[i]);
                Ok(self.ranked(left))
            })
            .collect()
    }
}

/// Estimates the n-gram filler on the comments of a train split.
pub fn ngram_fill_model(train: &Dataset, v: &Vocabulary) -> Result<NgramFillModel> {
    if train.is_empty() {
        return Err(Error::Invalid("n-gram fill model needs a non-empty train split".into()));
    }
    let seqs: Vec<Vec<TokenId>> = train
        .samples()
        .iter()
        .map(|s| v.encode(&textproc::tokenize(&s.comment)))
        .collect();
    Ok(NgramFillModel::from_sequences(v.len(), seqs.iter().map(Vec::as_slice)))
}

/// Draws `g` counterfactuals of `s` with per-draw seeds.
///
/// A draw that reproduces the parent or an earlier draw is retried with a
/// fresh seed, up to [`MAX_ATTEMPTS`] attempts, then kept and flagged.
pub fn generate_candidates(
    s: &TokenizedSample,
    g: usize,
    ratio: f64,
    f: &dyn FillModel,
    chunk: usize,
    rng_seed: u64,
) -> Result<Vec<CounterfactualSample>> {
    if g == 0 {
        return Err(Error::Config("candidate count must be >= 1".into()));
    }
    let mut out: Vec<CounterfactualSample> = Vec::with_capacity(g);
    for draw in 0..g as u64 {
        let mut kept = None;
        for attempt in 0..MAX_ATTEMPTS {
            let mask_seed = seed::derive(rng_seed, &[draw, attempt, 0]);
            let fill_seed = seed::derive(rng_seed, &[draw, attempt, 1]);
            let mut cf = fill(&mask(s, ratio, mask_seed)?, f, chunk, fill_seed)?;
            let dup = cf.comment == s.comment || out.iter().any(|o| o.comment == cf.comment);
            cf.duplicate = dup;
            let done = !dup;
            kept = Some(cf);
            if done {
                break;
            }
        }
        out.push(kept.expect("at least one attempt"));
    }
    Ok(out)
}

/// JSONL record of a generated sample, tokens written as strings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualRecord {
    pub parent_id: String,
    pub target: String,
    pub tokens: Vec<String>,
    pub masked_positions: Vec<usize>,
    pub predicted_label: Option<StanceLabel>,
    pub confidence: f64,
}

impl CounterfactualRecord {
    pub fn new(cf: &CounterfactualSample, target: &str, v: &Vocabulary) -> Self {
        CounterfactualRecord {
            parent_id: cf.parent_id.clone(),
            target: target.to_string(),
            tokens: v.decode(&cf.comment),
            masked_positions: cf.masked_positions.clone(),
            predicted_label: cf.predicted_label,
            confidence: cf.confidence,
        }
    }

    pub fn into_sample(self, v: &Vocabulary) -> CounterfactualSample {
        CounterfactualSample {
            parent_id: self.parent_id,
            target: v.encode(&textproc::tokenize(&self.target)),
            comment: v.encode(&self.tokens),
            masked_positions: self.masked_positions,
            predicted_label: self.predicted_label,
            confidence: self.confidence,
            duplicate: false,
        }
    }
}
