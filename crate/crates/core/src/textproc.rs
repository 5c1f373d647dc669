//! Tokenization, vocabulary construction, and target-keyword detection.
//!
//! "Target-related keywords" are positions of the comment that must never be
//! masked during counterfactual generation. A comment token is related to
//! the target when it
//!
//! 1. equals a target token,
//! 2. shares a stem with a target token (trailing `s`/`es`/`ing`/`ed` removed), or
//! 3. is listed among the target's aliases in the alias configuration.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Dataset, Sample, Split, StanceLabel};
use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const UNK: TokenId = 1;
pub const MASK: TokenId = 2;
pub const SEP: TokenId = 3;
pub const RESERVED: [&str; 4] = ["[PAD]", "[UNK]", "[MASK]", "[SEP]"];
pub const NUM_RESERVED: TokenId = RESERVED.len() as TokenId;

pub fn is_reserved(id: TokenId) -> bool {
    id < NUM_RESERVED
}

fn push_hashtag(word: &str, out: &mut Vec<String>) {
    let chars: Vec<char> = word.chars().collect();
    let mut start = 0;
    for i in 1..chars.len() {
        let prev = chars[i - 1];
        let cur = chars[i];
        let next_lower = chars.get(i + 1).is_some_and(|c| c.is_lowercase());
        let boundary = (prev.is_lowercase() && cur.is_uppercase())
            || (prev.is_uppercase() && cur.is_uppercase() && next_lower);
        if boundary {
            out.push(chars[start..i].iter().collect::<String>().to_lowercase());
            start = i;
        }
    }
    out.push(chars[start..].iter().collect::<String>().to_lowercase());
}

/// Splits text into lowercase alphanumeric runs and single punctuation marks.
///
/// A leading `#` or `@` is dropped from the following word, and hashtags are
/// split at camel-case boundaries (`#FeministMovement` → `feminist`, `movement`).
pub fn tokenize(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c.is_alphanumeric() {
            let start = i;
            while i < chars.len() && chars[i].is_alphanumeric() {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            let hashtag = start > 0 && chars[start - 1] == '#';
            if hashtag {
                push_hashtag(&word, &mut out);
            } else {
                out.push(word.to_lowercase());
            }
            continue;
        }
        let prefix = (c == '#' || c == '@') && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric());
        if !prefix {
            out.extend(c.to_lowercase().map(String::from).take(1));
        }
        i += 1;
    }
    out
}

/// Suffix-stripping stem: removes one trailing `ing`, `es`, `ed`, or `s`
/// when at least three characters remain.
pub fn stem(token: &str) -> &str {
    for suffix in ["ing", "es", "ed", "s"] {
        if let Some(base) = token.strip_suffix(suffix) {
            if base.chars().count() >= 3 {
                return base;
            }
        }
    }
    token
}

/// Target-keyword positions of `comment_tokens`.
pub fn target_keywords(target: &str, comment_tokens: &[String], aliases: &[String]) -> BTreeSet<usize> {
    let target_tokens: HashSet<String> = tokenize(target)
        .into_iter()
        .filter(|t| t.chars().any(char::is_alphanumeric))
        .collect();
    let target_stems: HashSet<&str> = target_tokens.iter().map(|t| stem(t)).collect();
    let alias_tokens: HashSet<String> = aliases.iter().flat_map(|a| tokenize(a)).collect();
    comment_tokens
        .iter()
        .enumerate()
        .filter(|(_, tok)| {
            target_tokens.contains(tok.as_str())
                || (tok.chars().any(char::is_alphanumeric) && target_stems.contains(stem(tok)))
                || alias_tokens.contains(tok.as_str())
        })
        .map(|(i, _)| i)
        .collect()
}

/// Per-target alias lists: target string → alias tokens.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AliasMap(pub BTreeMap<String, Vec<String>>);

impl AliasMap {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("alias file {}: {e}", path.display())))
    }

    /// Aliases for `target`, matched case-insensitively on the trimmed string.
    pub fn get(&self, target: &str) -> &[String] {
        let key = target.trim().to_lowercase();
        self.0
            .iter()
            .find(|(k, _)| k.trim().to_lowercase() == key)
            .map(|(_, v)| v.as_slice())
            .unwrap_or(&[])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabFile", into = "VocabFile")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    min_count: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    min_count: usize,
    tokens: Vec<String>,
}

impl From<Vocabulary> for VocabFile {
    fn from(v: Vocabulary) -> Self {
        VocabFile {
            min_count: v.min_count,
            tokens: v.tokens,
        }
    }
}

impl TryFrom<VocabFile> for Vocabulary {
    type Error = Error;

    fn try_from(f: VocabFile) -> Result<Self> {
        if f.tokens.len() < RESERVED.len() || f.tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::Format("vocabulary does not start with the reserved tokens".into()));
        }
        Vocabulary::from_tokens(f.tokens[RESERVED.len()..].to_vec(), f.min_count)
    }
}

impl Vocabulary {
    /// Builds a vocabulary from non-reserved tokens in id order.
    pub fn from_tokens(tokens: Vec<String>, min_count: usize) -> Result<Self> {
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        all.extend(tokens);
        let mut index = HashMap::with_capacity(all.len());
        for (i, t) in all.iter().enumerate() {
            if index.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary {
            tokens: all,
            index,
            min_count,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    pub fn id(&self, token: &str) -> TokenId {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<TokenId> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(RESERVED[UNK as usize]).to_string())
            .collect()
    }

    /// SHA-256 over the token list, used to tie model files to a vocabulary.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Builds a vocabulary over comment and target tokens of a train split.
///
/// Ids are assigned by descending frequency, ties broken lexicographically.
pub fn build_vocab(d: &Dataset, min_count: usize) -> Result<Vocabulary> {
    if min_count == 0 {
        return Err(Error::Config("min_count must be at least 1".into()));
    }
    if d.split != Split::Train {
        return Err(Error::Config(format!(
            "vocabulary must be built from a train split, got {}",
            d.split
        )));
    }
    if d.is_empty() {
        return Err(Error::Invalid("cannot build a vocabulary from an empty dataset".into()));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for s in d.samples() {
        for t in tokenize(&s.target).into_iter().chain(tokenize(&s.comment)) {
            *counts.entry(t).or_default() += 1;
        }
    }
    let mut kept: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Vocabulary::from_tokens(kept.into_iter().map(|(t, _)| t).collect(), min_count)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedSample {
    pub id: String,
    pub target: Vec<TokenId>,
    pub comment: Vec<TokenId>,
    /// Comment positions that must not be masked.
    pub exempt: BTreeSet<usize>,
}

impl TokenizedSample {
    /// Model input order: target tokens, separator, comment tokens.
    pub fn sequence(&self) -> Vec<TokenId> {
        let mut seq = Vec::with_capacity(self.target.len() + 1 + self.comment.len());
        seq.extend_from_slice(&self.target);
        seq.push(SEP);
        seq.extend_from_slice(&self.comment);
        seq
    }

    pub fn non_exempt(&self) -> Vec<usize> {
        (0..self.comment.len()).filter(|i| !self.exempt.contains(i)).collect()
    }
}

pub fn tokenize_sample(s: &Sample, v: &Vocabulary, aliases: &AliasMap) -> Result<TokenizedSample> {
    let comment_tokens = tokenize(&s.comment);
    let target_tokens = tokenize(&s.target);
    if comment_tokens.is_empty() || target_tokens.is_empty() {
        return Err(Error::Invalid(format!("sample {:?} tokenizes to an empty sequence", s.id)));
    }
    let exempt = target_keywords(&s.target, &comment_tokens, aliases.get(&s.target));
    Ok(TokenizedSample {
        id: s.id.clone(),
        target: v.encode(&target_tokens),
        comment: v.encode(&comment_tokens),
        exempt,
    })
}

/// A sample prepared for the model, with the metadata evaluation needs.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSample {
    pub tokens: TokenizedSample,
    pub label: Option<StanceLabel>,
    pub target: String,
    pub tags: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedDataset {
    pub name: String,
    pub split: Split,
    pub samples: Vec<EncodedSample>,
}

impl TokenizedDataset {
    pub fn new(d: &Dataset, v: &Vocabulary, aliases: &AliasMap) -> Result<Self> {
        let samples = d
            .samples()
            .iter()
            .map(|s| {
                Ok(EncodedSample {
                    tokens: tokenize_sample(s, v, aliases)?,
                    label: s.label,
                    target: s.target.clone(),
                    tags: s.tags.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TokenizedDataset {
            name: d.name.clone(),
            split: d.split,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Gold labels; fails if any sample is unlabeled.
    pub fn gold_labels(&self) -> Result<Vec<StanceLabel>> {
        self.samples
            .iter()
            .map(|s| {
                s.label
                    .ok_or_else(|| Error::Invalid(format!("sample {:?} has no label", s.tokens.id)))
            })
            .collect()
    }
}
