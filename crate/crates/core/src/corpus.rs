//! Stance-detection data model and dataset loaders.
//!
//! Loaders are lossless: comment and target text is stored exactly as read,
//! and all normalization happens in [`crate::textproc`].

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stance of a comment toward a target. Integer codes are fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StanceLabel {
    Favor = 0,
    Against = 1,
    Neutral = 2,
}

impl StanceLabel {
    pub const ALL: [StanceLabel; 3] = [StanceLabel::Favor, StanceLabel::Against, StanceLabel::Neutral];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StanceLabel::Favor => "favor",
            StanceLabel::Against => "against",
            StanceLabel::Neutral => "neutral",
        }
    }
}

impl fmt::Display for StanceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StanceLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "favor" | "favour" => Ok(StanceLabel::Favor),
            "against" => Ok(StanceLabel::Against),
            "neutral" | "none" => Ok(StanceLabel::Neutral),
            other => Err(Error::Invalid(format!("unknown stance label {other:?}"))),
        }
    }
}

/// Integer label convention of the published VAST release
/// (`label`: 0 = con, 1 = pro, 2 = neutral). Index = file code.
pub const VAST_LABEL_MAP: [StanceLabel; 3] =
    [StanceLabel::Against, StanceLabel::Favor, StanceLabel::Neutral];

/// Human-readable echo of [`VAST_LABEL_MAP`], written into every report.
pub const VAST_LABEL_MAPPING: &str = "vast:0=against,1=favor,2=neutral";

/// Phenomenon tags recognised in VAST-shaped files.
pub const PHENOMENON_TAGS: [&str; 5] = ["Imp", "mlT", "mlS", "Qte", "Sarc"];
pub const TAG_ZERO_SHOT: &str = "zero";
pub const TAG_FEW_SHOT: &str = "few";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub comment: String,
    pub target: String,
    pub label: Option<StanceLabel>,
    #[serde(default)]
    pub tags: BTreeSet<String>,
}

impl Sample {
    pub fn new(
        id: impl Into<String>,
        comment: impl Into<String>,
        target: impl Into<String>,
        label: Option<StanceLabel>,
    ) -> Self {
        Sample {
            id: id.into(),
            comment: comment.into(),
            target: target.into(),
            label,
            tags: BTreeSet::new(),
        }
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.tags.insert(tag.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub split: Split,
    samples: Vec<Sample>,
}

impl Dataset {
    /// Validates the sample invariants: unique ids, non-empty comment and target.
    pub fn new(name: impl Into<String>, split: Split, samples: Vec<Sample>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Value {
                    row: i + 1,
                    message: format!("duplicate sample id {:?}", s.id),
                });
            }
            if s.comment.trim().is_empty() || s.target.trim().is_empty() {
                return Err(Error::Value {
                    row: i + 1,
                    message: format!("sample {:?} has an empty comment or target", s.id),
                });
            }
        }
        Ok(Dataset {
            name: name.into(),
            split,
            samples,
        })
    }

    pub fn empty(name: impl Into<String>, split: Split) -> Self {
        Dataset {
            name: name.into(),
            split,
            samples: Vec::new(),
        }
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Distinct targets in order of first appearance.
    pub fn targets(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.samples
            .iter()
            .filter(|s| seen.insert(s.target.as_str()))
            .map(|s| s.target.clone())
            .collect()
    }

    pub fn label_counts(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for label in self.samples.iter().filter_map(|s| s.label) {
            counts[label.index()] += 1;
        }
        counts
    }
}

fn read_text(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    // The official SemEval release is not valid UTF-8 throughout.
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string())
}

fn column(header: &[&str], name: &str) -> Result<usize> {
    header
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Format(format!("missing column {name:?}")))
}

/// Maps a SemEval-2016 stance string.
pub fn semeval_label(raw: &str) -> Option<StanceLabel> {
    match raw.trim() {
        "FAVOR" => Some(StanceLabel::Favor),
        "AGAINST" => Some(StanceLabel::Against),
        "NONE" => Some(StanceLabel::Neutral),
        _ => None,
    }
}

/// Loads a SemEval-2016 Task 6 file: tab-separated, header `ID Target Tweet Stance`.
pub fn load_semeval(path: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate();
    let header: Vec<&str> = match lines.next() {
        Some((_, line)) => line.trim_start_matches('\u{feff}').split('\t').collect(),
        None => return Err(Error::Format("empty file, expected a header row".into())),
    };
    let id_col = column(&header, "ID")?;
    let target_col = column(&header, "Target")?;
    let tweet_col = column(&header, "Tweet")?;
    let stance_col = column(&header, "Stance")?;

    let mut samples = Vec::new();
    for (idx, line) in lines {
        let row = idx + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let get = |col: usize| {
            fields.get(col).copied().ok_or_else(|| Error::Value {
                row,
                message: format!("expected at least {} fields, found {}", col + 1, fields.len()),
            })
        };
        let stance = get(stance_col)?;
        let label = semeval_label(stance).ok_or_else(|| Error::Value {
            row,
            message: format!("unknown stance {stance:?}"),
        })?;
        samples.push(Sample::new(get(id_col)?, get(tweet_col)?, get(target_col)?, Some(label)));
    }
    Dataset::new(dataset_name(path), split, samples)
}

fn truthy(raw: &str) -> bool {
    matches!(raw.trim().to_ascii_lowercase().as_str(), "1" | "1.0" | "true" | "yes")
}

/// Loads a VAST-format CSV (Allaway & McKeown release layout).
///
/// Comment text comes from `post`, the target from `topic_str` (falling back
/// to `new_topic`), the shot tag from `seen?` (0 → `zero`, 1 → `few`), and
/// phenomenon tags from the `Imp`/`mlT`/`mlS`/`Qte`/`Sarc` columns when present.
pub fn load_vast(path: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Format(e.to_string()))?
        .clone();
    let header: Vec<&str> = headers.iter().collect();
    let post_col = column(&header, "post")?;
    let label_col = column(&header, "label")?;
    let target_col = column(&header, "topic_str").or_else(|_| column(&header, "new_topic"))?;
    let id_col = column(&header, "new_id").ok();
    let seen_col = column(&header, "seen?").ok();
    let tag_cols: Vec<(&str, usize)> = PHENOMENON_TAGS
        .iter()
        .filter_map(|tag| column(&header, tag).ok().map(|c| (*tag, c)))
        .collect();

    let mut samples = Vec::new();
    let mut ids = HashSet::new();
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 2;
        let record = record.map_err(|e| Error::Value {
            row,
            message: e.to_string(),
        })?;
        let field = |col: usize| record.get(col).unwrap_or("");
        let code = field(label_col).trim();
        let label = code
            .parse::<f64>()
            .ok()
            .filter(|c| c.fract() == 0.0 && *c >= 0.0)
            .and_then(|c| VAST_LABEL_MAP.get(c as usize).copied())
            .ok_or_else(|| Error::Value {
                row,
                message: format!("unmappable label code {code:?}"),
            })?;
        let mut id = match id_col {
            Some(c) if !field(c).trim().is_empty() => field(c).trim().to_string(),
            _ => format!("row{row}"),
        };
        if ids.contains(&id) {
            id = format!("{id}#{row}");
        }
        ids.insert(id.clone());
        let mut sample = Sample::new(id, field(post_col), field(target_col), Some(label));
        if let Some(c) = seen_col {
            let tag = if truthy(field(c)) { TAG_FEW_SHOT } else { TAG_ZERO_SHOT };
            sample.tags.insert(tag.to_string());
        }
        for (tag, c) in &tag_cols {
            if truthy(field(*c)) {
                sample.tags.insert((*tag).to_string());
            }
        }
        samples.push(sample);
    }
    Dataset::new(dataset_name(path), split, samples)
}

/// Number of distinct targets tagged zero-shot and few-shot.
pub fn shot_target_counts(d: &Dataset) -> (usize, usize) {
    let mut zero = HashSet::new();
    let mut few = HashSet::new();
    for s in d.samples() {
        if s.tags.contains(TAG_ZERO_SHOT) {
            zero.insert(s.target.as_str());
        }
        if s.tags.contains(TAG_FEW_SHOT) {
            few.insert(s.target.as_str());
        }
    }
    (zero.len(), few.len())
}

/// Column layout for UKP-style topic/sentence/annotation files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UkpColumns {
    pub delimiter: char,
    pub topic: String,
    pub sentence: String,
    pub annotation: String,
    /// Optional id column; row numbers are used when absent.
    pub id: Option<String>,
    /// Optional column holding the split name of each row.
    pub split: Option<String>,
    pub favor: String,
    pub against: String,
    pub neutral: String,
}

impl Default for UkpColumns {
    fn default() -> Self {
        UkpColumns {
            delimiter: '\t',
            topic: "topic".into(),
            sentence: "sentence".into(),
            annotation: "annotation".into(),
            id: Some("sentence_hash".into()),
            split: Some("set".into()),
            favor: "Argument_for".into(),
            against: "Argument_against".into(),
            neutral: "NoArgument".into(),
        }
    }
}

fn ukp_split_matches(raw: &str, split: Split) -> bool {
    let raw = raw.trim().to_ascii_lowercase();
    match split {
        Split::Train => raw == "train",
        Split::Dev => raw == "val" || raw == "dev" || raw == "validation",
        Split::Test => raw == "test",
    }
}

/// Loads a UKP-style argument file with the column names given in `columns`.
/// When a split column is configured, only rows of `split` are kept.
pub fn load_ukp(path: impl AsRef<Path>, split: Split, columns: &UkpColumns) -> Result<Dataset> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let delimiter = u8::try_from(columns.delimiter)
        .map_err(|_| Error::Config("UKP delimiter must be a single-byte character".into()))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .quoting(delimiter != b'\t')
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Format(e.to_string()))?
        .clone();
    let header: Vec<&str> = headers.iter().collect();
    let topic_col = column(&header, &columns.topic)?;
    let sentence_col = column(&header, &columns.sentence)?;
    let annotation_col = column(&header, &columns.annotation)?;
    let id_col = columns.id.as_deref().and_then(|c| column(&header, c).ok());
    let split_col = columns.split.as_deref().and_then(|c| column(&header, c).ok());

    let mut samples = Vec::new();
    let mut ids = HashSet::new();
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 2;
        let record = record.map_err(|e| Error::Value {
            row,
            message: e.to_string(),
        })?;
        let field = |col: usize| record.get(col).unwrap_or("");
        if let Some(c) = split_col {
            if !ukp_split_matches(field(c), split) {
                continue;
            }
        }
        let raw = field(annotation_col).trim();
        let label = if raw == columns.favor {
            StanceLabel::Favor
        } else if raw == columns.against {
            StanceLabel::Against
        } else if raw == columns.neutral {
            StanceLabel::Neutral
        } else {
            return Err(Error::Value {
                row,
                message: format!("unknown annotation {raw:?}"),
            });
        };
        let mut id = match id_col {
            Some(c) if !field(c).trim().is_empty() => field(c).trim().to_string(),
            _ => format!("row{row}"),
        };
        if ids.contains(&id) {
            id = format!("{id}#{row}");
        }
        ids.insert(id.clone());
        samples.push(Sample::new(id, field(sentence_col), field(topic_col), Some(label)));
    }
    Dataset::new(dataset_name(path), split, samples)
}

/// Writes the canonical JSONL form: one object per sample with keys
/// `id`, `comment`, `target`, `label` (string or null), `tags`.
pub fn write_jsonl<W: Write>(d: &Dataset, mut out: W) -> Result<()> {
    for s in d.samples() {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n").map_err(|e| Error::io("<jsonl writer>", e))?;
    }
    Ok(())
}

pub fn save_jsonl(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_jsonl(d, &mut buf)?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<R: BufRead>(reader: R, name: &str, split: Split) -> Result<Dataset> {
    let mut samples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<jsonl reader>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: Sample = serde_json::from_str(&line).map_err(|e| Error::Value {
            row: idx + 1,
            message: e.to_string(),
        })?;
        samples.push(sample);
    }
    Dataset::new(name, split, samples)
}

pub fn load_jsonl(path: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_jsonl(BufReader::new(file), &dataset_name(path), split)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetCounts {
    pub target: String,
    pub favor: usize,
    pub against: usize,
    pub neutral: usize,
    pub unlabeled: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsTable {
    /// Rows sorted by target.
    pub rows: Vec<TargetCounts>,
    pub grand_total: usize,
}

impl StatsTable {
    pub fn row(&self, target: &str) -> Option<&TargetCounts> {
        self.rows.iter().find(|r| r.target == target)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("target,favor,against,neutral,unlabeled,total\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                csv_field(&r.target),
                r.favor,
                r.against,
                r.neutral,
                r.unlabeled,
                r.total
            ));
        }
        out.push_str(&format!("TOTAL,,,,,{}\n", self.grand_total));
        out
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Per-target label counts.
pub fn stats(d: &Dataset) -> StatsTable {
    let mut rows: BTreeMap<&str, TargetCounts> = BTreeMap::new();
    for s in d.samples() {
        let row = rows.entry(s.target.as_str()).or_insert_with(|| TargetCounts {
            target: s.target.clone(),
            favor: 0,
            against: 0,
            neutral: 0,
            unlabeled: 0,
            total: 0,
        });
        match s.label {
            Some(StanceLabel::Favor) => row.favor += 1,
            Some(StanceLabel::Against) => row.against += 1,
            Some(StanceLabel::Neutral) => row.neutral += 1,
            None => row.unlabeled += 1,
        }
        row.total += 1;
    }
    StatsTable {
        rows: rows.into_values().collect(),
        grand_total: d.len(),
    }
}

/// Groups sample indices by target, preserving first-appearance order.
pub fn indices_by_target(d: &Dataset) -> Vec<(String, Vec<usize>)> {
    let mut order: Vec<(String, Vec<usize>)> = Vec::new();
    let mut slot: HashMap<&str, usize> = HashMap::new();
    for (i, s) in d.samples().iter().enumerate() {
        let k = *slot.entry(s.target.as_str()).or_insert_with(|| {
            order.push((s.target.clone(), Vec::new()));
            order.len() - 1
        });
        order[k].1.push(i);
    }
    order
}
