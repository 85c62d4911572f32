//! Labelled texts: ingestion, hashing tokenizer, stratified splitting and
//! batching.

mod synth;

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

pub use synth::{pseudo_word, synth_generate, SynthConfig};

/// Longest token sequence fed to the encoder.
pub const MAX_SEQ_LEN: usize = 128;

/// Number of hash buckets in the default tokenizer.
pub const DEFAULT_VOCAB_SIZE: usize = 1 << 15;

/// Padding marker in [`LabeledBatch::ids`].
pub const PAD: u32 = u32::MAX;

/// The seven bragging types, in class-index order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    NotBragging,
    Achievement,
    Action,
    Feeling,
    Trait,
    Possession,
    Affiliation,
}

impl Label {
    pub const ALL: [Label; 7] = [
        Label::NotBragging,
        Label::Achievement,
        Label::Action,
        Label::Feeling,
        Label::Trait,
        Label::Possession,
        Label::Affiliation,
    ];

    pub const COUNT: usize = Self::ALL.len();

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Label> {
        Self::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::NotBragging => "not_bragging",
            Label::Achievement => "achievement",
            Label::Action => "action",
            Label::Feeling => "feeling",
            Label::Trait => "trait",
            Label::Possession => "possession",
            Label::Affiliation => "affiliation",
        }
    }

    pub fn is_bragging(self) -> bool {
        self != Label::NotBragging
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Label::ALL
            .iter()
            .copied()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| {
                let valid: Vec<&str> = Label::ALL.iter().map(|l| l.as_str()).collect();
                Error::Contract(format!(
                    "unknown label {s:?}; valid labels are {}",
                    valid.join(", ")
                ))
            })
    }
}

/// Whether the classifier predicts all seven types or bragging vs. not.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    #[default]
    Multiclass,
    Binary,
}

impl LabelMode {
    pub fn num_classes(self) -> usize {
        match self {
            LabelMode::Multiclass => Label::COUNT,
            LabelMode::Binary => 2,
        }
    }

    pub fn class_of(self, label: Label) -> usize {
        match self {
            LabelMode::Multiclass => label.index(),
            LabelMode::Binary => usize::from(label.is_bragging()),
        }
    }

    pub fn class_names(self) -> Vec<&'static str> {
        match self {
            LabelMode::Multiclass => Label::ALL.iter().map(|l| l.as_str()).collect(),
            LabelMode::Binary => vec!["not_bragging", "bragging"],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub text: String,
    pub label: Label,
}

impl Example {
    pub fn new(text: impl Into<String>, label: Label) -> Self {
        Self {
            text: text.into(),
            label,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Jsonl,
    Tsv,
}

impl Format {
    /// Guesses from the file extension; anything but `.tsv` is JSONL.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") => Format::Tsv,
            _ => Format::Jsonl,
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(Format::Jsonl),
            "tsv" => Ok(Format::Tsv),
            other => Err(Error::Config(format!(
                "unknown dataset format {other:?} (expected jsonl or tsv)"
            ))),
        }
    }
}

#[derive(Deserialize)]
struct Record {
    text: String,
    label: String,
}

/// Reads examples in file order. Blank lines are skipped.
pub fn load_dataset(path: &Path, format: Format) -> Result<Vec<Example>> {
    let content = fs::read_to_string(path)?;
    let examples = parse_dataset(&content, format, path)?;
    if examples.is_empty() {
        log::warn!("dataset {} is empty", path.display());
    }
    Ok(examples)
}

pub fn parse_dataset(content: &str, format: Format, path: &Path) -> Result<Vec<Example>> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (text, label) = match format {
            Format::Jsonl => {
                let record: Record = serde_json::from_str(line)
                    .map_err(|e| parse_err(line_no, format!("malformed record: {e}")))?;
                (record.text, record.label)
            }
            Format::Tsv => {
                let mut cols = line.split('\t');
                let (Some(text), Some(label)) = (cols.next(), cols.next()) else {
                    return Err(parse_err(line_no, "expected text<TAB>label".into()));
                };
                if cols.next().is_some() {
                    return Err(parse_err(
                        line_no,
                        "more than two columns; tabs inside text are not supported".into(),
                    ));
                }
                (text.to_string(), label.to_string())
            }
        };
        let label = label
            .trim()
            .parse::<Label>()
            .map_err(|e| parse_err(line_no, e.to_string()))?;
        out.push(Example { text, label });
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, examples: &[Example]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for ex in examples {
        serde_json::to_writer(&mut w, ex)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// FNV-1a; stable across platforms and releases, unlike `DefaultHasher`.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

/// Lowercases, splits on whitespace and punctuation (each punctuation mark
/// is its own token) and hashes every token into `vocab_size` buckets.
/// Output is truncated to `max_len` ids.
pub fn tokenize(text: &str, max_len: usize, vocab_size: usize) -> Vec<u32> {
    assert!(vocab_size > 0 && vocab_size <= u32::MAX as usize);
    let bucket = |tok: &str| (fnv1a(tok.as_bytes()) % vocab_size as u64) as u32;
    let lowered = text.to_lowercase();
    let mut ids = Vec::new();
    let mut word = String::new();
    for ch in lowered.chars() {
        if ids.len() >= max_len {
            break;
        }
        if ch.is_alphanumeric() {
            word.push(ch);
            continue;
        }
        if !word.is_empty() {
            ids.push(bucket(&word));
            word.clear();
        }
        if !ch.is_whitespace() && ids.len() < max_len {
            let mut buf = [0u8; 4];
            ids.push(bucket(ch.encode_utf8(&mut buf)));
        }
    }
    if !word.is_empty() && ids.len() < max_len {
        ids.push(bucket(&word));
    }
    ids
}

/// Tokenized example with its class index under some [`LabelMode`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedExample {
    pub ids: Vec<u32>,
    pub class: usize,
}

pub fn encode_examples(
    examples: &[Example],
    mode: LabelMode,
    max_len: usize,
    vocab_size: usize,
) -> Vec<EncodedExample> {
    examples
        .iter()
        .map(|ex| EncodedExample {
            ids: tokenize(&ex.text, max_len, vocab_size),
            class: mode.class_of(ex.label),
        })
        .collect()
}

/// Padded token-id matrix plus labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledBatch {
    /// Row-major `len() × width`, padded with [`PAD`].
    pub ids: Vec<u32>,
    pub width: usize,
    pub lengths: Vec<usize>,
    pub labels: Vec<usize>,
}

impl LabeledBatch {
    pub fn from_examples<'a>(examples: impl IntoIterator<Item = &'a EncodedExample>) -> Self {
        let examples: Vec<&EncodedExample> = examples.into_iter().collect();
        let width = examples.iter().map(|e| e.ids.len()).max().unwrap_or(0);
        let mut ids = Vec::with_capacity(examples.len() * width);
        for ex in &examples {
            ids.extend_from_slice(&ex.ids);
            ids.extend(std::iter::repeat_n(PAD, width - ex.ids.len()));
        }
        Self {
            ids,
            width,
            lengths: examples.iter().map(|e| e.ids.len()).collect(),
            labels: examples.iter().map(|e| e.class).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Unpadded sequences, as the embedding pooling op expects them.
    pub fn sequences(&self) -> Vec<Vec<usize>> {
        (0..self.len())
            .map(|r| {
                self.ids[r * self.width..r * self.width + self.lengths[r]]
                    .iter()
                    .map(|&id| id as usize)
                    .collect()
            })
            .collect()
    }
}

/// Per-class proportional train/dev split. Within each split, examples keep
/// their input order.
pub fn stratified_split(
    examples: &[Example],
    dev_fraction: f64,
    seed: u64,
) -> Result<(Vec<Example>, Vec<Example>)> {
    if !(0.0..1.0).contains(&dev_fraction) {
        return Err(Error::Config(format!(
            "dev fraction {dev_fraction} outside [0, 1)"
        )));
    }
    let mut rng = stream_rng(seed, Stream::Split, 0);
    let mut dev_mask = vec![false; examples.len()];
    for label in Label::ALL {
        let mut members: Vec<usize> = examples
            .iter()
            .enumerate()
            .filter(|(_, e)| e.label == label)
            .map(|(i, _)| i)
            .collect();
        let n = members.len();
        if n == 0 {
            continue;
        }
        if n == 1 {
            log::warn!("label {label} has a single example; keeping it in train");
            continue;
        }
        let n_dev = ((n as f64 * dev_fraction).round() as usize).clamp(1, n - 1);
        members.shuffle(&mut rng);
        for &i in &members[..n_dev] {
            dev_mask[i] = true;
        }
    }
    let mut train = Vec::new();
    let mut dev = Vec::new();
    for (ex, is_dev) in examples.iter().zip(dev_mask) {
        if is_dev {
            dev.push(ex.clone());
        } else {
            train.push(ex.clone());
        }
    }
    Ok((train, dev))
}

/// Count of examples per class index.
pub fn class_counts(examples: &[EncodedExample], num_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; num_classes];
    for ex in examples {
        counts[ex.class] += 1;
    }
    counts
}
