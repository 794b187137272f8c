//! Dataset ingestion and deterministic member / non-member / reference splits.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: text is empty")]
    EmptyText { line: usize },
    #[error("invalid split fractions {0:?}: must be nonnegative and sum to at most 1")]
    InvalidFractions([f64; 3]),
    #[error("need at least 3 samples to split, got {0}")]
    TooFewSamples(usize),
    #[error("{partition} partition is empty although its fraction is {fraction}")]
    EmptyPartition {
        partition: &'static str,
        fraction: f64,
    },
    #[error("unknown dataset format {0:?} (expected jsonl or lines)")]
    UnknownFormat(String),
}

/// Membership ground truth of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Member,
    Nonmember,
    #[default]
    Unknown,
}

/// One unit of text. `tokens` is only populated once an oracle has tokenized it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextSample {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<String>>,
    #[serde(default)]
    pub label: Label,
}

impl TextSample {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            tokens: None,
            label: Label::Unknown,
        }
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = label;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    Jsonl,
    Lines,
}

impl FromStr for DatasetFormat {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(Self::Jsonl),
            "lines" | "plaintext-lines" => Ok(Self::Lines),
            other => Err(CorpusError::UnknownFormat(other.to_string())),
        }
    }
}

impl fmt::Display for DatasetFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Jsonl => "jsonl",
            Self::Lines => "lines",
        })
    }
}

#[derive(Deserialize)]
struct JsonlRecord {
    id: String,
    text: String,
    #[serde(default)]
    label: Label,
}

/// Reads samples in file order. Plaintext lines are numbered `line-<k>` from 1;
/// blank lines are skipped but still counted.
pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Vec<TextSample>, CorpusError> {
    let file = fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_dataset(BufReader::new(file), format).map_err(|e| match e {
        CorpusError::Io { source, .. } => CorpusError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

pub fn read_dataset<R: BufRead>(reader: R, format: DatasetFormat) -> Result<Vec<TextSample>, CorpusError> {
    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: PathBuf::new(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let sample = match format {
            DatasetFormat::Jsonl => {
                let rec: JsonlRecord =
                    serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                        line: line_no,
                        message: e.to_string(),
                    })?;
                TextSample {
                    id: rec.id,
                    text: rec.text,
                    tokens: None,
                    label: rec.label,
                }
            }
            DatasetFormat::Lines => TextSample::new(format!("line-{line_no}"), line),
        };
        if sample.text.trim().is_empty() {
            return Err(CorpusError::EmptyText { line: line_no });
        }
        if !seen.insert(sample.id.clone()) {
            return Err(CorpusError::DuplicateId {
                line: line_no,
                id: sample.id,
            });
        }
        samples.push(sample);
    }
    Ok(samples)
}

#[derive(Serialize)]
struct JsonlRecordRef<'a> {
    id: &'a str,
    text: &'a str,
    label: Label,
}

/// Writes samples in the canonical JSONL schema.
pub fn write_jsonl<W: Write>(mut out: W, samples: &[TextSample]) -> std::io::Result<()> {
    for s in samples {
        let rec = JsonlRecordRef {
            id: &s.id,
            text: &s.text,
            label: s.label,
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub members: Vec<TextSample>,
    pub nonmembers: Vec<TextSample>,
    pub reference_pool: Vec<TextSample>,
}

impl DatasetSplit {
    /// Members followed by nonmembers, the evaluation population.
    pub fn evaluation_samples(&self) -> Vec<TextSample> {
        self.members
            .iter()
            .chain(&self.nonmembers)
            .cloned()
            .collect()
    }
}

/// Shuffles with a seeded ChaCha stream, then cuts contiguous partitions of
/// `floor(fraction * len)` samples each. Labels are overwritten.
pub fn split_corpus(
    samples: &[TextSample],
    fractions: [f64; 3],
    seed: u64,
) -> Result<DatasetSplit, CorpusError> {
    if fractions.iter().any(|f| !f.is_finite() || *f < 0.0)
        || fractions.iter().sum::<f64>() > 1.0 + 1e-12
    {
        return Err(CorpusError::InvalidFractions(fractions));
    }
    if samples.len() < 3 {
        return Err(CorpusError::TooFewSamples(samples.len()));
    }

    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let total = samples.len();
    let sizes = fractions.map(|f| (f * total as f64 + 1e-9).floor() as usize);
    let names = ["member", "nonmember", "reference"];
    for ((size, fraction), name) in sizes.iter().zip(fractions).zip(names) {
        if fraction > 0.0 && *size == 0 {
            return Err(CorpusError::EmptyPartition {
                partition: name,
                fraction,
            });
        }
    }

    let take = |range: std::ops::Range<usize>, label: Label| -> Vec<TextSample> {
        order[range]
            .iter()
            .map(|&i| {
                let mut s = samples[i].clone();
                s.label = label;
                s
            })
            .collect()
    };
    let (a, b, c) = (sizes[0], sizes[0] + sizes[1], sizes[0] + sizes[1] + sizes[2]);
    Ok(DatasetSplit {
        members: take(0..a, Label::Member),
        nonmembers: take(a..b, Label::Nonmember),
        reference_pool: take(b..c, Label::Unknown),
    })
}
