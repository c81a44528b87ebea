//! Labeled document collections.
//!
//! A corpus file holds one JSON record per line with the fields `id`,
//! `text` and `label`, where `label` is `"responsive"` or `"nonresponsive"`.
//! Blank lines are ignored. Record order is preserved on load and on write.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Responsive,
    Nonresponsive,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Responsive => "responsive",
            Label::Nonresponsive => "nonresponsive",
        }
    }

    pub fn is_responsive(self) -> bool {
        self == Label::Responsive
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub label: Label,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>, label: Label) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            label,
        }
    }
}

/// Ordered documents with unique ids.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    documents: Vec<Document>,
    n_responsive: usize,
}

impl Corpus {
    /// Build a corpus, rejecting empty or duplicate ids.
    pub fn new(documents: Vec<Document>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(documents.len());
        for (i, doc) in documents.iter().enumerate() {
            if doc.id.is_empty() {
                return Err(Error::MalformedRecord {
                    line: i + 1,
                    message: "empty document id".into(),
                });
            }
            if !seen.insert(doc.id.as_str()) {
                return Err(Error::DuplicateId {
                    line: i + 1,
                    id: doc.id.clone(),
                });
            }
        }
        Ok(Self::from_checked(documents))
    }

    fn from_checked(documents: Vec<Document>) -> Self {
        let n_responsive = documents.iter().filter(|d| d.label.is_responsive()).count();
        Self {
            documents,
            n_responsive,
        }
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn into_documents(self) -> Vec<Document> {
        self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    /// `(responsive, nonresponsive)` document counts.
    pub fn counts(&self) -> (usize, usize) {
        (self.n_responsive, self.documents.len() - self.n_responsive)
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.id == id)
    }

    pub fn with_label(&self, label: Label) -> impl Iterator<Item = &Document> + '_ {
        self.documents.iter().filter(move |d| d.label == label)
    }

    pub fn responsive(&self) -> impl Iterator<Item = &Document> + '_ {
        self.with_label(Label::Responsive)
    }

    pub fn nonresponsive(&self) -> impl Iterator<Item = &Document> + '_ {
        self.with_label(Label::Nonresponsive)
    }
}

#[derive(Deserialize)]
struct RawRecord {
    id: String,
    text: String,
    label: String,
}

#[derive(Serialize)]
struct RecordRef<'a> {
    id: &'a str,
    text: &'a str,
    label: Label,
}

fn parse_label(raw: &str, line: usize) -> Result<Label> {
    match raw {
        "responsive" => Ok(Label::Responsive),
        "nonresponsive" => Ok(Label::Nonresponsive),
        other => Err(Error::UnknownLabel {
            line,
            label: other.to_string(),
        }),
    }
}

/// Parse corpus records from a reader. Line numbers in errors are 1-based.
pub fn read_corpus<R: BufRead>(reader: R) -> Result<Corpus> {
    let mut documents = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::MalformedRecord {
            line: lineno,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            line: lineno,
            message: e.to_string(),
        })?;
        if raw.id.is_empty() {
            return Err(Error::MalformedRecord {
                line: lineno,
                message: "empty document id".into(),
            });
        }
        let label = parse_label(&raw.label, lineno)?;
        if !seen.insert(raw.id.clone()) {
            return Err(Error::DuplicateId {
                line: lineno,
                id: raw.id,
            });
        }
        documents.push(Document {
            id: raw.id,
            text: raw.text,
            label,
        });
    }
    Ok(Corpus::from_checked(documents))
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(BufReader::new(file))
}

pub fn write_corpus<W: Write>(corpus: &Corpus, mut writer: W) -> Result<()> {
    for doc in corpus.documents() {
        let record = RecordRef {
            id: &doc.id,
            text: &doc.text,
            label: doc.label,
        };
        serde_json::to_writer(&mut writer, &record)?;
        writer
            .write_all(b"\n")
            .map_err(|e| Error::io("<corpus writer>", e))?;
    }
    Ok(())
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    write_corpus(corpus, &mut writer)?;
    writer.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Corpus,
    pub test: Corpus,
    pub seed: u64,
}

/// Stratified train/test split.
///
/// Each label class is shuffled independently and its first
/// `floor(n * train_fraction)` members go to the training side. Both sides
/// keep the source corpus order.
pub fn split_corpus(corpus: &Corpus, train_fraction: f64, seed: u64) -> Result<Split> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut in_train = vec![false; corpus.len()];
    for (stream, label) in [Label::Responsive, Label::Nonresponsive]
        .into_iter()
        .enumerate()
    {
        let mut members: Vec<usize> = corpus
            .documents
            .iter()
            .enumerate()
            .filter(|(_, d)| d.label == label)
            .map(|(i, _)| i)
            .collect();
        if members.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "cannot split: {} {label} document(s), need at least 2",
                members.len()
            )));
        }
        let mut rng = seed::rng(seed::derive(seed, stream as u64));
        members.shuffle(&mut rng);
        let n_train = (members.len() as f64 * train_fraction).floor() as usize;
        for &i in &members[..n_train] {
            in_train[i] = true;
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (doc, keep) in corpus.documents.iter().zip(in_train) {
        if keep {
            train.push(doc.clone());
        } else {
            test.push(doc.clone());
        }
    }
    Ok(Split {
        train: Corpus::from_checked(train),
        test: Corpus::from_checked(test),
        seed,
    })
}
