//! Synthetic labeled corpora with planted rationales.
//!
//! Nonresponsive documents are Zipf-distributed background words.
//! Responsive documents are background text with one or more planted
//! passages in which each token is a topic word with probability
//! `signal_strength`. The planted spans are the ground-truth rationales.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document, Label, Split};
use crate::error::{Error, Result};
use crate::rationale::ScoredSnippet;
use crate::seed;

const ONSETS: [&str; 16] = [
    "b", "d", "f", "g", "h", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "ch",
];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

/// Pseudo-word for vocabulary index `i`: a unique, unambiguous syllable string.
pub fn pseudo_word(i: usize) -> String {
    let base = ONSETS.len() * VOWELS.len();
    // bijective base-80 numeral of i + base + 1: at least two syllables
    let mut n = i + base + 1;
    let mut syllables = Vec::new();
    while n > 0 {
        n -= 1;
        let d = n % base;
        syllables.push(format!(
            "{}{}",
            ONSETS[d / VOWELS.len()],
            VOWELS[d % VOWELS.len()]
        ));
        n /= base;
    }
    syllables.reverse();
    syllables.concat()
}

pub const MAX_PLANTS_PER_DOC: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_responsive: usize,
    pub n_nonresponsive: usize,
    /// Inclusive document length bounds, in tokens.
    pub doc_length: (usize, usize),
    pub plant_length: usize,
    /// Inclusive bounds on planted passages per responsive document.
    pub plants_per_doc: (usize, usize),
    pub background_vocab: usize,
    pub topic_vocab: usize,
    /// Probability that a planted token is a topic word.
    pub signal_strength: f64,
    /// Fraction of the topic vocabulary that also occurs in background text.
    pub vocab_overlap: f64,
    /// Fraction of nonresponsive documents that still carry one planted
    /// passage (topic discussion that was reviewed as nonresponsive).
    pub nonresponsive_plant_rate: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_responsive: 200,
            n_nonresponsive: 600,
            doc_length: (200, 600),
            plant_length: 50,
            plants_per_doc: (1, 1),
            background_vocab: 3000,
            topic_vocab: 150,
            signal_strength: 1.0,
            vocab_overlap: 0.0,
            nonresponsive_plant_rate: 0.0,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        let (lo, hi) = self.doc_length;
        let (pmin, pmax) = self.plants_per_doc;
        if lo == 0 || lo > hi {
            return bad(format!("invalid document length range {lo}..={hi}"));
        }
        if self.plant_length == 0 {
            return bad("plant length must be >= 1".into());
        }
        if pmin == 0 || pmin > pmax || pmax > MAX_PLANTS_PER_DOC {
            return bad(format!("invalid plants-per-document range {pmin}..={pmax}"));
        }
        if self.plant_length * pmax > lo {
            return bad(format!(
                "{pmax} plant(s) of {} tokens do not fit in a {lo}-token document",
                self.plant_length
            ));
        }
        if self.background_vocab == 0 || self.topic_vocab == 0 {
            return bad("vocabularies must be nonempty".into());
        }
        if !(self.signal_strength > 0.0 && self.signal_strength <= 1.0) {
            return bad(format!(
                "signal strength must lie in (0, 1], got {}",
                self.signal_strength
            ));
        }
        for (name, v) in [
            ("vocab overlap", self.vocab_overlap),
            ("nonresponsive plant rate", self.nonresponsive_plant_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        Ok(())
    }

    pub fn background_words(&self) -> Vec<String> {
        (0..self.background_vocab).map(pseudo_word).collect()
    }

    pub fn topic_words(&self) -> Vec<String> {
        (self.background_vocab..self.background_vocab + self.topic_vocab)
            .map(pseudo_word)
            .collect()
    }
}

/// A planted passage `[start, start + length)` in token positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub length: usize,
}

impl Span {
    pub fn end(&self) -> usize {
        self.start + self.length
    }
}

/// Planted spans of each responsive document.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GroundTruth {
    pub spans: BTreeMap<String, Vec<Span>>,
}

#[derive(Serialize, Deserialize)]
struct SpanRecord {
    doc_id: String,
    start: usize,
    length: usize,
}

impl GroundTruth {
    pub fn get(&self, doc_id: &str) -> Option<&[Span]> {
        self.spans.get(doc_id).map(Vec::as_slice)
    }

    pub fn write<W: Write>(&self, mut writer: W) -> Result<()> {
        for (doc_id, spans) in &self.spans {
            for s in spans {
                let rec = SpanRecord {
                    doc_id: doc_id.clone(),
                    start: s.start,
                    length: s.length,
                };
                serde_json::to_writer(&mut writer, &rec)?;
                writer
                    .write_all(b"\n")
                    .map_err(|e| Error::io("<truth writer>", e))?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut truth = GroundTruth::default();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: SpanRecord =
                serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            truth.spans.entry(rec.doc_id).or_default().push(Span {
                start: rec.start,
                length: rec.length,
            });
        }
        Ok(truth)
    }
}

struct Vocab {
    background: Vec<String>,
    background_dist: WeightedIndex<f64>,
    topic: Vec<String>,
}

impl Vocab {
    fn new(cfg: &GenConfig) -> Self {
        let mut background = cfg.background_words();
        let topic = cfg.topic_words();
        let shared = (cfg.vocab_overlap * topic.len() as f64).round() as usize;
        // Shared topic words take evenly spaced ranks in the background list.
        if let Some(stride) = background.len().checked_div(shared) {
            let stride = stride.max(1);
            for (j, w) in topic.iter().take(shared).enumerate() {
                let at = (j * stride + stride / 2).min(background.len() - j);
                background.insert(at + j, w.clone());
            }
        }
        let weights: Vec<f64> = (0..background.len())
            .map(|r| 1.0 / (r as f64 + 1.0))
            .collect();
        Vocab {
            background_dist: WeightedIndex::new(&weights).expect("positive weights"),
            background,
            topic,
        }
    }

    fn background_word<R: Rng>(&self, rng: &mut R) -> &str {
        &self.background[self.background_dist.sample(rng)]
    }
}

fn plant_spans<R: Rng>(rng: &mut R, len: usize, plant: usize, count: usize) -> Vec<Span> {
    let slack = len - plant * count;
    let mut offsets: Vec<usize> = (0..count).map(|_| rng.random_range(0..=slack)).collect();
    offsets.sort_unstable();
    offsets
        .into_iter()
        .enumerate()
        .map(|(j, o)| Span {
            start: o + j * plant,
            length: plant,
        })
        .collect()
}

fn generate_doc(
    cfg: &GenConfig,
    vocab: &Vocab,
    prefix: &str,
    index: usize,
    label: Label,
) -> (Document, Vec<Span>) {
    let mut rng = seed::rng(seed::derive(cfg.seed, index as u64 + 1));
    let len = rng.random_range(cfg.doc_length.0..=cfg.doc_length.1);
    let spans = match label {
        Label::Responsive => {
            let count = rng.random_range(cfg.plants_per_doc.0..=cfg.plants_per_doc.1);
            plant_spans(&mut rng, len, cfg.plant_length, count)
        }
        Label::Nonresponsive if rng.random_bool(cfg.nonresponsive_plant_rate) => {
            plant_spans(&mut rng, len, cfg.plant_length, 1)
        }
        Label::Nonresponsive => Vec::new(),
    };
    let mut in_plant = vec![false; len];
    for s in &spans {
        in_plant[s.start..s.end()]
            .iter_mut()
            .for_each(|p| *p = true);
    }
    let mut text = String::with_capacity(len * 8);
    for (i, planted) in in_plant.into_iter().enumerate() {
        if i > 0 {
            text.push(if i % 16 == 0 { '\n' } else { ' ' });
        }
        if planted && rng.random_bool(cfg.signal_strength) {
            text.push_str(&vocab.topic[rng.random_range(0..vocab.topic.len())]);
        } else {
            text.push_str(vocab.background_word(&mut rng));
        }
    }
    let doc = Document::new(format!("{prefix}{index:06}"), text, label);
    // Only responsive documents have rationales.
    let truth = if label.is_responsive() {
        spans
    } else {
        Vec::new()
    };
    (doc, truth)
}

/// Generate a corpus and its planted spans. Deterministic in `cfg`.
pub fn generate(cfg: &GenConfig) -> Result<(Corpus, GroundTruth)> {
    generate_prefixed(cfg, "d")
}

/// Independent training and test corpora: the training corpus is
/// `generate(cfg)`, the test corpus has `test_counts` (responsive,
/// nonresponsive) documents drawn from the same vocabularies with a derived
/// seed and ids prefixed `t`. Returns the split and the test ground truth.
pub fn benchmark_split(
    cfg: &GenConfig,
    test_counts: (usize, usize),
) -> Result<(Split, GroundTruth)> {
    let (train, _) = generate(cfg)?;
    let test_cfg = GenConfig {
        n_responsive: test_counts.0,
        n_nonresponsive: test_counts.1,
        seed: seed::derive(cfg.seed, u64::MAX - 1),
        ..cfg.clone()
    };
    let (test, truth) = generate_prefixed(&test_cfg, "t")?;
    Ok((
        Split {
            train,
            test,
            seed: cfg.seed,
        },
        truth,
    ))
}

fn generate_prefixed(cfg: &GenConfig, prefix: &str) -> Result<(Corpus, GroundTruth)> {
    cfg.validate()?;
    let vocab = Vocab::new(cfg);
    let mut labels: Vec<Label> = std::iter::repeat_n(Label::Responsive, cfg.n_responsive)
        .chain(std::iter::repeat_n(
            Label::Nonresponsive,
            cfg.n_nonresponsive,
        ))
        .collect();
    labels.shuffle(&mut seed::rng(seed::derive(cfg.seed, u64::MAX)));

    let generated: Vec<(Document, Vec<Span>)> = labels
        .par_iter()
        .enumerate()
        .map(|(i, &label)| generate_doc(cfg, &vocab, prefix, i, label))
        .collect();
    let mut truth = GroundTruth::default();
    let mut docs = Vec::with_capacity(generated.len());
    for (doc, spans) in generated {
        if doc.label.is_responsive() {
            truth.spans.insert(doc.id.clone(), spans);
        }
        docs.push(doc);
    }
    Ok((Corpus::new(docs)?, truth))
}

/// Fraction of `doc_id`'s planted spans that at least one of the top `top_k`
/// ranked snippets covers by half the span's length or more.
pub fn rationale_recall(
    doc_id: &str,
    ranked: &[ScoredSnippet],
    truth: &GroundTruth,
    top_k: usize,
) -> Result<f64> {
    let spans = truth.get(doc_id).ok_or_else(|| {
        Error::InvalidArgument(format!("document {doc_id:?} has no ground truth"))
    })?;
    if spans.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "document {doc_id:?} has no planted spans"
        )));
    }
    if let Some(other) = ranked.iter().find(|s| s.snippet.doc_id != doc_id) {
        return Err(Error::InvalidArgument(format!(
            "ranking mixes documents {doc_id:?} and {:?}",
            other.snippet.doc_id
        )));
    }
    let top = &ranked[..top_k.min(ranked.len())];
    let hit = spans
        .iter()
        .filter(|sp| {
            top.iter()
                .any(|s| 2 * s.snippet.overlap(sp.start, sp.length) >= sp.length)
        })
        .count();
    Ok(hit as f64 / spans.len() as f64)
}
