//! Rationale detection without annotated snippets.
//!
//! Three ways to obtain a model that scores snippets:
//!
//! * the **document-level** baseline scores snippets with the model trained
//!   on whole documents;
//! * the **snippet method** uses that document model to pick high-scoring
//!   snippets of responsive training documents, pairs them with randomly
//!   sampled snippets of nonresponsive documents, and retrains on snippets;
//! * the **iterative snippet method** repeats the snippet method starting
//!   from large snippets and halving their size each round, each round
//!   selecting with the previous round's model.
//!
//! A document's rationales are its snippets ranked by the rationale model,
//! produced only for documents the document model calls responsive.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{fit_pipeline, Provenance, TrainConfig, TrainedModel, DECISION_THRESHOLD};
use crate::corpus::{Corpus, Document, Label};
use crate::error::{Error, Result};
use crate::seed;
use crate::tokenize::{schedule_snippets, tokenize_doc, Snippet, TokenSeq};

/// Default snippet size, in tokens.
pub const DEFAULT_SNIPPET_SIZE: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSnippet {
    pub snippet: Snippet,
    pub score: f64,
    pub scoring_model: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub min_score_th: f64,
    pub max_num: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            min_score_th: 0.8,
            max_num: 500,
        }
    }
}

impl SelectionConfig {
    /// Phase-one threshold; fixed, independent of `min_score_th`.
    pub const BASE_TH: f64 = 0.5;

    pub fn validate(&self) -> Result<()> {
        if !(self.min_score_th >= Self::BASE_TH && self.min_score_th < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "min score threshold must lie in [0.5, 1), got {}",
                self.min_score_th
            )));
        }
        if self.max_num == 0 {
            return Err(Error::InvalidArgument("max num must be >= 1".into()));
        }
        Ok(())
    }
}

/// Snippet-size schedule of the iterative method.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterConfig {
    pub start_size: usize,
    pub min_size: usize,
}

impl Default for IterConfig {
    fn default() -> Self {
        Self {
            start_size: 1000,
            min_size: DEFAULT_SNIPPET_SIZE,
        }
    }
}

impl IterConfig {
    pub fn validate(&self) -> Result<()> {
        let even = |n: usize| n >= 2 && n.is_multiple_of(2);
        if !even(self.start_size) || !even(self.min_size) || self.start_size < self.min_size {
            return Err(Error::InvalidArgument(format!(
                "snippet sizes must be even with start ({}) >= min ({}) >= 2",
                self.start_size, self.min_size
            )));
        }
        Ok(())
    }

    /// Sizes visited: halve (flooring) while above the minimum, clamp to the
    /// minimum, and stop after the round at the minimum.
    pub fn schedule(&self) -> Vec<usize> {
        let mut sizes = Vec::new();
        let mut n = self.start_size;
        loop {
            sizes.push(n);
            if n > self.min_size {
                n = (n / 2).max(self.min_size);
            } else {
                break;
            }
        }
        sizes
    }
}

/// Configuration shared by the snippet and iterative methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodConfig {
    pub train: TrainConfig,
    pub selection: SelectionConfig,
    /// Nonresponsive snippets sampled per selected responsive snippet.
    pub negatives_per_positive: f64,
}

impl Default for MethodConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            selection: SelectionConfig::default(),
            negatives_per_positive: 1.0,
        }
    }
}

impl MethodConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.selection.validate()?;
        if !(self.negatives_per_positive > 0.0 && self.negatives_per_positive.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "negatives per positive must be > 0, got {}",
                self.negatives_per_positive
            )));
        }
        Ok(())
    }
}

/// Nonempty token sequences of a corpus, by class, in corpus order.
#[derive(Debug, Clone, Default)]
pub struct TokenizedCorpus {
    pub responsive: Vec<TokenSeq>,
    pub nonresponsive: Vec<TokenSeq>,
}

impl TokenizedCorpus {
    pub fn new(corpus: &Corpus) -> Self {
        let seqs: Vec<(Label, TokenSeq)> = corpus
            .documents()
            .par_iter()
            .map(|d| (d.label, tokenize_doc(d.id.clone(), &d.text)))
            .collect();
        let mut out = TokenizedCorpus::default();
        for (label, seq) in seqs {
            if seq.is_empty() {
                log::warn!("document {:?} has no tokens; skipped", seq.doc_id);
                continue;
            }
            match label {
                Label::Responsive => out.responsive.push(seq),
                Label::Nonresponsive => out.nonresponsive.push(seq),
            }
        }
        out
    }
}

fn tokenize_nonempty(docs: &[&Document]) -> Vec<TokenSeq> {
    docs.par_iter()
        .map(|d| tokenize_doc(d.id.clone(), &d.text))
        .collect::<Vec<_>>()
        .into_iter()
        .filter(|s| {
            if s.is_empty() {
                log::warn!("document {:?} has no tokens; skipped", s.doc_id);
            }
            !s.is_empty()
        })
        .collect()
}

fn by_doc_then_start(a: &ScoredSnippet, b: &ScoredSnippet) -> std::cmp::Ordering {
    a.snippet.cmp(&b.snippet)
}

fn score_seqs(model: &TrainedModel, seqs: &[TokenSeq], size: usize) -> Result<Vec<ScoredSnippet>> {
    let per_doc: Vec<Vec<ScoredSnippet>> = seqs
        .par_iter()
        .map(|seq| {
            let snippets = schedule_snippets(seq, size)?;
            Ok(snippets
                .into_iter()
                .map(|sn| {
                    let score = model.score_tokens(&seq.tokens[sn.start..sn.end()]);
                    ScoredSnippet {
                        snippet: sn,
                        score,
                        scoring_model: model.provenance,
                    }
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut all: Vec<ScoredSnippet> = per_doc.into_iter().flatten().collect();
    all.sort_by(by_doc_then_start);
    Ok(all)
}

/// Score every `size`-token snippet of every nonempty document, ordered by
/// `(doc_id, start)`.
pub fn score_all_snippets(
    model: &TrainedModel,
    docs: &[&Document],
    size: usize,
) -> Result<Vec<ScoredSnippet>> {
    check_snippet_size(size)?;
    score_seqs(model, &tokenize_nonempty(docs), size)
}

/// Result of responsive snippet selection.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Selection {
    /// Phase-one picks first, then phase-two additions, each in descending score.
    pub snippets: Vec<ScoredSnippet>,
    pub phase_one: usize,
}

impl Selection {
    pub fn len(&self) -> usize {
        self.snippets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snippets.is_empty()
    }

    pub fn phase_two(&self) -> usize {
        self.snippets.len() - self.phase_one
    }
}

/// Two-phase responsive snippet selection.
///
/// Snippets are visited in descending score (ties by doc id, then start).
/// Phase one takes the best snippet of every document scoring at least 0.5.
/// Phase two adds further snippets scoring at least `min_score_th` while the
/// running selected count is at most `max_num`; phase one is not capped.
pub fn select_responsive_snippets(scored: &[ScoredSnippet], cfg: &SelectionConfig) -> Selection {
    let mut order: Vec<&ScoredSnippet> = scored.iter().collect();
    order.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| by_doc_then_start(a, b))
    });

    let mut taken = vec![false; order.len()];
    let mut docs: HashSet<&str> = HashSet::new();
    let mut snippets = Vec::new();
    for (i, s) in order.iter().enumerate() {
        if s.score >= SelectionConfig::BASE_TH && docs.insert(s.snippet.doc_id.as_str()) {
            taken[i] = true;
            snippets.push((*s).clone());
        }
    }
    let phase_one = snippets.len();
    if phase_one > cfg.max_num {
        log::warn!(
            "phase one selected {phase_one} snippets, above max num {}; phase two adds none",
            cfg.max_num
        );
    }
    for (i, s) in order.iter().enumerate() {
        if !taken[i] && s.score >= cfg.min_score_th && snippets.len() <= cfg.max_num {
            taken[i] = true;
            snippets.push((*s).clone());
        }
    }
    Selection {
        snippets,
        phase_one,
    }
}

/// Uniform sample of `count` snippets without replacement, returned in pool
/// order. The whole pool is returned when it has at most `count` snippets.
pub fn sample_snippets(pool: &[Snippet], count: usize, seed: u64) -> Vec<Snippet> {
    if pool.len() <= count {
        return pool.to_vec();
    }
    let mut rng = seed::rng(seed);
    let mut picked = rand::seq::index::sample(&mut rng, pool.len(), count).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| pool[i].clone()).collect()
}

fn snippet_pool(seqs: &[TokenSeq], size: usize) -> Result<Vec<Snippet>> {
    let mut pool = Vec::new();
    for seq in seqs {
        pool.extend(schedule_snippets(seq, size)?);
    }
    Ok(pool)
}

/// Sample `count` snippets of `size` tokens from the pooled snippets of
/// `docs`.
pub fn sample_nonresponsive_snippets(
    docs: &[&Document],
    size: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<Snippet>> {
    check_snippet_size(size)?;
    let pool = snippet_pool(&tokenize_nonempty(docs), size)?;
    if pool.is_empty() {
        return Err(Error::InsufficientData(
            "no nonresponsive snippets to sample".into(),
        ));
    }
    Ok(sample_snippets(&pool, count, seed))
}

/// One selection-and-retraining round.
#[derive(Debug, Clone, PartialEq)]
pub struct Round {
    pub snippet_size: usize,
    pub scored: usize,
    pub selection: Selection,
    pub nonresponsive: Vec<Snippet>,
}

/// A trained rationale model plus the document model it started from and
/// the training snippets of each round.
#[derive(Debug, Clone)]
pub struct MethodRun {
    pub model: TrainedModel,
    pub doc_model: TrainedModel,
    pub rounds: Vec<Round>,
}

/// Train the document-level model on whole documents.
pub fn train_document_model(train: &Corpus, cfg: &TrainConfig) -> Result<TrainedModel> {
    let data = TokenizedCorpus::new(train);
    train_document_model_tokenized(&data, cfg)
}

pub fn train_document_model_tokenized(
    data: &TokenizedCorpus,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    let pos: Vec<&[String]> = data
        .responsive
        .iter()
        .map(|s| s.tokens.as_slice())
        .collect();
    let neg: Vec<&[String]> = data
        .nonresponsive
        .iter()
        .map(|s| s.tokens.as_slice())
        .collect();
    Ok(fit_pipeline(&pos, &neg, cfg)?.with_provenance(Provenance::DocumentLevel))
}

fn snippet_round(
    model: &TrainedModel,
    data: &TokenizedCorpus,
    size: usize,
    cfg: &MethodConfig,
    seed: u64,
    round: usize,
) -> Result<(TrainedModel, Round)> {
    let scored = score_seqs(model, &data.responsive, size)?;
    let selection = select_responsive_snippets(&scored, &cfg.selection);
    if selection.is_empty() {
        return Err(Error::NoRationales(format!(
            "round {round} at snippet size {size}: none of {} responsive snippets scored >= 0.5",
            scored.len()
        )));
    }
    let pool = snippet_pool(&data.nonresponsive, size)?;
    if pool.is_empty() {
        return Err(Error::InsufficientData(
            "no nonresponsive snippets to sample".into(),
        ));
    }
    let count = ((selection.len() as f64 * cfg.negatives_per_positive).round() as usize).max(1);
    let negatives = sample_snippets(&pool, count, seed);

    let resp: HashMap<&str, &TokenSeq> = data
        .responsive
        .iter()
        .map(|s| (s.doc_id.as_str(), s))
        .collect();
    let nonresp: HashMap<&str, &TokenSeq> = data
        .nonresponsive
        .iter()
        .map(|s| (s.doc_id.as_str(), s))
        .collect();
    let pos: Vec<&[String]> = selection
        .snippets
        .iter()
        .map(|s| s.snippet.tokens(resp[s.snippet.doc_id.as_str()]))
        .collect::<Result<_>>()?;
    let neg: Vec<&[String]> = negatives
        .iter()
        .map(|s| s.tokens(nonresp[s.doc_id.as_str()]))
        .collect::<Result<_>>()?;
    log::info!(
        "round {round}: size {size}, {} scored, {} selected ({} phase one), {} negatives",
        scored.len(),
        selection.len(),
        selection.phase_one,
        neg.len()
    );
    let next = fit_pipeline(&pos, &neg, &cfg.train)?;
    Ok((
        next,
        Round {
            snippet_size: size,
            scored: scored.len(),
            selection,
            nonresponsive: negatives,
        },
    ))
}

fn check_snippet_size(size: usize) -> Result<()> {
    if size < 2 || !size.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "snippet size must be an even number >= 2, got {size}"
        )));
    }
    Ok(())
}

/// Snippet method starting from an already trained document model.
pub fn train_snippet_method_from(
    doc_model: &TrainedModel,
    data: &TokenizedCorpus,
    size: usize,
    cfg: &MethodConfig,
) -> Result<MethodRun> {
    check_snippet_size(size)?;
    cfg.validate()?;
    let (model, round) = snippet_round(
        doc_model,
        data,
        size,
        cfg,
        seed::derive(cfg.train.seed, 0),
        0,
    )?;
    Ok(MethodRun {
        model: model.with_provenance(Provenance::SnippetModel { snippet_size: size }),
        doc_model: doc_model.clone(),
        rounds: vec![round],
    })
}

/// Snippet method: document model, select responsive snippets, sample
/// nonresponsive snippets, retrain on snippets.
pub fn train_snippet_method(train: &Corpus, size: usize, cfg: &MethodConfig) -> Result<MethodRun> {
    cfg.validate()?;
    check_snippet_size(size)?;
    let data = TokenizedCorpus::new(train);
    let doc_model = train_document_model_tokenized(&data, &cfg.train)?;
    train_snippet_method_from(&doc_model, &data, size, cfg)
}

/// Iterative snippet method starting from an already trained document model.
pub fn train_iterative_method_from(
    doc_model: &TrainedModel,
    data: &TokenizedCorpus,
    iter: &IterConfig,
    cfg: &MethodConfig,
) -> Result<MethodRun> {
    iter.validate()?;
    cfg.validate()?;
    let mut model = doc_model.clone();
    let mut rounds = Vec::new();
    for (i, size) in iter.schedule().into_iter().enumerate() {
        let (next, round) = snippet_round(
            &model,
            data,
            size,
            cfg,
            seed::derive(cfg.train.seed, i as u64),
            i,
        )?;
        model = next.with_provenance(Provenance::IterativeSnippet {
            start_size: iter.start_size,
            snippet_size: size,
        });
        rounds.push(round);
    }
    Ok(MethodRun {
        model,
        doc_model: doc_model.clone(),
        rounds,
    })
}

/// Iterative snippet method: repeat selection and retraining while halving
/// the snippet size down to the minimum.
pub fn train_iterative_method(
    train: &Corpus,
    iter: &IterConfig,
    cfg: &MethodConfig,
) -> Result<MethodRun> {
    iter.validate()?;
    cfg.validate()?;
    let data = TokenizedCorpus::new(train);
    let doc_model = train_document_model_tokenized(&data, &cfg.train)?;
    train_iterative_method_from(&doc_model, &data, iter, cfg)
}

/// Rationales of `seq`: all `size`-token snippets scored by
/// `rationale_model`, descending, ties by start. Empty when `doc_model`
/// scores the whole sequence below 0.5.
pub fn rank_rationales_tokens(
    seq: &TokenSeq,
    rationale_model: &TrainedModel,
    doc_model: &TrainedModel,
    size: usize,
) -> Result<Vec<ScoredSnippet>> {
    check_snippet_size(size)?;
    if seq.is_empty() || doc_model.score_tokens(&seq.tokens) < DECISION_THRESHOLD {
        return Ok(Vec::new());
    }
    let mut ranked = score_seqs(rationale_model, std::slice::from_ref(seq), size)?;
    ranked.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.snippet.start.cmp(&b.snippet.start))
    });
    Ok(ranked)
}

pub fn rank_rationales(
    doc: &Document,
    rationale_model: &TrainedModel,
    doc_model: &TrainedModel,
    size: usize,
) -> Result<Vec<ScoredSnippet>> {
    rank_rationales_tokens(
        &tokenize_doc(doc.id.clone(), &doc.text),
        rationale_model,
        doc_model,
        size,
    )
}

#[derive(Serialize)]
struct AuditRecord<'a> {
    round: usize,
    doc_id: &'a str,
    start: usize,
    length: usize,
    score: f64,
}

/// Write the selected responsive training snippets of every round, one JSON
/// record per line.
pub fn write_selection_audit<W: Write>(rounds: &[Round], mut writer: W) -> Result<()> {
    for (round, r) in rounds.iter().enumerate() {
        for s in &r.selection.snippets {
            let rec = AuditRecord {
                round,
                doc_id: &s.snippet.doc_id,
                start: s.snippet.start,
                length: s.snippet.length,
                score: s.score,
            };
            serde_json::to_writer(&mut writer, &rec)?;
            writer
                .write_all(b"\n")
                .map_err(|e| Error::io("<audit writer>", e))?;
        }
    }
    Ok(())
}

pub fn save_selection_audit(rounds: &[Round], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_selection_audit(rounds, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}
