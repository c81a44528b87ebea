//! Label-free rationale evaluation.
//!
//! Responsive test documents that the document model scores at or above 0.5
//! are windowed into snippets and scored by a rationale model. Each document
//! is assigned to the score bucket containing its best snippet score; every
//! snippet scoring inside that bucket is deleted, and the remaining text is
//! rescored by the document model. A good rationale model removes the text
//! the document score depends on, so the score drops sharply.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{TrainedModel, DECISION_THRESHOLD};
use crate::corpus::{Corpus, Document, Label};
use crate::error::{Error, Result};
use crate::tokenize::{tokenize_doc, window_snippets, Snippet, TokenSeq};

/// Snippet-score buckets `[0.5,0.6) .. [0.8,0.9)` and the closed `[0.9,1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub low: f64,
    pub high: f64,
}

pub const BUCKETS: [Bucket; 5] = [
    Bucket {
        low: 0.5,
        high: 0.6,
    },
    Bucket {
        low: 0.6,
        high: 0.7,
    },
    Bucket {
        low: 0.7,
        high: 0.8,
    },
    Bucket {
        low: 0.8,
        high: 0.9,
    },
    Bucket {
        low: 0.9,
        high: 1.0,
    },
];

impl Bucket {
    pub fn is_top(&self) -> bool {
        self.high >= 1.0
    }

    pub fn contains(&self, score: f64) -> bool {
        score >= self.low && (score < self.high || (self.is_top() && score <= self.high))
    }

    pub fn label(&self) -> String {
        if self.is_top() {
            format!("[{:.1}, {:.0}]", self.low, self.high)
        } else {
            format!("[{:.1}, {:.1})", self.low, self.high)
        }
    }
}

/// Index into [`BUCKETS`] of the bucket holding `score`, if any.
pub fn bucket_of(score: f64) -> Option<usize> {
    BUCKETS.iter().position(|b| b.contains(score))
}

/// Responsive test documents the document model scores at or above 0.5.
pub fn eligible_test_docs<'a>(doc_model: &TrainedModel, test: &'a Corpus) -> Vec<&'a Document> {
    let docs: Vec<&Document> = test
        .documents()
        .iter()
        .filter(|d| d.label == Label::Responsive)
        .collect();
    let keep: Vec<bool> = docs
        .par_iter()
        .map(|d| {
            doc_model.score_tokens(&tokenize_doc(d.id.clone(), &d.text).tokens)
                >= DECISION_THRESHOLD
        })
        .collect();
    docs.into_iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(d, _)| d)
        .collect()
}

/// Delete every token covered by any of `snippets`, keeping the order of
/// the rest.
pub fn remove_rationale_tokens(seq: &TokenSeq, snippets: &[Snippet]) -> Result<TokenSeq> {
    let mut removed = vec![false; seq.len()];
    for sn in snippets {
        if sn.doc_id != seq.doc_id || sn.end() > seq.len() {
            return Err(Error::SnippetOutOfRange {
                doc_id: sn.doc_id.clone(),
                start: sn.start,
                end: sn.end(),
                len: seq.len(),
            });
        }
        removed[sn.start..sn.end()]
            .iter_mut()
            .for_each(|r| *r = true);
    }
    let tokens = seq
        .tokens
        .iter()
        .zip(&removed)
        .filter(|(_, &r)| !r)
        .map(|(t, _)| t.clone())
        .collect();
    Ok(TokenSeq::new(seq.doc_id.clone(), tokens))
}

/// Evaluation of one eligible document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocOutcome {
    pub doc_id: String,
    pub doc_score: f64,
    pub tokens: usize,
    /// Best snippet score; `None` for documents without tokens.
    pub max_snippet_score: Option<f64>,
    /// Bucket index into [`BUCKETS`]; `None` when the best snippet scores below 0.5.
    pub bucket: Option<usize>,
    pub reduced_score: Option<f64>,
    pub tokens_removed: usize,
}

impl DocOutcome {
    pub fn reduction(&self) -> Option<f64> {
        self.reduced_score.map(|r| self.doc_score - r)
    }
}

fn evaluate_document(
    doc: &Document,
    doc_model: &TrainedModel,
    rationale_model: &TrainedModel,
    size: usize,
) -> Result<DocOutcome> {
    let seq = tokenize_doc(doc.id.clone(), &doc.text);
    let doc_score = doc_model.score_tokens(&seq.tokens);
    let mut out = DocOutcome {
        doc_id: doc.id.clone(),
        doc_score,
        tokens: seq.len(),
        max_snippet_score: None,
        bucket: None,
        reduced_score: None,
        tokens_removed: 0,
    };
    if seq.is_empty() {
        return Ok(out);
    }
    let scored: Vec<(Snippet, f64)> = window_snippets(&seq, size)?
        .into_iter()
        .map(|sn| {
            let s = rationale_model.score_tokens(&seq.tokens[sn.start..sn.end()]);
            (sn, s)
        })
        .collect();
    let max = scored
        .iter()
        .map(|(_, s)| *s)
        .fold(f64::NEG_INFINITY, f64::max);
    out.max_snippet_score = Some(max);
    let Some(bucket) = bucket_of(max) else {
        return Ok(out);
    };
    let in_bucket: Vec<Snippet> = scored
        .into_iter()
        .filter(|(_, s)| BUCKETS[bucket].contains(*s))
        .map(|(sn, _)| sn)
        .collect();
    let reduced = remove_rationale_tokens(&seq, &in_bucket)?;
    out.bucket = Some(bucket);
    out.tokens_removed = seq.len() - reduced.len();
    out.reduced_score = Some(doc_model.score_tokens(&reduced.tokens));
    Ok(out)
}

/// Per-document outcomes for every eligible test document, in corpus order.
pub fn evaluate_documents(
    doc_model: &TrainedModel,
    rationale_model: &TrainedModel,
    test: &Corpus,
    size: usize,
) -> Result<Vec<DocOutcome>> {
    let eligible = eligible_test_docs(doc_model, test);
    eligible
        .par_iter()
        .map(|d| evaluate_document(d, doc_model, rationale_model, size))
        .collect()
}

/// One row of a score-reduction table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    pub low: f64,
    pub high: f64,
    pub n_docs: usize,
    pub avg_doc_score: Option<f64>,
    pub avg_doc_score_removed: Option<f64>,
    pub avg_reduction: Option<f64>,
    pub avg_tokens: Option<f64>,
    pub avg_tokens_removed: Option<f64>,
}

impl BucketRow {
    fn from_outcomes(low: f64, high: f64, outcomes: &[&DocOutcome]) -> Self {
        let n = outcomes.len();
        let mean = |f: &dyn Fn(&DocOutcome) -> f64| -> Option<f64> {
            (n > 0).then(|| outcomes.iter().map(|o| f(o)).sum::<f64>() / n as f64)
        };
        let avg_doc_score = mean(&|o| o.doc_score);
        let avg_doc_score_removed = mean(&|o| o.reduced_score.unwrap_or(f64::NAN));
        BucketRow {
            low,
            high,
            n_docs: n,
            avg_doc_score,
            avg_doc_score_removed,
            avg_reduction: avg_doc_score.zip(avg_doc_score_removed).map(|(a, b)| a - b),
            avg_tokens: mean(&|o| o.tokens as f64),
            avg_tokens_removed: mean(&|o| o.tokens_removed as f64),
        }
    }

    pub fn label(&self) -> String {
        Bucket {
            low: self.low,
            high: self.high,
        }
        .label()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReductionReport {
    pub method: String,
    pub snippet_size: usize,
    /// Rows from the top bucket `[0.9, 1]` down to `[0.5, 0.6)`.
    pub rows: Vec<BucketRow>,
    /// Aggregate over every document in some bucket.
    pub total: BucketRow,
    /// Eligible documents (responsive label, document score >= 0.5).
    pub n_eligible: usize,
    /// Eligible documents whose best snippet scores below 0.5.
    pub n_uncovered: usize,
}

impl ScoreReductionReport {
    pub fn from_outcomes(
        method: impl Into<String>,
        snippet_size: usize,
        outcomes: &[DocOutcome],
    ) -> Self {
        let rows = (0..BUCKETS.len())
            .rev()
            .map(|b| {
                let members: Vec<&DocOutcome> =
                    outcomes.iter().filter(|o| o.bucket == Some(b)).collect();
                BucketRow::from_outcomes(BUCKETS[b].low, BUCKETS[b].high, &members)
            })
            .collect();
        let covered: Vec<&DocOutcome> = outcomes.iter().filter(|o| o.bucket.is_some()).collect();
        ScoreReductionReport {
            method: method.into(),
            snippet_size,
            rows,
            total: BucketRow::from_outcomes(BUCKETS[0].low, 1.0, &covered),
            n_eligible: outcomes.len(),
            n_uncovered: outcomes.len() - covered.len(),
        }
    }

    pub fn top_bucket(&self) -> &BucketRow {
        &self.rows[0]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "method,snippet_score_th,n_docs,avg_doc_score,avg_doc_score_snippet_removed,avg_doc_score_reduction,avg_tokens,avg_tokens_removed\n",
        );
        for (label, row) in self
            .rows
            .iter()
            .map(|r| (r.label(), r))
            .chain(std::iter::once(("Tot/Avg".to_string(), &self.total)))
        {
            let _ = writeln!(
                s,
                "{},\"{}\",{},{},{},{},{},{}",
                csv_field(&self.method),
                label,
                row.n_docs,
                opt(row.avg_doc_score),
                opt(row.avg_doc_score_removed),
                opt(row.avg_reduction),
                opt(row.avg_tokens),
                opt(row.avg_tokens_removed),
            );
        }
        s
    }

    pub fn to_text(&self) -> String {
        render_comparison(std::slice::from_ref(self))
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn fixed(v: Option<f64>, digits: usize) -> String {
    v.map(|x| format!("{x:.digits$}"))
        .unwrap_or_else(|| "-".into())
}

/// Score-reduction table for one rationale model.
pub fn score_reduction_report(
    method: impl Into<String>,
    doc_model: &TrainedModel,
    rationale_model: &TrainedModel,
    test: &Corpus,
    size: usize,
) -> Result<ScoreReductionReport> {
    let outcomes = evaluate_documents(doc_model, rationale_model, test, size)?;
    Ok(ScoreReductionReport::from_outcomes(method, size, &outcomes))
}

/// Side-by-side score-reduction tables followed by token-removal statistics.
pub fn render_comparison(reports: &[ScoreReductionReport]) -> String {
    const COLS: [&str; 4] = ["#Doc", "Avg Doc Score", "With Snippet Rmd", "Reduction"];
    let th_width = 16;
    let col_width = 17;
    let mut out = String::new();

    let _ = write!(out, "{:<th_width$}", "");
    for r in reports {
        let _ = write!(out, " | {:<w$}", r.method, w = col_width * 4 + 3);
    }
    out.push('\n');
    let _ = write!(out, "{:<th_width$}", "Snippet Score TH");
    for _ in reports {
        out.push_str(" |");
        for c in COLS {
            let _ = write!(out, " {c:>col_width$}");
        }
    }
    out.push('\n');
    let rule_len = th_width + reports.len() * (3 + 4 * (col_width + 1) - 1);
    out.push_str(&"-".repeat(rule_len));
    out.push('\n');

    let n_rows = reports.first().map_or(0, |r| r.rows.len());
    for i in 0..=n_rows {
        let label = if i < n_rows {
            reports[0].rows[i].label()
        } else {
            "Tot/Avg".to_string()
        };
        let _ = write!(out, "{label:<th_width$}");
        for r in reports {
            let row = if i < n_rows { &r.rows[i] } else { &r.total };
            let _ = write!(
                out,
                " | {:>col_width$} {:>col_width$} {:>col_width$} {:>col_width$}",
                row.n_docs,
                fixed(row.avg_doc_score, 2),
                fixed(row.avg_doc_score_removed, 2),
                fixed(row.avg_reduction, 2)
            );
        }
        out.push('\n');
    }

    out.push('\n');
    let _ = writeln!(
        out,
        "{:<28} {:>10} {:>10} {:>16} {:>16}",
        "Model", "Eligible", "Uncovered", "Avg Tokens/Doc", "Avg Tokens Rmd"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:<28} {:>10} {:>10} {:>16} {:>16}",
            r.method,
            r.n_eligible,
            r.n_uncovered,
            fixed(r.total.avg_tokens, 1),
            fixed(r.total.avg_tokens_removed, 1)
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Precision/recall at descending score thresholds; recall never decreases
/// along `points`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
}

impl PrCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,precision,recall\n");
        for p in &self.points {
            let _ = writeln!(s, "{},{},{}", p.threshold, p.precision, p.recall);
        }
        s
    }
}

/// Sweep thresholds over the distinct scores, highest first. With `steps`,
/// at most that many thresholds are used, evenly spaced over the distinct
/// scores and always including the lowest.
pub fn pr_curve_from_scores(scored: &[(f64, bool)], steps: Option<usize>) -> Result<PrCurve> {
    let positives = scored.iter().filter(|(_, y)| *y).count();
    if positives == 0 {
        return Err(Error::InsufficientData(
            "precision/recall needs at least one responsive document".into(),
        ));
    }
    let mut sorted: Vec<(f64, bool)> = scored.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));

    // (threshold, tp, fp) after including every score >= threshold
    let mut cumulative = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    for (i, &(s, y)) in sorted.iter().enumerate() {
        if y {
            tp += 1;
        } else {
            fp += 1;
        }
        if i + 1 == sorted.len() || sorted[i + 1].0 != s {
            cumulative.push((s, tp, fp));
        }
    }
    let chosen: Vec<usize> = match steps {
        Some(k) if k >= 2 && cumulative.len() > k => {
            let last = cumulative.len() - 1;
            let mut idx: Vec<usize> = (0..k).map(|i| (i * last + (k - 1) / 2) / (k - 1)).collect();
            idx.dedup();
            idx
        }
        Some(1) => vec![cumulative.len() - 1],
        _ => (0..cumulative.len()).collect(),
    };
    let points = chosen
        .into_iter()
        .map(|i| {
            let (t, tp, fp) = cumulative[i];
            PrPoint {
                threshold: t,
                precision: tp as f64 / (tp + fp) as f64,
                recall: tp as f64 / positives as f64,
            }
        })
        .collect();
    Ok(PrCurve { points })
}

/// Document-level precision/recall curve of `doc_model` on `test`.
pub fn pr_curve(doc_model: &TrainedModel, test: &Corpus, steps: Option<usize>) -> Result<PrCurve> {
    let scored: Vec<(f64, bool)> = test
        .documents()
        .par_iter()
        .map(|d| {
            let seq = tokenize_doc(d.id.clone(), &d.text);
            (doc_model.score_tokens(&seq.tokens), d.label.is_responsive())
        })
        .collect();
    pr_curve_from_scores(&scored, steps)
}
