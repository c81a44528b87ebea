//! N-gram features, information-gain selection and frequency vectors.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Separator between the words of an n-gram feature.
pub const GRAM_SEPARATOR: char = '_';

/// Default number of selected features.
pub const DEFAULT_K: usize = 2000;

/// Candidates must occur in at least this many training units.
pub const MIN_UNIT_SUPPORT: u32 = 2;

/// Call `f` with every contiguous n-gram of `tokens` for n in `1..=ngram_max`,
/// ordered by n and then by position.
pub fn for_each_gram(tokens: &[String], ngram_max: usize, mut f: impl FnMut(&str)) {
    let mut buf = String::new();
    for n in 1..=ngram_max {
        if n > tokens.len() {
            break;
        }
        for window in tokens.windows(n) {
            buf.clear();
            for (i, t) in window.iter().enumerate() {
                if i > 0 {
                    buf.push(GRAM_SEPARATOR);
                }
                buf.push_str(t);
            }
            f(&buf);
        }
    }
}

/// All n-grams of `tokens` for n in `1..=ngram_max`, joined by `_`.
pub fn extract_ngrams(tokens: &[String], ngram_max: usize) -> Vec<String> {
    let mut grams = Vec::with_capacity(gram_count(tokens.len(), ngram_max));
    for_each_gram(tokens, ngram_max, |g| grams.push(g.to_string()));
    grams
}

/// Number of n-grams a sequence of `len` tokens produces.
pub fn gram_count(len: usize, ngram_max: usize) -> usize {
    (1..=ngram_max).map(|n| (len + 1).saturating_sub(n)).sum()
}

fn entropy2(a: f64, b: f64) -> f64 {
    let total = a + b;
    if total == 0.0 {
        return 0.0;
    }
    [a, b]
        .iter()
        .filter(|&&c| c > 0.0)
        .map(|&c| {
            let p = c / total;
            -p * p.log2()
        })
        .sum()
}

/// Information gain (in bits) of a binary presence feature about a binary
/// class, from the feature's presence counts in each class.
pub fn information_gain(
    present_pos: u64,
    present_neg: u64,
    total_pos: u64,
    total_neg: u64,
) -> Result<f64> {
    if present_pos > total_pos || present_neg > total_neg {
        return Err(Error::InvalidArgument(format!(
            "presence counts ({present_pos}, {present_neg}) exceed class totals ({total_pos}, {total_neg})"
        )));
    }
    let total = total_pos + total_neg;
    if total == 0 {
        return Err(Error::InvalidArgument(
            "information gain needs at least one unit".into(),
        ));
    }
    let (pp, pn) = (present_pos as f64, present_neg as f64);
    let (ap, an) = (
        (total_pos - present_pos) as f64,
        (total_neg - present_neg) as f64,
    );
    let n = total as f64;
    let prior = entropy2(total_pos as f64, total_neg as f64);
    let conditional = (pp + pn) / n * entropy2(pp, pn) + (ap + an) / n * entropy2(ap, an);
    // Rounding can push independent tables a hair below zero.
    Ok((prior - conditional).max(0.0))
}

/// The selected n-gram vocabulary, in column order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "SpaceRepr", into = "SpaceRepr")]
pub struct FeatureSpace {
    features: Vec<String>,
    index: HashMap<String, usize>,
    ngram_max: usize,
}

#[derive(Serialize, Deserialize)]
struct SpaceRepr {
    ngram_max: usize,
    features: Vec<String>,
}

impl From<SpaceRepr> for FeatureSpace {
    fn from(r: SpaceRepr) -> Self {
        FeatureSpace::new(r.features, r.ngram_max)
    }
}

impl From<FeatureSpace> for SpaceRepr {
    fn from(s: FeatureSpace) -> Self {
        SpaceRepr {
            ngram_max: s.ngram_max,
            features: s.features,
        }
    }
}

impl FeatureSpace {
    /// Build a space from features in column order. Later duplicates are ignored
    /// when building the index.
    pub fn new(features: Vec<String>, ngram_max: usize) -> Self {
        let mut index = HashMap::with_capacity(features.len());
        for (i, f) in features.iter().enumerate() {
            index.entry(f.clone()).or_insert(i);
        }
        Self {
            features,
            index,
            ngram_max,
        }
    }

    pub fn features(&self) -> &[String] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn ngram_max(&self) -> usize {
        self.ngram_max
    }

    pub fn column(&self, feature: &str) -> Option<usize> {
        self.index.get(feature).copied()
    }

    /// True when every feature has a unique column.
    pub fn is_bijective(&self) -> bool {
        self.index.len() == self.features.len()
    }

    pub fn vectorize(&self, tokens: &[String]) -> FeatureVector {
        vectorize(tokens, self)
    }
}

/// Sparse normalized-frequency vector over a [`FeatureSpace`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureVector {
    /// `(column, value)` pairs in increasing column order.
    pub entries: Vec<(usize, f64)>,
    pub source_length: usize,
}

impl FeatureVector {
    pub fn get(&self, column: usize) -> Option<f64> {
        self.entries
            .binary_search_by_key(&column, |&(c, _)| c)
            .ok()
            .map(|i| self.entries[i].1)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Count selected n-grams of `tokens` and divide by the sequence's total
/// n-gram count.
pub fn vectorize(tokens: &[String], space: &FeatureSpace) -> FeatureVector {
    let total = gram_count(tokens.len(), space.ngram_max);
    let mut counts: HashMap<usize, u32> = HashMap::new();
    for_each_gram(tokens, space.ngram_max, |g| {
        if let Some(col) = space.column(g) {
            *counts.entry(col).or_insert(0) += 1;
        }
    });
    let mut entries: Vec<(usize, f64)> = counts
        .into_iter()
        .map(|(col, c)| (col, c as f64 / total as f64))
        .collect();
    entries.sort_unstable_by_key(|&(c, _)| c);
    FeatureVector {
        entries,
        source_length: tokens.len(),
    }
}

/// A candidate feature with its per-class unit support and information gain.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedFeature {
    pub feature: String,
    pub present_pos: u64,
    pub present_neg: u64,
    pub gain: f64,
}

fn distinct_grams(tokens: &[String], ngram_max: usize) -> Vec<String> {
    let mut seen = HashSet::new();
    for_each_gram(tokens, ngram_max, |g| {
        if !seen.contains(g) {
            seen.insert(g.to_string());
        }
    });
    seen.into_iter().collect()
}

/// Rank every candidate n-gram supported by at least [`MIN_UNIT_SUPPORT`]
/// units by information gain over unit-level presence. Ties are broken by
/// the feature string.
pub fn rank_features<P, N>(
    positives: &[P],
    negatives: &[N],
    ngram_max: usize,
) -> Result<Vec<RankedFeature>>
where
    P: AsRef<[String]> + Sync,
    N: AsRef<[String]> + Sync,
{
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::InsufficientData(format!(
            "feature selection needs both classes ({} positive, {} negative units)",
            positives.len(),
            negatives.len()
        )));
    }
    if !(1..=3).contains(&ngram_max) {
        return Err(Error::InvalidArgument(format!(
            "ngram max must be 1..=3, got {ngram_max}"
        )));
    }
    let pos_sets: Vec<Vec<String>> = positives
        .par_iter()
        .map(|u| distinct_grams(u.as_ref(), ngram_max))
        .collect();
    let neg_sets: Vec<Vec<String>> = negatives
        .par_iter()
        .map(|u| distinct_grams(u.as_ref(), ngram_max))
        .collect();

    let mut support: HashMap<String, [u64; 2]> = HashMap::new();
    for (class, sets) in [(0usize, pos_sets), (1, neg_sets)] {
        for set in sets {
            for g in set {
                support.entry(g).or_insert([0, 0])[class] += 1;
            }
        }
    }

    let (total_pos, total_neg) = (positives.len() as u64, negatives.len() as u64);
    let mut ranked = Vec::with_capacity(support.len());
    for (feature, [pp, pn]) in support {
        if pp + pn < MIN_UNIT_SUPPORT as u64 {
            continue;
        }
        let gain = information_gain(pp, pn, total_pos, total_neg)?;
        ranked.push(RankedFeature {
            feature,
            present_pos: pp,
            present_neg: pn,
            gain,
        });
    }
    ranked.sort_by(|a, b| {
        b.gain
            .partial_cmp(&a.gain)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.feature.cmp(&b.feature))
    });
    Ok(ranked)
}

/// Select the `k` highest-gain n-grams (all candidates if fewer exist).
pub fn select_top_k<P, N>(
    positives: &[P],
    negatives: &[N],
    k: usize,
    ngram_max: usize,
) -> Result<FeatureSpace>
where
    P: AsRef<[String]> + Sync,
    N: AsRef<[String]> + Sync,
{
    let ranked = rank_features(positives, negatives, ngram_max)?;
    let features = ranked.into_iter().take(k).map(|r| r.feature).collect();
    Ok(FeatureSpace::new(features, ngram_max))
}
