//! Tokenization and overlapping snippet windows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lowercased tokens of one document.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSeq {
    pub doc_id: String,
    pub tokens: Vec<String>,
}

impl TokenSeq {
    pub fn new(doc_id: impl Into<String>, tokens: Vec<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            tokens,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// A contiguous token window `[start, start + length)` of a document.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Snippet {
    pub doc_id: String,
    pub start: usize,
    pub length: usize,
}

impl Snippet {
    pub fn end(&self) -> usize {
        self.start + self.length
    }

    /// The snippet's tokens within its source sequence.
    pub fn tokens<'a>(&self, seq: &'a TokenSeq) -> Result<&'a [String]> {
        if seq.doc_id != self.doc_id || self.end() > seq.len() {
            return Err(Error::SnippetOutOfRange {
                doc_id: self.doc_id.clone(),
                start: self.start,
                end: self.end(),
                len: seq.len(),
            });
        }
        Ok(&seq.tokens[self.start..self.end()])
    }

    pub fn overlap(&self, start: usize, length: usize) -> usize {
        let lo = self.start.max(start);
        let hi = self.end().min(start + length);
        hi.saturating_sub(lo)
    }
}

/// Split text into lowercase runs of Unicode letters and digits.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            // Lowercasing can yield combining marks (e.g. U+0130); keep only
            // alphanumeric output so tokenization is a fixed point.
            current.extend(c.to_lowercase().filter(|l| l.is_alphanumeric()));
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

pub fn tokenize_doc(doc_id: impl Into<String>, text: &str) -> TokenSeq {
    TokenSeq::new(doc_id, tokenize(text))
}

/// `(start, length)` windows of `size` tokens at the given stride, plus an
/// end-anchored window when the stride grid does not reach the last token.
fn spans_with_stride(len: usize, size: usize, stride: usize) -> Vec<(usize, usize)> {
    debug_assert!(len > 0 && size > 0 && stride > 0);
    if len <= size {
        return vec![(0, len)];
    }
    let mut spans = Vec::with_capacity((len - size) / stride + 2);
    let mut start = 0;
    while start + size <= len {
        spans.push((start, size));
        start += stride;
    }
    let last_end = spans.last().map_or(0, |&(s, n)| s + n);
    if last_end < len {
        spans.push((len - size, size));
    }
    spans
}

fn check_window_size(size: usize) -> Result<()> {
    if size < 2 || !size.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "snippet size must be an even number >= 2, got {size}"
        )));
    }
    Ok(())
}

/// Windows of `size` tokens overlapping by `size / 2` over a sequence of
/// `len` tokens. `size` must be even and at least 2.
pub fn window_spans(len: usize, size: usize) -> Result<Vec<(usize, usize)>> {
    check_window_size(size)?;
    if len == 0 {
        return Err(Error::InvalidArgument(
            "cannot window an empty token sequence".into(),
        ));
    }
    Ok(spans_with_stride(len, size, size / 2))
}

/// Overlapping `size`-token snippets of `seq`, in increasing start order.
pub fn window_snippets(seq: &TokenSeq, size: usize) -> Result<Vec<Snippet>> {
    Ok(window_spans(seq.len(), size)?
        .into_iter()
        .map(|(start, length)| Snippet {
            doc_id: seq.doc_id.clone(),
            start,
            length,
        })
        .collect())
}

/// Like [`window_snippets`] but also accepts odd sizes, striding by
/// `floor(size / 2)`. The iterative method's halving schedule can produce
/// odd sizes (125 under the defaults).
pub(crate) fn schedule_snippets(seq: &TokenSeq, size: usize) -> Result<Vec<Snippet>> {
    if size < 2 {
        return Err(Error::InvalidArgument(format!(
            "snippet size must be >= 2, got {size}"
        )));
    }
    if seq.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot window an empty token sequence".into(),
        ));
    }
    Ok(spans_with_stride(seq.len(), size, size / 2)
        .into_iter()
        .map(|(start, length)| Snippet {
            doc_id: seq.doc_id.clone(),
            start,
            length,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn starts(len: usize, size: usize) -> Vec<usize> {
        window_spans(len, size)
            .unwrap()
            .into_iter()
            .map(|(s, _)| s)
            .collect()
    }

    #[test]
    fn tokenize_rule() {
        assert!(tokenize("").is_empty());
        assert_eq!(
            tokenize("Re: Q3 earnings\u{2014}CALL me"),
            vec!["re", "q3", "earnings", "call", "me"]
        );
        assert_eq!(
            tokenize("  don't_stop 42x "),
            vec!["don", "t", "stop", "42x"]
        );
        assert_eq!(tokenize("\u{130}stanbul"), vec!["istanbul"]);
    }

    #[test]
    fn aligned_windows() {
        assert_eq!(starts(100, 50), vec![0, 25, 50]);
        assert!(window_spans(100, 50).unwrap().iter().all(|&(_, n)| n == 50));
    }

    #[test]
    fn short_sequence_is_one_window() {
        assert_eq!(window_spans(40, 50).unwrap(), vec![(0, 40)]);
        assert_eq!(window_spans(50, 50).unwrap(), vec![(0, 50)]);
    }

    #[test]
    fn tail_window_is_end_anchored() {
        assert_eq!(window_spans(60, 50).unwrap(), vec![(0, 50), (10, 50)]);
        assert_eq!(starts(101, 50), vec![0, 25, 50, 51]);
    }

    #[test]
    fn invalid_sizes() {
        assert!(window_spans(10, 0).is_err());
        assert!(window_spans(10, 1).is_err());
        assert!(window_spans(10, 7).is_err());
        assert!(window_spans(0, 50).is_err());
    }

    #[test]
    fn odd_schedule_sizes() {
        let seq = TokenSeq::new("d", vec!["t".to_string(); 300]);
        let s = schedule_snippets(&seq, 125).unwrap();
        let st: Vec<_> = s.iter().map(|s| s.start).collect();
        assert_eq!(st, vec![0, 62, 124, 175]);
        assert!(window_snippets(&seq, 125).is_err());
    }

    #[test]
    fn snippet_tokens_view() {
        let seq = tokenize_doc("d", "a b c d e");
        let sn = Snippet {
            doc_id: "d".into(),
            start: 1,
            length: 3,
        };
        assert_eq!(sn.tokens(&seq).unwrap(), ["b", "c", "d"]);
        let bad = Snippet {
            doc_id: "d".into(),
            start: 3,
            length: 3,
        };
        assert!(bad.tokens(&seq).is_err());
        let other = Snippet {
            doc_id: "e".into(),
            start: 0,
            length: 1,
        };
        assert!(other.tokens(&seq).is_err());
    }

    proptest! {
        #[test]
        fn tokenize_is_a_fixed_point(text in "\\PC{0,64}") {
            let once = tokenize(&text);
            prop_assert_eq!(tokenize(&once.join(" ")), once.clone());
            for t in &once {
                prop_assert!(!t.is_empty());
                prop_assert!(!t.chars().any(char::is_whitespace));
            }
        }

        #[test]
        fn windows_cover_without_duplicates(len in 1usize..400, half in 1usize..80) {
            let size = half * 2;
            let spans = window_spans(len, size).unwrap();
            let mut covered = vec![false; len];
            for w in spans.windows(2) {
                prop_assert!(w[0].0 < w[1].0);
            }
            for &(s, n) in &spans {
                prop_assert!(s + n <= len);
                prop_assert_eq!(n, size.min(len));
                covered[s..s + n].iter_mut().for_each(|c| *c = true);
            }
            prop_assert!(covered.iter().all(|&c| c));
        }
    }
}
