//! Rationale detection for document-level text classifiers.
//!
//! Given documents labeled only at the document level (responsive or
//! nonresponsive), this crate trains snippet-level models that locate the
//! passages responsible for a responsive classification, and evaluates
//! them without snippet labels by measuring how much a document's score
//! drops once its rationales are deleted.
//!
//! The pipeline is split into small modules:
//!
//! * [`corpus`]: line-delimited JSON corpora and stratified splits
//! * [`tokenize`]: tokenization and overlapping snippet windows
//! * [`features`]: n-gram extraction, information-gain selection, vectorization
//! * [`classifier`]: L2-regularized logistic regression and model files
//! * [`rationale`]: the document-level baseline, the snippet method and the
//!   iterative snippet method
//! * [`eval`]: score-reduction reports and precision/recall curves
//! * [`synth`]: synthetic corpora with planted ground-truth rationales
//! * [`cli`]: the `rationale` command-line tool

pub mod classifier;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod features;
pub mod rationale;
pub mod synth;
pub mod tokenize;

mod seed;

pub use classifier::{Provenance, TrainConfig, TrainedModel};
pub use corpus::{Corpus, Document, Label, Split};
pub use error::{Error, Result};
pub use features::{FeatureSpace, FeatureVector};
pub use rationale::{IterConfig, ScoredSnippet, SelectionConfig};
pub use tokenize::{Snippet, TokenSeq};
