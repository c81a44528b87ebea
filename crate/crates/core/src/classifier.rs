//! L2-regularized binary logistic regression over sparse feature vectors.
//!
//! Training runs full-batch gradient descent from zero on the mean negative
//! log-likelihood plus `l2_lambda / 2 * |w|^2` (the bias is not penalized).
//! Normalized n-gram frequencies are tiny (around `1 / (3 * tokens)`), so
//! each column is divided by its largest training value before descent and
//! the learned coefficients are mapped back afterwards; the penalty applies
//! to the coefficients of the scaled columns. A step that would raise the
//! loss is retried at half the learning rate, so the loss never increases.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{select_top_k, FeatureSpace, FeatureVector, DEFAULT_K};

/// Scores at or above this value are classified responsive.
pub const DECISION_THRESHOLD: f64 = 0.5;

/// Margins are clamped here so scores stay strictly inside (0, 1).
const MAX_MARGIN: f64 = 35.0;

pub const MODEL_FORMAT: &str = "rationale-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub l2_lambda: f64,
    pub grad_tolerance: f64,
    pub k: usize,
    pub ngram_max: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            max_epochs: 500,
            l2_lambda: 1e-4,
            grad_tolerance: 1e-6,
            k: DEFAULT_K,
            ngram_max: 3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            ));
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return bad(format!("l2 lambda must be >= 0, got {}", self.l2_lambda));
        }
        if self.grad_tolerance.is_nan() || self.grad_tolerance < 0.0 {
            return bad(format!(
                "gradient tolerance must be >= 0, got {}",
                self.grad_tolerance
            ));
        }
        if self.k == 0 {
            return bad("feature count k must be >= 1".into());
        }
        if !(1..=3).contains(&self.ngram_max) {
            return bad(format!("ngram max must be 1..=3, got {}", self.ngram_max));
        }
        Ok(())
    }
}

/// Which method produced a model, with the training-unit size where it applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Provenance {
    DocumentLevel,
    SnippetModel {
        snippet_size: usize,
    },
    IterativeSnippet {
        start_size: usize,
        snippet_size: usize,
    },
}

impl Provenance {
    pub fn name(&self) -> &'static str {
        match self {
            Provenance::DocumentLevel => "Document-Level Model",
            Provenance::SnippetModel { .. } => "Snippet Model",
            Provenance::IterativeSnippet { .. } => "Iterative Snippet Model",
        }
    }

    pub fn snippet_size(&self) -> Option<usize> {
        match *self {
            Provenance::DocumentLevel => None,
            Provenance::SnippetModel { snippet_size } => Some(snippet_size),
            Provenance::IterativeSnippet { snippet_size, .. } => Some(snippet_size),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub space: FeatureSpace,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub config: TrainConfig,
    pub provenance: Provenance,
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl TrainedModel {
    pub fn margin(&self, vector: &FeatureVector) -> Result<f64> {
        let mut z = self.bias;
        for &(col, value) in &vector.entries {
            let w = self.weights.get(col).ok_or(Error::ColumnOutOfRange {
                column: col,
                width: self.weights.len(),
            })?;
            z += w * value;
        }
        Ok(z)
    }

    /// `sigmoid(bias + w . x)`, strictly inside (0, 1).
    pub fn predict_proba(&self, vector: &FeatureVector) -> Result<f64> {
        Ok(sigmoid(self.margin(vector)?.clamp(-MAX_MARGIN, MAX_MARGIN)))
    }

    /// Vectorize `tokens` in this model's space and score them.
    pub fn score_tokens(&self, tokens: &[String]) -> f64 {
        let v = self.space.vectorize(tokens);
        // columns come from our own space
        self.predict_proba(&v)
            .expect("vector built against the model space")
    }

    pub fn is_responsive(&self, vector: &FeatureVector) -> Result<bool> {
        Ok(self.predict_proba(vector)? >= DECISION_THRESHOLD)
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            provenance: self.provenance,
            config: self.config.clone(),
            space: self.space.clone(),
            weights: self.weights.clone(),
            bias: self.bias,
        };
        let mut s = serde_json::to_string_pretty(&file)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::CorruptModel(e.to_string()))?;
        match value.get("format").and_then(|f| f.as_str()) {
            Some(MODEL_FORMAT) => {}
            other => {
                return Err(Error::CorruptModel(format!(
                    "format tag {other:?}, expected {MODEL_FORMAT:?}"
                )))
            }
        }
        let version = value
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::CorruptModel("missing version".into()))?;
        if version != MODEL_VERSION as u64 {
            return Err(Error::VersionMismatch {
                found: version.try_into().unwrap_or(u32::MAX),
                expected: MODEL_VERSION,
            });
        }
        let file: ModelFile =
            serde_json::from_value(value).map_err(|e| Error::CorruptModel(e.to_string()))?;
        if file.weights.len() != file.space.len() {
            return Err(Error::CorruptModel(format!(
                "{} weights for {} features",
                file.weights.len(),
                file.space.len()
            )));
        }
        if !file.space.is_bijective() {
            return Err(Error::CorruptModel("duplicate feature names".into()));
        }
        Ok(TrainedModel {
            space: file.space,
            weights: file.weights,
            bias: file.bias,
            config: file.config,
            provenance: file.provenance,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    provenance: Provenance,
    config: TrainConfig,
    #[serde(flatten)]
    space: FeatureSpace,
    weights: Vec<f64>,
    bias: f64,
}

pub fn save_model(model: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model.to_json()?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TrainedModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    TrainedModel::from_json(&text)
}

/// Regularized logistic loss over a fixed sparse design.
#[derive(Debug, Clone)]
pub struct LogisticProblem {
    rows: Vec<Vec<(usize, f64)>>,
    targets: Vec<f64>,
    width: usize,
    l2_lambda: f64,
}

impl LogisticProblem {
    /// `rows[i]` holds sorted `(column, value)` pairs; `targets[i]` is 1 or 0.
    pub fn new(
        rows: Vec<Vec<(usize, f64)>>,
        targets: Vec<f64>,
        width: usize,
        l2_lambda: f64,
    ) -> Self {
        assert_eq!(rows.len(), targets.len());
        Self {
            rows,
            targets,
            width,
            l2_lambda,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    fn margins(&self, weights: &[f64], bias: f64) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| bias + row.iter().map(|&(c, x)| weights[c] * x).sum::<f64>())
            .collect()
    }

    fn loss_from_margins(&self, margins: &[f64], weights: &[f64]) -> f64 {
        let nll: f64 = margins
            .iter()
            .zip(&self.targets)
            .map(|(&m, &y)| softplus(m) - y * m)
            .sum();
        let penalty: f64 = weights.iter().map(|w| w * w).sum();
        nll / self.rows.len() as f64 + 0.5 * self.l2_lambda * penalty
    }

    fn gradient_from_margins(&self, margins: &[f64], weights: &[f64]) -> (Vec<f64>, f64) {
        let n = self.rows.len() as f64;
        let mut grad: Vec<f64> = weights.iter().map(|w| self.l2_lambda * w).collect();
        let mut grad_bias = 0.0;
        for ((row, &m), &y) in self.rows.iter().zip(margins).zip(&self.targets) {
            let r = (sigmoid(m) - y) / n;
            grad_bias += r;
            for &(c, x) in row {
                grad[c] += r * x;
            }
        }
        (grad, grad_bias)
    }

    pub fn loss(&self, weights: &[f64], bias: f64) -> f64 {
        self.loss_from_margins(&self.margins(weights, bias), weights)
    }

    /// Analytic gradient with respect to `(weights, bias)`.
    pub fn gradient(&self, weights: &[f64], bias: f64) -> (Vec<f64>, f64) {
        self.gradient_from_margins(&self.margins(weights, bias), weights)
    }

    /// Gradient descent from zero. Returns `(weights, bias, loss per epoch)`.
    pub fn descend(&self, config: &TrainConfig) -> (Vec<f64>, f64, Vec<f64>) {
        let mut weights = vec![0.0; self.width];
        let mut bias = 0.0;
        let mut margins = self.margins(&weights, bias);
        let mut loss = self.loss_from_margins(&margins, &weights);
        let mut lr = config.learning_rate;
        let mut history = vec![loss];
        for _ in 0..config.max_epochs {
            let (grad, grad_bias) = self.gradient_from_margins(&margins, &weights);
            let norm = grad.iter().fold(grad_bias.abs(), |acc, g| acc.max(g.abs()));
            if norm <= config.grad_tolerance {
                break;
            }
            let mut accepted = false;
            while lr > f64::EPSILON {
                let cand: Vec<f64> = weights.iter().zip(&grad).map(|(w, g)| w - lr * g).collect();
                let cand_bias = bias - lr * grad_bias;
                let cand_margins = self.margins(&cand, cand_bias);
                let cand_loss = self.loss_from_margins(&cand_margins, &cand);
                if cand_loss <= loss {
                    weights = cand;
                    bias = cand_bias;
                    margins = cand_margins;
                    loss = cand_loss;
                    accepted = true;
                    break;
                }
                lr *= 0.5;
            }
            if !accepted {
                break;
            }
            history.push(loss);
        }
        (weights, bias, history)
    }
}

fn check_vectors(vectors: &[FeatureVector], width: usize) -> Result<()> {
    for v in vectors {
        for &(column, value) in &v.entries {
            if column >= width {
                return Err(Error::ColumnOutOfRange { column, width });
            }
            if !value.is_finite() {
                return Err(Error::NonFinite { column, value });
            }
        }
    }
    Ok(())
}

/// Fit a model on positive and negative vectors built against `space`.
/// Also returns the per-epoch training loss.
pub fn train_logistic_traced(
    space: FeatureSpace,
    positives: &[FeatureVector],
    negatives: &[FeatureVector],
    config: &TrainConfig,
) -> Result<(TrainedModel, Vec<f64>)> {
    config.validate()?;
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::InsufficientData(format!(
            "logistic regression needs both classes ({} positive, {} negative)",
            positives.len(),
            negatives.len()
        )));
    }
    let width = space.len();
    check_vectors(positives, width)?;
    check_vectors(negatives, width)?;

    let mut scale = vec![0.0f64; width];
    for v in positives.iter().chain(negatives) {
        for &(c, x) in &v.entries {
            scale[c] = scale[c].max(x.abs());
        }
    }
    for s in &mut scale {
        if *s == 0.0 {
            *s = 1.0;
        }
    }
    let rows = positives
        .iter()
        .chain(negatives)
        .map(|v| v.entries.iter().map(|&(c, x)| (c, x / scale[c])).collect())
        .collect();
    let targets = std::iter::repeat_n(1.0, positives.len())
        .chain(std::iter::repeat_n(0.0, negatives.len()))
        .collect();
    let problem = LogisticProblem::new(rows, targets, width, config.l2_lambda);
    let (scaled, bias, history) = problem.descend(config);
    let weights = scaled.iter().zip(&scale).map(|(w, s)| w / s).collect();
    log::debug!(
        "logistic regression: {} epochs, loss {:.6} -> {:.6}",
        history.len() - 1,
        history[0],
        history[history.len() - 1]
    );
    Ok((
        TrainedModel {
            space,
            weights,
            bias,
            config: config.clone(),
            provenance: Provenance::DocumentLevel,
        },
        history,
    ))
}

pub fn train_logistic(
    space: FeatureSpace,
    positives: &[FeatureVector],
    negatives: &[FeatureVector],
    config: &TrainConfig,
) -> Result<TrainedModel> {
    train_logistic_traced(space, positives, negatives, config).map(|(m, _)| m)
}

/// Feature selection, vectorization and logistic regression on token units.
pub fn fit_pipeline<P, N>(
    responsive: &[P],
    nonresponsive: &[N],
    config: &TrainConfig,
) -> Result<TrainedModel>
where
    P: AsRef<[String]> + Sync,
    N: AsRef<[String]> + Sync,
{
    config.validate()?;
    if responsive.is_empty() || nonresponsive.is_empty() {
        return Err(Error::InsufficientData(format!(
            "training needs both classes ({} responsive, {} nonresponsive units)",
            responsive.len(),
            nonresponsive.len()
        )));
    }
    let space = select_top_k(responsive, nonresponsive, config.k, config.ngram_max)?;
    if space.is_empty() {
        return Err(Error::InsufficientData(
            "no n-gram occurs in two or more training units".into(),
        ));
    }
    let pos: Vec<FeatureVector> = responsive
        .par_iter()
        .map(|u| space.vectorize(u.as_ref()))
        .collect();
    let neg: Vec<FeatureVector> = nonresponsive
        .par_iter()
        .map(|u| space.vectorize(u.as_ref()))
        .collect();
    train_logistic(space, &pos, &neg, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn vec1(entries: &[(usize, f64)]) -> FeatureVector {
        FeatureVector {
            entries: entries.to_vec(),
            source_length: 1,
        }
    }

    fn hand_model(weights: Vec<f64>, bias: f64) -> TrainedModel {
        let space = FeatureSpace::new((0..weights.len()).map(|i| format!("f{i}")).collect(), 1);
        TrainedModel {
            space,
            weights,
            bias,
            config: TrainConfig::default(),
            provenance: Provenance::DocumentLevel,
        }
    }

    #[test]
    fn zero_model_scores_half() {
        let m = hand_model(vec![0.0, 0.0], 0.0);
        assert_eq!(m.predict_proba(&vec1(&[(0, 0.7), (1, 0.1)])).unwrap(), 0.5);
        assert!(m.is_responsive(&vec1(&[])).unwrap());
    }

    #[test]
    fn hand_set_model_arithmetic() {
        let m = hand_model(vec![2.0, -1.0], 0.5);
        let p = m.predict_proba(&vec1(&[(0, 0.3), (1, 0.2)])).unwrap();
        // 1 / (1 + e^-0.9), computed independently
        assert_abs_diff_eq!(p, 0.710949502625004, epsilon = 1e-15);
    }

    #[test]
    fn monotone_in_bias_and_feature() {
        let v = vec1(&[(0, 0.5)]);
        let mut last = 0.0;
        for b in -10..10 {
            let p = hand_model(vec![1.5], b as f64).predict_proba(&v).unwrap();
            assert!(p > last && p > 0.0 && p < 1.0);
            last = p;
        }
        let m = hand_model(vec![1.5], -0.3);
        let mut last = 0.0;
        for i in 0..20 {
            let p = m.predict_proba(&vec1(&[(0, i as f64 * 0.1)])).unwrap();
            assert!(p > last);
            last = p;
        }
        let huge = hand_model(vec![1e6], 0.0)
            .predict_proba(&vec1(&[(0, 1.0)]))
            .unwrap();
        assert!(huge < 1.0);
    }

    #[test]
    fn column_outside_space_is_rejected() {
        let m = hand_model(vec![1.0], 0.0);
        assert!(matches!(
            m.predict_proba(&vec1(&[(3, 0.5)])),
            Err(Error::ColumnOutOfRange {
                column: 3,
                width: 1
            })
        ));
    }

    #[test]
    fn identical_classes_give_flat_model() {
        let space = FeatureSpace::new(vec!["a".into()], 1);
        let v = vec![vec1(&[(0, 0.5)])];
        let m = train_logistic(space, &v, &v, &TrainConfig::default()).unwrap();
        assert_abs_diff_eq!(m.weights[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.predict_proba(&v[0]).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn separable_direction_and_monotone_loss() {
        let space = FeatureSpace::new(vec!["a".into()], 1);
        let pos = vec![vec1(&[(0, 1.0)])];
        let neg = vec![vec1(&[])];
        let (m, history) =
            train_logistic_traced(space, &pos, &neg, &TrainConfig::default()).unwrap();
        assert!(m.weights[0] > 0.0);
        assert!(m.bias < 0.0);
        assert!(history.windows(2).all(|w| w[1] < w[0]), "{history:?}");
        assert!(m.predict_proba(&pos[0]).unwrap() > 0.5);
        assert!(m.predict_proba(&neg[0]).unwrap() < 0.5);
    }

    #[test]
    fn rejects_empty_class_and_non_finite() {
        let space = FeatureSpace::new(vec!["a".into()], 1);
        let pos = vec![vec1(&[(0, 1.0)])];
        assert!(matches!(
            train_logistic(space.clone(), &pos, &[], &TrainConfig::default()),
            Err(Error::InsufficientData(_))
        ));
        let nan = vec![vec1(&[(0, f64::NAN)])];
        assert!(matches!(
            train_logistic(space, &pos, &nan, &TrainConfig::default()),
            Err(Error::NonFinite { column: 0, .. })
        ));
    }

    #[test]
    fn pipeline_separates_toy_documents() {
        let resp = [toks("alpha alpha"), toks("alpha alpha")];
        let nonresp = [toks("beta beta"), toks("beta beta")];
        let m = fit_pipeline(&resp, &nonresp, &TrainConfig::default()).unwrap();
        assert!(m.score_tokens(&resp[0]) > 0.5);
        assert!(m.score_tokens(&nonresp[0]) < 0.5);
        let again = fit_pipeline(&resp, &nonresp, &TrainConfig::default()).unwrap();
        assert_eq!(m.to_json().unwrap(), again.to_json().unwrap());
    }

    #[test]
    fn model_json_round_trip_and_errors() {
        let m = hand_model(vec![0.1, -2.5e-7], 0.3333333333333333);
        let back = TrainedModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);

        let wrong = m
            .to_json()
            .unwrap()
            .replace("\"version\": 1", "\"version\": 99");
        assert!(matches!(
            TrainedModel::from_json(&wrong),
            Err(Error::VersionMismatch {
                found: 99,
                expected: 1
            })
        ));
        let json = m.to_json().unwrap();
        assert!(matches!(
            TrainedModel::from_json(&json[..json.len() / 2]),
            Err(Error::CorruptModel(_))
        ));
        assert!(matches!(
            TrainedModel::from_json("{}"),
            Err(Error::CorruptModel(_))
        ));
    }

    #[test]
    fn config_validation() {
        let zero_rate = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(zero_rate.validate().is_err());
        let four_grams = TrainConfig {
            ngram_max: 4,
            ..TrainConfig::default()
        };
        assert!(four_grams.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
