//! Local dependency graphs, baseline scorers and detection metrics.

mod graph;
mod metrics;
mod report;

pub use graph::{
    attention_scores, compose_attention, extract_graph, extract_graphs, jacobian_scores, pcmi_scores, LocalDependencyGraph,
    ScoreRows, DEFAULT_EPSILON,
};
pub use metrics::{best_f1, best_f1_with_threshold, roc_auc, Confusion, MetricError};
pub use report::{write_report_csv, write_summary_json, ReportRow};

use crate::dynamics::{DynamicsError, DynamicsModel};
use crate::factored::TransitionRecord;
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("no transitions to evaluate")]
    Empty,
}

/// A way of scoring every (input, target) pair of a transition.
#[derive(Clone, Copy, Debug)]
pub enum Detector<'a, T> {
    /// Thresholded input Jacobian of the trained model.
    Elden { model: &'a DynamicsModel<T>, epsilon: f64 },
    /// Leave-one-input-out likelihood ratio; the model must be dropout-trained.
    Pcmi(&'a DynamicsModel<T>),
    /// Composed attention weights.
    Attention(&'a DynamicsModel<T>),
    /// Ground-truth labels used as scores.
    Oracle,
}

impl<T: Scalar> Detector<'_, T> {
    pub fn name(&self) -> &'static str {
        match self {
            Detector::Elden { .. } => "elden",
            Detector::Pcmi(_) => "pcmi",
            Detector::Attention(_) => "attn",
            Detector::Oracle => "oracle",
        }
    }

    fn model(&self) -> Option<&DynamicsModel<T>> {
        match *self {
            Detector::Elden { model, .. } | Detector::Pcmi(model) | Detector::Attention(model) => Some(model),
            Detector::Oracle => None,
        }
    }

    /// Scores for a batch; `None` entries are flagged transitions.
    pub fn score(&self, records: &[&TransitionRecord]) -> Result<ScoreRows, DynamicsError> {
        Ok(match *self {
            Detector::Elden { model, .. } => jacobian_scores(model, records)?,
            Detector::Pcmi(model) => pcmi_scores(model, records)?.into_iter().map(finite).collect(),
            Detector::Attention(model) => attention_scores(model, records)?.into_iter().map(finite).collect(),
            Detector::Oracle => records
                .iter()
                .map(|r| Some(r.graph.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()))
                .collect(),
        })
    }
}

fn finite(s: Vec<f64>) -> Option<Vec<f64>> {
    s.iter().all(|v| v.is_finite()).then_some(s)
}

/// Which input rows enter the metrics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rows {
    /// All `N + 1` rows, action included.
    #[default]
    All,
    /// State-factor rows only.
    StateOnly,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DetectionMetrics {
    pub method: String,
    pub roc_auc: f64,
    pub best_f1: f64,
    /// Score threshold attaining `best_f1`.
    pub best_threshold: f64,
    pub positive_rate: f64,
    pub transitions: usize,
    pub pairs: usize,
    /// Transitions dropped because their scores were non-finite.
    pub flagged: usize,
    pub forward_passes: u64,
    pub backward_passes: u64,
    /// Threshold used for `confusion`: `ε` for the Jacobian detector, the best-F1 threshold otherwise.
    pub confusion_threshold: f64,
    /// Per-edge counts, row-major `(N+1)×N`.
    pub confusion: Vec<Confusion>,
}

/// Scores every transition and computes ROC-AUC and best F1 over the
/// flattened (input, target) pairs.
pub fn evaluate_detection<T: Scalar>(
    detector: &Detector<'_, T>,
    records: &[TransitionRecord],
    rows: Rows,
    chunk: usize,
) -> Result<DetectionMetrics, DetectError> {
    if records.is_empty() {
        return Err(DetectError::Empty);
    }
    let n = records[0].graph.n_factors();
    let n_rows = match rows {
        Rows::All => n + 1,
        Rows::StateOnly => n,
    };
    let (f0, b0) = detector.model().map_or((0, 0), |m| (m.counters().forwards(), m.counters().backwards()));
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    let mut kept: Vec<(usize, usize)> = Vec::new(); // (record index, offset into scores)
    let mut flagged = 0;
    for (c, chunk_records) in records.chunks(chunk.max(1)).enumerate() {
        let refs: Vec<&TransitionRecord> = chunk_records.iter().collect();
        for (k, s) in detector.score(&refs)?.into_iter().enumerate() {
            let Some(s) = s else {
                flagged += 1;
                continue;
            };
            kept.push((c * chunk.max(1) + k, scores.len()));
            let graph = &refs[k].graph;
            scores.extend_from_slice(&s[..n_rows * n]);
            labels.extend((0..n_rows * n).map(|e| graph.bits()[e]));
        }
    }
    let (f1, b1) = detector.model().map_or((0, 0), |m| (m.counters().forwards(), m.counters().backwards()));
    let roc = roc_auc(&scores, &labels)?;
    let (best, best_t) = best_f1_with_threshold(&scores, &labels)?;
    let threshold = match detector {
        Detector::Elden { epsilon, .. } => *epsilon,
        _ => best_t,
    };
    let mut confusion = vec![Confusion::default(); n_rows * n];
    for &(_, off) in &kept {
        for (e, c) in confusion.iter_mut().enumerate() {
            c.add(scores[off + e] >= threshold, labels[off + e]);
        }
    }
    Ok(DetectionMetrics {
        method: detector.name().to_string(),
        roc_auc: roc,
        best_f1: best,
        best_threshold: best_t,
        positive_rate: labels.iter().filter(|&&l| l).count() as f64 / labels.len() as f64,
        transitions: kept.len(),
        pairs: labels.len(),
        flagged,
        forward_passes: f1 - f0,
        backward_passes: b1 - b0,
        confusion_threshold: threshold,
        confusion,
    })
}
