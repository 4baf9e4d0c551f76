//! Ranking metrics over flattened edge predictions.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("metric undefined: labels contain only {0}")]
    SingleClass(&'static str),
    #[error("{scores} scores but {labels} labels")]
    Length { scores: usize, labels: usize },
    #[error("non-finite score at index {0}")]
    NonFinite(usize),
}

fn check(scores: &[f64], labels: &[bool]) -> Result<(usize, usize), MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::Length {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(MetricError::NonFinite(i));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    match (pos, labels.len() - pos) {
        (0, _) => Err(MetricError::SingleClass("negatives")),
        (_, 0) => Err(MetricError::SingleClass("positives")),
        counts => Ok(counts),
    }
}

/// Indices sorted by descending score.
fn order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// `P(score_pos > score_neg) + ½·P(tie)`, exact.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    let (pos, neg) = check(scores, labels)?;
    let idx = order(scores);
    // walk tie groups from the top; each positive beats every negative below its group
    let mut wins = 0.0f64;
    let mut neg_above = 0usize;
    let mut k = 0;
    while k < idx.len() {
        let mut end = k;
        while end < idx.len() && scores[idx[end]] == scores[idx[k]] {
            end += 1;
        }
        let (gp, gn) = idx[k..end].iter().fold((0usize, 0usize), |(p, n), &i| if labels[i] { (p + 1, n) } else { (p, n + 1) });
        let neg_below = neg - neg_above - gn;
        wins += gp as f64 * neg_below as f64 + 0.5 * gp as f64 * gn as f64;
        neg_above += gn;
        k = end;
    }
    Ok(wins / (pos as f64 * neg as f64))
}

/// Best F1 over all thresholds; also returns the threshold attaining it
/// (predict positive when `score >= threshold`; `+∞` predicts nothing).
pub fn best_f1_with_threshold(scores: &[f64], labels: &[bool]) -> Result<(f64, f64), MetricError> {
    let (pos, _) = check(scores, labels)?;
    let idx = order(scores);
    let (mut best, mut best_t) = (0.0, f64::INFINITY);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < idx.len() {
        let t = scores[idx[k]];
        while k < idx.len() && scores[idx[k]] == t {
            if labels[idx[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        let f1 = 2.0 * tp as f64 / (2 * tp + fp + (pos - tp)) as f64;
        if f1 > best {
            best = f1;
            best_t = t;
        }
    }
    Ok((best, best_t))
}

pub fn best_f1(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    Ok(best_f1_with_threshold(scores, labels)?.0)
}

/// Counts at a fixed threshold.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn add(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn f1(&self) -> f64 {
        let d = 2 * self.tp + self.fp + self.fn_;
        if d == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / d as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.3; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
        assert_eq!(roc_auc(&[0.9, 0.8, 0.3, 0.1], &[true, false, true, false]).unwrap(), 0.75);
    }

    #[test]
    fn f1_examples() {
        assert_eq!(best_f1(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        assert!((best_f1(&[0.9, 0.8, 0.3, 0.1], &[true, false, true, false]).unwrap() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn single_class_is_undefined() {
        assert_eq!(roc_auc(&[0.1, 0.2], &[true, true]), Err(MetricError::SingleClass("positives")));
        assert_eq!(best_f1(&[0.1, 0.2], &[false, false]), Err(MetricError::SingleClass("negatives")));
    }

    #[test]
    fn confusion_f1() {
        let mut c = Confusion::default();
        for (p, a) in [(true, true), (true, false), (false, true), (false, false)] {
            c.add(p, a);
        }
        assert_eq!((c.tp, c.fp, c.tn, c.fn_), (1, 1, 1, 1));
        assert_eq!(c.f1(), 0.5);
    }
}
