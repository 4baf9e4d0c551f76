use super::DetectionMetrics;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// One line of the detection report CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub env: String,
    pub seed: u64,
    pub roc_auc: f64,
    pub best_f1: f64,
    pub positive_rate: f64,
    pub forward_passes: u64,
}

impl ReportRow {
    pub fn new(env: &str, seed: u64, m: &DetectionMetrics) -> Self {
        Self {
            method: m.method.clone(),
            env: env.to_string(),
            seed,
            roc_auc: m.roc_auc,
            best_f1: m.best_f1,
            positive_rate: m.positive_rate,
            forward_passes: m.forward_passes,
        }
    }
}

pub fn write_report_csv(path: &Path, rows: &[ReportRow]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()
}

pub fn write_summary_json(path: &Path, metrics: &[DetectionMetrics]) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(metrics)?;
    std::fs::write(path, text + "\n")
}
