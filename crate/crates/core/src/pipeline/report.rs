//! The JSON run report.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::audit::RowAudit;
use super::config::{CollectorKind, RunConfig, StageKeys};
use crate::dataset::TaskKind;
use crate::error::Result;
use crate::eval::{Metric, UtilityScore};
use crate::search::SearchOutcome;
use crate::vae::LossParts;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub source: String,
    pub n_samples: usize,
    pub n_features: usize,
    pub task: TaskKind,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChosenSubset {
    pub indices: Vec<usize>,
    pub names: Vec<String>,
    /// Downstream score on the internal split of A that selected it.
    pub score_a: UtilityScore,
    /// Evaluator prediction at the ascended latent point.
    pub predicted_utility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetScore {
    pub indices: Vec<usize>,
    pub score: UtilityScore,
}

/// K-best filter baseline with `k = |chosen|`, ranked on A.
pub type KBestControl = SubsetScore;

/// Every score computed on subset B, all from models fit on the whole of A.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoresB {
    pub metric: Metric,
    pub chosen: UtilityScore,
    pub full: UtilityScore,
    pub kbest: KBestControl,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub random_control: Option<SubsetScore>,
}

/// Precision and recall of the chosen subset against planted features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecovery {
    pub informative: Vec<usize>,
    pub hits: usize,
    pub precision: f64,
    pub recall: f64,
}

impl TruthRecovery {
    pub fn new(truth: &BTreeSet<usize>, chosen: &BTreeSet<usize>) -> TruthRecovery {
        let hits = truth.intersection(chosen).count();
        let ratio = |n: usize| if n == 0 { 0.0 } else { hits as f64 / n as f64 };
        TruthRecovery {
            informative: truth.iter().copied().collect(),
            hits,
            precision: ratio(chosen.len()),
            recall: ratio(truth.len()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub collector: CollectorKind,
    pub records: usize,
    pub distinct: usize,
    pub top_decile_mean: f64,
    pub best_utility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub corpus_records: usize,
    pub n_shuffles: usize,
    /// `corpus_records * (n_shuffles + 1)`.
    pub augmented_records: usize,
    pub epochs: usize,
    pub loss_history: Vec<LossParts>,
}

/// Everything a run produced. Field order is the key order on disk; apart
/// from `timings` the bytes are a function of the configuration alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub seed: u64,
    pub stage_keys: StageKeys,
    pub dataset: DatasetSummary,
    pub chosen: ChosenSubset,
    pub scores_b: ScoresB,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<TruthRecovery>,
    pub corpus: CorpusSummary,
    pub training: TrainingSummary,
    pub search: SearchOutcome,
    pub audit: RowAudit,
    pub config: RunConfig,
    /// Paths relative to the output directory.
    pub artifacts: BTreeMap<String, String>,
    /// Wall-clock seconds per stage; excluded from determinism checks.
    pub timings: BTreeMap<String, f64>,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<RunReport> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Replaces the `timings` object of a serialized report with `null`, for
/// byte comparison of two runs.
pub fn mask_timings(report_json: &str) -> Result<String> {
    let mut v: serde_json::Value = serde_json::from_str(report_json)?;
    if let Some(t) = v.get_mut("timings") {
        *t = serde_json::Value::Null;
    }
    Ok(serde_json::to_string_pretty(&v)?)
}
