//! Per-round records and the serialized experiment report.
//!
//! Reports are deterministic: identical configurations serialize to
//! byte-identical JSON and CSV. Wall-clock timings are kept in memory for
//! logging but never serialized.

use serde::{Deserialize, Serialize};

use crate::diagnostics::SpectrumRecord;
use crate::engine::ExperimentConfig;
use crate::error::Result;

/// Metrics of one communication round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Ids of the clients sampled this round, ascending.
    pub selected: Vec<usize>,
    pub test_macro_f1: f64,
    pub test_accuracy: f64,
    pub mean_train_loss: f64,
    /// Sample counts of the selected clients, aligned with `selected`.
    pub client_sizes: Vec<usize>,
    /// Clean fraction of the samples picked by loss-based selection, when
    /// the strategy performs selection.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub selection_clean_fraction: Option<f64>,
    /// Wall-clock duration of the round; excluded from serialized output so
    /// reports stay byte-identical across machines and thread counts.
    #[serde(skip, default)]
    pub wall_time_secs: f64,
}

/// Result of one full experiment run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    /// Echo of the effective configuration the run used.
    pub config: ExperimentConfig,
    pub rounds: Vec<RoundRecord>,
    /// Mean macro-F1 over the final `eval_window` rounds.
    pub final_f1: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub spectra: Option<Vec<SpectrumRecord>>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Stable CSV schema, one row per round in increasing round order:
    /// `round,test_macro_f1,test_accuracy,mean_train_loss,selection_clean_fraction,selected,client_sizes`
    /// with `selected` and `client_sizes` joined by `;` and an empty
    /// selection column when the strategy does not select samples.
    pub fn rounds_csv(&self) -> String {
        let mut out = String::from(
            "round,test_macro_f1,test_accuracy,mean_train_loss,selection_clean_fraction,selected,client_sizes\n",
        );
        for r in &self.rounds {
            let selection = r
                .selection_clean_fraction
                .map(|v| v.to_string())
                .unwrap_or_default();
            let joined = |xs: &[usize]| {
                xs.iter()
                    .map(usize::to_string)
                    .collect::<Vec<_>>()
                    .join(";")
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.round,
                r.test_macro_f1,
                r.test_accuracy,
                r.mean_train_loss,
                selection,
                joined(&r.selected),
                joined(&r.client_sizes),
            ));
        }
        out
    }
}

/// Aggregate of several runs of the same configuration under derived seeds.
#[derive(Clone, Debug, Serialize)]
pub struct RepeatedReport {
    pub runs: Vec<ExperimentReport>,
    pub mean_final_f1: f64,
    /// Population standard deviation of the per-run final F1 values.
    pub spread_final_f1: f64,
}

impl RepeatedReport {
    pub fn from_runs(runs: Vec<ExperimentReport>) -> Self {
        let n = runs.len().max(1) as f64;
        let mean = runs.iter().map(|r| r.final_f1).sum::<f64>() / n;
        let var = runs
            .iter()
            .map(|r| (r.final_f1 - mean) * (r.final_f1 - mean))
            .sum::<f64>()
            / n;
        RepeatedReport {
            runs,
            mean_final_f1: mean,
            spread_final_f1: var.sqrt(),
        }
    }
}
