//! Representation-spectrum diagnostics and noise-oracle selection quality.

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::model::{correlation_mean_square, forward, ModelSpec};
use crate::numcore::{symmetric_eigen, Matrix, ParamVector};

/// Floor applied to singular values before taking logarithms.
pub const LOG_CLAMP: f64 = 1e-12;

/// Number of leading singular values the collapse gap spans by default.
pub const DEFAULT_COLLAPSE_HEAD: usize = 20;

/// Singular values of the representation covariance at one round, in
/// descending order, with their (clamped) logarithms and the mean squared
/// entry of the batch correlation matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRecord {
    pub round: usize,
    pub singular_values: Vec<f64>,
    pub log_values: Vec<f64>,
    pub corr_mean_square: f64,
}

impl SpectrumRecord {
    pub fn dim(&self) -> usize {
        self.singular_values.len()
    }
}

/// Spectrum of the covariance of the model's representations over an
/// evaluation set. The covariance is symmetric positive semi-definite, so
/// its eigenvalues are its singular values; they are returned descending
/// with tiny negative rounding noise clamped to zero.
pub fn representation_spectrum(
    params: &ParamVector,
    spec: &ModelSpec,
    eval_features: &Matrix,
    round: usize,
) -> Result<SpectrumRecord> {
    let n = eval_features.rows();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "spectrum needs at least two evaluation samples, got {n}"
        )));
    }
    let d = spec.repr_dim();
    if d < 2 {
        return Err(Error::InvalidArgument(format!(
            "spectrum needs a representation width of at least 2, got {d}"
        )));
    }

    let fw = forward(params, spec, eval_features)?;
    let reps = &fw.representations;
    let means = reps.col_means();
    let mut centered = Matrix::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            centered.set(i, j, reps.get(i, j) - means[j]);
        }
    }
    // Population covariance (divide by the sample count).
    let mut cov = centered.transpose().matmul(&centered);
    for i in 0..d {
        for j in 0..d {
            let v = cov.get(i, j) / n as f64;
            cov.set(i, j, v);
        }
    }

    let (eigenvalues, _) = symmetric_eigen(&cov)?;
    let singular_values: Vec<f64> = eigenvalues.into_iter().map(|l| l.max(0.0)).collect();
    let log_values: Vec<f64> = singular_values
        .iter()
        .map(|&s| s.max(LOG_CLAMP).ln())
        .collect();
    let corr_mean_square = correlation_mean_square(reps)?;
    Ok(SpectrumRecord {
        round,
        singular_values,
        log_values,
        corr_mean_square,
    })
}

/// The spectrum's visual decay as one number: `log(s_1) - log(s_head)`.
pub fn collapse_gap(spectrum: &SpectrumRecord, head: usize) -> f64 {
    assert!(
        head >= 1 && head <= spectrum.dim(),
        "head must lie in [1, {}], got {head}",
        spectrum.dim()
    );
    spectrum.log_values[0] - spectrum.log_values[head - 1]
}

/// Precision and recall of clean-sample selection against the corruption
/// mask: precision over the selected set, recall over the clean samples of
/// the shard. Empty denominators score 1.
pub fn selection_quality(
    selected: &[usize],
    shard: &[usize],
    dataset: &LabeledDataset,
) -> (f64, f64) {
    let clean_selected = selected
        .iter()
        .filter(|&&i| !dataset.corrupted()[i])
        .count();
    let clean_total = shard.iter().filter(|&&i| !dataset.corrupted()[i]).count();
    let precision = if selected.is_empty() {
        1.0
    } else {
        clean_selected as f64 / selected.len() as f64
    };
    let recall = if clean_total == 0 {
        1.0
    } else {
        clean_selected as f64 / clean_total as f64
    };
    (precision, recall)
}

/// Standalone delimited-text emission: header then one row per record,
/// `round, sigma_1 .. sigma_d`.
pub fn spectra_csv(records: &[SpectrumRecord]) -> String {
    let d = records.first().map_or(0, SpectrumRecord::dim);
    let mut out = String::from("round");
    for i in 1..=d {
        out.push_str(&format!(",sigma_{i}"));
    }
    out.push('\n');
    for r in records {
        out.push_str(&r.round.to_string());
        for v in &r.singular_values {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}
