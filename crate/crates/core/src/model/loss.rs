//! Loss functions: cross-entropy, symmetric cross-entropy, and the
//! representation-decorrelation penalty.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ForwardResult;
use crate::numcore::{Matrix, ParamVector};

/// Probabilities are clamped here before logarithms.
pub const PROB_CLAMP: f64 = 1e-12;

/// Substitute for `log 0` in the reverse cross-entropy term.
pub const RCE_LOG_ZERO: f64 = -4.0;

/// Variance floor used when normalizing representations.
pub const SVD_EPSILON: f64 = 1e-8;

/// Recommended weight for the decorrelation penalty when it is enabled
/// without an explicit coefficient.
pub const DEFAULT_SVD_WEIGHT: f64 = 0.1;

/// Base training loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseLoss {
    Ce,
    Sce { alpha: f64, beta: f64 },
}

/// Full training objective: base loss plus optional decorrelation and
/// proximal terms.
#[derive(Clone, Debug)]
pub struct LossSpec {
    pub base: BaseLoss,
    pub svd_weight: f64,
    pub prox_mu: f64,
    pub prox_anchor: Option<ParamVector>,
}

impl LossSpec {
    pub fn cross_entropy() -> Self {
        LossSpec {
            base: BaseLoss::Ce,
            svd_weight: 0.0,
            prox_mu: 0.0,
            prox_anchor: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let BaseLoss::Sce { alpha, beta } = self.base {
            crate::error::require_positive(alpha, "sce alpha")?;
            crate::error::require_positive(beta, "sce beta")?;
        }
        if self.svd_weight < 0.0 {
            return Err(Error::InvalidArgument("svd_weight must be non-negative".into()));
        }
        if self.prox_mu < 0.0 {
            return Err(Error::InvalidArgument("prox_mu must be non-negative".into()));
        }
        if self.prox_mu > 0.0 && self.prox_anchor.is_none() {
            return Err(Error::InvalidArgument(
                "a positive proximal weight requires an anchor".into(),
            ));
        }
        Ok(())
    }
}

fn check_labels(result: &ForwardResult, labels: &[usize]) -> Result<()> {
    if labels.len() != result.probabilities.rows() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for a batch of {}",
            labels.len(),
            result.probabilities.rows()
        )));
    }
    let m = result.probabilities.cols();
    if let Some(&bad) = labels.iter().find(|&&l| l >= m) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {m} classes"
        )));
    }
    Ok(())
}

/// Mean and per-sample `-log p(y_i | x_i)`; the per-sample vector feeds
/// small-loss selection.
pub fn loss_ce(result: &ForwardResult, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
    check_labels(result, labels)?;
    let per_sample: Vec<f64> = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -result.probabilities.get(i, y).max(PROB_CLAMP).ln())
        .collect();
    let mean = per_sample.iter().sum::<f64>() / per_sample.len().max(1) as f64;
    Ok((mean, per_sample))
}

/// Symmetric cross-entropy `alpha * CE + beta * RCE`. The reverse term swaps
/// the roles of prediction and one-hot target, with the one-hot zeros' log
/// replaced by the constant [`RCE_LOG_ZERO`]; it reduces to
/// `-RCE_LOG_ZERO * (1 - p_y)` per sample.
pub fn loss_sce(
    result: &ForwardResult,
    labels: &[usize],
    alpha: f64,
    beta: f64,
) -> Result<(f64, Vec<f64>)> {
    check_labels(result, labels)?;
    let per_sample: Vec<f64> = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let p_y = result.probabilities.get(i, y);
            let ce = -p_y.max(PROB_CLAMP).ln();
            let rce = -RCE_LOG_ZERO * (1.0 - p_y);
            alpha * ce + beta * rce
        })
        .collect();
    let mean = per_sample.iter().sum::<f64>() / per_sample.len().max(1) as f64;
    Ok((mean, per_sample))
}

/// Center each representation dimension, divide by the square root of
/// `SVD_EPSILON` plus its population variance.
pub(crate) fn normalize_representations(reps: &Matrix) -> Matrix {
    let (b, d) = (reps.rows(), reps.cols());
    let means = reps.col_means();
    let mut variances = vec![0.0; d];
    for i in 0..b {
        for (j, var) in variances.iter_mut().enumerate() {
            let c = reps.get(i, j) - means[j];
            *var += c * c;
        }
    }
    let denom: Vec<f64> = variances
        .iter()
        .map(|v| (SVD_EPSILON + v / b as f64).sqrt())
        .collect();
    let mut out = Matrix::zeros(b, d);
    for i in 0..b {
        for j in 0..d {
            out.set(i, j, (reps.get(i, j) - means[j]) / denom[j]);
        }
    }
    out
}

/// Decorrelation penalty over a batch of representations: normalize each
/// dimension, form the `d x d` product of the normalized matrix with itself,
/// and return the mean of the squared off-diagonal entries divided by the
/// batch size. A width-one representation has no off-diagonal entries and
/// scores zero.
pub fn loss_svd(representations: &Matrix) -> Result<f64> {
    let (b, d) = (representations.rows(), representations.cols());
    if b < 2 {
        return Err(Error::InvalidArgument(format!(
            "decorrelation loss needs a batch of at least 2, got {b}"
        )));
    }
    if d < 2 {
        return Ok(0.0);
    }
    let normalized = normalize_representations(representations);
    let corr = normalized.transpose().matmul(&normalized);
    let mut sum_sq = 0.0;
    for i in 0..d {
        for j in 0..d {
            if i != j {
                let v = corr.get(i, j);
                sum_sq += v * v;
            }
        }
    }
    let off_count = (d * d - d) as f64;
    Ok(sum_sq / off_count / b as f64)
}

/// Mean squared entry of the batch correlation matrix (diagonal included):
/// `(1/d^2) * ||K||_F^2` with `K = (1/B) * Mn^T * Mn` over normalized
/// representations. Recorded as a spectrum diagnostic alongside [`loss_svd`].
pub fn correlation_mean_square(representations: &Matrix) -> Result<f64> {
    let (b, d) = (representations.rows(), representations.cols());
    if b < 2 {
        return Err(Error::InvalidArgument(format!(
            "correlation diagnostic needs a batch of at least 2, got {b}"
        )));
    }
    let normalized = normalize_representations(representations);
    let corr = normalized.transpose().matmul(&normalized);
    let mut sum_sq = 0.0;
    for i in 0..d {
        for j in 0..d {
            let k = corr.get(i, j) / b as f64;
            sum_sq += k * k;
        }
    }
    Ok(sum_sq / (d * d) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{forward, init_params, Arch, ModelSpec};
    use crate::numcore::RngStream;

    fn result_from_probs(probs: Vec<Vec<f64>>) -> ForwardResult {
        let m = Matrix::from_rows(&probs).unwrap();
        ForwardResult {
            representations: m.clone(),
            logits: m.clone(),
            probabilities: m,
        }
    }

    #[test]
    fn ce_perfect_prediction_is_zero() {
        let r = result_from_probs(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let (mean, per) = loss_ce(&r, &[0, 1]).unwrap();
        assert_eq!(mean, 0.0);
        assert_eq!(per, vec![0.0, 0.0]);
    }

    #[test]
    fn ce_uniform_prediction_is_ln_m() {
        let r = result_from_probs(vec![vec![0.25; 4]]);
        let (mean, _) = loss_ce(&r, &[2]).unwrap();
        assert!((mean - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ce_matches_scalar_recomputation() {
        let r = result_from_probs(vec![vec![0.7, 0.2, 0.1], vec![0.1, 0.3, 0.6]]);
        let (mean, per) = loss_ce(&r, &[0, 2]).unwrap();
        let expect = [-(0.7f64.ln()), -(0.6f64.ln())];
        assert!((per[0] - expect[0]).abs() < 1e-15);
        assert!((per[1] - expect[1]).abs() < 1e-15);
        assert!((mean - (expect[0] + expect[1]) / 2.0).abs() < 1e-15);
        assert!(per.iter().all(|&l| l >= 0.0));
    }

    #[test]
    fn sce_perfect_prediction_limits_to_zero() {
        let r = result_from_probs(vec![vec![1.0, 0.0]]);
        let (mean, _) = loss_sce(&r, &[0], 0.1, 1.0).unwrap();
        assert!(mean.abs() < 1e-12);
    }

    #[test]
    fn sce_with_zero_beta_equals_ce() {
        let r = result_from_probs(vec![vec![0.6, 0.4], vec![0.2, 0.8]]);
        let (ce, ce_per) = loss_ce(&r, &[0, 1]).unwrap();
        let (sce, sce_per) = loss_sce(&r, &[0, 1], 1.0, 0.0).unwrap();
        assert_eq!(sce, ce);
        assert_eq!(sce_per, ce_per);
    }

    #[test]
    fn sce_matches_scalar_oracle() {
        // alpha = 0.1, beta = 1.0, log 0 := -4.
        let probs = vec![vec![0.5, 0.3, 0.2], vec![0.25, 0.35, 0.4]];
        let labels = [1usize, 0usize];
        let r = result_from_probs(probs.clone());
        let (mean, per) = loss_sce(&r, &labels, 0.1, 1.0).unwrap();
        for (i, &y) in labels.iter().enumerate() {
            let p_y: f64 = probs[i][y];
            let ce = -p_y.ln();
            let rce = 4.0 * (1.0 - p_y);
            assert!((per[i] - (0.1 * ce + 1.0 * rce)).abs() < 1e-12);
        }
        assert!((mean - per.iter().sum::<f64>() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn svd_orthogonal_columns_score_zero() {
        let reps = Matrix::from_rows(&[
            vec![1.0, 1.0],
            vec![1.0, -1.0],
            vec![-1.0, 1.0],
            vec![-1.0, -1.0],
        ])
        .unwrap();
        assert_eq!(loss_svd(&reps).unwrap(), 0.0);
    }

    #[test]
    fn svd_identical_columns_reference_value() {
        // Two identical +-1 columns over a batch of two: normalization leaves
        // the entries at +-1 up to the variance floor, the off-diagonal
        // products are 2, and the final value is 2 * 2^2 / 2 / 2 = 2.
        let reps = Matrix::from_rows(&[vec![1.0, 1.0], vec![-1.0, -1.0]]).unwrap();
        let got = loss_svd(&reps).unwrap();
        assert!((got - 2.0).abs() < 1e-6, "{got}");

        // Exact agreement with an independent transcription of the same
        // computation, including the variance floor.
        let scale = 1.0 / (1.0 + SVD_EPSILON).sqrt();
        let entry = 2.0 * scale * scale;
        let reference = (entry * entry + entry * entry) / 2.0 / 2.0;
        assert!((got - reference).abs() < 1e-15);
    }

    #[test]
    fn svd_single_dimension_is_zero() {
        let reps = Matrix::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        assert_eq!(loss_svd(&reps).unwrap(), 0.0);
    }

    #[test]
    fn svd_rejects_single_sample() {
        let reps = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert!(loss_svd(&reps).is_err());
    }

    #[test]
    fn svd_invariant_to_row_and_column_permutations() {
        let mut rng = RngStream::new(6, 0);
        let data: Vec<f64> = (0..24).map(|_| rng.range_f64(-2.0, 2.0)).collect();
        let reps = Matrix::from_vec(6, 4, data).unwrap();
        let base = loss_svd(&reps).unwrap();

        let row_perm = [3usize, 0, 5, 1, 4, 2];
        let mut permuted = Matrix::zeros(6, 4);
        for (dst, &src) in row_perm.iter().enumerate() {
            for j in 0..4 {
                permuted.set(dst, j, reps.get(src, j));
            }
        }
        assert!((loss_svd(&permuted).unwrap() - base).abs() < 1e-12);

        let col_perm = [2usize, 0, 3, 1];
        let mut permuted_cols = Matrix::zeros(6, 4);
        for i in 0..6 {
            for (dst, &src) in col_perm.iter().enumerate() {
                permuted_cols.set(i, dst, reps.get(i, src));
            }
        }
        assert!((loss_svd(&permuted_cols).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn svd_invariant_to_positive_affine_rescaling() {
        let mut rng = RngStream::new(7, 0);
        let data: Vec<f64> = (0..40).map(|_| rng.range_f64(-1.0, 1.0)).collect();
        let reps = Matrix::from_vec(10, 4, data).unwrap();
        let base = loss_svd(&reps).unwrap();
        let scales = [0.5, 2.0, 7.0, 1.25];
        let shifts = [3.0, -1.0, 0.25, 10.0];
        let mut rescaled = Matrix::zeros(10, 4);
        for i in 0..10 {
            for j in 0..4 {
                rescaled.set(i, j, scales[j] * reps.get(i, j) + shifts[j]);
            }
        }
        assert!((loss_svd(&rescaled).unwrap() - base).abs() < 1e-8);
    }

    #[test]
    fn correlation_diagnostic_positive_and_zero_cases() {
        let mut rng = RngStream::new(8, 0);
        let data: Vec<f64> = (0..30).map(|_| rng.range_f64(-1.0, 1.0)).collect();
        let reps = Matrix::from_vec(10, 3, data).unwrap();
        assert!(correlation_mean_square(&reps).unwrap() > 0.0);

        // All-equal representations normalize to zero, so the correlation
        // matrix vanishes entirely.
        let flat = Matrix::from_rows(&[vec![2.0, 2.0], vec![2.0, 2.0]]).unwrap();
        assert_eq!(correlation_mean_square(&flat).unwrap(), 0.0);
    }

    #[test]
    fn losses_on_real_forward_pass_are_consistent() {
        let spec = ModelSpec {
            arch: Arch::Mlp1h,
            feature_dim: 3,
            hidden_dim: 4,
            num_classes: 3,
            init_scale: 0.8,
        };
        let params = init_params(&spec, &mut RngStream::new(9, 0));
        let mut rng = RngStream::new(9, 1);
        let data: Vec<f64> = (0..15).map(|_| rng.range_f64(-1.0, 1.0)).collect();
        let batch = Matrix::from_vec(5, 3, data).unwrap();
        let fw = forward(&params, &spec, &batch).unwrap();
        let labels = [0usize, 1, 2, 1, 0];
        let (mean, per) = loss_ce(&fw, &labels).unwrap();
        assert!((mean - per.iter().sum::<f64>() / 5.0).abs() < 1e-12);
        assert!(per.iter().all(|&l| l >= 0.0));
    }
}
