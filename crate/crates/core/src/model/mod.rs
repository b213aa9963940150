//! Small differentiable classifiers with representation extraction, loss
//! functions, and exact manual gradients.

mod grad;
mod loss;

pub use grad::{grad, sgd_step};
pub use loss::{
    correlation_mean_square, loss_ce, loss_sce, loss_svd, BaseLoss, LossSpec,
    DEFAULT_SVD_WEIGHT, PROB_CLAMP, RCE_LOG_ZERO, SVD_EPSILON,
};

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Layout, Matrix, ParamVector, RngStream, TensorSpec};

/// Classifier architecture.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    /// Linear softmax classifier; the representation is the input itself.
    SoftmaxRegression,
    /// One tanh hidden layer; the hidden activations are the representation.
    Mlp1h,
}

/// Architecture plus dimensions. For softmax regression the representation
/// width equals the feature dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Arch,
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
    pub init_scale: f64,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.hidden_dim == 0 || self.num_classes == 0 {
            return Err(Error::InvalidArgument(
                "model dimensions must be at least 1".into(),
            ));
        }
        crate::error::require_positive(self.init_scale, "init_scale")?;
        if self.arch == Arch::SoftmaxRegression && self.hidden_dim != self.feature_dim {
            return Err(Error::InvalidArgument(format!(
                "softmax regression has representation width = feature_dim ({}), got hidden_dim {}",
                self.feature_dim, self.hidden_dim
            )));
        }
        Ok(())
    }

    /// Width of the representation produced by [`forward`].
    pub fn repr_dim(&self) -> usize {
        match self.arch {
            Arch::SoftmaxRegression => self.feature_dim,
            Arch::Mlp1h => self.hidden_dim,
        }
    }

    /// Parameter layout: weight matrices are stored row-major as
    /// `[in_dim, out_dim]`, biases as flat vectors.
    pub fn layout(&self) -> Arc<Layout> {
        let t = |name: &str, shape: Vec<usize>| TensorSpec {
            name: name.to_string(),
            shape,
        };
        match self.arch {
            Arch::SoftmaxRegression => Layout::new(vec![
                t("w", vec![self.feature_dim, self.num_classes]),
                t("b", vec![self.num_classes]),
            ]),
            Arch::Mlp1h => Layout::new(vec![
                t("w1", vec![self.feature_dim, self.hidden_dim]),
                t("b1", vec![self.hidden_dim]),
                t("w2", vec![self.hidden_dim, self.num_classes]),
                t("b2", vec![self.num_classes]),
            ]),
        }
    }
}

/// Representations, logits, and softmax probabilities for one batch.
#[derive(Clone, Debug)]
pub struct ForwardResult {
    pub representations: Matrix,
    pub logits: Matrix,
    pub probabilities: Matrix,
}

/// Uniform weights in `(-init_scale, init_scale)`, zero biases.
pub fn init_params(spec: &ModelSpec, rng: &mut RngStream) -> ParamVector {
    let layout = spec.layout();
    let mut params = ParamVector::zeros(layout.clone());
    for (idx, tensor) in layout.tensors().iter().enumerate() {
        if tensor.shape.len() < 2 {
            continue; // biases stay zero
        }
        for w in params.tensor_mut(idx) {
            *w = rng.range_f64(-spec.init_scale, spec.init_scale);
        }
    }
    params
}

/// `X * W + b` where `w` is `[in, out]` row-major and `x` is `[B, in]`.
fn affine(x: &Matrix, w: &[f64], b: &[f64], in_dim: usize, out_dim: usize) -> Matrix {
    let rows = x.rows();
    let mut out = Matrix::zeros(rows, out_dim);
    for i in 0..rows {
        let xi = x.row(i);
        let oi = out.row_mut(i);
        oi.copy_from_slice(b);
        for (k, &xv) in xi.iter().enumerate().take(in_dim) {
            if xv == 0.0 {
                continue;
            }
            let wrow = &w[k * out_dim..(k + 1) * out_dim];
            for (o, &wv) in oi.iter_mut().zip(wrow) {
                *o += xv * wv;
            }
        }
    }
    out
}

fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut probs = Matrix::zeros(logits.rows(), logits.cols());
    for i in 0..logits.rows() {
        let row = logits.row(i);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let out = probs.row_mut(i);
        let mut sum = 0.0;
        for (o, &z) in out.iter_mut().zip(row) {
            *o = (z - max).exp();
            sum += *o;
        }
        for o in out.iter_mut() {
            *o /= sum;
        }
    }
    probs
}

/// Run the model over a batch, returning representations, logits, and
/// row-normalized probabilities.
pub fn forward(params: &ParamVector, spec: &ModelSpec, batch: &Matrix) -> Result<ForwardResult> {
    if batch.cols() != spec.feature_dim {
        return Err(Error::DimensionMismatch(format!(
            "batch has {} feature columns, model expects {}",
            batch.cols(),
            spec.feature_dim
        )));
    }
    match spec.arch {
        Arch::SoftmaxRegression => {
            let logits = affine(
                batch,
                params.tensor(0),
                params.tensor(1),
                spec.feature_dim,
                spec.num_classes,
            );
            let probabilities = softmax_rows(&logits);
            Ok(ForwardResult {
                representations: batch.clone(),
                logits,
                probabilities,
            })
        }
        Arch::Mlp1h => {
            let mut hidden = affine(
                batch,
                params.tensor(0),
                params.tensor(1),
                spec.feature_dim,
                spec.hidden_dim,
            );
            for v in 0..hidden.rows() {
                for h in hidden.row_mut(v) {
                    *h = h.tanh();
                }
            }
            let logits = affine(
                &hidden,
                params.tensor(2),
                params.tensor(3),
                spec.hidden_dim,
                spec.num_classes,
            );
            let probabilities = softmax_rows(&logits);
            Ok(ForwardResult {
                representations: hidden,
                logits,
                probabilities,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mlp_spec() -> ModelSpec {
        ModelSpec {
            arch: Arch::Mlp1h,
            feature_dim: 2,
            hidden_dim: 2,
            num_classes: 2,
            init_scale: 0.5,
        }
    }

    #[test]
    fn softmax_layout_length() {
        let spec = ModelSpec {
            arch: Arch::SoftmaxRegression,
            feature_dim: 7,
            hidden_dim: 7,
            num_classes: 3,
            init_scale: 0.1,
        };
        assert_eq!(spec.layout().total_len(), 7 * 3 + 3);
    }

    #[test]
    fn tiny_init_scale_gives_uniform_outputs() {
        let spec = ModelSpec {
            arch: Arch::SoftmaxRegression,
            feature_dim: 3,
            hidden_dim: 3,
            num_classes: 4,
            init_scale: 1e-300,
        };
        let params = init_params(&spec, &mut RngStream::new(0, 0));
        let batch = Matrix::from_vec(2, 3, vec![1.0, -2.0, 0.5, 0.0, 1.0, 1.0]).unwrap();
        let fw = forward(&params, &spec, &batch).unwrap();
        for i in 0..2 {
            for &p in fw.probabilities.row(i) {
                assert!((p - 0.25).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn init_is_deterministic() {
        let spec = mlp_spec();
        let a = init_params(&spec, &mut RngStream::new(3, 3));
        let b = init_params(&spec, &mut RngStream::new(3, 3));
        assert_eq!(a, b);
    }

    #[test]
    fn zero_params_give_uniform_probabilities() {
        let spec = mlp_spec();
        let params = ParamVector::zeros(spec.layout());
        let batch = Matrix::from_vec(1, 2, vec![0.3, -0.7]).unwrap();
        let fw = forward(&params, &spec, &batch).unwrap();
        assert_eq!(fw.logits.row(0), &[0.0, 0.0]);
        for &p in fw.probabilities.row(0) {
            assert!((p - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn batching_invariance() {
        let spec = mlp_spec();
        let params = init_params(&spec, &mut RngStream::new(4, 0));
        let mut rng = RngStream::new(4, 1);
        let data: Vec<f64> = (0..64).map(|_| rng.range_f64(-1.0, 1.0)).collect();
        let full = Matrix::from_vec(32, 2, data.clone()).unwrap();
        let fw_full = forward(&params, &spec, &full).unwrap();
        for i in 0..32 {
            let single = Matrix::from_vec(1, 2, data[2 * i..2 * i + 2].to_vec()).unwrap();
            let fw_one = forward(&params, &spec, &single).unwrap();
            for j in 0..2 {
                assert!(
                    (fw_one.probabilities.get(0, j) - fw_full.probabilities.get(i, j)).abs()
                        < 1e-15
                );
            }
        }
    }

    #[test]
    fn hand_computed_single_sample_mlp() {
        // w1 = [[0.5, -0.25], [1.0, 0.75]], b1 = (0.1, -0.2)
        // w2 = [[1.5, -0.5], [0.25, 1.0]], b2 = (0.0, 0.3), x = (2, -1)
        let spec = mlp_spec();
        let mut params = ParamVector::zeros(spec.layout());
        params.tensor_mut(0).copy_from_slice(&[0.5, -0.25, 1.0, 0.75]);
        params.tensor_mut(1).copy_from_slice(&[0.1, -0.2]);
        params.tensor_mut(2).copy_from_slice(&[1.5, -0.5, 0.25, 1.0]);
        params.tensor_mut(3).copy_from_slice(&[0.0, 0.3]);
        let batch = Matrix::from_vec(1, 2, vec![2.0, -1.0]).unwrap();
        let fw = forward(&params, &spec, &batch).unwrap();

        let z1 = 2.0 * 0.5 - 1.0 * 1.0 + 0.1; // 0.1
        let z2 = 2.0 * (-0.25) - 1.0 * 0.75 - 0.2; // -1.45
        let (h1, h2) = (f64::tanh(z1), f64::tanh(z2));
        assert!((fw.representations.get(0, 0) - h1).abs() < 1e-15);
        assert!((fw.representations.get(0, 1) - h2).abs() < 1e-15);
        let l1 = h1 * 1.5 + h2 * 0.25;
        let l2 = h1 * (-0.5) + h2 * 1.0 + 0.3;
        assert!((fw.logits.get(0, 0) - l1).abs() < 1e-15);
        assert!((fw.logits.get(0, 1) - l2).abs() < 1e-14);
        let e1 = (l1 - l1.max(l2)).exp();
        let e2 = (l2 - l1.max(l2)).exp();
        assert!((fw.probabilities.get(0, 0) - e1 / (e1 + e2)).abs() < 1e-15);
    }

    #[test]
    fn forward_rejects_dimension_mismatch() {
        let spec = mlp_spec();
        let params = ParamVector::zeros(spec.layout());
        let batch = Matrix::from_vec(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        assert!(forward(&params, &spec, &batch).is_err());
    }

    #[test]
    fn probability_rows_sum_to_one() {
        let spec = ModelSpec {
            arch: Arch::Mlp1h,
            feature_dim: 5,
            hidden_dim: 4,
            num_classes: 6,
            init_scale: 2.0,
        };
        let params = init_params(&spec, &mut RngStream::new(5, 0));
        let mut rng = RngStream::new(5, 1);
        let data: Vec<f64> = (0..50).map(|_| rng.range_f64(-3.0, 3.0)).collect();
        let batch = Matrix::from_vec(10, 5, data).unwrap();
        let fw = forward(&params, &spec, &batch).unwrap();
        for i in 0..10 {
            let sum: f64 = fw.probabilities.row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }
}
