//! Exact manual gradients for every loss combination, plus momentum SGD.

use crate::error::{Error, Result};
use crate::model::loss::{
    loss_ce, loss_sce, loss_svd, normalize_representations, BaseLoss, LossSpec, RCE_LOG_ZERO,
    SVD_EPSILON,
};
use crate::model::{forward, Arch, ModelSpec};
use crate::numcore::{Matrix, ParamVector};

/// Gradient of the base loss with respect to the logits, already divided by
/// the batch size.
fn base_logit_grad(
    probabilities: &Matrix,
    labels: &[usize],
    base: &BaseLoss,
) -> Matrix {
    let (b, m) = (probabilities.rows(), probabilities.cols());
    let inv_b = 1.0 / b as f64;
    let mut dz = Matrix::zeros(b, m);
    for (i, &y) in labels.iter().enumerate() {
        let p_y = probabilities.get(i, y);
        // d(alpha*CE + beta*RCE)/dz = (p - onehot) * (alpha - beta*A*p_y),
        // with A the log-zero substitute; plain CE is alpha = 1, beta = 0.
        let factor = match base {
            BaseLoss::Ce => 1.0,
            BaseLoss::Sce { alpha, beta } => alpha - beta * RCE_LOG_ZERO * p_y,
        };
        for c in 0..m {
            let onehot = if c == y { 1.0 } else { 0.0 };
            dz.set(i, c, (probabilities.get(i, c) - onehot) * factor * inv_b);
        }
    }
    dz
}

/// Gradient of the decorrelation penalty with respect to the raw
/// representations (unweighted; the caller applies the coefficient).
fn svd_repr_grad(reps: &Matrix) -> Matrix {
    let (b, d) = (reps.rows(), reps.cols());
    let mut dh = Matrix::zeros(b, d);
    if d < 2 || b < 2 {
        return dh;
    }

    let means = reps.col_means();
    let mut centered = Matrix::zeros(b, d);
    let mut variances = vec![0.0; d];
    for i in 0..b {
        for j in 0..d {
            let c = reps.get(i, j) - means[j];
            centered.set(i, j, c);
            variances[j] += c * c;
        }
    }
    let denom: Vec<f64> = variances
        .iter()
        .map(|v| (SVD_EPSILON + v / b as f64).sqrt())
        .collect();

    let normalized = normalize_representations(reps);
    let corr = normalized.transpose().matmul(&normalized);

    // dL/dG for the off-diagonal mean of squares, zero on the diagonal.
    let off_count = (d * d - d) as f64;
    let mut dg = Matrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            if i != j {
                dg.set(i, j, 2.0 * corr.get(i, j) / off_count / b as f64);
            }
        }
    }
    // dL/dMn = Mn (dG + dG^T) = 2 Mn dG since dG is symmetric.
    let mut u = normalized.matmul(&dg);
    for v in 0..b {
        for x in u.row_mut(v) {
            *x *= 2.0;
        }
    }

    // Back through the per-dimension normalization: for column j with scale
    // s_j = sqrt(eps + Var_j) and centered values C,
    //   dL/dC_ij = U_ij / s_j - C_ij * T_j / (B * s_j^3),  T_j = sum_i U_ij C_ij.
    let mut t = vec![0.0; d];
    for i in 0..b {
        for (j, tj) in t.iter_mut().enumerate() {
            *tj += u.get(i, j) * centered.get(i, j);
        }
    }
    let mut dc = Matrix::zeros(b, d);
    for i in 0..b {
        for j in 0..d {
            let s = denom[j];
            let v = u.get(i, j) / s - centered.get(i, j) * t[j] / (b as f64 * s * s * s);
            dc.set(i, j, v);
        }
    }
    // Back through centering: subtract each column's mean gradient.
    let dc_means = dc.col_means();
    for i in 0..b {
        for j in 0..d {
            dh.set(i, j, dc.get(i, j) - dc_means[j]);
        }
    }
    dh
}

fn col_sums(m: &Matrix) -> Vec<f64> {
    let mut sums = vec![0.0; m.cols()];
    for i in 0..m.rows() {
        for (j, s) in sums.iter_mut().enumerate() {
            *s += m.get(i, j);
        }
    }
    sums
}

/// `lhs^T * rhs` without materializing the transpose.
fn gram_t(lhs: &Matrix, rhs: &Matrix) -> Matrix {
    assert_eq!(lhs.rows(), rhs.rows());
    let mut out = Matrix::zeros(lhs.cols(), rhs.cols());
    for r in 0..lhs.rows() {
        let lrow = lhs.row(r);
        let rrow = rhs.row(r);
        for (i, &lv) in lrow.iter().enumerate() {
            if lv == 0.0 {
                continue;
            }
            let orow = out.row_mut(i);
            for (o, &rv) in orow.iter_mut().zip(rrow) {
                *o += lv * rv;
            }
        }
    }
    out
}

/// Total loss value and its gradient for base + decorrelation + proximal
/// terms. The decorrelation term needs at least two samples to be defined
/// and is silently omitted on smaller batches.
pub fn grad(
    params: &ParamVector,
    spec: &ModelSpec,
    batch: &Matrix,
    labels: &[usize],
    loss: &LossSpec,
) -> Result<(f64, ParamVector)> {
    loss.validate()?;
    if let Some(anchor) = &loss.prox_anchor {
        if !params.same_layout(anchor) {
            let (tensor, detail) = params
                .layout()
                .first_mismatch(anchor.layout())
                .unwrap_or_else(|| ("<unknown>".into(), "layouts differ".into()));
            return Err(Error::LayoutMismatch { tensor, detail });
        }
    }
    if labels.len() != batch.rows() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for a batch of {}",
            labels.len(),
            batch.rows()
        )));
    }

    let fw = forward(params, spec, batch)?;
    let (base_value, _) = match loss.base {
        BaseLoss::Ce => loss_ce(&fw, labels)?,
        BaseLoss::Sce { alpha, beta } => loss_sce(&fw, labels, alpha, beta)?,
    };
    let dz = base_logit_grad(&fw.probabilities, labels, &loss.base);

    let svd_active = loss.svd_weight > 0.0 && batch.rows() >= 2;
    let svd_value = if svd_active {
        loss_svd(&fw.representations)?
    } else {
        0.0
    };

    let mut gradient = ParamVector::zeros(params.layout().clone());
    match spec.arch {
        Arch::SoftmaxRegression => {
            // Representations equal the input, so the decorrelation term is
            // constant with respect to the parameters.
            let dw = gram_t(batch, &dz);
            gradient.tensor_mut(0).copy_from_slice(dw.data());
            gradient.tensor_mut(1).copy_from_slice(&col_sums(&dz));
        }
        Arch::Mlp1h => {
            let h = &fw.representations;
            let (b, d) = (h.rows(), h.cols());
            let m = spec.num_classes;

            let dw2 = gram_t(h, &dz);
            let db2 = col_sums(&dz);

            // dH from the classifier head: dz * W2^T.
            let w2 = params.tensor(2);
            let mut dhidden = Matrix::zeros(b, d);
            for i in 0..b {
                for k in 0..d {
                    let mut sum = 0.0;
                    let wrow = &w2[k * m..(k + 1) * m];
                    for (c, &wv) in wrow.iter().enumerate() {
                        sum += dz.get(i, c) * wv;
                    }
                    dhidden.set(i, k, sum);
                }
            }
            if svd_active {
                let dh_svd = svd_repr_grad(h);
                for i in 0..b {
                    for j in 0..d {
                        let v = dhidden.get(i, j) + loss.svd_weight * dh_svd.get(i, j);
                        dhidden.set(i, j, v);
                    }
                }
            }
            // Through tanh: dZ1 = dH * (1 - H^2).
            let mut dz1 = Matrix::zeros(b, d);
            for i in 0..b {
                for j in 0..d {
                    let hv = h.get(i, j);
                    dz1.set(i, j, dhidden.get(i, j) * (1.0 - hv * hv));
                }
            }
            let dw1 = gram_t(batch, &dz1);
            gradient.tensor_mut(0).copy_from_slice(dw1.data());
            gradient.tensor_mut(1).copy_from_slice(&col_sums(&dz1));
            gradient.tensor_mut(2).copy_from_slice(dw2.data());
            gradient.tensor_mut(3).copy_from_slice(&db2);
        }
    }

    let mut total = base_value + loss.svd_weight * svd_value;
    if loss.prox_mu > 0.0 {
        let anchor = loss.prox_anchor.as_ref().expect("validated above");
        let mut sq = 0.0;
        for ((g, &w), &a) in gradient
            .values_mut()
            .iter_mut()
            .zip(params.values())
            .zip(anchor.values())
        {
            let diff = w - a;
            sq += diff * diff;
            *g += loss.prox_mu * diff;
        }
        total += 0.5 * loss.prox_mu * sq;
    }

    Ok((total, gradient))
}

/// Classic momentum SGD: `v <- momentum * v + g + weight_decay * w`,
/// `w <- w - lr * v`. Returns the updated parameters and velocity.
pub fn sgd_step(
    params: &ParamVector,
    gradient: &ParamVector,
    lr: f64,
    momentum_state: &ParamVector,
    momentum: f64,
    weight_decay: f64,
) -> Result<(ParamVector, ParamVector)> {
    if !params.same_layout(gradient) || !params.same_layout(momentum_state) {
        let other = if params.same_layout(gradient) {
            momentum_state
        } else {
            gradient
        };
        let (tensor, detail) = params
            .layout()
            .first_mismatch(other.layout())
            .unwrap_or_else(|| ("<unknown>".into(), "layouts differ".into()));
        return Err(Error::LayoutMismatch { tensor, detail });
    }
    let mut new_velocity = momentum_state.clone();
    let mut new_params = params.clone();
    for ((v, w), &g) in new_velocity
        .values_mut()
        .iter_mut()
        .zip(new_params.values_mut())
        .zip(gradient.values())
    {
        *v = momentum * *v + g + weight_decay * *w;
        *w -= lr * *v;
    }
    Ok((new_params, new_velocity))
}
