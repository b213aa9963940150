//! Server-side aggregation rules producing the next global model from the
//! uploads of one round.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{coordinate_median, linear_combine, ParamVector};

/// Distance floor in the smoothed Weiszfeld iteration.
const RFA_DISTANCE_FLOOR: f64 = 1e-8;

/// One client's contribution to a round.
#[derive(Clone, Debug)]
pub struct Upload {
    pub client_id: usize,
    pub params: ParamVector,
    pub n_k: usize,
}

/// Which aggregation rule the server applies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregatorSpec {
    Fedavg,
    Fedexp { epsilon: f64 },
    Median,
    TrimmedMean { kappa: f64 },
    Krum { kappa: f64 },
    Rfa { max_iters: usize, tol: f64 },
}

impl AggregatorSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            AggregatorSpec::Fedexp { epsilon } => {
                crate::error::require_positive(*epsilon, "fedexp epsilon")?;
            }
            AggregatorSpec::TrimmedMean { kappa } | AggregatorSpec::Krum { kappa } => {
                if !(0.0..0.5).contains(kappa) {
                    return Err(Error::InvalidArgument(format!(
                        "kappa must lie in [0, 0.5), got {kappa}"
                    )));
                }
            }
            AggregatorSpec::Rfa { max_iters, tol } => {
                if *max_iters == 0 {
                    return Err(Error::InvalidArgument("rfa max_iters must be at least 1".into()));
                }
                crate::error::require_positive(*tol, "rfa tol")?;
            }
            AggregatorSpec::Fedavg | AggregatorSpec::Median => {}
        }
        Ok(())
    }

    /// Check the rule is applicable to `m` uploads. Returns an advisory
    /// warning when the rule degenerates (trim count of zero).
    pub fn feasibility(&self, m: usize) -> Result<Option<String>> {
        match self {
            AggregatorSpec::TrimmedMean { kappa } => {
                let g = (kappa * m as f64).floor() as usize;
                if 2 * g >= m {
                    return Err(Error::Infeasible(format!(
                        "trimmed mean with kappa {kappa} would trim {g} from each end of {m} uploads"
                    )));
                }
                if g == 0 {
                    return Ok(Some(format!(
                        "trimmed mean with kappa {kappa} over {m} uploads trims nothing (plain mean)"
                    )));
                }
                Ok(None)
            }
            AggregatorSpec::Krum { kappa } => {
                let f = (kappa * m as f64).floor() as usize;
                if m < f + 3 {
                    return Err(Error::Infeasible(format!(
                        "krum with kappa {kappa} needs at least {} uploads, got {m}",
                        f + 3
                    )));
                }
                Ok(None)
            }
            _ => Ok(None),
        }
    }

    /// Apply the rule. `prev_global` feeds the extrapolation rule only.
    pub fn aggregate(&self, uploads: &[Upload], prev_global: &ParamVector) -> Result<ParamVector> {
        self.validate()?;
        match self {
            AggregatorSpec::Fedavg => agg_fedavg(uploads),
            AggregatorSpec::Fedexp { epsilon } => agg_fedexp(uploads, prev_global, *epsilon),
            AggregatorSpec::Median => agg_median(uploads),
            AggregatorSpec::TrimmedMean { kappa } => agg_trimmed_mean(uploads, *kappa),
            AggregatorSpec::Krum { kappa } => agg_krum(uploads, *kappa),
            AggregatorSpec::Rfa { max_iters, tol } => agg_rfa(uploads, *max_iters, *tol),
        }
    }
}

fn require_uploads(uploads: &[Upload]) -> Result<()> {
    if uploads.is_empty() {
        return Err(Error::EmptyInput("aggregation needs at least one upload"));
    }
    Ok(())
}

/// Sample-count-weighted mean of the uploads.
pub fn agg_fedavg(uploads: &[Upload]) -> Result<ParamVector> {
    require_uploads(uploads)?;
    let total: f64 = uploads.iter().map(|u| u.n_k as f64).sum();
    let terms: Vec<(f64, &ParamVector)> = uploads
        .iter()
        .map(|u| (u.n_k as f64 / total, &u.params))
        .collect();
    linear_combine(&terms)
}

/// Server-side extrapolation: scale the averaged pseudo-gradient by
/// `max(1, mean squared step / (2 * (||mean step||^2 + epsilon)))`.
pub fn agg_fedexp(
    uploads: &[Upload],
    prev_global: &ParamVector,
    epsilon: f64,
) -> Result<ParamVector> {
    require_uploads(uploads)?;
    let total: f64 = uploads.iter().map(|u| u.n_k as f64).sum();

    // Pseudo-gradients prev - w_k, averaged with p_k = n_k / total.
    let mut mean_delta = ParamVector::zeros(prev_global.layout().clone());
    let mut weighted_sq = 0.0;
    for u in uploads {
        if !u.params.same_layout(prev_global) {
            let (tensor, detail) = prev_global
                .layout()
                .first_mismatch(u.params.layout())
                .unwrap_or_else(|| ("<unknown>".into(), "layouts differ".into()));
            return Err(Error::LayoutMismatch { tensor, detail });
        }
        let p_k = u.n_k as f64 / total;
        let mut sq = 0.0;
        for ((m, &prev), &w) in mean_delta
            .values_mut()
            .iter_mut()
            .zip(prev_global.values())
            .zip(u.params.values())
        {
            let d = prev - w;
            sq += d * d;
            *m += p_k * d;
        }
        weighted_sq += p_k * sq;
    }

    let mean_sq: f64 = mean_delta.values().iter().map(|v| v * v).sum();
    let eta = (weighted_sq / (2.0 * (mean_sq + epsilon))).max(1.0);

    linear_combine(&[(1.0, prev_global), (-eta, &mean_delta)])
}

/// Unweighted per-coordinate median of the uploads.
pub fn agg_median(uploads: &[Upload]) -> Result<ParamVector> {
    require_uploads(uploads)?;
    let vectors: Vec<ParamVector> = uploads.iter().map(|u| u.params.clone()).collect();
    coordinate_median(&vectors)
}

/// Per coordinate, drop the `floor(kappa * m)` largest and smallest values
/// and average the rest (unweighted).
pub fn agg_trimmed_mean(uploads: &[Upload], kappa: f64) -> Result<ParamVector> {
    require_uploads(uploads)?;
    let m = uploads.len();
    let g = (kappa * m as f64).floor() as usize;
    if 2 * g >= m {
        return Err(Error::Infeasible(format!(
            "cannot trim {g} from each end of {m} uploads"
        )));
    }
    let layout = uploads[0].params.layout().clone();
    let n = layout.total_len();
    let mut out = vec![0.0; n];
    let mut scratch = vec![0.0; m];
    for (i, slot) in out.iter_mut().enumerate() {
        for (s, u) in scratch.iter_mut().zip(uploads) {
            *s = u.params.values()[i];
        }
        scratch.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
        let kept = &scratch[g..m - g];
        *slot = kept.iter().sum::<f64>() / kept.len() as f64;
    }
    ParamVector::new(layout, out)
}

/// Krum scores for each upload: the sum of squared distances to its
/// `m - f - 2` nearest other uploads, with `f = floor(kappa * m)`.
fn krum_scores(uploads: &[Upload], kappa: f64) -> Result<Vec<f64>> {
    let m = uploads.len();
    let f = (kappa * m as f64).floor() as usize;
    if m < f + 3 {
        return Err(Error::Infeasible(format!(
            "krum needs m - f - 2 >= 1; got m = {m}, f = {f}"
        )));
    }
    let neighbors = m - f - 2;
    let mut scores = Vec::with_capacity(m);
    for i in 0..m {
        let mut dists: Vec<f64> = (0..m)
            .filter(|&j| j != i)
            .map(|j| uploads[i].params.sq_distance(&uploads[j].params))
            .collect();
        dists.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
        scores.push(dists[..neighbors].iter().sum());
    }
    Ok(scores)
}

/// Select the upload with the smallest Krum score; ties go to the lowest
/// client id. The winner's parameters are returned bit-identically.
pub fn agg_krum(uploads: &[Upload], kappa: f64) -> Result<ParamVector> {
    require_uploads(uploads)?;
    let scores = krum_scores(uploads, kappa)?;
    let mut best = 0;
    for i in 1..uploads.len() {
        let better = scores[i] < scores[best]
            || (scores[i] == scores[best] && uploads[i].client_id < uploads[best].client_id);
        if better {
            best = i;
        }
    }
    Ok(uploads[best].params.clone())
}

/// Weighted geometric-median objective `sum_k n_k * ||x - w_k||`.
pub fn rfa_objective(x: &ParamVector, uploads: &[Upload]) -> f64 {
    uploads
        .iter()
        .map(|u| u.n_k as f64 * x.sq_distance(&u.params).sqrt())
        .sum()
}

/// Geometric median by smoothed Weiszfeld iteration, starting from the
/// weighted mean and flooring distances at 1e-8. When the optimum sits on an
/// upload itself the smoothing floor stalls just short of it, so the iterate
/// is snapped to the best input point whenever that point scores no worse.
pub fn agg_rfa(uploads: &[Upload], max_iters: usize, tol: f64) -> Result<ParamVector> {
    require_uploads(uploads)?;
    let mut x = agg_fedavg(uploads)?;
    for _ in 0..max_iters {
        let mut weight_sum = 0.0;
        let weights: Vec<f64> = uploads
            .iter()
            .map(|u| {
                let dist = x.sq_distance(&u.params).sqrt().max(RFA_DISTANCE_FLOOR);
                let w = u.n_k as f64 / dist;
                weight_sum += w;
                w
            })
            .collect();
        let terms: Vec<(f64, &ParamVector)> = uploads
            .iter()
            .zip(&weights)
            .map(|(u, &w)| (w / weight_sum, &u.params))
            .collect();
        let next = linear_combine(&terms)?;
        let movement = next.sq_distance(&x).sqrt();
        x = next;
        if movement < tol {
            break;
        }
    }

    let mut best: Option<(f64, usize)> = None;
    for (i, u) in uploads.iter().enumerate() {
        let obj = rfa_objective(&u.params, uploads);
        let better = match best {
            None => true,
            Some((b, bi)) => {
                obj < b || (obj == b && u.client_id < uploads[bi].client_id)
            }
        };
        if better {
            best = Some((obj, i));
        }
    }
    if let Some((obj, i)) = best {
        if obj <= rfa_objective(&x, uploads) {
            return Ok(uploads[i].params.clone());
        }
    }
    Ok(x)
}
