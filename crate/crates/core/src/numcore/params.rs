//! Flattened model parameters and the coordinate-wise operations on them.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One named tensor inside a flattened parameter vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ordered list of tensors describing how a flat value vector unflattens.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Layout {
    tensors: Vec<TensorSpec>,
    #[serde(skip)]
    offsets: Vec<usize>,
    #[serde(skip)]
    total: usize,
}

// Layout identity is the tensor list; offsets and totals are derived.
impl PartialEq for Layout {
    fn eq(&self, other: &Self) -> bool {
        self.tensors == other.tensors
    }
}

impl Eq for Layout {}

impl Layout {
    pub fn new(tensors: Vec<TensorSpec>) -> Arc<Layout> {
        let mut offsets = Vec::with_capacity(tensors.len());
        let mut total = 0;
        for t in &tensors {
            offsets.push(total);
            total += t.len();
        }
        Arc::new(Layout {
            tensors,
            offsets,
            total,
        })
    }

    /// Rebuild the derived offset table (needed after deserialization, where
    /// only the tensor list is stored).
    pub fn rebuild(&mut self) {
        self.offsets.clear();
        self.total = 0;
        for t in &self.tensors {
            self.offsets.push(self.total);
            self.total += t.len();
        }
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.tensors
    }

    pub fn total_len(&self) -> usize {
        self.total
    }

    pub fn offset(&self, idx: usize) -> usize {
        self.offsets[idx]
    }

    pub fn range(&self, idx: usize) -> std::ops::Range<usize> {
        let start = self.offsets[idx];
        start..start + self.tensors[idx].len()
    }

    /// Describe the first tensor where two layouts disagree, if any.
    pub fn first_mismatch(&self, other: &Layout) -> Option<(String, String)> {
        let n = self.tensors.len().max(other.tensors.len());
        for i in 0..n {
            match (self.tensors.get(i), other.tensors.get(i)) {
                (Some(a), Some(b)) if a == b => continue,
                (Some(a), Some(b)) => {
                    return Some((
                        a.name.clone(),
                        format!(
                            "expected `{}` {:?}, found `{}` {:?}",
                            a.name, a.shape, b.name, b.shape
                        ),
                    ))
                }
                (Some(a), None) => {
                    return Some((a.name.clone(), format!("`{}` missing from other layout", a.name)))
                }
                (None, Some(b)) => {
                    return Some((b.name.clone(), format!("unexpected extra tensor `{}`", b.name)))
                }
                (None, None) => unreachable!(),
            }
        }
        None
    }
}

/// Flattened model parameters: the unit exchanged between clients and server.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    layout: Arc<Layout>,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn new(layout: Arc<Layout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.total_len() {
            return Err(Error::DimensionMismatch(format!(
                "value vector has {} entries, layout expects {}",
                values.len(),
                layout.total_len()
            )));
        }
        Ok(ParamVector { layout, values })
    }

    pub fn zeros(layout: Arc<Layout>) -> Self {
        let n = layout.total_len();
        ParamVector {
            layout,
            values: vec![0.0; n],
        }
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Slice of the `idx`-th tensor.
    pub fn tensor(&self, idx: usize) -> &[f64] {
        &self.values[self.layout.range(idx)]
    }

    pub fn tensor_mut(&mut self, idx: usize) -> &mut [f64] {
        let range = self.layout.range(idx);
        &mut self.values[range]
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout
    }

    pub fn sq_distance(&self, other: &ParamVector) -> f64 {
        debug_assert!(self.same_layout(other));
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Restore internal layout bookkeeping after deserialization.
    pub fn rebuild_layout(&mut self) -> Result<()> {
        let mut layout = (*self.layout).clone();
        layout.rebuild();
        if self.values.len() != layout.total_len() {
            return Err(Error::DimensionMismatch(format!(
                "deserialized values have {} entries, layout expects {}",
                self.values.len(),
                layout.total_len()
            )));
        }
        self.layout = Arc::new(layout);
        Ok(())
    }
}

fn check_shared_layout<'a, I>(mut vectors: I) -> Result<()>
where
    I: Iterator<Item = &'a ParamVector>,
{
    let first = match vectors.next() {
        Some(v) => v,
        None => return Ok(()),
    };
    for v in vectors {
        if !first.same_layout(v) {
            let (tensor, detail) = first
                .layout()
                .first_mismatch(v.layout())
                .unwrap_or_else(|| ("<unknown>".into(), "layouts differ".into()));
            return Err(Error::LayoutMismatch { tensor, detail });
        }
    }
    Ok(())
}

/// Elementwise `sum_i c_i * v_i` over vectors sharing one layout.
///
/// Accumulation is a single left-to-right pass per coordinate, so the result
/// is reproducible and independent of how callers group the terms.
pub fn linear_combine(terms: &[(f64, &ParamVector)]) -> Result<ParamVector> {
    if terms.is_empty() {
        return Err(Error::EmptyInput("linear_combine needs at least one term"));
    }
    check_shared_layout(terms.iter().map(|(_, v)| *v))?;
    let layout = Arc::clone(terms[0].1.layout());
    let n = layout.total_len();
    let mut out = vec![0.0; n];
    for (acc, i) in out.iter_mut().zip(0..n) {
        let mut sum = 0.0;
        for &(c, v) in terms {
            sum += c * v.values[i];
        }
        *acc = sum;
    }
    ParamVector::new(layout, out)
}

/// Per-coordinate median; even counts take the mean of the two central order
/// statistics.
pub fn coordinate_median(vectors: &[ParamVector]) -> Result<ParamVector> {
    if vectors.is_empty() {
        return Err(Error::EmptyInput("coordinate_median needs at least one vector"));
    }
    check_shared_layout(vectors.iter())?;
    let layout = Arc::clone(vectors[0].layout());
    let n = layout.total_len();
    let m = vectors.len();
    let mut out = vec![0.0; n];
    let mut scratch = vec![0.0; m];
    for (i, slot) in out.iter_mut().enumerate() {
        for (s, v) in scratch.iter_mut().zip(vectors) {
            *s = v.values[i];
        }
        scratch.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
        *slot = if m % 2 == 1 {
            scratch[m / 2]
        } else {
            0.5 * (scratch[m / 2 - 1] + scratch[m / 2])
        };
    }
    ParamVector::new(layout, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_layout(n: usize) -> Arc<Layout> {
        Layout::new(vec![TensorSpec {
            name: "w".into(),
            shape: vec![n],
        }])
    }

    fn pv(values: &[f64]) -> ParamVector {
        ParamVector::new(flat_layout(values.len()), values.to_vec()).unwrap()
    }

    #[test]
    fn combine_identity() {
        let v = pv(&[1.5, -2.0, 3.25]);
        let out = linear_combine(&[(1.0, &v)]).unwrap();
        assert_eq!(out.values(), v.values());
    }

    #[test]
    fn combine_midpoint() {
        let a = pv(&[2.0, 4.0]);
        let b = pv(&[4.0, 8.0]);
        let out = linear_combine(&[(0.5, &a), (0.5, &b)]).unwrap();
        assert_eq!(out.values(), &[3.0, 6.0]);
    }

    #[test]
    fn combine_sample_weighted_mean_matches_scalar_sum() {
        // FedAvg weights n_k / n over 3 clients with n = (10, 20, 30).
        let n = [10.0, 20.0, 30.0];
        let total: f64 = n.iter().sum();
        let coeffs: Vec<f64> = n.iter().map(|x| x / total).collect();
        assert!((coeffs[0] - 1.0 / 6.0).abs() < 1e-15);
        assert!((coeffs[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!((coeffs[2] - 1.0 / 2.0).abs() < 1e-15);

        let vs = [pv(&[1.0, -4.0]), pv(&[2.0, 0.5]), pv(&[-3.0, 10.0])];
        let terms: Vec<(f64, &ParamVector)> =
            coeffs.iter().copied().zip(vs.iter()).collect();
        let out = linear_combine(&terms).unwrap();

        // Brute-force scalar computation, coordinate by coordinate.
        for i in 0..2 {
            let mut expect = 0.0;
            for (c, v) in coeffs.iter().zip(&vs) {
                expect += c * v.values()[i];
            }
            assert!((out.values()[i] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn combine_rejects_layout_mismatch_naming_tensor() {
        let a = pv(&[1.0, 2.0]);
        let layout_b = Layout::new(vec![TensorSpec {
            name: "dense.weight".into(),
            shape: vec![3],
        }]);
        let b = ParamVector::new(layout_b, vec![1.0, 2.0, 3.0]).unwrap();
        let err = linear_combine(&[(1.0, &a), (1.0, &b)]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("w"), "diagnostic should name the tensor: {msg}");
    }

    #[test]
    fn combine_rejects_empty() {
        assert!(linear_combine(&[]).is_err());
    }

    #[test]
    fn median_odd_count() {
        let vs = [pv(&[1.0, 2.0]), pv(&[2.0, 3.0]), pv(&[100.0, 4.0])];
        let out = coordinate_median(&vs).unwrap();
        assert_eq!(out.values(), &[2.0, 3.0]);
    }

    #[test]
    fn median_even_count_convention() {
        let vs = [pv(&[0.0]), pv(&[10.0])];
        let out = coordinate_median(&vs).unwrap();
        assert_eq!(out.values(), &[5.0]);
    }

    #[test]
    fn median_matches_sort_oracle() {
        let mut rng = crate::numcore::RngStream::new(2024, 1);
        let vs: Vec<ParamVector> = (0..5)
            .map(|_| pv(&[rng.next_f64(), rng.next_f64(), rng.next_f64()]))
            .collect();
        let out = coordinate_median(&vs).unwrap();
        for i in 0..3 {
            let mut col: Vec<f64> = vs.iter().map(|v| v.values()[i]).collect();
            col.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert_eq!(out.values()[i], col[2]);
        }
    }

    #[test]
    fn median_rejects_empty() {
        assert!(coordinate_median(&[]).is_err());
    }

    #[test]
    fn median_within_coordinate_envelope() {
        let mut rng = crate::numcore::RngStream::new(7, 7);
        for m in [2usize, 3, 4, 7] {
            let vs: Vec<ParamVector> = (0..m)
                .map(|_| pv(&[rng.range_f64(-5.0, 5.0), rng.range_f64(-5.0, 5.0)]))
                .collect();
            let out = coordinate_median(&vs).unwrap();
            for i in 0..2 {
                let lo = vs.iter().map(|v| v.values()[i]).fold(f64::INFINITY, f64::min);
                let hi = vs.iter().map(|v| v.values()[i]).fold(f64::NEG_INFINITY, f64::max);
                assert!(out.values()[i] >= lo && out.values()[i] <= hi);
            }
        }
    }

    #[test]
    fn one_pass_matches_pairwise_accumulation() {
        let mut rng = crate::numcore::RngStream::new(5, 5);
        let vs: Vec<ParamVector> = (0..6)
            .map(|_| pv(&[rng.range_f64(-1.0, 1.0), rng.range_f64(-1.0, 1.0)]))
            .collect();
        let coeffs: Vec<f64> = (0..6).map(|_| rng.range_f64(-1.0, 1.0)).collect();
        let terms: Vec<(f64, &ParamVector)> = coeffs.iter().copied().zip(vs.iter()).collect();
        let one_pass = linear_combine(&terms).unwrap();

        let mut acc = linear_combine(&[(coeffs[0], &vs[0])]).unwrap();
        for (c, v) in coeffs.iter().zip(&vs).skip(1) {
            acc = linear_combine(&[(1.0, &acc), (*c, v)]).unwrap();
        }
        for (a, b) in one_pass.values().iter().zip(acc.values()) {
            assert!((a - b).abs() <= 1e-12, "one-pass {a} vs pairwise {b}");
        }
    }
}
