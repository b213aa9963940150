//! Label-noise transition matrices and per-client noise injection.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, PartitionPlan};
use crate::error::{Error, Result};
use crate::numcore::{Matrix, RngStream};

const ROW_SUM_TOL: f64 = 1e-12;

/// Row-stochastic matrix: entry `(i, j)` is the probability that clean class
/// `i` is observed as class `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseTransitionMatrix {
    m: Matrix,
}

impl NoiseTransitionMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(Error::DimensionMismatch(format!(
                "transition matrix must be square, got {}x{}",
                m.rows(),
                m.cols()
            )));
        }
        for i in 0..m.rows() {
            let row = m.row(i);
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::NonStochasticRow {
                    row: i,
                    sum: row.iter().sum(),
                });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::NonStochasticRow { row: i, sum });
            }
        }
        Ok(NoiseTransitionMatrix { m })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.m
    }

    pub fn num_classes(&self) -> usize {
        self.m.rows()
    }

    /// Draw an observed label for a sample with the given clean label.
    pub fn sample_observed(&self, clean: usize, rng: &mut RngStream) -> usize {
        rng.categorical(self.m.row(clean))
    }

    /// `(1 - rate) * I + rate * self`: the matrix applied at a reduced rate.
    pub fn at_rate(&self, rate: f64) -> NoiseTransitionMatrix {
        let n = self.num_classes();
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let identity = if i == j { 1.0 } else { 0.0 };
                out.set(i, j, (1.0 - rate) * identity + rate * self.m.get(i, j));
            }
        }
        NoiseTransitionMatrix { m: out }
    }
}

/// Clean label flipped into every other class with equal probability.
pub fn build_symmetric_matrix(num_classes: usize, rho: f64) -> Result<NoiseTransitionMatrix> {
    if num_classes < 2 {
        return Err(Error::InvalidArgument(
            "symmetric noise needs at least two classes".into(),
        ));
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::InvalidArgument(format!("noise rate {rho} outside [0, 1]")));
    }
    let off = rho / (num_classes - 1) as f64;
    let mut m = Matrix::zeros(num_classes, num_classes);
    for i in 0..num_classes {
        for j in 0..num_classes {
            m.set(i, j, if i == j { 1.0 - rho } else { off });
        }
    }
    NoiseTransitionMatrix::new(m)
}

/// Clean label flipped into its cyclic successor `(i + 1) mod M` only.
pub fn build_pairflip_matrix(num_classes: usize, rho: f64) -> Result<NoiseTransitionMatrix> {
    if num_classes < 2 {
        return Err(Error::InvalidArgument(
            "pairflip noise needs at least two classes".into(),
        ));
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::InvalidArgument(format!("noise rate {rho} outside [0, 1]")));
    }
    let mut m = Matrix::zeros(num_classes, num_classes);
    for i in 0..num_classes {
        m.set(i, i, 1.0 - rho);
        m.set(i, (i + 1) % num_classes, rho);
    }
    NoiseTransitionMatrix::new(m)
}

/// Load an `M x M` transition matrix from plain text: `M` rows of `M`
/// space-separated reals. Rows are validated to be stochastic.
pub fn load_transition_matrix(path: &Path) -> Result<NoiseTransitionMatrix> {
    let text = std::fs::read_to_string(path)?;
    let display = path.display().to_string();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut row = Vec::new();
        for field in line.split_whitespace() {
            row.push(field.parse::<f64>().map_err(|_| Error::FileFormat {
                path: display.clone(),
                line: lineno + 1,
                msg: format!("invalid probability `{field}`"),
            })?);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput("transition matrix file holds no rows"));
    }
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::DimensionMismatch(format!(
            "transition matrix in {display} is not square"
        )));
    }
    NoiseTransitionMatrix::new(Matrix::from_rows(&rows)?)
}

/// Kind of label corruption to apply.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Symmetric,
    Pairflip,
    /// Symmetric noise on even-index clients, pairflip on odd-index clients.
    Mixed,
    /// A fixed transition matrix loaded from a file, interpolated toward the
    /// identity by each client's rate.
    MatrixFile { path: PathBuf },
    /// Observed labels replaced wholesale from an annotation file.
    ReplacementFile { path: PathBuf },
}

/// Noise pattern plus the linear per-client rate schedule `[rate_lo, rate_hi]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub rate_lo: f64,
    pub rate_hi: f64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        let ordered = 0.0 <= self.rate_lo && self.rate_lo <= self.rate_hi && self.rate_hi <= 1.0;
        if !ordered {
            return Err(Error::InvalidArgument(format!(
                "noise rates must satisfy 0 <= lo <= hi <= 1, got [{}, {}]",
                self.rate_lo, self.rate_hi
            )));
        }
        Ok(())
    }
}

/// Linear rate schedule over client index: `rate_lo` at client 0 rising to
/// `rate_hi` at client `N - 1`; a single client gets `rate_hi`.
pub fn client_noise_rate(client: usize, num_clients: usize, spec: &NoiseSpec) -> f64 {
    assert!(client < num_clients, "client index out of range");
    if num_clients == 1 {
        return spec.rate_hi;
    }
    spec.rate_lo
        + (spec.rate_hi - spec.rate_lo) * client as f64 / (num_clients - 1) as f64
}

/// Corrupt observed labels client by client according to the noise spec.
///
/// Each client draws from its own transition matrix (built at that client's
/// scheduled rate) using a stream derived from the client index, so the
/// result does not depend on iteration order. Features and clean labels are
/// preserved exactly.
pub fn inject_noise(
    dataset: &LabeledDataset,
    plan: &PartitionPlan,
    spec: &NoiseSpec,
    rng: &RngStream,
) -> Result<LabeledDataset> {
    spec.validate()?;
    let m = dataset.num_classes();
    if m < 2 {
        return Err(Error::InvalidArgument(
            "noise injection needs at least two classes".into(),
        ));
    }

    let file_matrix = match &spec.kind {
        NoiseKind::Symmetric | NoiseKind::Pairflip | NoiseKind::Mixed => None,
        NoiseKind::MatrixFile { path } => {
            let t = load_transition_matrix(path)?;
            if t.num_classes() != m {
                return Err(Error::DimensionMismatch(format!(
                    "transition matrix is {}x{} but dataset has {} classes",
                    t.num_classes(),
                    t.num_classes(),
                    m
                )));
            }
            Some(t)
        }
        NoiseKind::ReplacementFile { .. } => {
            return Err(Error::InvalidArgument(
                "replacement-file noise is applied via load_label_replacement, not injection".into(),
            ))
        }
    };

    let n_clients = plan.num_clients();
    let mut observed = dataset.observed_labels().to_vec();
    for client in 0..n_clients {
        let rate = client_noise_rate(client, n_clients, spec);
        let transition = match &spec.kind {
            NoiseKind::Symmetric => build_symmetric_matrix(m, rate)?,
            NoiseKind::Pairflip => build_pairflip_matrix(m, rate)?,
            NoiseKind::Mixed => {
                if client % 2 == 0 {
                    build_symmetric_matrix(m, rate)?
                } else {
                    build_pairflip_matrix(m, rate)?
                }
            }
            NoiseKind::MatrixFile { .. } => {
                file_matrix.as_ref().expect("loaded above").at_rate(rate)
            }
            NoiseKind::ReplacementFile { .. } => unreachable!(),
        };
        let mut crng = rng.derive(client as u64);
        for &i in plan.shard(client) {
            observed[i] = transition.sample_observed(dataset.clean_labels()[i], &mut crng);
        }
    }

    LabeledDataset::new(
        dataset.features().clone(),
        observed,
        dataset.clean_labels().to_vec(),
        m,
    )
}

/// Replace observed labels from an annotation file: one base-10 integer per
/// line, in dataset order. The corruption mask is recomputed against the
/// retained clean labels.
pub fn load_label_replacement(path: &Path, dataset: &LabeledDataset) -> Result<LabeledDataset> {
    let text = std::fs::read_to_string(path)?;
    let display = path.display().to_string();
    let mut labels = Vec::with_capacity(dataset.len());
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let label: usize = line.parse().map_err(|_| Error::FileFormat {
            path: display.clone(),
            line: lineno + 1,
            msg: format!("invalid label `{line}`"),
        })?;
        if label >= dataset.num_classes() {
            return Err(Error::FileFormat {
                path: display,
                line: lineno + 1,
                msg: format!(
                    "label {label} out of range for {} classes",
                    dataset.num_classes()
                ),
            });
        }
        labels.push(label);
    }
    if labels.len() != dataset.len() {
        return Err(Error::LabelCountMismatch {
            expected: dataset.len(),
            found: labels.len(),
        });
    }
    LabeledDataset::new(
        dataset.features().clone(),
        labels,
        dataset.clean_labels().to_vec(),
        dataset.num_classes(),
    )
}

/// Empirical transition matrix of a dataset that carries clean labels: row
/// `i` is the observed-label distribution among samples with clean label `i`.
/// Rows with no support are identity rows.
pub fn empirical_transition(dataset: &LabeledDataset) -> NoiseTransitionMatrix {
    let m = dataset.num_classes();
    let mut counts = vec![vec![0usize; m]; m];
    for (&clean, &obs) in dataset.clean_labels().iter().zip(dataset.observed_labels()) {
        counts[clean][obs] += 1;
    }
    let mut out = Matrix::zeros(m, m);
    for i in 0..m {
        let total: usize = counts[i].iter().sum();
        if total == 0 {
            out.set(i, i, 1.0);
        } else {
            for j in 0..m {
                out.set(i, j, counts[i][j] as f64 / total as f64);
            }
        }
    }
    NoiseTransitionMatrix::new(out).expect("empirical rows are stochastic")
}
