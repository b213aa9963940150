//! Dataset generation and loading, Non-IID partitioning, and label-noise
//! injection with a retained clean-label oracle.

mod noise;
mod partition;

pub use noise::{
    build_pairflip_matrix, build_symmetric_matrix, client_noise_rate, empirical_transition,
    inject_noise, load_label_replacement, load_transition_matrix, NoiseKind, NoiseSpec,
    NoiseTransitionMatrix,
};
pub use partition::{partition_dirichlet, partition_iid, partition_sharding, PartitionPlan};

use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::{Matrix, RngStream};

/// Feature matrix plus observed labels, ground-truth clean labels, and the
/// corruption mask (the noise oracle).
#[derive(Clone, Debug)]
pub struct LabeledDataset {
    features: Matrix,
    observed_labels: Vec<usize>,
    clean_labels: Vec<usize>,
    corrupted: Vec<bool>,
    num_classes: usize,
}

impl LabeledDataset {
    /// Build a dataset, recomputing the corruption mask and checking the
    /// label-range and shape invariants.
    pub fn new(
        features: Matrix,
        observed_labels: Vec<usize>,
        clean_labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if observed_labels.len() != clean_labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "observed/clean label counts differ: {} vs {}",
                observed_labels.len(),
                clean_labels.len()
            )));
        }
        if features.rows() != observed_labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "feature rows {} do not match label count {}",
                features.rows(),
                observed_labels.len()
            )));
        }
        if num_classes == 0 {
            return Err(Error::InvalidArgument("num_classes must be positive".into()));
        }
        for (i, (&o, &c)) in observed_labels.iter().zip(&clean_labels).enumerate() {
            if o >= num_classes || c >= num_classes {
                return Err(Error::InvalidArgument(format!(
                    "label out of range at sample {i}: observed {o}, clean {c}, num_classes {num_classes}"
                )));
            }
        }
        let corrupted = observed_labels
            .iter()
            .zip(&clean_labels)
            .map(|(o, c)| o != c)
            .collect();
        Ok(LabeledDataset {
            features,
            observed_labels,
            clean_labels,
            corrupted,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.observed_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed_labels.is_empty()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn observed_labels(&self) -> &[usize] {
        &self.observed_labels
    }

    pub fn clean_labels(&self) -> &[usize] {
        &self.clean_labels
    }

    pub fn corrupted(&self) -> &[bool] {
        &self.corrupted
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Fraction of samples whose observed label differs from the clean one.
    pub fn corrupted_fraction(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.corrupted.iter().filter(|&&c| c).count() as f64 / self.len() as f64
    }

    /// Copy the feature rows and observed labels for a set of sample indices.
    pub fn gather(&self, indices: &[usize]) -> (Matrix, Vec<usize>) {
        let f = self.feature_dim();
        let mut data = Vec::with_capacity(indices.len() * f);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.features.row(i));
            labels.push(self.observed_labels[i]);
        }
        (
            Matrix::from_vec(indices.len(), f, data).expect("gathered rows are finite"),
            labels,
        )
    }

    /// Split off a test set of `test_len` samples chosen by a seeded shuffle;
    /// returns `(train, test)`.
    pub fn split(&self, test_len: usize, rng: &mut RngStream) -> Result<(LabeledDataset, LabeledDataset)> {
        if test_len >= self.len() {
            return Err(Error::InvalidArgument(format!(
                "test split of {} leaves no training data (n = {})",
                test_len,
                self.len()
            )));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        rng.shuffle(&mut order);
        let (test_idx, train_idx) = order.split_at(test_len);
        Ok((self.subset(train_idx)?, self.subset(test_idx)?))
    }

    fn subset(&self, indices: &[usize]) -> Result<LabeledDataset> {
        let f = self.feature_dim();
        let mut data = Vec::with_capacity(indices.len() * f);
        let mut observed = Vec::with_capacity(indices.len());
        let mut clean = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.features.row(i));
            observed.push(self.observed_labels[i]);
            clean.push(self.clean_labels[i]);
        }
        let features = Matrix::from_vec(indices.len(), f, data)?;
        LabeledDataset::new(features, observed, clean, self.num_classes)
    }
}

/// Scale applied to the unit directions that position class means.
const BLOB_MEAN_SCALE: f64 = 2.0;

/// Unit direction for each class mean: standard basis vectors when the
/// feature space is wide enough, otherwise points spread on a circle (or a
/// line for one-dimensional features).
fn class_direction(class: usize, num_classes: usize, feature_dim: usize) -> Vec<f64> {
    let mut dir = vec![0.0; feature_dim];
    if feature_dim >= num_classes {
        dir[class] = 1.0;
    } else if feature_dim >= 2 {
        let angle = 2.0 * std::f64::consts::PI * class as f64 / num_classes as f64;
        dir[0] = angle.cos();
        dir[1] = angle.sin();
    } else if num_classes > 1 {
        dir[0] = 2.0 * class as f64 / (num_classes - 1) as f64 - 1.0;
    }
    dir
}

/// Class-balanced Gaussian clusters with class means on scaled, evenly
/// spread directions; clean and observed labels coincide.
pub fn generate_blobs(
    samples: usize,
    classes: usize,
    feature_dim: usize,
    spread: f64,
    rng: &mut RngStream,
) -> Result<LabeledDataset> {
    if classes == 0 {
        return Err(Error::InvalidArgument("need at least one class".into()));
    }
    if samples < classes {
        return Err(Error::InvalidArgument(format!(
            "cannot balance {samples} samples over {classes} classes"
        )));
    }
    if feature_dim == 0 {
        return Err(Error::InvalidArgument("feature_dim must be positive".into()));
    }
    crate::error::require_positive(spread, "spread")?;

    let base = samples / classes;
    let extra = samples % classes;
    let mut data = Vec::with_capacity(samples * feature_dim);
    let mut labels = Vec::with_capacity(samples);
    for class in 0..classes {
        let count = base + usize::from(class < extra);
        let mean: Vec<f64> = class_direction(class, classes, feature_dim)
            .into_iter()
            .map(|d| BLOB_MEAN_SCALE * d)
            .collect();
        for _ in 0..count {
            for &m in &mean {
                data.push(m + spread * rng.normal());
            }
            labels.push(class);
        }
    }
    let features = Matrix::from_vec(samples, feature_dim, data)?;
    LabeledDataset::new(features, labels.clone(), labels, classes)
}

/// Load a dataset from delimited numeric text: one sample per row, features
/// first, integer class label in the last column. Fields may be separated by
/// commas or whitespace; `#` starts a comment line.
pub fn load_delimited(path: &Path, num_classes: Option<usize>) -> Result<LabeledDataset> {
    let text = std::fs::read_to_string(path)?;
    let display = path.display().to_string();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .collect();
        if fields.len() < 2 {
            return Err(Error::FileFormat {
                path: display,
                line: lineno + 1,
                msg: "expected at least one feature column and a label column".into(),
            });
        }
        let mut row = Vec::with_capacity(fields.len() - 1);
        for f in &fields[..fields.len() - 1] {
            row.push(f.parse::<f64>().map_err(|_| Error::FileFormat {
                path: display.clone(),
                line: lineno + 1,
                msg: format!("invalid feature value `{f}`"),
            })?);
        }
        let label_field = fields[fields.len() - 1];
        let label_val = label_field.parse::<f64>().map_err(|_| Error::FileFormat {
            path: display.clone(),
            line: lineno + 1,
            msg: format!("invalid label `{label_field}`"),
        })?;
        if label_val < 0.0 || label_val.fract() != 0.0 {
            return Err(Error::FileFormat {
                path: display,
                line: lineno + 1,
                msg: format!("label `{label_field}` is not a non-negative integer"),
            });
        }
        labels.push(label_val as usize);
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput("dataset file holds no samples"));
    }
    let classes = match num_classes {
        Some(m) => m,
        None => labels.iter().copied().max().unwrap_or(0) + 1,
    };
    let features = Matrix::from_rows(&rows)?;
    LabeledDataset::new(features, labels.clone(), labels, classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{self, Arch, ModelSpec};
    use crate::numcore::RngStream;

    #[test]
    fn blobs_are_class_balanced_and_clean() {
        let mut rng = RngStream::new(1, 0);
        let ds = generate_blobs(403, 4, 2, 0.3, &mut rng).unwrap();
        assert_eq!(ds.len(), 403);
        let mut counts = [0usize; 4];
        for &l in ds.clean_labels() {
            counts[l] += 1;
        }
        assert_eq!(counts, [101, 101, 101, 100]);
        assert!(ds.corrupted().iter().all(|&c| !c));
        assert_eq!(ds.observed_labels(), ds.clean_labels());
    }

    #[test]
    fn blobs_one_sample_per_class_boundary() {
        let mut rng = RngStream::new(2, 0);
        let ds = generate_blobs(10, 10, 2, 0.5, &mut rng).unwrap();
        assert_eq!(ds.len(), 10);
        let mut seen = [false; 10];
        for &l in ds.clean_labels() {
            seen[l] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn blobs_same_seed_identical() {
        let a = generate_blobs(64, 3, 2, 0.2, &mut RngStream::new(9, 9)).unwrap();
        let b = generate_blobs(64, 3, 2, 0.2, &mut RngStream::new(9, 9)).unwrap();
        assert_eq!(a.features(), b.features());
        assert_eq!(a.observed_labels(), b.observed_labels());
    }

    #[test]
    fn blobs_reject_more_classes_than_samples() {
        assert!(generate_blobs(3, 5, 2, 0.1, &mut RngStream::new(0, 0)).is_err());
    }

    /// Separability oracle: centralized softmax regression must fit the
    /// default blob geometry almost perfectly at spread 0.3.
    #[test]
    fn blobs_linearly_separable_at_spread_0_3() {
        let mut rng = RngStream::new(12, 0);
        let ds = generate_blobs(400, 4, 2, 0.3, &mut rng).unwrap();
        let spec = ModelSpec {
            arch: Arch::SoftmaxRegression,
            feature_dim: 2,
            hidden_dim: 2,
            num_classes: 4,
            init_scale: 0.01,
        };
        let mut params = model::init_params(&spec, &mut RngStream::new(12, 1));
        let loss = model::LossSpec::cross_entropy();
        let all: Vec<usize> = (0..ds.len()).collect();
        let (bx, by) = ds.gather(&all);
        let mut momentum = crate::numcore::ParamVector::zeros(params.layout().clone());
        for _ in 0..300 {
            let (_, g) = model::grad(&params, &spec, &bx, &by, &loss).unwrap();
            let (p, m) = model::sgd_step(&params, &g, 0.5, &momentum, 0.9, 0.0).unwrap();
            params = p;
            momentum = m;
        }
        let fw = model::forward(&params, &spec, &bx).unwrap();
        let mut correct = 0;
        for i in 0..ds.len() {
            let row = fw.probabilities.row(i);
            let pred = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (j, &p)| {
                    if p > best.1 {
                        (j, p)
                    } else {
                        best
                    }
                })
                .0;
            correct += usize::from(pred == by[i]);
        }
        let acc = correct as f64 / ds.len() as f64;
        assert!(acc >= 0.99, "train accuracy {acc} below separability bar");
    }

    #[test]
    fn delimited_loader_roundtrip() {
        let dir = std::env::temp_dir().join("fedsim_data_loader_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("tiny.txt");
        std::fs::write(&path, "1.0, 2.0, 0\n3.0 4.0 1\n# comment\n-1.5,0.25,0\n").unwrap();
        let ds = load_delimited(&path, None).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.feature_dim(), 2);
        assert_eq!(ds.num_classes(), 2);
        assert_eq!(ds.observed_labels(), &[0, 1, 0]);
        assert_eq!(ds.features().row(1), &[3.0, 4.0]);
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn delimited_loader_reports_line_numbers() {
        let dir = std::env::temp_dir().join("fedsim_data_loader_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.txt");
        std::fs::write(&path, "1.0 2.0 0\n1.0 oops 1\n").unwrap();
        let err = load_delimited(&path, None).unwrap_err().to_string();
        assert!(err.contains(":2:"), "error should name line 2: {err}");
        std::fs::remove_file(&path).ok();
    }
}
