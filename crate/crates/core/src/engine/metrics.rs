//! Evaluation metrics for the global model.

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::model::{forward, ModelSpec};
use crate::numcore::ParamVector;

/// Unweighted mean over classes of per-class F1. Classes with no predicted
/// and no actual positives contribute zero.
pub fn macro_f1(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = predictions.iter().chain(labels).find(|&&v| v >= num_classes) {
        return Err(Error::InvalidArgument(format!(
            "class index {bad} out of range for {num_classes} classes"
        )));
    }
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        if p == y {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[y] += 1;
        }
    }
    let mut sum = 0.0;
    for c in 0..num_classes {
        let precision = if tp[c] + fp[c] > 0 {
            tp[c] as f64 / (tp[c] + fp[c]) as f64
        } else {
            0.0
        };
        let recall = if tp[c] + fn_[c] > 0 {
            tp[c] as f64 / (tp[c] + fn_[c]) as f64
        } else {
            0.0
        };
        if precision + recall > 0.0 {
            sum += 2.0 * precision * recall / (precision + recall);
        }
    }
    Ok(sum / num_classes as f64)
}

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> f64 {
    if predictions.is_empty() {
        return 0.0;
    }
    let correct = predictions
        .iter()
        .zip(labels)
        .filter(|(p, y)| p == y)
        .count();
    correct as f64 / predictions.len() as f64
}

/// Argmax class per row; ties resolve to the lowest class index.
pub fn predict(params: &ParamVector, spec: &ModelSpec, dataset: &LabeledDataset) -> Result<Vec<usize>> {
    let fw = forward(params, spec, dataset.features())?;
    let mut out = Vec::with_capacity(dataset.len());
    for i in 0..dataset.len() {
        let row = fw.probabilities.row(i);
        let mut best = 0;
        for (j, &p) in row.iter().enumerate().skip(1) {
            if p > row[best] {
                best = j;
            }
        }
        out.push(best);
    }
    Ok(out)
}

/// Macro-F1 and accuracy of the model on a dataset's observed labels.
pub fn evaluate(
    params: &ParamVector,
    spec: &ModelSpec,
    dataset: &LabeledDataset,
) -> Result<(f64, f64)> {
    let predictions = predict(params, spec, dataset)?;
    let f1 = macro_f1(&predictions, dataset.observed_labels(), dataset.num_classes())?;
    let acc = accuracy(&predictions, dataset.observed_labels());
    Ok((f1, acc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::RngStream;

    #[test]
    fn perfect_predictions_score_one() {
        let labels = [0usize, 1, 2, 1, 0];
        assert_eq!(macro_f1(&labels, &labels, 3).unwrap(), 1.0);
        assert_eq!(accuracy(&labels, &labels), 1.0);
    }

    #[test]
    fn single_class_predictor_on_balanced_truth() {
        // All predictions class 0 on a balanced 2-class truth: class 0 has
        // precision 0.5 and recall 1 (F1 = 2/3), class 1 scores 0, so the
        // macro average is 1/3.
        let predictions = [0usize; 10];
        let labels = [0usize, 0, 0, 0, 0, 1, 1, 1, 1, 1];
        let f1 = macro_f1(&predictions, &labels, 2).unwrap();
        assert!((f1 - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_support_classes_contribute_zero() {
        let predictions = [0usize, 1];
        let labels = [0usize, 1];
        // Classes 2 and 3 never appear: they add zero to the mean.
        let f1 = macro_f1(&predictions, &labels, 4).unwrap();
        assert!((f1 - 0.5).abs() < 1e-12);
    }

    /// Independent confusion-matrix oracle on a random 4-class case.
    #[test]
    fn matches_confusion_matrix_oracle() {
        let mut rng = RngStream::new(5, 0);
        let n = 200;
        let labels: Vec<usize> = (0..n).map(|_| rng.below(4) as usize).collect();
        let predictions: Vec<usize> = (0..n).map(|_| rng.below(4) as usize).collect();
        let got = macro_f1(&predictions, &labels, 4).unwrap();

        let mut confusion = [[0usize; 4]; 4];
        for (&p, &y) in predictions.iter().zip(&labels) {
            confusion[y][p] += 1;
        }
        let mut sum = 0.0;
        for c in 0..4 {
            let tp = confusion[c][c] as f64;
            let predicted: usize = (0..4).map(|y| confusion[y][c]).sum();
            let actual: usize = confusion[c].iter().sum();
            let p = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
            let r = if actual > 0 { tp / actual as f64 } else { 0.0 };
            if p + r > 0.0 {
                sum += 2.0 * p * r / (p + r);
            }
        }
        assert!((got - sum / 4.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_mismatched_lengths_and_bad_labels() {
        assert!(macro_f1(&[0], &[0, 1], 2).is_err());
        assert!(macro_f1(&[5], &[0], 2).is_err());
    }
}
