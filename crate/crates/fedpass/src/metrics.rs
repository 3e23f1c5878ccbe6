//! Scalar evaluation metrics for attack and defense sweeps.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean squared error between original inputs and a reconstruction, averaged
/// over every element.
pub fn mse_recovery_error(original: &Tensor, reconstructed: &Tensor) -> Result<f64> {
    original.assert_same_shape(reconstructed, "recovery error")?;
    let n = original.len() as f64;
    Ok(original
        .data()
        .iter()
        .zip(reconstructed.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

/// Fraction of positions where the inferred label differs from the truth.
pub fn label_error(truth: &[usize], inferred: &[usize]) -> Result<f64> {
    if truth.len() != inferred.len() {
        return Err(Error::Shape(format!(
            "label lists of length {} vs {}",
            truth.len(),
            inferred.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Shape("empty label lists".into()));
    }
    let wrong = truth
        .iter()
        .zip(inferred)
        .filter(|(a, b)| a != b)
        .count();
    Ok(wrong as f64 / truth.len() as f64)
}

/// Fraction of argmax-correct rows of a logit matrix.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let (n, c) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != n {
        return Err(Error::Shape("labels do not match logit rows".into()));
    }
    let mut correct = 0usize;
    for (r, &label) in labels.iter().enumerate() {
        let row = &logits.data()[r * c..(r + 1) * c];
        let pred = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        if pred == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / n as f64)
}

/// Combined accuracy-privacy score over a defense-strength grid: the mean of
/// main-task accuracy times attack recovery error across the grid points.
pub fn cap(points: &[(f64, f64)]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::Config("cap over an empty grid".into()));
    }
    Ok(points.iter().map(|(acc, rerr)| acc * rerr).sum::<f64>() / points.len() as f64)
}
