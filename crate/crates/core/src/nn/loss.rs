use super::Real;
use crate::error::{Error, Result};

/// Lower clamp applied to probabilities before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Numerically stable softmax (max-subtracted).
pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Row-wise softmax of a `rows x width` matrix stored row-major.
pub fn softmax_rows<T: Real>(logits: &[T], width: usize) -> Vec<T> {
    logits.chunks_exact(width).flat_map(softmax).collect()
}

/// Mean of `-ln p[label]` over a batch of probability rows.
pub fn cross_entropy_loss<T: Real>(probs: &[T], num_classes: usize, labels: &[usize]) -> Result<T> {
    if num_classes == 0 || probs.len() != num_classes * labels.len() {
        return Err(Error::structural(format!(
            "{} probabilities for {} labels of {num_classes} classes",
            probs.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::structural("empty batch"));
    }
    let floor = T::from_f64_lossy(PROB_FLOOR);
    let mut total = T::zero();
    for (row, &label) in probs.chunks_exact(num_classes).zip(labels) {
        if label >= num_classes {
            return Err(Error::structural(format!("label {label} outside 0..{num_classes}")));
        }
        total = total - row[label].max(floor).ln();
    }
    Ok(total / T::from_usize(labels.len()).expect("batch size fits"))
}

/// Index of the largest entry; ties go to the smallest index.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
