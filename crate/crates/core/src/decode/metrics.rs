use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub accuracy: f64,
    /// F-measure of each class in `0..K`, `K` being one past the largest
    /// label seen in either input. Zero for a class with no true positives.
    pub per_class_f: Vec<f64>,
    pub macro_f: f64,
}

pub fn evaluate(predicted: &[usize], truth: &[usize]) -> Result<Metrics> {
    evaluate_with_classes(predicted, truth, 0)
}

/// As [`evaluate`], reporting at least `n_classes` classes even when some
/// appear in neither input.
pub fn evaluate_with_classes(predicted: &[usize], truth: &[usize], n_classes: usize) -> Result<Metrics> {
    if predicted.len() != truth.len() {
        return Err(Error::dims(
            "evaluate: predictions vs truth",
            truth.len(),
            predicted.len(),
        ));
    }
    if truth.is_empty() {
        return Err(Error::InvalidData("evaluate: no predictions".into()));
    }
    let k = predicted.iter().chain(truth).max().map_or(0, |m| m + 1).max(n_classes);
    let mut tp = vec![0usize; k];
    let mut pred_count = vec![0usize; k];
    let mut true_count = vec![0usize; k];
    for (&p, &t) in predicted.iter().zip(truth) {
        pred_count[p] += 1;
        true_count[t] += 1;
        if p == t {
            tp[p] += 1;
        }
    }
    // F = 2 tp / (predicted + actual)
    let per_class_f: Vec<f64> = (0..k)
        .map(|c| {
            if tp[c] == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / (pred_count[c] + true_count[c]) as f64
            }
        })
        .collect();
    let n = truth.len();
    Ok(Metrics {
        n,
        accuracy: tp.iter().sum::<usize>() as f64 / n as f64,
        macro_f: per_class_f.iter().sum::<f64>() / k as f64,
        per_class_f,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect() {
        let m = evaluate(&[0, 1, 1, 0, 2], &[0, 1, 1, 0, 2]).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.macro_f, 1.0);
    }

    #[test]
    fn all_zero_against_balanced() {
        let m = evaluate(&[0, 0, 0, 0], &[0, 1, 0, 1]).unwrap();
        assert_eq!(m.accuracy, 0.5);
        assert!((m.per_class_f[0] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.per_class_f[1], 0.0);
        assert!((m.macro_f - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn relabeling_keeps_accuracy() {
        let p = [0, 1, 1, 0, 1, 0, 0];
        let t = [0, 1, 0, 0, 1, 1, 0];
        let swap = |v: &[usize]| v.iter().map(|c| 1 - c).collect::<Vec<_>>();
        assert_eq!(
            evaluate(&p, &t).unwrap().accuracy,
            evaluate(&swap(&p), &swap(&t)).unwrap().accuracy
        );
    }

    #[test]
    fn explicit_class_count() {
        let m = evaluate_with_classes(&[1], &[1], 3).unwrap();
        assert_eq!(m.per_class_f, vec![0.0, 1.0, 0.0]);
        assert_eq!(evaluate_with_classes(&[1], &[1], 0).unwrap().per_class_f.len(), 2);
    }

    #[test]
    fn errors() {
        assert!(evaluate(&[], &[]).is_err());
        assert!(evaluate(&[0], &[0, 1]).is_err());
    }
}
