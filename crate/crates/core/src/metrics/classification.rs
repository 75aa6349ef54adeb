use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationSummary {
    pub acc: f64,
    pub f1_macro: f64,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<usize>>,
}

/// Accuracy, macro F1 and confusion matrix. Classes that neither occur nor
/// get predicted are left out of the F1 average.
pub fn accuracy_f1(pred: &[usize], labels: &[usize], num_classes: usize) -> Result<ClassificationSummary> {
    if labels.is_empty() || pred.len() != labels.len() {
        return Err(Error::contract("predictions and labels must be non-empty and equal in length"));
    }
    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    for (&p, &l) in pred.iter().zip(labels) {
        if p >= num_classes || l >= num_classes {
            return Err(Error::contract(format!("label {} out of range", p.max(l))));
        }
        confusion[l][p] += 1;
    }
    let correct: usize = (0..num_classes).map(|c| confusion[c][c]).sum();
    let mut f1s = Vec::new();
    for c in 0..num_classes {
        let tp = confusion[c][c];
        let fn_ = confusion[c].iter().sum::<usize>() - tp;
        let fp = (0..num_classes).map(|r| confusion[r][c]).sum::<usize>() - tp;
        if tp + fp + fn_ == 0 {
            continue;
        }
        f1s.push(2.0 * tp as f64 / (2 * tp + fp + fn_) as f64);
    }
    Ok(ClassificationSummary {
        acc: correct as f64 / labels.len() as f64,
        f1_macro: f1s.iter().sum::<f64>() / f1s.len() as f64,
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let s = accuracy_f1(&[0, 1, 2, 3], &[0, 1, 2, 3], 4).unwrap();
        assert_eq!((s.acc, s.f1_macro), (1.0, 1.0));

        let s = accuracy_f1(&[0, 0, 1, 1], &[0, 1, 0, 1], 4).unwrap();
        assert_eq!(s.acc, 0.5);
        assert_eq!(s.f1_macro, 0.5);
        let trace: usize = (0..4).map(|c| s.confusion[c][c]).sum();
        assert_eq!(trace as f64 / 4.0, s.acc);

        assert!(accuracy_f1(&[], &[], 4).is_err());
        assert!(accuracy_f1(&[4], &[0], 4).is_err());
    }

    #[test]
    fn class_with_instances_but_no_hits_scores_zero() {
        let s = accuracy_f1(&[0, 0], &[0, 1], 2).unwrap();
        // class 0: 2/3, class 1: 0
        assert!((s.f1_macro - (2.0 / 3.0) / 2.0).abs() < 1e-15);
    }
}
