//! Classification metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `confusion[t][p]` counts instances of true class `t` predicted as `p`.
pub fn confusion_matrix(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<Vec<Vec<usize>>> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Shape(format!("{} labels vs {} predictions", y_true.len(), y_pred.len())));
    }
    let mut m = vec![vec![0; n_classes]; n_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t >= n_classes || p >= n_classes {
            return Err(Error::Shape(format!("class index outside [0, {n_classes})")));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

/// Recall of every class present in `y_true`; absent classes give `None`.
pub fn per_class_recall(confusion: &[Vec<usize>]) -> Vec<Option<f64>> {
    confusion
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let total: usize = row.iter().sum();
            (total > 0).then(|| row[c] as f64 / total as f64)
        })
        .collect()
}

fn mean_recall(recalls: &[Option<f64>]) -> f64 {
    let present: Vec<f64> = recalls.iter().flatten().copied().collect();
    present.iter().sum::<f64>() / present.len() as f64
}

/// Unweighted mean of the recalls of the classes present in `y_true`.
pub fn balanced_accuracy(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    if y_true.is_empty() {
        return Err(Error::Data("balanced accuracy of an empty set".into()));
    }
    let n_classes = y_true.iter().chain(y_pred).max().map_or(0, |m| m + 1);
    Ok(mean_recall(&per_class_recall(&confusion_matrix(y_true, y_pred, n_classes)?)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub split: String,
    pub n: usize,
    pub balanced_accuracy: f64,
    pub confusion: Vec<Vec<usize>>,
    pub per_class_recall: Vec<Option<f64>>,
}

impl SplitReport {
    pub fn new(split: &str, y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<Self> {
        if y_true.is_empty() {
            return Err(Error::Data(format!("split `{split}` is empty")));
        }
        let confusion = confusion_matrix(y_true, y_pred, n_classes)?;
        let per_class_recall = per_class_recall(&confusion);
        Ok(Self {
            split: split.to_string(),
            n: y_true.len(),
            balanced_accuracy: mean_recall(&per_class_recall),
            confusion,
            per_class_recall,
        })
    }
}
