//! Unweighted (UAR) and weighted (WAR) average recall.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub classes: usize,
    /// `confusion[truth][prediction]`
    pub confusion: Vec<Vec<usize>>,
    /// Recall per class, `None` for classes absent from the truth labels.
    pub recall: Vec<Option<f64>>,
    /// Mean recall over classes present in the truth labels.
    pub uar: f64,
    /// Overall accuracy.
    pub war: f64,
    pub samples: usize,
}

pub fn uar_war(predictions: &[usize], truth: &[usize], classes: usize) -> Result<Metrics> {
    if predictions.is_empty() {
        return Err(Error::Usage("uar_war needs at least one prediction".into()));
    }
    if predictions.len() != truth.len() {
        return Err(Error::Usage(format!(
            "{} predictions for {} labels",
            predictions.len(),
            truth.len()
        )));
    }
    if let Some(&bad) = predictions.iter().chain(truth).find(|&&l| l >= classes) {
        return Err(Error::Usage(format!("label {bad} out of range for {classes} classes")));
    }
    let mut confusion = vec![vec![0usize; classes]; classes];
    for (&p, &t) in predictions.iter().zip(truth) {
        confusion[t][p] += 1;
    }
    let recall: Vec<Option<f64>> = confusion
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let support: usize = row.iter().sum();
            (support > 0).then(|| row[c] as f64 / support as f64)
        })
        .collect();
    let present: Vec<f64> = recall.iter().flatten().copied().collect();
    let uar = present.iter().sum::<f64>() / present.len() as f64;
    let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
    Ok(Metrics {
        classes,
        confusion,
        recall,
        uar,
        war: correct as f64 / predictions.len() as f64,
        samples: predictions.len(),
    })
}

/// Index of the largest logit, first one on ties.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
