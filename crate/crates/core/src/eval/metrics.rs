use serde::Serialize;

use crate::error::{Error, Result};

/// Per-category and macro-averaged classification quality.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub macro_f1: f64,
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Scores `predictions` against `labels` over `num_classes` categories. Zero
/// denominators yield 0 and every category counts toward the macro mean.
pub fn macro_f1(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<MetricsReport> {
    if predictions.len() != labels.len() {
        return Err(Error::Input(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if num_classes == 0 {
        return Err(Error::Parameter("no categories".into()));
    }
    if let Some(&bad) = predictions.iter().chain(labels).find(|&&v| v >= num_classes) {
        return Err(Error::Index(format!("category {bad} outside [0, {num_classes})")));
    }
    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    for (&p, &t) in predictions.iter().zip(labels) {
        confusion[t][p] += 1;
    }
    let mut precision = Vec::with_capacity(num_classes);
    let mut recall = Vec::with_capacity(num_classes);
    let mut f1 = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        let tp = confusion[c][c];
        let predicted: usize = confusion.iter().map(|row| row[c]).sum();
        let actual: usize = confusion[c].iter().sum();
        let p = ratio(tp, predicted);
        let r = ratio(tp, actual);
        precision.push(p);
        recall.push(r);
        f1.push(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) });
    }
    let correct: usize = (0..num_classes).map(|c| confusion[c][c]).sum();
    Ok(MetricsReport {
        macro_f1: f1.iter().sum::<f64>() / num_classes as f64,
        accuracy: ratio(correct, labels.len()),
        precision,
        recall,
        f1,
        confusion,
    })
}
