use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::features::FeatureMatrix;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LinearLoss {
    /// One-vs-rest hinge loss (linear SVM).
    Hinge,
    /// Multinomial logistic regression.
    Logistic,
}

impl fmt::Display for LinearLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LinearLoss::Hinge => "hinge",
            LinearLoss::Logistic => "logistic",
        })
    }
}

impl FromStr for LinearLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hinge" | "svm" => Ok(LinearLoss::Hinge),
            "logistic" => Ok(LinearLoss::Logistic),
            other => Err(Error::Parameter(format!("unknown linear loss `{other}`"))),
        }
    }
}

/// Minimizes `||W||^2 / (2 C N) + mean loss` by (mini-batch) subgradient descent.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearConfig {
    pub loss: LinearLoss,
    /// Penalty weight `C`; larger means weaker regularization.
    pub penalty: f64,
    pub epochs: usize,
    pub rate: f64,
    pub seed: u64,
    /// `None` uses the full training set for every update.
    pub batch_size: Option<usize>,
}

impl Default for LinearConfig {
    fn default() -> Self {
        LinearConfig {
            loss: LinearLoss::Hinge,
            penalty: 1.0,
            epochs: 100,
            rate: 0.1,
            seed: 0,
            batch_size: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    pub loss: LinearLoss,
    pub num_classes: usize,
    pub dim: usize,
    /// `C x K`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    /// Regularized objective after each epoch, with `lambda = 1 / (penalty * N)`.
    pub history: Vec<f64>,
}

impl LinearModel {
    fn zeros(loss: LinearLoss, num_classes: usize, dim: usize) -> Self {
        LinearModel {
            loss,
            num_classes,
            dim,
            weights: vec![0.0; num_classes * dim],
            bias: vec![0.0; num_classes],
            history: Vec::new(),
        }
    }

    fn class_weights(&self, c: usize) -> &[f64] {
        &self.weights[c * self.dim..(c + 1) * self.dim]
    }

    pub fn weight_norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    fn scores_row(&self, x: &dyn FeatureMatrix, i: usize) -> Vec<f64> {
        (0..self.num_classes)
            .map(|c| x.dot_row(i, self.class_weights(c)) + self.bias[c])
            .collect()
    }

    /// Loss of one example and its gradient with respect to the scores.
    fn loss_and_score_grad(&self, scores: &[f64], label: usize) -> (f64, Vec<f64>) {
        match self.loss {
            LinearLoss::Hinge => {
                let mut loss = 0.0;
                let mut g = vec![0.0; scores.len()];
                for (c, &s) in scores.iter().enumerate() {
                    let y = if c == label { 1.0 } else { -1.0 };
                    let m = 1.0 - y * s;
                    if m > 0.0 {
                        loss += m;
                        g[c] = -y;
                    }
                }
                (loss, g)
            }
            LinearLoss::Logistic => {
                let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = scores.iter().map(|s| (s - max).exp()).sum();
                let lse = max + z.ln();
                let g = scores
                    .iter()
                    .enumerate()
                    .map(|(c, &s)| (s - lse).exp() - if c == label { 1.0 } else { 0.0 })
                    .collect();
                (lse - scores[label], g)
            }
        }
    }

    /// Mean data loss over `x`.
    /// Mean loss plus `lambda / 2 * ||W||^2`.
    pub fn objective(&self, x: &dyn FeatureMatrix, labels: &[usize], lambda: f64) -> f64 {
        0.5 * lambda * self.weights.iter().map(|w| w * w).sum::<f64>() + self.mean_loss(x, labels)
    }

    pub fn mean_loss(&self, x: &dyn FeatureMatrix, labels: &[usize]) -> f64 {
        let n = x.num_rows();
        (0..n)
            .map(|i| self.loss_and_score_grad(&self.scores_row(x, i), labels[i]).0)
            .sum::<f64>()
            / n as f64
    }
}

fn check_labels(n: usize, labels: &[usize], num_classes: usize) -> Result<()> {
    if labels.len() != n || n == 0 {
        return Err(Error::Input(format!("{n} rows with {} labels", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::Input(format!("label {bad} outside [0, {num_classes})")));
    }
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(Error::Input("training labels contain a single category".into()));
    }
    Ok(())
}

/// Fits a linear classifier from a zero initialization.
pub fn train_linear(
    x: &dyn FeatureMatrix,
    labels: &[usize],
    num_classes: usize,
    config: &LinearConfig,
) -> Result<LinearModel> {
    let n = x.num_rows();
    check_labels(n, labels, num_classes)?;
    if !(config.penalty > 0.0) || !(config.rate >= 0.0) {
        return Err(Error::Parameter(format!(
            "penalty {} must be positive and rate {} non-negative",
            config.penalty, config.rate
        )));
    }
    let k = x.num_features();
    let mut model = LinearModel::zeros(config.loss, num_classes, k);
    let lambda = 1.0 / (config.penalty * n as f64);
    let batch = config.batch_size.unwrap_or(n).clamp(1, n);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut gw = vec![0.0; num_classes * k];
    let mut gb = vec![0.0; num_classes];
    let full_batch = batch == n;
    let mut rate = config.rate;
    let mut current = model.objective(x, labels, lambda);
    for _ in 0..config.epochs {
        // full-batch steps that raise the objective are undone and the rate halved;
        // fixed-rate subgradient steps otherwise oscillate around the hinge kink
        let saved = full_batch.then(|| (model.weights.clone(), model.bias.clone()));
        if batch < n {
            order.shuffle(&mut rng);
        }
        for idx in order.chunks(batch) {
            gw.fill(0.0);
            gb.fill(0.0);
            for &i in idx {
                let scores = model.scores_row(x, i);
                let (_, g) = model.loss_and_score_grad(&scores, labels[i]);
                for (c, &gc) in g.iter().enumerate() {
                    if gc == 0.0 {
                        continue;
                    }
                    gb[c] += gc;
                    let row = &mut gw[c * k..(c + 1) * k];
                    x.for_each_in_row(i, &mut |j, v| row[j] += gc * v);
                }
            }
            let m = idx.len() as f64;
            for (w, g) in model.weights.iter_mut().zip(&gw) {
                *w -= rate * (lambda * *w + g / m);
            }
            for (b, g) in model.bias.iter_mut().zip(&gb) {
                *b -= rate * g / m;
            }
        }
        let next = model.objective(x, labels, lambda);
        match saved {
            Some((w, b)) if next > current => {
                model.weights = w;
                model.bias = b;
                rate *= 0.5;
            }
            _ => current = next,
        }
        model.history.push(current);
    }
    if !model.weights.iter().chain(&model.bias).all(|w| w.is_finite()) {
        return Err(Error::NonFinite { op: "train_linear" });
    }
    Ok(model)
}

/// Predicted category (ties go to the lower index) and the `N x C` scores.
pub fn predict_linear(model: &LinearModel, x: &dyn FeatureMatrix) -> Result<(Vec<usize>, Tensor)> {
    if x.num_features() != model.dim {
        return Err(Error::Dimension(format!(
            "{} features for a model of {}",
            x.num_features(),
            model.dim
        )));
    }
    let n = x.num_rows();
    if n == 0 {
        return Err(Error::Input("no rows to predict".into()));
    }
    let mut data = Vec::with_capacity(n * model.num_classes);
    for i in 0..n {
        data.extend(model.scores_row(x, i));
    }
    let scores = Tensor::new(vec![n, model.num_classes], data)?;
    Ok((scores.argmax_rows(), scores))
}
