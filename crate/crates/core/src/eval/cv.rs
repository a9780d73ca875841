use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::metrics::macro_f1;
use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::train::random_oversample;

/// Derived RNG seed for one grid point, fold or repetition.
pub fn derive_seed(base: u64, grid_index: usize, repetition: usize) -> u64 {
    base ^ (grid_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (repetition as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
}

/// Splits indices into `k` folds, dealing each category's shuffled members
/// round-robin so every fold holds within one instance of its share.
pub fn stratified_folds(labels: &[usize], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::Parameter(format!("need at least 2 folds, got {k}")));
    }
    if labels.len() < k {
        return Err(Error::Input(format!("{} instances for {k} folds", labels.len())));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for c in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < k {
            log::warn!(
                "category {c} has {} instances for {k} folds; some folds will lack it",
                members.len()
            );
        }
        members.shuffle(&mut rng);
        for i in members {
            folds[next].push(i);
            next = (next + 1) % k;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Named hyperparameter axes; points enumerate the Cartesian product with the
/// first axis varying slowest.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GridSpec {
    axes: Vec<(String, Vec<String>)>,
}

impl GridSpec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn axis<T: ToString>(mut self, name: &str, values: &[T]) -> Self {
        self.axes
            .push((name.to_owned(), values.iter().map(T::to_string).collect()));
        self
    }

    /// Reads every `grid.<name>=v1,v2,...` entry.
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let mut g = GridSpec::new();
        for (k, v) in kv.iter() {
            if let Some(name) = k.strip_prefix("grid.") {
                let values: Vec<String> = v
                    .split(',')
                    .map(|s| s.trim().to_owned())
                    .filter(|s| !s.is_empty())
                    .collect();
                g.axes.push((name.to_owned(), values));
            }
        }
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some((name, _)) = self.axes.iter().find(|(_, v)| v.is_empty()) {
            return Err(Error::Parameter(format!("grid axis `{name}` has no values")));
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.axes.is_empty()
    }

    pub fn points(&self) -> Vec<KeyValues> {
        let mut points = vec![KeyValues::new()];
        for (name, values) in &self.axes {
            points = points
                .into_iter()
                .flat_map(|p| {
                    values.iter().map(move |v| {
                        let mut q = p.clone();
                        q.set(name, v);
                        q
                    })
                })
                .collect();
        }
        points
    }
}

/// What the trainer callback is asked to do for one grid point and fold.
#[derive(Debug)]
pub struct FoldTask<'a> {
    pub point: &'a KeyValues,
    pub point_index: usize,
    pub fold: usize,
    /// Training indices, possibly with oversampled duplicates.
    pub train: &'a [usize],
    pub validation: &'a [usize],
    pub seed: u64,
}

/// Predictions for `FoldTask::train` and `FoldTask::validation`, in order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldOutcome {
    pub train_predictions: Vec<usize>,
    pub validation_predictions: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CvRow {
    pub point: usize,
    pub fold: usize,
    pub train_macro_f1: f64,
    pub validation_macro_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PointSummary {
    pub mean_train: f64,
    pub mean_validation: f64,
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridSearchResult {
    pub points: Vec<KeyValues>,
    pub table: Vec<CvRow>,
    pub summary: Vec<PointSummary>,
    pub best: usize,
}

impl GridSearchResult {
    pub fn best_point(&self) -> &KeyValues {
        &self.points[self.best]
    }
}

/// Stratified k-fold evaluation of every grid point. The best point has the
/// highest mean validation macro-F1, then the smallest train-validation gap,
/// then the earliest grid position.
pub fn kfold_grid_search<F>(
    labels: &[usize],
    num_classes: usize,
    k: usize,
    grid: &GridSpec,
    seed: u64,
    oversample: Option<f64>,
    mut trainer: F,
) -> Result<GridSearchResult>
where
    F: FnMut(&FoldTask<'_>) -> Result<FoldOutcome>,
{
    grid.validate()?;
    let folds = stratified_folds(labels, k, seed)?;
    let points = grid.points();
    let mut table = Vec::with_capacity(points.len() * k);
    let mut summary = Vec::with_capacity(points.len());
    for (pi, point) in points.iter().enumerate() {
        let (mut tr_sum, mut va_sum) = (0.0, 0.0);
        for (fi, validation) in folds.iter().enumerate() {
            let base: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != fi)
                .flat_map(|(_, f)| f.iter().copied())
                .collect();
            let fold_seed = derive_seed(seed, pi, fi + 1);
            let train = match oversample {
                Some(ratio) => {
                    let fold_labels: Vec<usize> = base.iter().map(|&i| labels[i]).collect();
                    let mut rng = ChaCha8Rng::seed_from_u64(fold_seed);
                    random_oversample(&fold_labels, ratio, &mut rng)?
                        .into_iter()
                        .map(|j| base[j])
                        .collect()
                }
                None => base,
            };
            let task = FoldTask {
                point,
                point_index: pi,
                fold: fi,
                train: &train,
                validation,
                seed: fold_seed,
            };
            let out = trainer(&task)?;
            if out.train_predictions.len() != train.len()
                || out.validation_predictions.len() != validation.len()
            {
                return Err(Error::Contract("trainer returned the wrong number of predictions".into()));
            }
            let tl: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
            let vl: Vec<usize> = validation.iter().map(|&i| labels[i]).collect();
            let tr = macro_f1(&out.train_predictions, &tl, num_classes)?.macro_f1;
            let va = macro_f1(&out.validation_predictions, &vl, num_classes)?.macro_f1;
            tr_sum += tr;
            va_sum += va;
            table.push(CvRow {
                point: pi,
                fold: fi,
                train_macro_f1: tr,
                validation_macro_f1: va,
            });
        }
        let (mean_train, mean_validation) = (tr_sum / k as f64, va_sum / k as f64);
        summary.push(PointSummary {
            mean_train,
            mean_validation,
            gap: mean_train - mean_validation,
        });
    }
    let mut best = 0;
    for (i, s) in summary.iter().enumerate().skip(1) {
        let b = &summary[best];
        if s.mean_validation > b.mean_validation
            || (s.mean_validation == b.mean_validation && s.gap < b.gap)
        {
            best = i;
        }
    }
    Ok(GridSearchResult {
        points,
        table,
        summary,
        best,
    })
}
