use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::cv::derive_seed;
use crate::error::{Error, Result};

/// Nested learning-curve design: a random pool is split into a test set and
/// successively subsampled training sets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LearningCurvePlan {
    pub pool: usize,
    pub test: usize,
    /// Strictly decreasing training sizes; the first is at most `pool - test`.
    pub train_sizes: Vec<usize>,
    pub repetitions: usize,
    pub seed: u64,
}

impl LearningCurvePlan {
    /// Pool of 11000, test set of 1000, training sizes 10000 down to 500, five repetitions.
    pub fn full(seed: u64) -> Self {
        LearningCurvePlan {
            pool: 11000,
            test: 1000,
            train_sizes: vec![10000, 5000, 2000, 1000, 500],
            repetitions: 5,
            seed,
        }
    }

    /// The full design shrunk tenfold.
    pub fn desk(seed: u64) -> Self {
        LearningCurvePlan {
            pool: 1100,
            test: 100,
            train_sizes: vec![1000, 500, 200, 100, 50],
            repetitions: 5,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.test == 0 || self.test >= self.pool || self.repetitions == 0 {
            return Err(Error::Parameter(format!(
                "plan needs 0 < test < pool and at least one repetition (pool {}, test {})",
                self.pool, self.test
            )));
        }
        let Some(&largest) = self.train_sizes.first() else {
            return Err(Error::Parameter("plan has no training sizes".into()));
        };
        if largest > self.pool - self.test {
            return Err(Error::Parameter(format!(
                "largest training set {largest} exceeds pool minus test {}",
                self.pool - self.test
            )));
        }
        if self.train_sizes.windows(2).any(|w| w[1] >= w[0]) || self.train_sizes.contains(&0) {
            return Err(Error::Parameter("training sizes must be positive and strictly decreasing".into()));
        }
        Ok(())
    }

    /// The same design scaled to fit `available` instances.
    pub fn scaled_to(&self, available: usize) -> Self {
        let f = available as f64 / self.pool as f64;
        let s = |v: usize| ((v as f64 * f).floor() as usize).max(1);
        let mut sizes: Vec<usize> = self.train_sizes.iter().map(|&v| s(v)).collect();
        sizes.dedup();
        LearningCurvePlan {
            pool: available,
            test: s(self.test),
            train_sizes: sizes,
            repetitions: self.repetitions,
            seed: self.seed,
        }
    }
}

/// One repetition: the test set and the nested training sets, largest first.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CurveSplit {
    pub repetition: usize,
    pub seed: u64,
    pub test: Vec<usize>,
    pub train: Vec<(usize, Vec<usize>)>,
}

pub fn make_learning_curve_splits(n: usize, plan: &LearningCurvePlan) -> Result<Vec<CurveSplit>> {
    plan.validate()?;
    if n < plan.pool {
        let s = plan.scaled_to(n);
        return Err(Error::Parameter(format!(
            "{n} instances cannot fill a pool of {}; a scaled plan would use pool {}, test {}, training sizes {:?}",
            plan.pool, s.pool, s.test, s.train_sizes
        )));
    }
    let mut splits = Vec::with_capacity(plan.repetitions);
    for r in 0..plan.repetitions {
        let seed = derive_seed(plan.seed, 0, r);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pool: Vec<usize> = sample(&mut rng, n, plan.pool).into_vec();
        let test = pool[..plan.test].to_vec();
        let mut current = pool[plan.test..].to_vec();
        let mut train = Vec::with_capacity(plan.train_sizes.len());
        for &size in &plan.train_sizes {
            let keep = sample(&mut rng, current.len(), size).into_vec();
            current = keep.into_iter().map(|i| current[i]).collect();
            train.push((size, current.clone()));
        }
        splits.push(CurveSplit {
            repetition: r,
            seed,
            test,
            train,
        });
    }
    Ok(splits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn splits_are_nested_and_disjoint() {
        let plan = LearningCurvePlan::desk(4);
        let splits = make_learning_curve_splits(1500, &plan).unwrap();
        assert_eq!(splits.len(), 5);
        for s in &splits {
            let test: HashSet<usize> = s.test.iter().copied().collect();
            assert_eq!(test.len(), 100);
            for w in s.train.windows(2) {
                let big: HashSet<usize> = w[0].1.iter().copied().collect();
                assert!(w[1].1.iter().all(|i| big.contains(i)));
            }
            for (size, t) in &s.train {
                assert_eq!(t.len(), *size);
                assert!(t.iter().all(|i| !test.contains(i)));
            }
        }
        assert_eq!(splits, make_learning_curve_splits(1500, &plan).unwrap());
    }

    #[test]
    fn small_datasets_get_a_scaled_suggestion() {
        let err = make_learning_curve_splits(550, &LearningCurvePlan::desk(0)).unwrap_err();
        assert!(err.to_string().contains("pool 550"), "{err}");
    }
}
