use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// Indices of a resampled dataset: every original index once, followed by
/// duplicates drawn with replacement from each category smaller than
/// `ceil(ratio * majority)` until it reaches that size.
pub fn random_oversample<R: Rng + ?Sized>(
    labels: &[usize],
    ratio: f64,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Parameter(format!("oversampling ratio {ratio} outside [0, 1]")));
    }
    let mut by_label: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_label.entry(l).or_default().push(i);
    }
    if by_label.len() < 2 {
        return Err(Error::Input("oversampling needs at least two categories".into()));
    }
    let majority = by_label.values().map(Vec::len).max().unwrap_or(0);
    let target = (ratio * majority as f64).ceil() as usize;
    let mut out: Vec<usize> = (0..labels.len()).collect();
    for members in by_label.values() {
        for _ in members.len()..target {
            out.push(*members.choose(rng).expect("categories are non-empty"));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn counts(labels: &[usize], idx: &[usize]) -> BTreeMap<usize, usize> {
        let mut c = BTreeMap::new();
        for &i in idx {
            *c.entry(labels[i]).or_default() += 1;
        }
        c
    }

    fn labels(a: usize, b: usize) -> Vec<usize> {
        std::iter::repeat_n(0, a).chain(std::iter::repeat_n(1, b)).collect()
    }

    #[test]
    fn minority_is_raised_to_a_quarter() {
        let l = labels(100, 10);
        let idx = random_oversample(&l, 0.25, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(counts(&l, &idx), BTreeMap::from([(0, 100), (1, 25)]));
        assert_eq!(&idx[..110], &(0..110).collect::<Vec<_>>()[..]);
    }

    #[test]
    fn large_enough_categories_are_untouched() {
        for (a, b) in [(50, 50), (100, 30)] {
            let l = labels(a, b);
            let idx = random_oversample(&l, 0.25, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            assert_eq!(idx.len(), a + b);
        }
    }

    #[test]
    fn single_category_is_an_error() {
        assert!(matches!(
            random_oversample(&[1, 1, 1], 0.25, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::Input(_))
        ));
    }
}
