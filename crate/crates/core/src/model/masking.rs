//! Masked-token corruption and next-sentence pair sampling.

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tokenizer::{EncodedSequence, Truncation, CLS, MASK, NUM_SPECIAL, PAD, SEP};

/// Target value for positions that take no part in the masked-token loss.
pub const IGNORE: usize = usize::MAX;

pub const IS_NEXT: usize = 0;
pub const NOT_NEXT: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskingConfig {
    /// Probability that a content position is selected.
    pub rate: f64,
    /// Of the selected positions: share replaced by `[MASK]`.
    pub mask: f64,
    /// Share replaced by a random non-special id.
    pub random: f64,
    /// Share left unchanged.
    pub keep: f64,
}

impl Default for MaskingConfig {
    fn default() -> Self {
        MaskingConfig {
            rate: 0.15,
            mask: 0.8,
            random: 0.1,
            keep: 0.1,
        }
    }
}

impl MaskingConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("rate", self.rate),
            ("mask", self.mask),
            ("random", self.random),
            ("keep", self.keep),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Parameter(format!("masking `{name}` {v} outside [0, 1]")));
            }
        }
        let total = self.mask + self.random + self.keep;
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Parameter(format!("masking split sums to {total}, not 1")));
        }
        Ok(())
    }
}

/// Corrupted inputs with their prediction targets.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedBatch {
    pub inputs: Vec<EncodedSequence>,
    /// Original id at each selected position, [`IGNORE`] elsewhere.
    pub mlm_targets: Vec<Vec<usize>>,
    pub nsp_labels: Vec<usize>,
}

impl MaskedBatch {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn num_selected(&self) -> usize {
        self.mlm_targets
            .iter()
            .flatten()
            .filter(|&&t| t != IGNORE)
            .count()
    }
}

/// Positions eligible for masking: real tokens other than `[CLS]` and `[SEP]`.
pub fn content_positions(seq: &EncodedSequence) -> impl Iterator<Item = usize> + '_ {
    (0..seq.true_length).filter(|&i| !matches!(seq.token_ids[i], CLS | SEP | PAD))
}

/// Selects each content position with probability `config.rate` and corrupts
/// the selection with the `[MASK]` / random / unchanged split.
pub fn mask_tokens<R: Rng + ?Sized>(
    batch: &[EncodedSequence],
    nsp_labels: &[usize],
    vocab_size: usize,
    config: &MaskingConfig,
    rng: &mut R,
) -> Result<MaskedBatch> {
    config.validate()?;
    if vocab_size <= NUM_SPECIAL {
        return Err(Error::Parameter(format!("vocabulary of {vocab_size} has no ordinary ids")));
    }
    if !nsp_labels.is_empty() && nsp_labels.len() != batch.len() {
        return Err(Error::Dimension(format!(
            "{} next-sentence labels for {} sequences",
            nsp_labels.len(),
            batch.len()
        )));
    }
    let mut inputs = Vec::with_capacity(batch.len());
    let mut targets = Vec::with_capacity(batch.len());
    for seq in batch {
        let mut corrupted = seq.clone();
        let mut t = vec![IGNORE; seq.len()];
        for i in content_positions(seq) {
            if !rng.random_bool(config.rate) {
                continue;
            }
            t[i] = seq.token_ids[i];
            let u: f64 = rng.random();
            if u < config.mask {
                corrupted.token_ids[i] = MASK;
            } else if u < config.mask + config.random {
                corrupted.token_ids[i] = rng.random_range(NUM_SPECIAL..vocab_size);
            }
        }
        inputs.push(corrupted);
        targets.push(t);
    }
    Ok(MaskedBatch {
        inputs,
        mlm_targets: targets,
        nsp_labels: nsp_labels.to_vec(),
    })
}

/// Two segments and whether the second really follows the first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NspPair<T> {
    pub first: T,
    pub second: T,
    pub label: usize,
}

/// For every segment with a successor, emits the true successor with
/// probability `1 - negative_fraction`, otherwise a random segment of another
/// document.
pub fn make_nsp_pairs<T: Clone + PartialEq, R: Rng + ?Sized>(
    documents: &[Vec<T>],
    negative_fraction: f64,
    rng: &mut R,
) -> Result<Vec<NspPair<T>>> {
    if !(0.0..=1.0).contains(&negative_fraction) {
        return Err(Error::Parameter(format!(
            "negative fraction {negative_fraction} outside [0, 1]"
        )));
    }
    if !documents.iter().any(|d| d.len() >= 2) {
        return Err(Error::Input("no document has two consecutive segments".into()));
    }
    let donors: Vec<usize> = (0..documents.len()).filter(|&d| !documents[d].is_empty()).collect();
    let mut pairs = Vec::new();
    for (d, doc) in documents.iter().enumerate() {
        for i in 0..doc.len().saturating_sub(1) {
            let negative = rng.random_bool(negative_fraction);
            if !negative {
                pairs.push(NspPair {
                    first: doc[i].clone(),
                    second: doc[i + 1].clone(),
                    label: IS_NEXT,
                });
                continue;
            }
            let others: Vec<usize> = donors.iter().copied().filter(|&o| o != d).collect();
            let &o = others.choose(rng).ok_or_else(|| {
                Error::Input("negative pairs need segments from a second document".into())
            })?;
            let second = documents[o].choose(rng).expect("donor documents are non-empty");
            pairs.push(NspPair {
                first: doc[i].clone(),
                second: second.clone(),
                label: NOT_NEXT,
            });
        }
    }
    Ok(pairs)
}

/// Encodes token-id pairs as `[CLS] a [SEP] b [SEP]` sequences.
pub fn encode_pairs(
    pairs: &[NspPair<Vec<usize>>],
    max_len: usize,
) -> Result<(Vec<EncodedSequence>, Vec<usize>)> {
    let mut seqs = Vec::with_capacity(pairs.len());
    let mut labels = Vec::with_capacity(pairs.len());
    for p in pairs {
        seqs.push(EncodedSequence::from_segments(
            &p.first,
            Some(&p.second),
            max_len,
            Truncation::Tail,
        )?);
        labels.push(p.label);
    }
    Ok((seqs, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sequences(n: usize, len: usize) -> Vec<EncodedSequence> {
        (0..n)
            .map(|i| {
                let content: Vec<usize> = (0..len).map(|j| 10 + (i * 7 + j) % 90).collect();
                EncodedSequence::from_segments(&content, None, len + 4, Truncation::Tail).unwrap()
            })
            .collect()
    }

    #[test]
    fn zero_rate_selects_nothing() {
        let cfg = MaskingConfig {
            rate: 0.0,
            ..MaskingConfig::default()
        };
        let b = mask_tokens(&sequences(3, 10), &[], 100, &cfg, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        assert_eq!(b.num_selected(), 0);
        assert_eq!(b.inputs, sequences(3, 10));
    }

    #[test]
    fn masking_is_deterministic_per_seed() {
        let seqs = sequences(4, 20);
        let cfg = MaskingConfig::default();
        let a = mask_tokens(&seqs, &[], 100, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = mask_tokens(&seqs, &[], 100, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn specials_are_never_selected_or_produced() {
        let seqs = sequences(50, 30);
        let cfg = MaskingConfig {
            rate: 1.0,
            mask: 0.0,
            random: 1.0,
            keep: 0.0,
        };
        let b = mask_tokens(&seqs, &[], 100, &cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        for (seq, (inp, tgt)) in seqs.iter().zip(b.inputs.iter().zip(&b.mlm_targets)) {
            for i in 0..seq.len() {
                let special = matches!(seq.token_ids[i], CLS | SEP | PAD);
                assert_eq!(tgt[i] == IGNORE, special);
                if !special {
                    assert!(inp.token_ids[i] >= NUM_SPECIAL && inp.token_ids[i] < 100);
                }
            }
        }
    }

    #[test]
    fn bad_split_is_rejected() {
        let cfg = MaskingConfig {
            keep: 0.3,
            ..MaskingConfig::default()
        };
        assert!(mask_tokens(&sequences(1, 5), &[], 100, &cfg, &mut ChaCha8Rng::seed_from_u64(0))
            .is_err());
    }

    fn docs() -> Vec<Vec<Vec<usize>>> {
        (0..6)
            .map(|d| (0..5).map(|s| vec![100 * d + s]).collect())
            .collect()
    }

    #[test]
    fn nsp_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let all_pos = make_nsp_pairs(&docs(), 0.0, &mut rng).unwrap();
        assert_eq!(all_pos.len(), 24);
        assert!(all_pos
            .iter()
            .all(|p| p.label == IS_NEXT && p.second[0] == p.first[0] + 1));
        let all_neg = make_nsp_pairs(&docs(), 1.0, &mut rng).unwrap();
        assert!(all_neg
            .iter()
            .all(|p| p.label == NOT_NEXT && p.second[0] / 100 != p.first[0] / 100));
    }

    #[test]
    fn nsp_needs_adjacent_segments() {
        let docs = vec![vec![vec![1usize]], vec![vec![2]]];
        assert!(matches!(
            make_nsp_pairs(&docs, 0.5, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::Input(_))
        ));
    }
}
