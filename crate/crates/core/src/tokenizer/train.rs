//! Greedy pair-merging vocabulary training.
//!
//! Words are split into characters and adjacent symbol pairs are merged one
//! rule at a time. Pair statistics ignore the word-position of a symbol: the
//! continuation marker is only attached when a merged symbol is written to the
//! vocabulary (`xy` when it starts a word, `##xy` inside one).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::str::FromStr;

use super::pretokenize;
use super::vocab::{MergeTable, Vocabulary, CONTINUATION, NUM_SPECIAL};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MergeScoring {
    /// Merge the most frequent adjacent pair.
    Frequency,
    /// Merge the pair maximizing `count(ab) / (count(a) * count(b))`.
    Likelihood,
}

impl FromStr for MergeScoring {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frequency" => Ok(MergeScoring::Frequency),
            "likelihood" => Ok(MergeScoring::Likelihood),
            other => Err(Error::Parameter(format!("unknown merge scoring `{other}`"))),
        }
    }
}

/// Trains a vocabulary of at most `target_size` terms.
pub fn train_subword_vocab<S: AsRef<str>>(
    corpus: &[S],
    target_size: usize,
    scoring: MergeScoring,
    lowercase: bool,
) -> Result<(Vocabulary, MergeTable)> {
    let mut word_counts: BTreeMap<String, usize> = BTreeMap::new();
    for line in corpus {
        for w in pretokenize(line.as_ref(), lowercase) {
            *word_counts.entry(w).or_default() += 1;
        }
    }
    if word_counts.is_empty() {
        return Err(Error::Input("cannot train a vocabulary on an empty corpus".into()));
    }
    let alphabet: BTreeSet<char> = word_counts.keys().flat_map(|w| w.chars()).collect();
    if target_size <= alphabet.len() + NUM_SPECIAL {
        return Err(Error::Parameter(format!(
            "target size {target_size} leaves no room beyond {} characters and {NUM_SPECIAL} reserved terms",
            alphabet.len()
        )));
    }

    let mut vocab = Vocabulary::new();
    for c in &alphabet {
        vocab.insert(&c.to_string());
        vocab.insert(&format!("{CONTINUATION}{c}"));
    }

    let mut words: Vec<(Vec<String>, usize)> = word_counts
        .into_iter()
        .map(|(w, n)| (w.chars().map(String::from).collect(), n))
        .collect();
    let mut merges = MergeTable::new();

    while vocab.len() < target_size {
        let Some((left, right)) = best_pair(&words, scoring) else {
            break;
        };
        let merged = format!("{left}{right}");
        let mut added: Vec<String> = Vec::new();
        let mut rewritten = Vec::with_capacity(words.len());
        for (symbols, n) in &words {
            let mut i = 0;
            let mut out = Vec::with_capacity(symbols.len());
            while i < symbols.len() {
                if i + 1 < symbols.len() && symbols[i] == left && symbols[i + 1] == right {
                    let term = if out.is_empty() {
                        merged.clone()
                    } else {
                        format!("{CONTINUATION}{merged}")
                    };
                    if !vocab.contains(&term) && !added.contains(&term) {
                        added.push(term);
                    }
                    out.push(merged.clone());
                    i += 2;
                } else {
                    out.push(symbols[i].clone());
                    i += 1;
                }
            }
            rewritten.push((out, *n));
        }
        // a merge may need both the word-initial and the continuation form
        if vocab.len() + added.len() > target_size {
            break;
        }
        for t in &added {
            vocab.insert(t);
        }
        words = rewritten;
        merges.push(left, right);
    }
    Ok((vocab, merges))
}

/// Highest-scoring pair occurring at least twice; ties go to the
/// lexicographically smallest `(left, right)`.
fn best_pair(words: &[(Vec<String>, usize)], scoring: MergeScoring) -> Option<(String, String)> {
    let mut pairs: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    let mut singles: HashMap<&str, usize> = HashMap::new();
    for (symbols, n) in words {
        for s in symbols {
            *singles.entry(s.as_str()).or_default() += n;
        }
        for w in symbols.windows(2) {
            *pairs.entry((w[0].as_str(), w[1].as_str())).or_default() += n;
        }
    }
    let mut best: Option<((&str, &str), f64)> = None;
    for (&pair, &count) in &pairs {
        if count < 2 {
            continue;
        }
        let score = match scoring {
            MergeScoring::Frequency => count as f64,
            MergeScoring::Likelihood => {
                count as f64 / (singles[pair.0] as f64 * singles[pair.1] as f64)
            }
        };
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((pair, score));
        }
    }
    best.map(|((l, r), _)| (l.to_owned(), r.to_owned()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn most_frequent_pair_is_merged_first() {
        // a a a b twice: (a,a) occurs 4 times, (a,b) twice
        let base = 5 + 2 * 2;
        let (vocab, merges) =
            train_subword_vocab(&["aaab aaab"], base + 1, MergeScoring::Frequency, true).unwrap();
        assert_eq!(merges.get(0), Some(("a", "a")));
        assert_eq!(merges.len(), 1);
        assert!(vocab.contains("aa"));
    }

    #[test]
    fn single_character_corpus() {
        let (vocab, merges) =
            train_subword_vocab(&["bbbb"], 50, MergeScoring::Frequency, true).unwrap();
        assert_eq!(&vocab.terms()[5..7], &["b".to_string(), "##b".to_string()]);
        // one left-to-right pass turns bbbb into bb bb, which occurs only once
        assert_eq!(merges.get(0), Some(("b", "b")));
        assert_eq!(merges.len(), 1);
        assert!(vocab.contains("bb") && vocab.contains("##bb"));
    }

    #[test]
    fn likelihood_prefers_rare_but_cohesive_pairs() {
        // singles: a=10 b=2 x=2 y=2; (a,a)=4 -> 0.04, (a,b)=2 -> 0.1, (x,y)=2 -> 0.5
        let corpus = ["xy xy aa aa aa aa ab ab"];
        let (_, freq) = train_subword_vocab(&corpus, 14, MergeScoring::Frequency, true).unwrap();
        let (_, like) = train_subword_vocab(&corpus, 14, MergeScoring::Likelihood, true).unwrap();
        assert_eq!(freq.get(0), Some(("a", "a")));
        assert_eq!(like.get(0), Some(("x", "y")));
    }

    #[test]
    fn errors_on_bad_input() {
        let empty: [&str; 0] = [];
        assert!(matches!(
            train_subword_vocab(&empty, 100, MergeScoring::Frequency, true),
            Err(Error::Input(_))
        ));
        assert!(matches!(
            train_subword_vocab(&["   "], 100, MergeScoring::Frequency, true),
            Err(Error::Input(_))
        ));
        assert!(matches!(
            train_subword_vocab(&["ab"], 7, MergeScoring::Frequency, true),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn training_is_deterministic() {
        let corpus = ["the quick brown fox", "jumps over the lazy dog", "the dog sleeps"];
        let a = train_subword_vocab(&corpus, 60, MergeScoring::Frequency, true).unwrap();
        let b = train_subword_vocab(&corpus, 60, MergeScoring::Frequency, true).unwrap();
        assert_eq!(a, b);
    }
}
