//! Subword vocabulary training and conversion between text and model input.

mod encode;
mod train;
mod vocab;

use std::fs;
use std::path::Path;

pub use encode::{decode, EncodedSequence, Truncation};
pub use train::{train_subword_vocab, MergeScoring};
pub use vocab::{
    MergeTable, Vocabulary, CLS, CONTINUATION, MASK, NUM_SPECIAL, PAD, SEP, SPECIAL_TOKENS, UNK,
};

use crate::error::{Error, Result};

/// Splits text into words: whitespace separates words, and every character
/// that is neither alphanumeric nor whitespace becomes a word of its own.
pub fn pretokenize(text: &str, lowercase: bool) -> Vec<String> {
    let mut words = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_whitespace() {
            if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
        } else if c.is_alphanumeric() {
            if lowercase {
                current.extend(c.to_lowercase());
            } else {
                current.push(c);
            }
        } else {
            if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
            words.push(c.to_string());
        }
    }
    if !current.is_empty() {
        words.push(current);
    }
    words
}

/// A trained vocabulary together with its merge rules and normalization flag.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tokenizer {
    pub vocab: Vocabulary,
    pub merges: MergeTable,
    pub lowercase: bool,
}

pub const VOCAB_FILE: &str = "vocab.txt";
pub const MERGES_FILE: &str = "merges.txt";

impl Tokenizer {
    pub fn new(vocab: Vocabulary, merges: MergeTable) -> Self {
        Tokenizer {
            vocab,
            merges,
            lowercase: true,
        }
    }

    pub fn train<S: AsRef<str>>(
        corpus: &[S],
        target_size: usize,
        scoring: MergeScoring,
    ) -> Result<Self> {
        let (vocab, merges) = train_subword_vocab(corpus, target_size, scoring, true)?;
        Ok(Tokenizer::new(vocab, merges))
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    /// Subword ids for `text` without any special tokens.
    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        let mut ids = Vec::new();
        for word in pretokenize(text, self.lowercase) {
            encode::word_pieces(&word, &self.vocab, &mut ids);
        }
        ids
    }

    /// Model input for one text, or a text pair.
    pub fn encode(
        &self,
        text: &str,
        pair: Option<&str>,
        max_len: usize,
        truncation: Truncation,
    ) -> Result<EncodedSequence> {
        let first = self.tokenize(text);
        let second = pair.map(|p| self.tokenize(p));
        EncodedSequence::from_segments(&first, second.as_deref(), max_len, truncation)
    }

    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        decode(ids, &self.vocab)
    }

    /// Writes `vocab.txt` and `merges.txt` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.vocab.save(&dir.join(VOCAB_FILE))?;
        self.merges.save(&dir.join(MERGES_FILE))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let vocab = Vocabulary::load(&dir.join(VOCAB_FILE))?;
        let merges = MergeTable::load(&dir.join(MERGES_FILE))?;
        Ok(Tokenizer::new(vocab, merges))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn punctuation_is_split_off() {
        assert_eq!(
            pretokenize("Hello, World!  it's", true),
            ["hello", ",", "world", "!", "it", "'", "s"]
        );
        assert_eq!(pretokenize("ABC", false), ["ABC"]);
        assert!(pretokenize(" \t\n", true).is_empty());
    }

    #[test]
    fn save_and_load_round_trip() {
        let tok = Tokenizer::train(&["low lower lowest", "newer newest"], 40, MergeScoring::Frequency)
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        tok.save(dir.path()).unwrap();
        let back = Tokenizer::load(dir.path()).unwrap();
        assert_eq!(back, tok);
        let text = std::fs::read_to_string(dir.path().join(VOCAB_FILE)).unwrap();
        assert_eq!(text, tok.vocab.to_file_string());
    }

    #[test]
    fn unseen_characters_become_unk() {
        let tok = Tokenizer::train(&["abc abc abd"], 20, MergeScoring::Frequency).unwrap();
        let ids = tok.tokenize("abzzc q");
        assert_eq!(ids.iter().filter(|&&i| i == UNK).count(), 2);
        assert_eq!(tok.decode(&tok.tokenize("abc")).unwrap(), "abc");
    }
}
