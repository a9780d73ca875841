use super::vocab::{Vocabulary, CLS, CONTINUATION, NUM_SPECIAL, PAD, SEP, UNK};
use crate::error::{Error, Result};

/// How over-long content is shortened.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Truncation {
    /// Keep the first `first` and the last `last` content tokens.
    HeadTail { first: usize, last: usize },
    /// Drop tokens from the end.
    Tail,
}

impl Default for Truncation {
    fn default() -> Self {
        Truncation::HeadTail {
            first: 128,
            last: 382,
        }
    }
}

/// Fixed-length model input.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedSequence {
    pub token_ids: Vec<usize>,
    pub segment_ids: Vec<u8>,
    pub position_ids: Vec<usize>,
    /// 1 for real tokens, 0 for padding.
    pub attention_mask: Vec<u8>,
    pub true_length: usize,
}

impl EncodedSequence {
    /// Lays out `[CLS] first [SEP] (second [SEP])` and pads to `max_len`.
    /// Single segments are shortened with `truncation`; pairs drop tokens from
    /// the end of the longer segment until they fit.
    pub fn from_segments(
        first: &[usize],
        second: Option<&[usize]>,
        max_len: usize,
        truncation: Truncation,
    ) -> Result<Self> {
        let specials = if second.is_some() { 3 } else { 2 };
        if max_len < 3 {
            return Err(Error::Parameter(format!(
                "max_len must be at least 3, got {max_len}"
            )));
        }
        let budget = max_len - specials;

        let mut token_ids = Vec::with_capacity(max_len);
        let mut segment_ids = Vec::with_capacity(max_len);
        token_ids.push(CLS);
        match second {
            None => {
                let content = truncate(first, budget, truncation);
                token_ids.extend(content);
                token_ids.push(SEP);
                segment_ids.resize(token_ids.len(), 0);
            }
            Some(second) => {
                let (mut a, mut b) = (first.len(), second.len());
                while a + b > budget {
                    if a >= b {
                        a -= 1;
                    } else {
                        b -= 1;
                    }
                }
                token_ids.extend_from_slice(&first[..a]);
                token_ids.push(SEP);
                segment_ids.resize(token_ids.len(), 0);
                token_ids.extend_from_slice(&second[..b]);
                token_ids.push(SEP);
                segment_ids.resize(token_ids.len(), 1);
            }
        }
        let true_length = token_ids.len();
        let mut attention_mask = vec![1u8; true_length];
        token_ids.resize(max_len, PAD);
        segment_ids.resize(max_len, 0);
        attention_mask.resize(max_len, 0);
        Ok(EncodedSequence {
            token_ids,
            segment_ids,
            position_ids: (0..max_len).collect(),
            attention_mask,
            true_length,
        })
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Positions of non-special tokens.
    pub fn content_positions(&self) -> Vec<usize> {
        (0..self.true_length)
            .filter(|&i| self.token_ids[i] >= NUM_SPECIAL || self.token_ids[i] == UNK)
            .collect()
    }
}

fn truncate(content: &[usize], budget: usize, truncation: Truncation) -> Vec<usize> {
    if content.len() <= budget {
        return content.to_vec();
    }
    match truncation {
        Truncation::Tail => content[..budget].to_vec(),
        Truncation::HeadTail { first, last } => {
            let head = first.min(budget);
            let tail = last.min(budget - head);
            let mut out = content[..head].to_vec();
            out.extend_from_slice(&content[content.len() - tail..]);
            out
        }
    }
}

/// Greedy longest-match segmentation of one word; runs of unmatched
/// characters collapse into a single `[UNK]`.
pub(crate) fn word_pieces(word: &str, vocab: &Vocabulary, out: &mut Vec<usize>) {
    let bounds: Vec<usize> = word
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(word.len()))
        .collect();
    let mut start = 0;
    let mut in_unknown = false;
    let mut piece = String::new();
    while start + 1 < bounds.len() {
        let mut matched = None;
        for end in (start + 1..bounds.len()).rev() {
            piece.clear();
            if start > 0 {
                piece.push_str(CONTINUATION);
            }
            piece.push_str(&word[bounds[start]..bounds[end]]);
            if let Some(id) = vocab.id(&piece) {
                matched = Some((id, end));
                break;
            }
        }
        match matched {
            Some((id, end)) => {
                out.push(id);
                start = end;
                in_unknown = false;
            }
            None => {
                if !in_unknown {
                    out.push(UNK);
                }
                in_unknown = true;
                start += 1;
            }
        }
    }
}

/// Text for `ids`: specials are dropped and continuation pieces are glued to
/// the preceding piece.
pub fn decode(ids: &[usize], vocab: &Vocabulary) -> Result<String> {
    let mut text = String::new();
    for &id in ids {
        let term = vocab
            .term(id)
            .ok_or_else(|| Error::Index(format!("token id {id} outside vocabulary of {}", vocab.len())))?;
        if Vocabulary::is_special(id) {
            continue;
        }
        match term.strip_prefix(CONTINUATION) {
            Some(rest) if !rest.is_empty() => text.push_str(rest),
            _ => {
                if !text.is_empty() {
                    text.push(' ');
                }
                text.push_str(term);
            }
        }
    }
    Ok(text)
}
