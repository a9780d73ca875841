use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;
pub const MASK: usize = 4;

pub const SPECIAL_TOKENS: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];
pub const NUM_SPECIAL: usize = SPECIAL_TOKENS.len();

/// Prefix marking a piece that continues a word.
pub const CONTINUATION: &str = "##";

/// Bijection between subword terms and ids; ids `0..5` are the reserved tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    terms: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    /// A vocabulary holding only the reserved tokens.
    pub fn new() -> Self {
        let mut v = Vocabulary {
            terms: Vec::new(),
            ids: HashMap::new(),
        };
        for t in SPECIAL_TOKENS {
            v.insert(t);
        }
        v
    }

    /// Builds a vocabulary from terms in id order, checking the reserved prefix.
    pub fn from_terms(terms: Vec<String>) -> Result<Self> {
        for (i, special) in SPECIAL_TOKENS.iter().enumerate() {
            if terms.get(i).map(String::as_str) != Some(*special) {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected reserved term {special}"),
                });
            }
        }
        let mut ids = HashMap::with_capacity(terms.len());
        for (i, t) in terms.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("invalid term {t:?}"),
                });
            }
            if ids.insert(t.clone(), i).is_some() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("duplicate term {t:?}"),
                });
            }
        }
        Ok(Vocabulary { terms, ids })
    }

    /// Adds `term` if absent and returns its id.
    pub fn insert(&mut self, term: &str) -> usize {
        if let Some(&id) = self.ids.get(term) {
            return id;
        }
        let id = self.terms.len();
        self.terms.push(term.to_owned());
        self.ids.insert(term.to_owned(), id);
        id
    }

    pub fn id(&self, term: &str) -> Option<usize> {
        self.ids.get(term).copied()
    }

    pub fn contains(&self, term: &str) -> bool {
        self.ids.contains_key(term)
    }

    pub fn term(&self, id: usize) -> Option<&str> {
        self.terms.get(id).map(String::as_str)
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_special(id: usize) -> bool {
        id < NUM_SPECIAL
    }

    /// One term per line; the line number (from 0) is the id.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for t in &self.terms {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_terms(text.lines().map(str::to_owned).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

/// Merge rules in the order they were learned; rank = position.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MergeTable {
    merges: Vec<(String, String)>,
}

impl MergeTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, left: String, right: String) {
        self.merges.push((left, right));
    }

    pub fn len(&self) -> usize {
        self.merges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.merges.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.merges.iter().map(|(l, r)| (l.as_str(), r.as_str()))
    }

    pub fn get(&self, rank: usize) -> Option<(&str, &str)> {
        self.merges.get(rank).map(|(l, r)| (l.as_str(), r.as_str()))
    }

    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for (l, r) in &self.merges {
            s.push_str(l);
            s.push(' ');
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut table = MergeTable::new();
        for (i, line) in text.lines().enumerate() {
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => {
                    table.push(l.to_owned(), r.to_owned())
                }
                _ => {
                    return Err(Error::Parse {
                        line: i + 1,
                        message: format!("expected `left right`, got {line:?}"),
                    })
                }
            }
        }
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_are_fixed() {
        let v = Vocabulary::new();
        assert_eq!(v.id("[PAD]"), Some(PAD));
        assert_eq!(v.id("[UNK]"), Some(UNK));
        assert_eq!(v.id("[CLS]"), Some(CLS));
        assert_eq!(v.id("[SEP]"), Some(SEP));
        assert_eq!(v.id("[MASK]"), Some(MASK));
    }

    #[test]
    fn file_round_trip_is_exact() {
        let mut v = Vocabulary::new();
        v.insert("hel");
        v.insert("##lo");
        let text = v.to_file_string();
        let back = Vocabulary::parse(&text).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.to_file_string(), text);
    }

    #[test]
    fn reordered_specials_are_rejected() {
        let err = Vocabulary::parse("[UNK]\n[PAD]\n[CLS]\n[SEP]\n[MASK]\n");
        assert!(matches!(err, Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn duplicate_terms_are_rejected() {
        let err = Vocabulary::parse("[PAD]\n[UNK]\n[CLS]\n[SEP]\n[MASK]\na\na\n");
        assert!(matches!(err, Err(Error::Parse { line: 7, .. })));
    }

    #[test]
    fn merge_file_round_trip() {
        let mut m = MergeTable::new();
        m.push("a".into(), "a".into());
        m.push("aa".into(), "b".into());
        let text = m.to_file_string();
        assert_eq!(text, "a a\naa b\n");
        assert_eq!(MergeTable::parse(&text).unwrap(), m);
        assert!(MergeTable::parse("a\n").is_err());
    }
}
