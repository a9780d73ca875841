use std::collections::BTreeMap;
use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::features::DenseMatrix;
use crate::error::{Error, Result};
use crate::tokenizer::pretokenize;

/// Fixed-dimension word vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    terms: Vec<String>,
    vectors: Vec<f64>,
    index: HashMap<String, usize>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Parameter("embedding dimension must be positive".into()));
        }
        Ok(EmbeddingTable {
            dim,
            terms: Vec::new(),
            vectors: Vec::new(),
            index: HashMap::new(),
        })
    }

    /// Adds or overwrites the vector of `term`.
    pub fn insert(&mut self, term: &str, vector: &[f64]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Dimension(format!(
                "vector of {} for dimension {}",
                vector.len(),
                self.dim
            )));
        }
        match self.index.get(term) {
            Some(&i) => self.vectors[i * self.dim..(i + 1) * self.dim].copy_from_slice(vector),
            None => {
                self.index.insert(term.to_owned(), self.terms.len());
                self.terms.push(term.to_owned());
                self.vectors.extend_from_slice(vector);
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn get(&self, term: &str) -> Option<&[f64]> {
        self.index
            .get(term)
            .map(|&i| &self.vectors[i * self.dim..(i + 1) * self.dim])
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    /// Parses `token v1 ... vK` lines; every line must carry exactly `dim` values.
    pub fn parse(text: &str, dim: usize) -> Result<Self> {
        let mut table = EmbeddingTable::new(dim)?;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            let term = parts.next().unwrap_or_default();
            let values: Vec<f64> = parts
                .map(|p| {
                    p.parse::<f64>().map_err(|_| Error::Parse {
                        line: i + 1,
                        message: format!("bad number {p:?}"),
                    })
                })
                .collect::<Result<_>>()?;
            if term.is_empty() || values.len() != dim {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected a token and {dim} values, got {} values", values.len()),
                });
            }
            table.insert(term, &values)?;
        }
        Ok(table)
    }

    pub fn load(path: &Path, dim: usize) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, dim)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (i, t) in self.terms.iter().enumerate() {
            s.push_str(t);
            for v in &self.vectors[i * self.dim..(i + 1) * self.dim] {
                write!(s, " {v}").expect("writing to a String");
            }
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Averaged word vectors over the tokens that occur at least `min_count`
/// times in the fitting corpus and have a vector.
#[derive(Clone, Debug)]
pub struct AvgEmbedding<'a> {
    table: &'a EmbeddingTable,
    covered: HashSet<String>,
}

impl<'a> AvgEmbedding<'a> {
    pub fn fit<S: AsRef<str>>(corpus: &[S], table: &'a EmbeddingTable, min_count: usize) -> Result<Self> {
        if table.is_empty() {
            return Err(Error::Input("empty embedding table".into()));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for doc in corpus {
            for t in pretokenize(doc.as_ref(), true) {
                *counts.entry(t).or_default() += 1;
            }
        }
        let covered = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_count && table.get(t).is_some())
            .map(|(t, _)| t)
            .collect();
        Ok(AvgEmbedding { table, covered })
    }

    pub fn num_covered(&self) -> usize {
        self.covered.len()
    }

    /// Mean vector per document; documents without covered tokens map to zero.
    pub fn transform<S: AsRef<str>>(&self, docs: &[S]) -> DenseMatrix {
        let k = self.table.dim();
        let mut data = Vec::with_capacity(docs.len() * k);
        for doc in docs {
            // summing in term order makes the mean independent of token order
            let mut counts: BTreeMap<String, usize> = BTreeMap::new();
            for t in pretokenize(doc.as_ref(), true) {
                if self.covered.contains(&t) {
                    *counts.entry(t).or_default() += 1;
                }
            }
            let mut sum = vec![0.0; k];
            let mut n = 0usize;
            for (t, c) in &counts {
                let v = self.table.get(t).expect("covered tokens have vectors");
                for (s, x) in sum.iter_mut().zip(v) {
                    *s += x * *c as f64;
                }
                n += c;
            }
            if n > 0 {
                for s in &mut sum {
                    *s /= n as f64;
                }
            }
            data.extend(sum);
        }
        DenseMatrix::new(docs.len(), k, data)
    }
}

/// Fits on `corpus` and returns its `N x K` averaged representation.
pub fn avg_embedding_repr<S: AsRef<str>>(
    corpus: &[S],
    table: &EmbeddingTable,
    min_count: usize,
) -> Result<DenseMatrix> {
    Ok(AvgEmbedding::fit(corpus, table, min_count)?.transform(corpus))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xy() -> EmbeddingTable {
        let mut t = EmbeddingTable::new(2).unwrap();
        t.insert("x", &[1.0, 0.0]).unwrap();
        t.insert("y", &[0.0, 1.0]).unwrap();
        t
    }

    #[test]
    fn mean_of_covered_vectors() {
        let m = avg_embedding_repr(&["x y", "q r", "y x"], &xy(), 1).unwrap();
        assert_eq!(m.row(0), &[0.5, 0.5]);
        assert_eq!(m.row(1), &[0.0, 0.0]);
        assert_eq!(m.row(2), m.row(0));
    }

    #[test]
    fn min_count_limits_coverage() {
        let m = avg_embedding_repr(&["x x y"], &xy(), 2).unwrap();
        assert_eq!(m.row(0), &[1.0, 0.0]);
    }

    #[test]
    fn parse_checks_arity() {
        let t = EmbeddingTable::parse("a 1 2 3\nb 4 5 6\n", 3).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.get("b"), Some(&[4.0, 5.0, 6.0][..]));
        assert!(matches!(
            EmbeddingTable::parse("a 1 2 3\nb 4 5\n", 3),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn text_round_trip() {
        let mut t = xy();
        t.insert("z", &[0.1, -2.5e-7]).unwrap();
        let back = EmbeddingTable::parse(&t.to_text(), 2).unwrap();
        assert_eq!(back, t);
    }
}
