use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use super::features::DocFeatureMatrix;
use super::stem::stem;
use crate::error::{Error, Result};
use crate::tokenizer::pretokenize;

/// Normalization and document-frequency trimming for binary bag-of-words features.
#[derive(Clone, Debug, PartialEq)]
pub struct BowConfig {
    pub lowercase: bool,
    pub stem: bool,
    pub remove_punctuation: bool,
    pub remove_numbers: bool,
    pub remove_symbols: bool,
    /// Features in fewer than `ceil(min_df * N)` documents are dropped.
    pub min_df: f64,
    /// Features in more than `ceil(max_df * N)` documents are dropped.
    pub max_df: f64,
}

impl Default for BowConfig {
    fn default() -> Self {
        BowConfig {
            lowercase: true,
            stem: true,
            remove_punctuation: true,
            remove_numbers: true,
            remove_symbols: true,
            min_df: 0.001,
            max_df: 0.33,
        }
    }
}

impl BowConfig {
    /// No normalization beyond lowercasing and no trimming.
    pub fn plain() -> Self {
        BowConfig {
            lowercase: true,
            stem: false,
            remove_punctuation: false,
            remove_numbers: false,
            remove_symbols: false,
            min_df: 0.0,
            max_df: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.min_df && self.min_df < self.max_df && self.max_df <= 1.0) {
            return Err(Error::Parameter(format!(
                "document-frequency bounds need 0 <= min_df < max_df <= 1, got {} and {}",
                self.min_df, self.max_df
            )));
        }
        Ok(())
    }

    /// Unigram tokens of `text` after the configured normalization.
    pub fn tokens(&self, text: &str) -> Vec<String> {
        pretokenize(text, self.lowercase)
            .into_iter()
            .filter(|t| {
                let alnum = t.chars().any(char::is_alphanumeric);
                if !alnum {
                    let punct = t.chars().all(|c| c.is_ascii_punctuation());
                    return !(punct && self.remove_punctuation || !punct && self.remove_symbols);
                }
                !(self.remove_numbers && t.chars().all(char::is_numeric))
            })
            .map(|t| if self.stem { stem(&t) } else { t })
            .collect()
    }
}

/// A fitted feature list; maps documents to binary presence rows.
#[derive(Clone, Debug, PartialEq)]
pub struct BowPipeline {
    config: BowConfig,
    features: Vec<String>,
    index: HashMap<String, usize>,
}

impl BowPipeline {
    /// Learns the feature list from `corpus` and returns it with the corpus rows.
    pub fn fit<S: AsRef<str>>(corpus: &[S], config: BowConfig) -> Result<(Self, DocFeatureMatrix)> {
        config.validate()?;
        if corpus.is_empty() {
            return Err(Error::Input("empty corpus".into()));
        }
        let n = corpus.len() as f64;
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for doc in corpus {
            let unique: BTreeSet<String> = config.tokens(doc.as_ref()).into_iter().collect();
            for t in unique {
                *df.entry(t).or_default() += 1;
            }
        }
        let lo = (config.min_df * n).ceil() as usize;
        let hi = ((config.max_df * n).ceil() as usize).max(1);
        let features: Vec<String> = df
            .into_iter()
            .filter(|&(_, c)| c >= lo && c <= hi)
            .map(|(t, _)| t)
            .collect();
        if features.is_empty() {
            return Err(Error::Input(
                "document-frequency trimming removed every feature".into(),
            ));
        }
        let pipeline = Self::from_features(features, config)?;
        let matrix = pipeline.transform(corpus);
        Ok((pipeline, matrix))
    }

    pub fn from_features(features: Vec<String>, config: BowConfig) -> Result<Self> {
        let mut index = HashMap::with_capacity(features.len());
        for (i, f) in features.iter().enumerate() {
            if index.insert(f.clone(), i).is_some() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("duplicate feature {f:?}"),
                });
            }
        }
        Ok(BowPipeline {
            config,
            features,
            index,
        })
    }

    pub fn features(&self) -> &[String] {
        &self.features
    }

    pub fn config(&self) -> &BowConfig {
        &self.config
    }

    /// Presence rows over the fitted features; unknown tokens are dropped.
    pub fn transform<S: AsRef<str>>(&self, docs: &[S]) -> DocFeatureMatrix {
        let rows = docs
            .iter()
            .map(|d| {
                let ids: BTreeSet<usize> = self
                    .config
                    .tokens(d.as_ref())
                    .iter()
                    .filter_map(|t| self.index.get(t).copied())
                    .collect();
                ids.into_iter().map(|j| (j, 1.0)).collect()
            })
            .collect();
        DocFeatureMatrix::new(rows, self.features.clone())
    }

    /// One feature per line.
    pub fn save_features(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        for f in &self.features {
            s.push_str(f);
            s.push('\n');
        }
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load_features(path: &Path, config: BowConfig) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_features(text.lines().map(str::to_owned).collect(), config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presence_rows() {
        let (p, m) = BowPipeline::fit(&["a b", "a c"], BowConfig::plain()).unwrap();
        assert_eq!(p.features(), ["a", "b", "c"]);
        assert_eq!(m.to_dense(), vec![vec![1.0, 1.0, 0.0], vec![1.0, 0.0, 1.0]]);
    }

    #[test]
    fn duplicates_count_once() {
        let (_, m) = BowPipeline::fit(&["x x x y"], BowConfig::plain()).unwrap();
        assert_eq!(m.to_dense(), vec![vec![1.0, 1.0]]);
    }

    #[test]
    fn max_df_trims_common_features() {
        let cfg = BowConfig {
            max_df: 0.33,
            ..BowConfig::plain()
        };
        let (p, _) = BowPipeline::fit(&["a b", "a c", "a b d"], cfg).unwrap();
        assert_eq!(p.features(), ["c", "d"]);
    }

    #[test]
    fn everything_trimmed_is_an_error() {
        let cfg = BowConfig {
            max_df: 0.4,
            ..BowConfig::plain()
        };
        assert!(matches!(
            BowPipeline::fit(&["a", "a", "a"], cfg),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn normalization_filters() {
        let cfg = BowConfig::default();
        assert_eq!(cfg.tokens("The parties, 2024 $ cats!"), ["the", "parti", "cat"]);
        assert_eq!(BowConfig::plain().tokens("a, 1 $"), ["a", ",", "1", "$"]);
    }

    #[test]
    fn transform_drops_unknown_and_matches_fit() {
        let docs = ["red fish", "blue fish", "red car"];
        let (p, m) = BowPipeline::fit(&docs, BowConfig::plain()).unwrap();
        assert_eq!(p.transform(&docs), m);
        let t = p.transform(&["green fish"]);
        assert_eq!(t.row(0), &[(p.features().iter().position(|f| f == "fish").unwrap(), 1.0)]);
    }

    #[test]
    fn feature_file_round_trip() {
        let (p, _) = BowPipeline::fit(&["x y", "y z"], BowConfig::plain()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.txt");
        p.save_features(&path).unwrap();
        assert_eq!(BowPipeline::load_features(&path, BowConfig::plain()).unwrap(), p);
    }

    #[test]
    fn bad_bounds_are_rejected() {
        let cfg = BowConfig {
            min_df: 0.5,
            max_df: 0.5,
            ..BowConfig::plain()
        };
        assert!(BowPipeline::fit(&["a"], cfg).is_err());
    }
}
