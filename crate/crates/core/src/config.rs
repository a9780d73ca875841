//! Flat `key=value` configuration text.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Ordered `key=value` pairs. Blank lines and lines starting with `#` are skipped.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KeyValues::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected key=value, got {line:?}"),
                });
            };
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "empty key".into(),
                });
            }
            if kv.entries.insert(k.to_owned(), v.trim().to_owned()).is_some() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("duplicate key `{k}`"),
                });
            }
        }
        Ok(kv)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_owned(), value.to_string());
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Entries under `prefix`, with the prefix removed.
    pub fn with_prefix(&self, prefix: &str) -> KeyValues {
        KeyValues {
            entries: self
                .entries
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_owned(), v.clone())))
                .filter(|(k, _)| !k.is_empty())
                .collect(),
        }
    }

    /// Entries whose key does not start with `prefix`.
    pub fn without_prefix(&self, prefix: &str) -> KeyValues {
        KeyValues {
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| !k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn merge(&mut self, other: &KeyValues) {
        for (k, v) in other.iter() {
            self.set(k, v);
        }
    }

    /// Typed value of `key`, if present.
    pub fn get<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.raw(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Error::Parameter(format!("`{key}` = {v:?}: {e}")))
            })
            .transpose()
    }

    pub fn get_or<T>(&self, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T>(&self, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.get(key)?
            .ok_or_else(|| Error::Parameter(format!("missing required key `{key}`")))
    }

    /// Comma-separated list; an empty value is an empty list.
    pub fn get_list<T>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let Some(raw) = self.raw(key) else {
            return Ok(None);
        };
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<T>()
                    .map_err(|e| Error::Parameter(format!("`{key}` item {s:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            s.push_str(k);
            s.push('=');
            s.push_str(v);
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_types() {
        let kv = KeyValues::parse("# run\nlr = 0.001\n\nlayers=4\nname=a=b\nlist=1, 2,3\n").unwrap();
        assert_eq!(kv.get::<f64>("lr").unwrap(), Some(0.001));
        assert_eq!(kv.require::<usize>("layers").unwrap(), 4);
        assert_eq!(kv.raw("name"), Some("a=b"));
        assert_eq!(kv.get_list::<usize>("list").unwrap(), Some(vec![1, 2, 3]));
        assert!(kv.get::<usize>("missing").unwrap().is_none());
        assert!(kv.require::<usize>("missing").is_err());
        assert!(kv.get::<usize>("lr").is_err());
    }

    #[test]
    fn malformed_lines_report_their_number() {
        assert!(matches!(
            KeyValues::parse("a=1\nnonsense\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            KeyValues::parse("a=1\na=2\n"),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn prefix_views() {
        let kv = KeyValues::parse("arm.a.x=1\narm.a.grid.y=2,3\narm.b.x=4\nseed=1\n").unwrap();
        let a = kv.with_prefix("arm.a.");
        assert_eq!(a.raw("x"), Some("1"));
        assert_eq!(a.raw("grid.y"), Some("2,3"));
        assert_eq!(a.keys().count(), 2);
        assert_eq!(a.without_prefix("grid.").keys().collect::<Vec<_>>(), vec!["x"]);
    }

    #[test]
    fn text_round_trip() {
        let mut kv = KeyValues::new();
        kv.set("b", 2);
        kv.set("a", "x");
        assert_eq!(KeyValues::parse(&kv.to_text()).unwrap(), kv);
    }
}
