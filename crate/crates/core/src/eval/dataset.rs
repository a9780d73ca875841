use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Labeled texts with dense category ids.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Dataset {
    pub texts: Vec<String>,
    pub labels: Vec<usize>,
    /// Category name of each id.
    pub categories: Vec<String>,
    pub provenance: String,
}

impl Dataset {
    /// Builds a dataset from `(text, category name)` records; ids follow
    /// first appearance.
    pub fn from_records<I, T, L>(records: I, provenance: &str) -> Self
    where
        I: IntoIterator<Item = (T, L)>,
        T: Into<String>,
        L: AsRef<str>,
    {
        let mut ds = Dataset {
            provenance: provenance.to_owned(),
            ..Dataset::default()
        };
        let mut ids: HashMap<String, usize> = HashMap::new();
        for (text, label) in records {
            let label = label.as_ref();
            let id = *ids.entry(label.to_owned()).or_insert_with(|| {
                ds.categories.push(label.to_owned());
                ds.categories.len() - 1
            });
            ds.texts.push(text.into());
            ds.labels.push(id);
        }
        ds
    }

    pub fn len(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.categories.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_classes()];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    /// Records selected by `idx` (duplicates allowed), keeping all categories.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            texts: idx.iter().map(|&i| self.texts[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            categories: self.categories.clone(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        w.write_record(["text", "label"]).map_err(|e| csv_io(path, e))?;
        for (t, &l) in self.texts.iter().zip(&self.labels) {
            w.write_record([t.as_str(), self.categories[l].as_str()])
                .map_err(|e| csv_io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

/// Reads a UTF-8 CSV with `text` and `label` columns.
pub fn load_csv_dataset(path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_io(path, e))?;
    let headers = reader.headers().map_err(|e| Error::Dataset {
        row: 0,
        message: e.to_string(),
    })?;
    let column = |name: &str| {
        headers.iter().position(|h| h.trim() == name).ok_or_else(|| Error::Dataset {
            row: 0,
            message: format!("missing `{name}` column"),
        })
    };
    let (text_col, label_col) = (column("text")?, column("label")?);
    let mut records = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Dataset {
            row,
            message: e.to_string(),
        })?;
        let (Some(text), Some(label)) = (rec.get(text_col), rec.get(label_col)) else {
            return Err(Error::Dataset {
                row,
                message: "row is missing a column".into(),
            });
        };
        if label.trim().is_empty() {
            return Err(Error::Dataset {
                row,
                message: "empty label".into(),
            });
        }
        records.push((text.to_owned(), label.trim().to_owned()));
    }
    if records.is_empty() {
        return Err(Error::Dataset {
            row: 0,
            message: "no records".into(),
        });
    }
    Ok(Dataset::from_records(records, &path.display().to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(text: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, text).unwrap();
        (dir, path)
    }

    #[test]
    fn labels_follow_first_appearance() {
        let (_d, p) = write("text,label\nhello,pos\nbye,neg\nhi,pos\n");
        let ds = load_csv_dataset(&p).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.categories, ["pos", "neg"]);
        assert_eq!(ds.labels, [0, 1, 0]);
    }

    #[test]
    fn header_only_is_empty() {
        let (_d, p) = write("text,label\n");
        assert!(matches!(load_csv_dataset(&p), Err(Error::Dataset { row: 0, .. })));
    }

    #[test]
    fn missing_column_is_reported() {
        let (_d, p) = write("body,label\nx,a\n");
        assert!(matches!(load_csv_dataset(&p), Err(Error::Dataset { row: 0, .. })));
    }

    #[test]
    fn ragged_row_is_named() {
        let (_d, p) = write("text,label\na,x\nb\n");
        assert!(matches!(load_csv_dataset(&p), Err(Error::Dataset { row: 2, .. })));
    }

    #[test]
    fn quoted_fields_survive_a_round_trip() {
        let ds = Dataset::from_records(
            [("a, b", "x"), ("line one\nline \"two\"", "y"), ("plain", "x")],
            "test",
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.csv");
        ds.write_csv(&path).unwrap();
        let back = load_csv_dataset(&path).unwrap();
        assert_eq!(back.texts, ds.texts);
        assert_eq!(back.labels, ds.labels);
        assert_eq!(back.categories, ds.categories);
    }
}
