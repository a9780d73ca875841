use crate::tensor::Tensor;

/// Row-oriented read access shared by sparse and dense feature matrices.
pub trait FeatureMatrix {
    fn num_rows(&self) -> usize;
    fn num_features(&self) -> usize;
    /// Calls `f(feature, value)` for every stored entry of `row`.
    fn for_each_in_row(&self, row: usize, f: &mut dyn FnMut(usize, f64));

    fn dot_row(&self, row: usize, weights: &[f64]) -> f64 {
        let mut s = 0.0;
        self.for_each_in_row(row, &mut |j, v| s += v * weights[j]);
        s
    }
}

/// Sparse document-feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DocFeatureMatrix {
    rows: Vec<Vec<(usize, f64)>>,
    feature_names: Vec<String>,
}

impl DocFeatureMatrix {
    /// Rows hold `(feature, value)` pairs sorted by feature id.
    pub fn new(rows: Vec<Vec<(usize, f64)>>, feature_names: Vec<String>) -> Self {
        debug_assert!(rows
            .iter()
            .flatten()
            .all(|&(j, _)| j < feature_names.len()));
        DocFeatureMatrix {
            rows,
            feature_names,
        }
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .map(|r| {
                let mut d = vec![0.0; self.feature_names.len()];
                for &(j, v) in r {
                    d[j] = v;
                }
                d
            })
            .collect()
    }

    /// Rows selected by `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Self {
        DocFeatureMatrix {
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            feature_names: self.feature_names.clone(),
        }
    }
}

impl FeatureMatrix for DocFeatureMatrix {
    fn num_rows(&self) -> usize {
        self.rows.len()
    }

    fn num_features(&self) -> usize {
        self.feature_names.len()
    }

    fn for_each_in_row(&self, row: usize, f: &mut dyn FnMut(usize, f64)) {
        for &(j, v) in &self.rows[row] {
            f(j, v);
        }
    }
}

/// Dense `N x K` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "dense matrix data length");
        DenseMatrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        DenseMatrix::new(rows.len(), cols, data)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        DenseMatrix::new(idx.len(), self.cols, data)
    }
}

impl From<&Tensor> for DenseMatrix {
    fn from(t: &Tensor) -> Self {
        let (r, c) = t.dims2().expect("a 2-d tensor");
        DenseMatrix::new(r, c, t.data().to_vec())
    }
}

impl FeatureMatrix for DenseMatrix {
    fn num_rows(&self) -> usize {
        self.rows
    }

    fn num_features(&self) -> usize {
        self.cols
    }

    fn for_each_in_row(&self, row: usize, f: &mut dyn FnMut(usize, f64)) {
        for (j, &v) in self.row(row).iter().enumerate() {
            if v != 0.0 {
                f(j, v);
            }
        }
    }
}
