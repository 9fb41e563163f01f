use crate::error::{Error, Result};

/// Dense row-major feature matrix with explicit missing cells.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureMatrix {
    n_features: usize,
    data: Vec<Option<f64>>,
}

impl FeatureMatrix {
    pub fn new(n_features: usize) -> Self {
        FeatureMatrix { n_features, data: Vec::new() }
    }

    pub fn with_capacity(n_features: usize, rows: usize) -> Self {
        FeatureMatrix { n_features, data: Vec::with_capacity(n_features * rows) }
    }

    pub fn from_rows(n_features: usize, rows: &[Vec<Option<f64>>]) -> Result<Self> {
        let mut m = FeatureMatrix::with_capacity(n_features, rows.len());
        for r in rows {
            m.push_row(r)?;
        }
        Ok(m)
    }

    pub fn push_row(&mut self, row: &[Option<f64>]) -> Result<()> {
        if row.len() != self.n_features {
            return Err(Error::Schema { expected: self.n_features, got: row.len() });
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_rows(&self) -> usize {
        if self.n_features == 0 {
            0
        } else {
            self.data.len() / self.n_features
        }
    }

    pub fn row(&self, i: usize) -> &[Option<f64>] {
        &self.data[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [Option<f64>] {
        &mut self.data[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn get(&self, row: usize, feature: usize) -> Option<f64> {
        self.data[row * self.n_features + feature]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[Option<f64>]> {
        self.data.chunks_exact(self.n_features.max(1))
    }
}
