use crate::error::{check_dim, contract, Result};
use crate::linalg::Matrix;

/// A mini-batch of deep features (one row per sample) with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch {
    features: Matrix,
    labels: Vec<usize>,
}

impl FeatureBatch {
    pub fn new(features: Matrix, labels: Vec<usize>) -> Result<Self> {
        check_dim("FeatureBatch labels", features.rows(), labels.len())?;
        Ok(Self { features, labels })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<usize>) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn features_mut(&mut self) -> &mut Matrix {
        &mut self.features
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], usize)> {
        (0..self.len()).map(move |i| (self.features.row(i), self.labels[i]))
    }

    pub(crate) fn check_labels(&self, num_classes: usize) -> Result<()> {
        contract(self.labels.iter().all(|&y| y < num_classes), || {
            format!("batch label out of range for {num_classes} classes")
        })
    }
}
