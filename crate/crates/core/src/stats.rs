//! Online per-class feature statistics.
//!
//! Each class keeps a running count, mean and population covariance. A new
//! mini-batch contributes its own population moments, which are merged with
//! the running values:
//!
//! ```text
//! μ ← (n μ + m μ') / (n + m)
//! Σ ← (n Σ + m Σ') / (n + m) + n m (μ − μ')(μ − μ')ᵀ / (n + m)²
//! n ← n + m
//! ```
//!
//! The merge is exact under the divide-by-n convention, so the streaming
//! estimate matches a one-shot computation over every sample seen.

use serde::{Deserialize, Serialize};

use crate::batch::FeatureBatch;
use crate::error::{check_dim, contract, Result};
use crate::linalg::SymMatrix;

/// Which matrix feeds the augmentation term of the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceMode {
    /// The class's own full covariance.
    Full,
    /// The class covariance with off-diagonal entries zeroed.
    Diagonal,
    /// The identity, ignoring the estimates.
    Identity,
    /// One covariance pooled over every class.
    SingleGlobal,
}

impl CovarianceMode {
    pub const ALL: [CovarianceMode; 4] = [Self::Full, Self::Diagonal, Self::Identity, Self::SingleGlobal];

    pub fn name(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::Diagonal => "diagonal",
            Self::Identity => "identity",
            Self::SingleGlobal => "single_global",
        }
    }
}

impl std::fmt::Display for CovarianceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for CovarianceMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown covariance mode `{s}`"))
    }
}

/// Running statistics for a single class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassStatistics {
    pub class_id: usize,
    pub count: u64,
    pub mean: Vec<f64>,
    pub cov: SymMatrix,
}

impl ClassStatistics {
    pub fn empty(class_id: usize, dim: usize) -> Self {
        Self {
            class_id,
            count: 0,
            mean: vec![0.0; dim],
            cov: SymMatrix::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Population moments of the samples of `class_id` in a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchMoments {
    pub count: u64,
    pub mean: Vec<f64>,
    pub cov: SymMatrix,
}

/// Count, mean and population covariance of the samples labelled `class_id`.
/// An absent class yields a zero count with zero moments.
pub fn batch_moments(batch: &FeatureBatch, class_id: usize) -> BatchMoments {
    let dim = batch.feature_dim();
    let rows: Vec<&[f64]> = batch.iter().filter(|&(_, y)| y == class_id).map(|(a, _)| a).collect();
    let mut mean = vec![0.0; dim];
    let mut cov = SymMatrix::zeros(dim);
    if rows.is_empty() {
        return BatchMoments { count: 0, mean, cov };
    }
    let m = rows.len() as f64;
    for r in &rows {
        for (acc, x) in mean.iter_mut().zip(*r) {
            *acc += x;
        }
    }
    mean.iter_mut().for_each(|x| *x /= m);
    for i in 0..dim {
        for j in i..dim {
            let mut s = 0.0;
            for r in &rows {
                s += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
            cov.set(i, j, s / m);
        }
    }
    BatchMoments {
        count: rows.len() as u64,
        mean,
        cov,
    }
}

/// Merges a batch's moments into `prior`.
pub fn merge_statistics(prior: &ClassStatistics, moments: &BatchMoments) -> Result<ClassStatistics> {
    check_dim("merge_statistics mean", prior.dim(), moments.mean.len())?;
    check_dim("merge_statistics cov", prior.dim(), moments.cov.dim())?;
    if moments.count == 0 {
        return Ok(prior.clone());
    }
    if prior.count == 0 {
        return Ok(ClassStatistics {
            class_id: prior.class_id,
            count: moments.count,
            mean: moments.mean.clone(),
            cov: moments.cov.clone(),
        });
    }
    let n = prior.count as f64;
    let m = moments.count as f64;
    let total = n + m;
    let mean: Vec<f64> = prior
        .mean
        .iter()
        .zip(&moments.mean)
        .map(|(mu, mu_b)| (n * mu + m * mu_b) / total)
        .collect();
    let delta: Vec<f64> = prior.mean.iter().zip(&moments.mean).map(|(a, b)| a - b).collect();
    let cross = n * m / (total * total);
    let dim = prior.dim();
    let mut cov = SymMatrix::zeros(dim);
    for i in 0..dim {
        for j in i..dim {
            let pooled = (n * prior.cov.get(i, j) + m * moments.cov.get(i, j)) / total;
            cov.set(i, j, pooled + cross * delta[i] * delta[j]);
        }
    }
    Ok(ClassStatistics {
        class_id: prior.class_id,
        count: prior.count + moments.count,
        mean,
        cov,
    })
}

/// Running statistics for every class of a problem.
#[derive(Debug, Clone, PartialEq)]
pub struct StatisticsTable {
    classes: Vec<ClassStatistics>,
    dim: usize,
}

impl StatisticsTable {
    pub fn new(num_classes: usize, dim: usize) -> Self {
        Self {
            classes: (0..num_classes).map(|c| ClassStatistics::empty(c, dim)).collect(),
            dim,
        }
    }

    /// Rebuilds a table from per-class entries ordered by class id.
    pub fn from_classes(classes: Vec<ClassStatistics>) -> Result<Self> {
        let dim = classes.first().map_or(0, ClassStatistics::dim);
        for (i, c) in classes.iter().enumerate() {
            contract(c.class_id == i, || format!("class statistics out of order at {i}"))?;
            check_dim("StatisticsTable mean", dim, c.mean.len())?;
            check_dim("StatisticsTable cov", dim, c.cov.dim())?;
            contract(c.count > 0 || (c.mean.iter().all(|&x| x == 0.0) && c.cov.is_zero()), || {
                format!("class {i} has zero count but non-zero moments")
            })?;
        }
        Ok(Self { classes, dim })
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> &[ClassStatistics] {
        &self.classes
    }

    pub fn class(&self, class_id: usize) -> &ClassStatistics {
        &self.classes[class_id]
    }

    pub fn total_count(&self) -> u64 {
        self.classes.iter().map(|c| c.count).sum()
    }

    /// Merges the moments of every class present in `batch`.
    pub fn observe(&mut self, batch: &FeatureBatch) -> Result<()> {
        check_dim("StatisticsTable::observe", self.dim, batch.feature_dim())?;
        batch.check_labels(self.num_classes())?;
        for class_id in 0..self.num_classes() {
            let moments = batch_moments(batch, class_id);
            if moments.count > 0 {
                self.classes[class_id] = merge_statistics(&self.classes[class_id], &moments)?;
            }
        }
        Ok(())
    }

    /// All statistics merged into one pooled estimate.
    pub fn pooled(&self) -> Result<ClassStatistics> {
        let mut acc = ClassStatistics::empty(0, self.dim);
        for c in &self.classes {
            let moments = BatchMoments {
                count: c.count,
                mean: c.mean.clone(),
                cov: c.cov.clone(),
            };
            acc = merge_statistics(&acc, &moments)?;
        }
        Ok(acc)
    }

    /// The covariance the loss should use for `class_id` under `mode`.
    pub fn snapshot_covariance(&self, mode: CovarianceMode, class_id: usize) -> Result<SymMatrix> {
        contract(class_id < self.num_classes(), || {
            format!("class {class_id} out of range for {} classes", self.num_classes())
        })?;
        Ok(match mode {
            CovarianceMode::Full => self.classes[class_id].cov.clone(),
            CovarianceMode::Diagonal => self.classes[class_id].cov.to_diagonal(),
            CovarianceMode::Identity => SymMatrix::identity(self.dim),
            CovarianceMode::SingleGlobal => self.pooled()?.cov,
        })
    }

    /// Snapshots for every class, indexed by class id.
    pub fn snapshot_all(&self, mode: CovarianceMode) -> Result<Vec<SymMatrix>> {
        match mode {
            CovarianceMode::SingleGlobal => {
                let pooled = self.pooled()?.cov;
                Ok(vec![pooled; self.num_classes()])
            }
            _ => (0..self.num_classes()).map(|c| self.snapshot_covariance(mode, c)).collect(),
        }
    }

    pub fn reset(&mut self) {
        for c in &mut self.classes {
            *c = ClassStatistics::empty(c.class_id, self.dim);
        }
    }
}
