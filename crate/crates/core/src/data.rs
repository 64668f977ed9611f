//! Datasets: Gaussian synthetic classes, CSV ingestion and stratified splits.
//!
//! CSV layout: a header `feature_0,…,feature_{d-1},label`, then one row per
//! sample. Reals are written in shortest round-trip form, so a write/read
//! cycle reproduces every value bit for bit.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, contract, IsdaError, Result};
use crate::linalg::{dot, mvn_sample, Matrix, SymMatrix};
use crate::rng::{derive_seed, seeded_rng};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub num_classes: usize,
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    pub seed: Option<u64>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, num_classes: usize, inputs: Matrix, labels: Vec<usize>) -> Result<Self> {
        check_dim("Dataset labels", inputs.rows(), labels.len())?;
        contract(labels.iter().all(|&y| y < num_classes), || {
            format!("label out of range for {num_classes} classes")
        })?;
        Ok(Self {
            name: name.into(),
            num_classes,
            inputs,
            labels,
            seed: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut inputs = Matrix::zeros(indices.len(), self.input_dim());
        let mut labels = Vec::with_capacity(indices.len());
        for (r, &i) in indices.iter().enumerate() {
            inputs.row_mut(r).copy_from_slice(self.inputs.row(i));
            labels.push(self.labels[i]);
        }
        Self {
            name: self.name.clone(),
            num_classes: self.num_classes,
            inputs,
            labels,
            seed: self.seed,
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (0..self.input_dim()).map(|k| format!("feature_{k}")).collect();
        header.push("label".into());
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(self.input_dim() + 1);
        for (row, y) in self.inputs.iter_rows().zip(&self.labels) {
            record.clear();
            record.extend(row.iter().map(|x| format!("{x:?}")));
            record.push(y.to_string());
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Class-conditional Gaussian data description.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<SymMatrix>,
    pub train_per_class: usize,
    pub test_per_class: usize,
}

impl SyntheticSpec {
    pub fn num_classes(&self) -> usize {
        self.means.len()
    }

    pub fn input_dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        contract(self.num_classes() >= 2, || "need at least 2 classes".into())?;
        check_dim("SyntheticSpec covariances", self.num_classes(), self.covariances.len())?;
        for (m, c) in self.means.iter().zip(&self.covariances) {
            check_dim("SyntheticSpec mean", self.input_dim(), m.len())?;
            check_dim("SyntheticSpec covariance", self.input_dim(), c.dim())?;
            contract(m.iter().all(|x| x.is_finite()), || "non-finite class mean".into())?;
        }
        Ok(())
    }

    /// Few-shot problem with anisotropic, class-specific covariances.
    ///
    /// Class means sit at distance `separation` from the origin in random
    /// directions. Each class covariance is `base_std² I` plus `nuisance_rank`
    /// directions of standard deviation `nuisance_std`. The leading nuisance
    /// direction of class k has cosine `alignment` with the mean difference of
    /// classes k+1 and k+2 (mod C); its remainder and all other nuisance
    /// directions are orthogonal to every mean difference. Pooling such
    /// covariances across classes leaks variance onto boundaries it does
    /// not belong to.
    pub fn anisotropic(params: &AnisotropicParams, seed: u64) -> Result<Self> {
        params.validate()?;
        let d = params.input_dim;
        let c = params.num_classes;
        let mut rng = seeded_rng(seed);
        let gaussian = |rng: &mut crate::rng::IsdaRng| -> Vec<f64> {
            (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
        };
        let means: Vec<Vec<f64>> = (0..c)
            .map(|_| {
                let mut v = gaussian(&mut rng);
                normalize(&mut v);
                v.iter().map(|x| x * params.separation).collect()
            })
            .collect();
        let diff = |i: usize, j: usize| -> Vec<f64> {
            means[i].iter().zip(&means[j]).map(|(a, b)| a - b).collect()
        };
        // orthonormal basis of the between-class subspace
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for k in 1..c {
            let mut v = diff(k, 0);
            project_out(&mut v, &basis);
            if dot(&v, &v) > 1e-20 {
                normalize(&mut v);
                basis.push(v);
            }
        }
        let cos = params.alignment;
        let covariances = (0..c)
            .map(|k| {
                let var = params.nuisance_std * params.nuisance_std;
                let mut cov = SymMatrix::from_diagonal(&vec![params.base_std * params.base_std; d]);
                let mut dirs: Vec<Vec<f64>> = Vec::new();
                for r in 0..params.nuisance_rank {
                    let mut dir = gaussian(&mut rng);
                    project_out(&mut dir, &basis);
                    project_out(&mut dir, &dirs);
                    normalize(&mut dir);
                    dirs.push(dir.clone());
                    if r == 0 && cos != 0.0 {
                        let mut cross = if c >= 3 { diff((k + 1) % c, (k + 2) % c) } else { diff(1, 0) };
                        normalize(&mut cross);
                        let sin = (1.0 - cos * cos).max(0.0).sqrt();
                        dir = cross.iter().zip(&dir).map(|(x, y)| cos * x + sin * y).collect();
                    }
                    cov = cov
                        .linear_combination(1.0, &SymMatrix::outer_self(&dir), var)
                        .expect("same dimension");
                }
                cov
            })
            .collect();
        let spec = Self {
            means,
            covariances,
            train_per_class: params.train_per_class,
            test_per_class: params.test_per_class,
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn project_out(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let p = dot(v, b);
        crate::linalg::axpy(-p, b, v);
    }
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Knobs for [`SyntheticSpec::anisotropic`].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnisotropicParams {
    pub num_classes: usize,
    pub input_dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub separation: f64,
    pub base_std: f64,
    pub nuisance_std: f64,
    pub nuisance_rank: usize,
    pub alignment: f64,
}

impl AnisotropicParams {
    pub fn validate(&self) -> Result<()> {
        contract(self.num_classes >= 2, || format!("need at least 2 classes, got {}", self.num_classes))?;
        contract(self.train_per_class >= 1, || "need at least one training sample per class".into())?;
        // nuisance directions live outside the (C-1)-dimensional mean span
        contract(self.nuisance_rank + self.num_classes - 1 <= self.input_dim, || {
            format!(
                "nuisance_rank {} plus {} mean directions exceeds input_dim {}",
                self.nuisance_rank,
                self.num_classes - 1,
                self.input_dim
            )
        })?;
        contract((0.0..=1.0).contains(&self.alignment), || format!("alignment must be in [0, 1], got {}", self.alignment))?;
        for (name, v) in [("separation", self.separation), ("base_std", self.base_std), ("nuisance_std", self.nuisance_std)] {
            contract(v.is_finite() && v >= 0.0, || format!("{name} must be finite and non-negative, got {v}"))?;
        }
        Ok(())
    }
}

impl Default for AnisotropicParams {
    fn default() -> Self {
        Self {
            num_classes: 4,
            input_dim: 16,
            train_per_class: 50,
            test_per_class: 1000,
            separation: 2.5,
            base_std: 0.5,
            nuisance_std: 3.0,
            nuisance_rank: 2,
            alignment: 0.5,
        }
    }
}

/// Draws disjoint train and test sets, class by class.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let d = spec.input_dim();
    let per_class = spec.train_per_class + spec.test_per_class;
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut train_labels = Vec::new();
    let mut test_labels = Vec::new();
    for (c, (mean, cov)) in spec.means.iter().zip(&spec.covariances).enumerate() {
        let draws = mvn_sample(mean, cov, 1.0, derive_seed(seed, c as u64), per_class)?;
        let (tr, te) = draws.split_at(spec.train_per_class);
        train.extend_from_slice(tr);
        test.extend_from_slice(te);
        train_labels.extend(std::iter::repeat(c).take(tr.len()));
        test_labels.extend(std::iter::repeat(c).take(te.len()));
    }
    let to_matrix = |rows: &[Vec<f64>]| {
        if rows.is_empty() {
            Ok(Matrix::zeros(0, d))
        } else {
            Matrix::from_rows(rows)
        }
    };
    let mut train = Dataset::new("synthetic-train", spec.num_classes(), to_matrix(&train)?, train_labels)?;
    let mut test = Dataset::new("synthetic-test", spec.num_classes(), to_matrix(&test)?, test_labels)?;
    train.seed = Some(seed);
    test.seed = Some(seed);
    Ok((train, test))
}

fn csv_line(err: &csv::Error) -> u64 {
    err.position().map_or(0, csv::Position::line)
}

/// Parses a dataset from CSV. The class count is the largest label plus one.
pub fn read_csv<R: Read>(name: &str, reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let header = rdr.headers().map_err(|e| IsdaError::Parse {
        line: csv_line(&e),
        message: e.to_string(),
    })?;
    contract(!header.is_empty() && header.iter().any(|h| !h.is_empty()), || "empty CSV file".into())?;
    let width = header.len();
    let dim = width - 1;
    for (k, h) in header.iter().enumerate() {
        let expected = if k == dim { "label".to_string() } else { format!("feature_{k}") };
        if h.trim() != expected {
            return Err(IsdaError::Parse {
                line: 1,
                message: format!("header column {k} is `{h}`, expected `{expected}`"),
            });
        }
    }
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| IsdaError::Parse {
            line: csv_line(&e),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, csv::Position::line);
        if record.len() != width {
            return Err(IsdaError::Parse {
                line,
                message: format!("expected {width} fields, found {}", record.len()),
            });
        }
        for field in record.iter().take(dim) {
            let v: f64 = field.trim().parse().map_err(|_| IsdaError::Parse {
                line,
                message: format!("`{field}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(IsdaError::Parse {
                    line,
                    message: format!("`{field}` is not finite"),
                });
            }
            values.push(v);
        }
        let label = &record[dim];
        labels.push(label.trim().parse::<usize>().map_err(|_| IsdaError::Parse {
            line,
            message: format!("label `{label}` is not a non-negative integer"),
        })?);
    }
    contract(!labels.is_empty(), || "CSV file has no data rows".into())?;
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(name, num_classes, Matrix::from_vec(labels.len(), dim, values)?, labels)
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let name = path.file_stem().map_or_else(|| "csv".into(), |s| s.to_string_lossy().into_owned());
    read_csv(&name, std::fs::File::open(path)?)
}

/// Stratified split into `(train, validation)`. Each class contributes
/// `round(fraction · n_c)` samples to validation; both sides keep the
/// original sample order.
pub fn split(dataset: &Dataset, validation_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    contract(validation_fraction > 0.0 && validation_fraction < 1.0, || {
        format!("validation fraction must be in (0, 1), got {validation_fraction}")
    })?;
    let mut in_validation = vec![false; dataset.len()];
    for c in 0..dataset.num_classes {
        let mut members: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.labels[i] == c).collect();
        let n = members.len();
        let n_val = (validation_fraction * n as f64).round() as usize;
        contract(n_val >= 1 && n_val < n, || {
            format!("fraction {validation_fraction} leaves class {c} ({n} samples) empty on one side")
        })?;
        members.shuffle(&mut seeded_rng(derive_seed(seed, c as u64)));
        for &i in &members[..n_val] {
            in_validation[i] = true;
        }
    }
    let (val_idx, train_idx): (Vec<usize>, Vec<usize>) = (0..dataset.len()).partition(|&i| in_validation[i]);
    Ok((dataset.subset(&train_idx), dataset.subset(&val_idx)))
}
