//! Dense linear algebra kernel: row-major matrices, symmetric matrices,
//! quadratic forms and multivariate normal sampling.
//!
//! Vectors are plain `[f64]` slices. Everything here is 64-bit and dense;
//! feature dimensions stay in the low hundreds.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, contract, IsdaError, Result};
use crate::rng::seeded_rng;

/// Number of jittered retries before a covariance is declared degenerate.
pub const JITTER_ATTEMPTS: usize = 3;

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_dim("Matrix::from_vec", rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            check_dim("Matrix::from_rows", cols, r.len())?;
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.iter_rows().map(<[f64]>::to_vec).collect()
    }

    /// `self * x`
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("Matrix::matvec", self.cols, x.len())?;
        Ok(self.iter_rows().map(|r| dot(r, x)).collect())
    }

    /// `selfᵀ * y`
    pub fn matvec_transposed(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_dim("Matrix::matvec_transposed", self.rows, y.len())?;
        let mut out = vec![0.0; self.cols];
        for (r, &yi) in self.iter_rows().zip(y) {
            axpy(yi, r, &mut out);
        }
        Ok(out)
    }
}

/// Dense symmetric matrix. Symmetry is exact: every constructor and mutator
/// writes both triangles with the same value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let dim = diag.len();
        let mut m = Self::zeros(dim);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * dim + i] = d;
        }
        m
    }

    /// Builds from a row-major buffer. Rejects asymmetric or non-finite input.
    pub fn from_row_major(dim: usize, data: Vec<f64>) -> Result<Self> {
        check_dim("SymMatrix::from_row_major", dim * dim, data.len())?;
        contract(all_finite(&data), || "matrix has non-finite entries".into())?;
        for i in 0..dim {
            for j in (i + 1)..dim {
                let (a, b) = (data[i * dim + j], data[j * dim + i]);
                contract(a == b, || format!("matrix is not symmetric at ({i}, {j}): {a} != {b}"))?;
            }
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for r in rows {
            check_dim("SymMatrix::from_rows", dim, r.len())?;
            data.extend_from_slice(r);
        }
        Self::from_row_major(dim, data)
    }

    /// `u uᵀ`
    pub fn outer_self(u: &[f64]) -> Self {
        let dim = u.len();
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                let v = u[i] * u[j];
                m.data[i * dim + j] = v;
                m.data[j * dim + i] = v;
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// Sets entry `(i, j)` and its mirror.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
        self.data[j * self.dim + i] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn is_diagonal(&self) -> bool {
        (0..self.dim).all(|i| (0..self.dim).all(|j| i == j || self.get(i, j) == 0.0))
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&x| x == 0.0)
    }

    pub fn to_diagonal(&self) -> Self {
        Self::from_diagonal(&self.diagonal())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn frobenius_distance(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// `self * v`
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_dim("SymMatrix::matvec", self.dim, v.len())?;
        Ok((0..self.dim).map(|i| dot(self.row(i), v)).collect())
    }

    /// Tolerance used for PSD checks: `1e-9 * (1 + trace)`.
    pub fn psd_tolerance(&self) -> f64 {
        1e-9 * (1.0 + self.trace().abs())
    }

    /// `alpha * self + beta * other`, entrywise.
    pub fn linear_combination(&self, alpha: f64, other: &Self, beta: f64) -> Result<Self> {
        check_dim("SymMatrix::linear_combination", self.dim, other.dim)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| alpha * a + beta * b)
            .collect();
        Ok(Self {
            dim: self.dim,
            data,
        })
    }
}

/// `vᵀ M v`.
pub fn quadratic_form(m: &SymMatrix, v: &[f64]) -> Result<f64> {
    check_dim("quadratic_form", m.dim(), v.len())?;
    let mut total = 0.0;
    for (i, &vi) in v.iter().enumerate() {
        total += vi * dot(m.row(i), v);
    }
    Ok(total)
}

/// `u vᵀ` as a dense matrix. Symmetric when `u == v`.
pub fn outer_product(u: &[f64], v: &[f64]) -> Result<Matrix> {
    check_dim("outer_product", u.len(), v.len())?;
    let n = u.len();
    let mut m = Matrix::zeros(n, n);
    for (i, &ui) in u.iter().enumerate() {
        for (j, &vj) in v.iter().enumerate() {
            m.set(i, j, ui * vj);
        }
    }
    Ok(m)
}

/// Gershgorin lower bound on the smallest eigenvalue:
/// `min_i (M_ii - Σ_{j≠i} |M_ij|)`.
pub fn min_eigenvalue_bound(m: &SymMatrix) -> f64 {
    if m.dim() == 0 {
        return 0.0;
    }
    (0..m.dim())
        .map(|i| {
            let off: f64 = (0..m.dim()).filter(|&j| j != i).map(|j| m.get(i, j).abs()).sum();
            m.get(i, i) - off
        })
        .fold(f64::INFINITY, f64::min)
}

/// Lower-triangular factor `L` with `L Lᵀ = M` for positive semidefinite `M`.
///
/// Pivots within `pivot_tol` of zero are treated as exact zeros and their
/// column is cleared, so rank-deficient covariances factor without jitter and
/// their null directions carry no noise.
fn semidefinite_cholesky(m: &SymMatrix, pivot_tol: f64) -> Option<Matrix> {
    let n = m.dim();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let lj = l.row(j)[..j].to_vec();
        let d = m.get(j, j) - dot(&lj, &lj);
        if d < -pivot_tol {
            return None;
        }
        if d <= pivot_tol {
            for i in (j + 1)..n {
                let r = m.get(i, j) - dot(&l.row(i)[..j], &lj);
                let ri = m.get(i, i) - dot(&l.row(i)[..j], &l.row(i)[..j]);
                // Cauchy-Schwarz: |r|² ≤ d · ri for a PSD residual.
                if r * r > pivot_tol * ri.max(0.0) + pivot_tol * pivot_tol {
                    return None;
                }
            }
            continue;
        }
        let pivot = d.sqrt();
        l.set(j, j, pivot);
        for i in (j + 1)..n {
            let r = m.get(i, j) - dot(&l.row(i)[..j], &lj);
            l.set(i, j, r / pivot);
        }
    }
    Some(l)
}

/// Sampler for `N(mean, scale * cov)` with a cached factor of `cov`.
#[derive(Debug, Clone)]
pub struct MvnSampler {
    mean: Vec<f64>,
    factor: Matrix,
    std_scale: f64,
}

impl MvnSampler {
    /// Factors `cov`. If the plain factorization fails, retries up to
    /// [`JITTER_ATTEMPTS`] times with `δ = 1e-10 * (1 + trace)` added to the
    /// diagonal, growing δ tenfold each attempt.
    pub fn new(mean: &[f64], cov: &SymMatrix, scale: f64) -> Result<Self> {
        check_dim("mvn_sample", cov.dim(), mean.len())?;
        contract(scale >= 0.0 && scale.is_finite(), || format!("scale must be finite and >= 0, got {scale}"))?;
        contract(all_finite(mean), || "mean has non-finite entries".into())?;
        let size = 1.0 + cov.trace().abs();
        let pivot_tol = 1e-12 * size;
        let mut factor = semidefinite_cholesky(cov, pivot_tol);
        let mut jitter = 1e-10 * size;
        let mut attempt = 0;
        while factor.is_none() {
            if attempt == JITTER_ATTEMPTS {
                return Err(IsdaError::DegenerateCovariance { attempts: attempt });
            }
            let jittered = cov.linear_combination(1.0, &SymMatrix::identity(cov.dim()), jitter)?;
            factor = semidefinite_cholesky(&jittered, pivot_tol);
            jitter *= 10.0;
            attempt += 1;
        }
        Ok(Self {
            mean: mean.to_vec(),
            factor: factor.expect("loop exits only with a factor"),
            std_scale: scale.sqrt(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Draws one sample into `out`, using `noise` as scratch space.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, noise: &mut [f64], out: &mut [f64]) {
        for z in noise.iter_mut() {
            *z = rng.sample(StandardNormal);
        }
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.factor.row(i)[..=i];
            *o = self.mean[i] + self.std_scale * dot(row, &noise[..=i]);
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut noise = vec![0.0; self.dim()];
        let mut out = vec![0.0; self.dim()];
        self.sample_into(rng, &mut noise, &mut out);
        out
    }
}

/// `count` i.i.d. draws from `N(mean, scale * cov)`, deterministic in `seed`.
pub fn mvn_sample(mean: &[f64], cov: &SymMatrix, scale: f64, seed: u64, count: usize) -> Result<Vec<Vec<f64>>> {
    let sampler = MvnSampler::new(mean, cov, scale)?;
    let mut rng = seeded_rng(seed);
    Ok((0..count).map(|_| sampler.sample(&mut rng)).collect())
}
