//! The implicit semantic augmentation loss.
//!
//! Training features are conceptually perturbed by `N(0, λ Σ_y)` noise along
//! the class-conditional covariance of their label. Instead of sampling, the
//! expected cross-entropy is replaced by its closed-form upper bound, which is
//! plain softmax cross-entropy over *adjusted* logits:
//!
//! ```text
//! z̃_j = w_jᵀ a + b_j + (λ/2) (w_j − w_y)ᵀ Σ_y (w_j − w_y)
//! ```
//!
//! The true-class logit is never adjusted. At `λ = 0` the loss is exactly the
//! standard cross-entropy and this module takes the identical code path.
//!
//! Gradients are the exact chain rule through `z̃`. With `g = softmax(z̃) − e_y`
//! and `s_j = Σ_y (w_j − w_y)`:
//!
//! ```text
//! ∂/∂b_j   = g_j
//! ∂/∂w_j   = g_j (a + λ s_j)                 j ≠ y
//! ∂/∂w_y   = g_y a − λ Σ_{n≠y} g_n s_n
//! ∂/∂a     = Σ_j g_j w_j
//! ```
//!
//! Covariances are constants of the loss. All values are means over the batch.

use serde::{Deserialize, Serialize};

use crate::batch::FeatureBatch;
use crate::error::{check_dim, contract, Result};
use crate::linalg::{all_finite, axpy, dot, Matrix, SymMatrix};
use crate::rng::seeded_rng;
use crate::stats::CovarianceMode;

/// Final linear layer: one weight row and bias per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    weights: Matrix,
    bias: Vec<f64>,
}

impl ClassifierHead {
    pub fn new(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        check_dim("ClassifierHead bias", weights.rows(), bias.len())?;
        contract(weights.rows() >= 2, || format!("need at least 2 classes, got {}", weights.rows()))?;
        contract(weights.cols() >= 1, || "feature dimension must be positive".into())?;
        contract(all_finite(weights.as_slice()) && all_finite(&bias), || {
            "classifier head has non-finite entries".into()
        })?;
        Ok(Self { weights, bias })
    }

    pub fn zeros(num_classes: usize, feature_dim: usize) -> Result<Self> {
        Self::new(Matrix::zeros(num_classes, feature_dim), vec![0.0; num_classes])
    }

    /// Weights drawn from `N(0, 1/A)`, biases zero.
    pub fn init(num_classes: usize, feature_dim: usize, seed: u64) -> Result<Self> {
        use rand::Rng;
        use rand_distr::StandardNormal;
        let mut rng = seeded_rng(seed);
        let scale = 1.0 / (feature_dim.max(1) as f64).sqrt();
        let data = (0..num_classes * feature_dim)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self::new(Matrix::from_vec(num_classes, feature_dim, data)?, vec![0.0; num_classes])
    }

    pub fn num_classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Matrix {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn parts_mut(&mut self) -> (&mut Matrix, &mut [f64]) {
        (&mut self.weights, &mut self.bias)
    }

    /// Plain logits `W a + b`.
    pub fn logits(&self, a: &[f64]) -> Result<Vec<f64>> {
        check_dim("ClassifierHead::logits", self.feature_dim(), a.len())?;
        Ok(self
            .weights
            .iter_rows()
            .zip(&self.bias)
            .map(|(w, b)| dot(w, a) + b)
            .collect())
    }

    /// Class with the largest logit; ties go to the lowest index.
    pub fn predict(&self, a: &[f64]) -> Result<usize> {
        let z = self.logits(a)?;
        let mut best = 0;
        for (j, &v) in z.iter().enumerate().skip(1) {
            if v > z[best] {
                best = j;
            }
        }
        Ok(best)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaSchedule {
    /// `λ(t) = (t / T) λ₀`
    LinearRamp,
    /// `λ(t) = λ₀`
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsdaConfig {
    pub lambda0: f64,
    pub schedule: LambdaSchedule,
    pub covariance_mode: CovarianceMode,
    pub total_steps: usize,
}

impl IsdaConfig {
    pub fn validate(&self) -> Result<()> {
        contract(self.lambda0 >= 0.0 && self.lambda0.is_finite(), || {
            format!("lambda0 must be finite and >= 0, got {}", self.lambda0)
        })?;
        contract(self.total_steps >= 1, || "total_steps must be >= 1".into())
    }
}

/// Augmentation strength at step `t` of `config.total_steps`.
pub fn lambda_at(config: &IsdaConfig, t: usize) -> Result<f64> {
    config.validate()?;
    contract(t <= config.total_steps, || {
        format!("step {t} outside [0, {}]", config.total_steps)
    })?;
    Ok(match config.schedule {
        LambdaSchedule::LinearRamp => (t as f64 / config.total_steps as f64) * config.lambda0,
        LambdaSchedule::Constant => config.lambda0,
    })
}

/// Loss value and gradients for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub loss: f64,
    /// `C × A`
    pub grad_weights: Matrix,
    pub grad_bias: Vec<f64>,
    /// `N × A`, one row per sample.
    pub grad_features: Matrix,
    /// `N × C` adjusted logits `z̃`.
    pub adjusted_logits: Matrix,
}

/// `Σ_y (w_j − w_y)` and the quadratic terms `(w_j − w_y)ᵀ Σ_y (w_j − w_y)`
/// for every class `j`, given label `y`.
struct AugmentationTerms {
    directions: Matrix,
    quadratic: Vec<f64>,
}

impl AugmentationTerms {
    fn compute(head: &ClassifierHead, y: usize, cov: &SymMatrix) -> Self {
        let c = head.num_classes();
        let a = head.feature_dim();
        let w = head.weights();
        let diagonal = cov.is_diagonal().then(|| cov.diagonal());
        let mut directions = Matrix::zeros(c, a);
        let mut quadratic = vec![0.0; c];
        let mut diff = vec![0.0; a];
        for j in 0..c {
            if j == y {
                continue;
            }
            for (k, d) in diff.iter_mut().enumerate() {
                *d = w.get(j, k) - w.get(y, k);
            }
            let s = directions.row_mut(j);
            match &diagonal {
                Some(diag) => {
                    for k in 0..a {
                        s[k] = diag[k] * diff[k];
                    }
                }
                None => {
                    for (k, sk) in s.iter_mut().enumerate() {
                        *sk = dot(cov.row(k), &diff);
                    }
                }
            }
            quadratic[j] = dot(&diff, s);
        }
        Self { directions, quadratic }
    }
}

fn check_inputs(head: &ClassifierHead, batch: &FeatureBatch, lambda: f64, covariances: &[SymMatrix]) -> Result<()> {
    contract(!batch.is_empty(), || "empty batch".into())?;
    contract(lambda >= 0.0 && lambda.is_finite(), || format!("lambda must be finite and >= 0, got {lambda}"))?;
    check_dim("batch feature dim", head.feature_dim(), batch.feature_dim())?;
    batch.check_labels(head.num_classes())?;
    check_dim("covariance count", head.num_classes(), covariances.len())?;
    for cov in covariances {
        check_dim("covariance dim", head.feature_dim(), cov.dim())?;
    }
    Ok(())
}

/// Lazily computed augmentation terms, shared by samples with the same label.
struct TermCache<'a> {
    head: &'a ClassifierHead,
    covariances: &'a [SymMatrix],
    terms: Vec<Option<AugmentationTerms>>,
}

impl<'a> TermCache<'a> {
    fn new(head: &'a ClassifierHead, covariances: &'a [SymMatrix]) -> Self {
        Self {
            head,
            covariances,
            terms: (0..head.num_classes()).map(|_| None).collect(),
        }
    }

    fn get(&mut self, y: usize) -> &AugmentationTerms {
        let (head, cov) = (self.head, &self.covariances[y]);
        self.terms[y].get_or_insert_with(|| AugmentationTerms::compute(head, y, cov))
    }
}

fn adjust(logits: &mut [f64], lambda: f64, terms: &AugmentationTerms, y: usize) {
    for (j, z) in logits.iter_mut().enumerate() {
        if j != y {
            *z += 0.5 * lambda * terms.quadratic[j];
        }
    }
}

/// `−log softmax(z)_y` with max-subtraction.
fn softmax_cross_entropy(logits: &[f64], y: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|z| (z - max).exp()).sum();
    sum.ln() - (logits[y] - max)
}

/// Writes `softmax(z) − e_y` into `g`.
fn softmax_residual(logits: &[f64], y: usize, g: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (gj, z) in g.iter_mut().zip(logits) {
        *gj = (z - max).exp();
        sum += *gj;
    }
    for gj in g.iter_mut() {
        *gj /= sum;
    }
    g[y] -= 1.0;
}

/// Adjusted logits `z̃` of one sample.
pub fn adjusted_logits(head: &ClassifierHead, a: &[f64], y: usize, lambda: f64, cov_y: &SymMatrix) -> Result<Vec<f64>> {
    check_dim("adjusted_logits cov", head.feature_dim(), cov_y.dim())?;
    contract(y < head.num_classes(), || format!("label {y} out of range"))?;
    contract(lambda >= 0.0 && lambda.is_finite(), || format!("lambda must be finite and >= 0, got {lambda}"))?;
    let mut z = head.logits(a)?;
    if lambda != 0.0 {
        adjust(&mut z, lambda, &AugmentationTerms::compute(head, y, cov_y), y);
    }
    Ok(z)
}

/// Mean over the batch of the closed-form augmented loss.
/// `covariances[c]` is the matrix used for samples of class `c`.
pub fn isda_loss_forward(head: &ClassifierHead, batch: &FeatureBatch, lambda: f64, covariances: &[SymMatrix]) -> Result<f64> {
    check_inputs(head, batch, lambda, covariances)?;
    let mut cache = TermCache::new(head, covariances);
    let mut total = 0.0;
    for (a, y) in batch.iter() {
        let mut z = head.logits(a)?;
        if lambda != 0.0 {
            adjust(&mut z, lambda, cache.get(y), y);
        }
        total += softmax_cross_entropy(&z, y);
    }
    Ok(total / batch.len() as f64)
}

/// Loss value and exact gradients.
pub fn isda_loss_backward(head: &ClassifierHead, batch: &FeatureBatch, lambda: f64, covariances: &[SymMatrix]) -> Result<LossResult> {
    check_inputs(head, batch, lambda, covariances)?;
    let c = head.num_classes();
    let a_dim = head.feature_dim();
    let n = batch.len();
    let inv_n = 1.0 / n as f64;
    let mut cache = TermCache::new(head, covariances);

    let mut total = 0.0;
    let mut grad_weights = Matrix::zeros(c, a_dim);
    let mut grad_bias = vec![0.0; c];
    let mut grad_features = Matrix::zeros(n, a_dim);
    let mut adjusted = Matrix::zeros(n, c);
    let mut g = vec![0.0; c];

    for (i, (a, y)) in batch.iter().enumerate() {
        let mut z = head.logits(a)?;
        let terms = if lambda != 0.0 {
            let t = cache.get(y);
            adjust(&mut z, lambda, t, y);
            Some(t)
        } else {
            None
        };
        total += softmax_cross_entropy(&z, y);
        softmax_residual(&z, y, &mut g);
        adjusted.row_mut(i).copy_from_slice(&z);

        for j in 0..c {
            grad_bias[j] += g[j];
            axpy(g[j], a, grad_weights.row_mut(j));
            axpy(g[j] * inv_n, head.weights().row(j), grad_features.row_mut(i));
        }
        if let Some(terms) = terms {
            for j in (0..c).filter(|&j| j != y) {
                let s = terms.directions.row(j);
                axpy(lambda * g[j], s, grad_weights.row_mut(j));
                axpy(-lambda * g[j], s, grad_weights.row_mut(y));
            }
        }
    }

    grad_bias.iter_mut().for_each(|v| *v *= inv_n);
    grad_weights.as_mut_slice().iter_mut().for_each(|v| *v *= inv_n);
    Ok(LossResult {
        loss: total / n as f64,
        grad_weights,
        grad_bias,
        grad_features,
        adjusted_logits: adjusted,
    })
}

/// Standard softmax cross-entropy: the augmented loss with no augmentation.
pub fn cross_entropy_forward(head: &ClassifierHead, batch: &FeatureBatch) -> Result<f64> {
    let zeros = vec![SymMatrix::zeros(head.feature_dim()); head.num_classes()];
    isda_loss_forward(head, batch, 0.0, &zeros)
}

pub fn cross_entropy_backward(head: &ClassifierHead, batch: &FeatureBatch) -> Result<LossResult> {
    let zeros = vec![SymMatrix::zeros(head.feature_dim()); head.num_classes()];
    isda_loss_backward(head, batch, 0.0, &zeros)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(lambda0: f64, schedule: LambdaSchedule, total: usize) -> IsdaConfig {
        IsdaConfig {
            lambda0,
            schedule,
            covariance_mode: CovarianceMode::Full,
            total_steps: total,
        }
    }

    fn unit_head() -> ClassifierHead {
        ClassifierHead::new(Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(), vec![0.0, 0.0]).unwrap()
    }

    #[test]
    fn lambda_schedule() {
        let ramp = config(0.5, LambdaSchedule::LinearRamp, 10);
        assert_eq!(lambda_at(&ramp, 0).unwrap(), 0.0);
        assert_eq!(lambda_at(&ramp, 10).unwrap(), 0.5);
        assert_eq!(lambda_at(&ramp, 5).unwrap(), 0.25);
        assert!(lambda_at(&ramp, 11).is_err());
        let constant = config(0.75, LambdaSchedule::Constant, 10);
        assert_eq!(lambda_at(&constant, 0).unwrap(), 0.75);
        assert_eq!(lambda_at(&constant, 7).unwrap(), 0.75);
        assert!(lambda_at(&config(-1.0, LambdaSchedule::Constant, 10), 0).is_err());
        assert!(lambda_at(&config(1.0, LambdaSchedule::Constant, 0), 0).is_err());
    }

    #[test]
    fn adjusted_logits_examples() {
        let head = unit_head();
        let a = [1.0, 0.0];
        let id = SymMatrix::identity(2);
        assert_eq!(adjusted_logits(&head, &a, 0, 0.0, &id).unwrap(), head.logits(&a).unwrap());
        // z = (1, 0); quadratic term for j = 1 is |(-1, 1)|² = 2
        assert_eq!(adjusted_logits(&head, &a, 0, 1.0, &id).unwrap(), vec![1.0, 1.0]);
        assert_eq!(adjusted_logits(&head, &a, 0, 3.0, &SymMatrix::zeros(2)).unwrap(), head.logits(&a).unwrap());
        assert!(adjusted_logits(&head, &a, 0, 1.0, &SymMatrix::identity(3)).is_err());
        assert!(adjusted_logits(&head, &[1.0], 0, 1.0, &id).is_err());
    }

    #[test]
    fn forward_examples() {
        let zero = ClassifierHead::zeros(2, 3).unwrap();
        let batch = FeatureBatch::from_rows(&[vec![0.3, -1.0, 2.0]], vec![1]).unwrap();
        let covs = vec![SymMatrix::identity(3); 2];
        assert!((isda_loss_forward(&zero, &batch, 0.0, &covs).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);

        let head = unit_head();
        let batch = FeatureBatch::from_rows(&[vec![1.0, 0.0]], vec![0]).unwrap();
        let covs = vec![SymMatrix::identity(2); 2];
        let loss = isda_loss_forward(&head, &batch, 1.0, &covs).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn empty_batch_rejected() {
        let head = unit_head();
        let batch = FeatureBatch::new(Matrix::zeros(0, 2), vec![]).unwrap();
        let covs = vec![SymMatrix::identity(2); 2];
        assert!(isda_loss_forward(&head, &batch, 1.0, &covs).is_err());
        assert!(isda_loss_backward(&head, &batch, 1.0, &covs).is_err());
    }

    #[test]
    fn symmetric_bias_gradient() {
        let head = ClassifierHead::zeros(2, 2).unwrap();
        let batch = FeatureBatch::from_rows(&[vec![0.4, -0.2]], vec![0]).unwrap();
        let covs = vec![SymMatrix::identity(2); 2];
        let r = isda_loss_backward(&head, &batch, 0.0, &covs).unwrap();
        assert_eq!(r.grad_bias, vec![-0.5, 0.5]);
        // W = 0 makes every quadratic term vanish, so λ changes nothing
        let r = isda_loss_backward(&head, &batch, 2.0, &covs).unwrap();
        assert_eq!(r.grad_bias, vec![-0.5, 0.5]);
    }

    #[test]
    fn true_class_logit_never_adjusted() {
        let head = ClassifierHead::init(4, 3, 9).unwrap();
        let cov = SymMatrix::from_rows(&[vec![2.0, 0.5, 0.0], vec![0.5, 1.0, 0.2], vec![0.0, 0.2, 0.7]]).unwrap();
        let a = [0.1, -0.4, 1.3];
        for y in 0..4 {
            let plain = head.logits(&a).unwrap();
            let adj = adjusted_logits(&head, &a, y, 1.7, &cov).unwrap();
            assert_eq!(adj[y], plain[y]);
            for j in 0..4 {
                assert!(adj[j] >= plain[j]);
            }
        }
    }

    #[test]
    fn diagonal_short_circuit_matches_dense_path() {
        let head = ClassifierHead::init(3, 4, 2).unwrap();
        let diag = SymMatrix::from_diagonal(&[0.5, 1.5, 0.0, 2.0]);
        let fast = AugmentationTerms::compute(&head, 1, &diag);
        for j in 0..3 {
            let d: Vec<f64> = (0..4).map(|k| head.weights().get(j, k) - head.weights().get(1, k)).collect();
            let dense = crate::linalg::quadratic_form(&diag, &d).unwrap();
            assert!((fast.quadratic[j] - dense).abs() < 1e-14);
        }
    }

    #[test]
    fn predict_breaks_ties_low() {
        let head = ClassifierHead::zeros(3, 2).unwrap();
        assert_eq!(head.predict(&[1.0, 2.0]).unwrap(), 0);
    }

    #[test]
    fn head_validation() {
        assert!(ClassifierHead::zeros(1, 2).is_err());
        assert!(ClassifierHead::zeros(2, 0).is_err());
        assert!(ClassifierHead::new(Matrix::zeros(2, 2), vec![0.0]).is_err());
        assert!(ClassifierHead::new(Matrix::zeros(2, 1), vec![0.0, f64::INFINITY]).is_err());
    }
}
