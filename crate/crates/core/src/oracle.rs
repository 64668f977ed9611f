//! Brute-force checks for the closed-form loss.
//!
//! The Monte-Carlo routines here sample explicit augmented features
//! `ã ~ N(a, λ Σ_y)` and evaluate cross-entropy on each draw. They share only
//! the multivariate normal sampler with the rest of the crate; logits and
//! cross-entropy are recomputed from scratch. Sample `i` of the batch draws
//! from its own stream `derive_seed(seed, i)`, so results do not depend on
//! evaluation order.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::batch::FeatureBatch;
use crate::error::{check_dim, contract, Result};
use crate::linalg::{Matrix, MvnSampler, SymMatrix};
use crate::loss::{isda_loss_forward, ClassifierHead, LossResult};
use crate::model::{DenseLayer, MlpGradients, MlpNetwork};
use crate::rng::{derive_seed, seeded_rng};

/// Smallest draw count accepted by [`mc_expected_loss`].
pub const MIN_MC_SAMPLES: usize = 100;

/// Default draw count for verification runs.
pub const DEFAULT_MC_SAMPLES: usize = 100_000;

/// Denominator floor for [`relative_error`]. Entries whose magnitude is
/// below the floor are compared in absolute terms.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub mc_estimate: f64,
    pub mc_standard_error: f64,
    pub closed_form: f64,
    pub sample_count: usize,
    pub seed: u64,
}

impl OracleReport {
    /// `closed_form − mc_estimate`
    pub fn gap(&self) -> f64 {
        self.closed_form - self.mc_estimate
    }

    /// The bound holds if the closed form is not below the estimate by more
    /// than `sigmas` standard errors.
    pub fn bound_holds(&self, sigmas: f64) -> bool {
        self.closed_form >= self.mc_estimate - sigmas * self.mc_standard_error
    }
}

/// Cross-entropy of one explicit feature vector, computed from the raw
/// definition.
fn explicit_cross_entropy(head: &ClassifierHead, feature: &[f64], y: usize, logits: &mut [f64]) -> f64 {
    let w = head.weights();
    for (j, z) in logits.iter_mut().enumerate() {
        let mut s = 0.0;
        for (k, &x) in feature.iter().enumerate() {
            s += w.get(j, k) * x;
        }
        *z = s + head.bias()[j];
    }
    let mut max = f64::NEG_INFINITY;
    for &z in logits.iter() {
        if z > max {
            max = z;
        }
    }
    let mut sum = 0.0;
    for &z in logits.iter() {
        sum += (z - max).exp();
    }
    sum.ln() - (logits[y] - max)
}

/// Per-sample running moments of the per-draw losses.
struct SampleMoments {
    mean: f64,
    m2: f64,
}

fn sample_draw_losses(
    head: &ClassifierHead,
    batch: &FeatureBatch,
    lambda: f64,
    covariances: &[SymMatrix],
    draws: usize,
    seed: u64,
) -> Result<Vec<SampleMoments>> {
    contract(draws >= 1, || "draw count must be >= 1".into())?;
    contract(!batch.is_empty(), || "empty batch".into())?;
    contract(lambda >= 0.0 && lambda.is_finite(), || format!("lambda must be finite and >= 0, got {lambda}"))?;
    check_dim("oracle covariance count", head.num_classes(), covariances.len())?;
    check_dim("oracle feature dim", head.feature_dim(), batch.feature_dim())?;
    contract(batch.labels().iter().all(|&y| y < head.num_classes()), || "label out of range".into())?;

    let dim = head.feature_dim();
    let mut noise = vec![0.0; dim];
    let mut augmented = vec![0.0; dim];
    let mut logits = vec![0.0; head.num_classes()];
    let mut out = Vec::with_capacity(batch.len());
    for (i, (a, y)) in batch.iter().enumerate() {
        let sampler = MvnSampler::new(a, &covariances[y], lambda)?;
        let mut rng = seeded_rng(derive_seed(seed, i as u64));
        let (mut mean, mut m2) = (0.0, 0.0);
        for k in 1..=draws {
            sampler.sample_into(&mut rng, &mut noise, &mut augmented);
            let loss = explicit_cross_entropy(head, &augmented, y, &mut logits);
            let delta = loss - mean;
            mean += delta / k as f64;
            m2 += delta * (loss - mean);
        }
        out.push(SampleMoments { mean, m2 });
    }
    Ok(out)
}

/// Explicit-augmentation loss: mean cross-entropy over `draws` augmented
/// copies of every sample.
pub fn naive_augmented_loss(
    head: &ClassifierHead,
    batch: &FeatureBatch,
    lambda: f64,
    covariances: &[SymMatrix],
    draws: usize,
    seed: u64,
) -> Result<f64> {
    let moments = sample_draw_losses(head, batch, lambda, covariances, draws, seed)?;
    let total: f64 = moments.iter().map(|m| m.mean).fold(0.0, |acc, m| acc + m);
    Ok(total / batch.len() as f64)
}

/// Monte-Carlo estimate of the expected augmented loss next to its closed-form
/// bound.
///
/// The standard error is the batch mean of the per-sample standard errors,
/// `(1/N) Σ_i s_i / √M`. Because draws are independent across samples the
/// exact error of the mean is `√(Σ_i s_i²/M) / N`, which never exceeds this.
pub fn mc_expected_loss(
    head: &ClassifierHead,
    batch: &FeatureBatch,
    lambda: f64,
    covariances: &[SymMatrix],
    draws: usize,
    seed: u64,
) -> Result<OracleReport> {
    contract(draws >= MIN_MC_SAMPLES, || {
        format!("need at least {MIN_MC_SAMPLES} draws, got {draws}")
    })?;
    let moments = sample_draw_losses(head, batch, lambda, covariances, draws, seed)?;
    let n = batch.len() as f64;
    let m = draws as f64;
    let estimate = moments.iter().map(|s| s.mean).fold(0.0, |acc, x| acc + x) / n;
    let se = moments
        .iter()
        .map(|s| (s.m2 / (m - 1.0)).max(0.0).sqrt() / m.sqrt())
        .sum::<f64>()
        / n;
    Ok(OracleReport {
        mc_estimate: estimate,
        mc_standard_error: se,
        closed_form: isda_loss_forward(head, batch, lambda, covariances)?,
        sample_count: draws,
        seed,
    })
}

/// `closed_form − mc_estimate`.
pub fn jensen_gap(
    head: &ClassifierHead,
    batch: &FeatureBatch,
    lambda: f64,
    covariances: &[SymMatrix],
    draws: usize,
    seed: u64,
) -> Result<f64> {
    Ok(mc_expected_loss(head, batch, lambda, covariances, draws, seed)?.gap())
}

/// Gradients with the same layout as [`LossResult`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub grad_weights: Matrix,
    pub grad_bias: Vec<f64>,
    pub grad_features: Matrix,
}

impl From<&LossResult> for Gradients {
    fn from(r: &LossResult) -> Self {
        Self {
            grad_weights: r.grad_weights.clone(),
            grad_bias: r.grad_bias.clone(),
            grad_features: r.grad_features.clone(),
        }
    }
}

impl Gradients {
    /// Largest [`relative_error`] over every entry.
    pub fn max_relative_error(&self, other: &Gradients) -> f64 {
        let pairs = self
            .grad_weights
            .as_slice()
            .iter()
            .zip(other.grad_weights.as_slice())
            .chain(self.grad_bias.iter().zip(&other.grad_bias))
            .chain(self.grad_features.as_slice().iter().zip(other.grad_features.as_slice()));
        pairs.map(|(&a, &b)| relative_error(a, b)).fold(0.0, f64::max)
    }
}

/// `|a − b| / max(|a|, |b|, RELATIVE_ERROR_FLOOR)`
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Central differences of `f` at `x[idx]`, restoring `x` afterwards.
fn central<F>(values: &mut [f64], idx: usize, h: f64, mut f: F) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let orig = values[idx];
    values[idx] = orig + h;
    let plus = f(values)?;
    values[idx] = orig - h;
    let minus = f(values)?;
    values[idx] = orig;
    Ok((plus - minus) / (2.0 * h))
}

/// Central finite differences of [`isda_loss_forward`] with respect to every
/// entry of `W`, `b` and the batch features.
pub fn finite_difference_gradients(
    head: &ClassifierHead,
    batch: &FeatureBatch,
    lambda: f64,
    covariances: &[SymMatrix],
    h: f64,
) -> Result<Gradients> {
    contract(h > 0.0 && h.is_finite(), || format!("step must be positive, got {h}"))?;
    let mut probe = head.clone();
    let mut weights = head.weights().as_slice().to_vec();
    let grad_w: Vec<f64> = (0..weights.len())
        .map(|idx| {
            central(&mut weights, idx, h, |w| {
                probe.weights_mut().as_mut_slice().copy_from_slice(w);
                isda_loss_forward(&probe, batch, lambda, covariances)
            })
        })
        .collect::<Result<_>>()?;
    probe.weights_mut().as_mut_slice().copy_from_slice(head.weights().as_slice());

    let mut bias = head.bias().to_vec();
    let grad_b: Vec<f64> = (0..bias.len())
        .map(|idx| {
            central(&mut bias, idx, h, |b| {
                probe.bias_mut().copy_from_slice(b);
                isda_loss_forward(&probe, batch, lambda, covariances)
            })
        })
        .collect::<Result<_>>()?;

    let mut perturbed = batch.clone();
    let mut features = batch.features().as_slice().to_vec();
    let grad_a: Vec<f64> = (0..features.len())
        .map(|idx| {
            central(&mut features, idx, h, |x| {
                perturbed.features_mut().as_mut_slice().copy_from_slice(x);
                isda_loss_forward(head, &perturbed, lambda, covariances)
            })
        })
        .collect::<Result<_>>()?;

    Ok(Gradients {
        grad_weights: Matrix::from_vec(head.num_classes(), head.feature_dim(), grad_w)?,
        grad_bias: grad_b,
        grad_features: Matrix::from_vec(batch.len(), batch.feature_dim(), grad_a)?,
    })
}

/// Central finite differences of the loss with respect to every network
/// weight and bias, with the head and covariances held fixed.
#[allow(clippy::too_many_arguments)]
pub fn finite_difference_network_gradients(
    net: &MlpNetwork,
    head: &ClassifierHead,
    inputs: &Matrix,
    labels: &[usize],
    lambda: f64,
    covariances: &[SymMatrix],
    h: f64,
) -> Result<MlpGradients> {
    contract(h > 0.0 && h.is_finite(), || format!("step must be positive, got {h}"))?;
    let loss = |probe: &MlpNetwork| -> Result<f64> {
        let batch = FeatureBatch::new(probe.features(inputs)?, labels.to_vec())?;
        isda_loss_forward(head, &batch, lambda, covariances)
    };
    let mut probe = net.clone();
    let mut grads = Vec::with_capacity(net.layers().len());
    for l in 0..net.layers().len() {
        let mut weights = net.layers()[l].weights.as_slice().to_vec();
        let gw = (0..weights.len())
            .map(|idx| {
                central(&mut weights, idx, h, |w| {
                    probe.layers_mut()[l].weights.as_mut_slice().copy_from_slice(w);
                    loss(&probe)
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        probe.layers_mut()[l].weights.as_mut_slice().copy_from_slice(net.layers()[l].weights.as_slice());
        let mut bias = net.layers()[l].bias.clone();
        let gb = (0..bias.len())
            .map(|idx| {
                central(&mut bias, idx, h, |b| {
                    probe.layers_mut()[l].bias.copy_from_slice(b);
                    loss(&probe)
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        probe.layers_mut()[l].bias.copy_from_slice(&net.layers()[l].bias);
        let shape = &net.layers()[l].weights;
        grads.push(DenseLayer {
            weights: Matrix::from_vec(shape.rows(), shape.cols(), gw)?,
            bias: gb,
        });
    }
    Ok(grads)
}

/// A random loss problem: head, batch and one PSD covariance per class.
#[derive(Debug, Clone)]
pub struct Instance {
    pub head: ClassifierHead,
    pub batch: FeatureBatch,
    pub covariances: Vec<SymMatrix>,
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// `scale · B Bᵀ / k` for a standard normal `dim × k` matrix `B`.
pub fn random_psd(rng: &mut impl Rng, dim: usize, rank: usize, scale: f64) -> SymMatrix {
    let b: Vec<Vec<f64>> = (0..dim).map(|_| (0..rank).map(|_| gaussian(rng)).collect()).collect();
    let mut m = SymMatrix::zeros(dim);
    for i in 0..dim {
        for j in i..dim {
            let v: f64 = (0..rank).map(|k| b[i][k] * b[j][k]).sum();
            m.set(i, j, scale * v / rank as f64);
        }
    }
    m
}

/// Seeded instance with `A ≤ max_dim`, `2 ≤ C ≤ max_classes` and
/// `N ≤ max_batch`. Covariance ranks vary, so some are singular.
pub fn random_instance(seed: u64, max_dim: usize, max_classes: usize, max_batch: usize) -> Instance {
    let mut rng = seeded_rng(seed);
    let dim = rng.gen_range(1..=max_dim.max(1));
    let classes = rng.gen_range(2..=max_classes.max(2));
    let n = rng.gen_range(1..=max_batch.max(1));
    let weights: Vec<f64> = (0..classes * dim).map(|_| gaussian(&mut rng) / (dim as f64).sqrt()).collect();
    let bias: Vec<f64> = (0..classes).map(|_| 0.5 * gaussian(&mut rng)).collect();
    let head = ClassifierHead::new(Matrix::from_vec(classes, dim, weights).expect("shape"), bias).expect("finite");
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| gaussian(&mut rng)).collect()).collect();
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
    let batch = FeatureBatch::from_rows(&rows, labels).expect("shape");
    let covariances = (0..classes)
        .map(|_| {
            let rank = rng.gen_range(1..=dim + 1);
            let scale = rng.gen_range(0.1..1.5);
            random_psd(&mut rng, dim, rank, scale)
        })
        .collect();
    Instance { head, batch, covariances }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::{cross_entropy_backward, cross_entropy_forward, isda_loss_backward};

    fn instance() -> (ClassifierHead, FeatureBatch, Vec<SymMatrix>) {
        let head = ClassifierHead::init(3, 2, 17).unwrap();
        let batch = FeatureBatch::from_rows(&[vec![0.5, -1.0], vec![1.5, 0.25], vec![-0.3, 0.9]], vec![0, 2, 1]).unwrap();
        let cov = SymMatrix::from_rows(&[vec![1.0, 0.3], vec![0.3, 0.5]]).unwrap();
        (head, batch, vec![cov; 3])
    }

    #[test]
    fn zero_lambda_matches_plain_ce() {
        let (head, batch, covs) = instance();
        let ce = cross_entropy_forward(&head, &batch).unwrap();
        for m in [1, 7] {
            assert_eq!(naive_augmented_loss(&head, &batch, 0.0, &covs, m, 3).unwrap(), ce);
        }
        let report = mc_expected_loss(&head, &batch, 0.0, &covs, 200, 3).unwrap();
        assert_eq!(report.mc_estimate, report.closed_form);
        assert_eq!(report.mc_standard_error, 0.0);
        assert_eq!(jensen_gap(&head, &batch, 0.0, &covs, 200, 3).unwrap(), 0.0);
    }

    #[test]
    fn zero_covariance_matches_closed_form() {
        let (head, batch, _) = instance();
        let zeros = vec![SymMatrix::zeros(2); 3];
        let report = mc_expected_loss(&head, &batch, 2.5, &zeros, 150, 8).unwrap();
        assert_eq!(report.mc_estimate, report.closed_form);
        assert_eq!(report.mc_standard_error, 0.0);
        assert_eq!(report.gap(), 0.0);
    }

    #[test]
    fn rejects_bad_arguments() {
        let (head, batch, covs) = instance();
        assert!(mc_expected_loss(&head, &batch, 1.0, &covs, 99, 0).is_err());
        assert!(naive_augmented_loss(&head, &batch, 1.0, &covs, 0, 0).is_err());
        assert!(finite_difference_gradients(&head, &batch, 1.0, &covs, 0.0).is_err());
    }

    #[test]
    fn deterministic_in_seed() {
        let (head, batch, covs) = instance();
        let a = naive_augmented_loss(&head, &batch, 1.0, &covs, 500, 42).unwrap();
        let b = naive_augmented_loss(&head, &batch, 1.0, &covs, 500, 42).unwrap();
        let c = naive_augmented_loss(&head, &batch, 1.0, &covs, 500, 43).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert_ne!(a, c);
    }

    #[test]
    fn finite_differences_match_ce_gradients() {
        let (head, batch, covs) = instance();
        let analytic = Gradients::from(&cross_entropy_backward(&head, &batch).unwrap());
        let numeric = finite_difference_gradients(&head, &batch, 0.0, &covs, 1e-5).unwrap();
        assert!(analytic.max_relative_error(&numeric) <= 1e-6);
    }

    #[test]
    fn zero_head_bias_gradient_is_uniform_minus_one_hot() {
        let (_, batch, covs) = instance();
        let head = ClassifierHead::zeros(3, 2).unwrap();
        let numeric = finite_difference_gradients(&head, &batch, 0.7, &covs, 1e-5).unwrap();
        // labels 0, 2, 1: each class appears once
        for g in &numeric.grad_bias {
            assert!((g - (1.0 / 3.0 - 1.0 / 3.0)).abs() < 1e-9);
        }
        let analytic = isda_loss_backward(&head, &batch, 0.7, &covs).unwrap();
        assert!(Gradients::from(&analytic).max_relative_error(&numeric) <= 1e-6);
    }

    #[test]
    fn finite_differences_match_isda_gradients() {
        let (head, batch, covs) = instance();
        let analytic = Gradients::from(&isda_loss_backward(&head, &batch, 0.8, &covs).unwrap());
        let numeric = finite_difference_gradients(&head, &batch, 0.8, &covs, 1e-5).unwrap();
        assert!(analytic.max_relative_error(&numeric) <= 1e-6);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((relative_error(1e-9, 0.0) - 1e-6).abs() < 1e-18);
    }
}
