//! Oracle suites behind `isda verify`.

use isda_core::linalg::Matrix;
use isda_core::loss::isda_loss_backward;
use isda_core::model::init_network;
use isda_core::oracle::{
    finite_difference_gradients, finite_difference_network_gradients, mc_expected_loss, random_instance, random_psd,
    relative_error, Gradients, DEFAULT_MC_SAMPLES,
};
use isda_core::rng::{derive_seed, seeded_rng};
use isda_core::stats::batch_moments;
use isda_core::{FeatureBatch, StatisticsTable};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::CliError;

pub const BOUND_LAMBDAS: [f64; 4] = [0.1, 0.5, 1.0, 5.0];
pub const BOUND_SIGMAS: f64 = 3.0;
pub const GRADIENT_STEP: f64 = 1e-5;
pub const GRADIENT_TOLERANCE: f64 = 1e-6;
pub const COVARIANCE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Bound,
    Gradients,
    Covariance,
    All,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundTrial {
    pub trial: usize,
    pub seed: u64,
    pub lambda: f64,
    pub closed_form: f64,
    pub mc_estimate: f64,
    pub mc_standard_error: f64,
    pub gap: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradientTrial {
    pub trial: usize,
    pub seed: u64,
    pub lambda: f64,
    pub head_relative_error: f64,
    pub network_relative_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CovarianceTrial {
    pub trial: usize,
    pub seed: u64,
    pub dim: usize,
    pub samples: usize,
    pub frobenius_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub trials: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound: Option<Vec<BoundTrial>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gradients: Option<Vec<GradientTrial>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Vec<CovarianceTrial>>,
    pub max_gradient_error: f64,
    pub max_covariance_error: f64,
    /// `trial`/`seed` of every failing check.
    pub failures: Vec<String>,
}

pub fn run_suite(suite: Suite, trials: usize, seed: u64) -> Result<VerifyReport, CliError> {
    let mut report = VerifyReport {
        trials,
        seed,
        ..Default::default()
    };
    if matches!(suite, Suite::Bound | Suite::All) {
        let rows = (0..trials).map(|t| bound_trial(t, derive_seed(seed, t as u64))).collect::<Result<Vec<_>, _>>()?;
        for r in rows.iter().filter(|r| !r.passed) {
            report.failures.push(format!("bound trial {} seed {}", r.trial, r.seed));
        }
        report.bound = Some(rows);
    }
    if matches!(suite, Suite::Gradients | Suite::All) {
        let rows = (0..trials)
            .map(|t| gradient_trial(t, derive_seed(seed ^ 0x9e37_79b9, t as u64)))
            .collect::<Result<Vec<_>, _>>()?;
        for r in &rows {
            report.max_gradient_error = report.max_gradient_error.max(r.head_relative_error).max(r.network_relative_error);
            if !r.passed {
                report.failures.push(format!("gradient trial {} seed {}", r.trial, r.seed));
            }
        }
        report.gradients = Some(rows);
    }
    if matches!(suite, Suite::Covariance | Suite::All) {
        let rows = (0..trials)
            .map(|t| covariance_trial(t, derive_seed(seed ^ 0x7f4a_7c15, t as u64)))
            .collect::<Result<Vec<_>, _>>()?;
        for r in &rows {
            report.max_covariance_error = report.max_covariance_error.max(r.frobenius_error);
            if !r.passed {
                report.failures.push(format!("covariance trial {} seed {}", r.trial, r.seed));
            }
        }
        report.covariance = Some(rows);
    }
    report.passed = report.failures.is_empty();
    Ok(report)
}

/// Closed form against a Monte-Carlo estimate with `A ≤ 8`, `C ≤ 5`.
pub fn bound_trial(trial: usize, seed: u64) -> Result<BoundTrial, CliError> {
    let inst = random_instance(seed, 8, 5, 4);
    let lambda = BOUND_LAMBDAS[trial % BOUND_LAMBDAS.len()];
    let r = mc_expected_loss(&inst.head, &inst.batch, lambda, &inst.covariances, DEFAULT_MC_SAMPLES, seed)?;
    Ok(BoundTrial {
        trial,
        seed,
        lambda,
        closed_form: r.closed_form,
        mc_estimate: r.mc_estimate,
        mc_standard_error: r.mc_standard_error,
        gap: r.gap(),
        passed: r.bound_holds(BOUND_SIGMAS),
    })
}

/// Head gradients on a random instance (`A ≤ 16`, `C ≤ 8`) and network
/// gradients of a random 2-4-3 MLP, both against central differences.
pub fn gradient_trial(trial: usize, seed: u64) -> Result<GradientTrial, CliError> {
    let lambda = [0.0, 0.1, 0.5, 1.0, 2.0][trial % 5];
    let inst = random_instance(seed, 16, 8, 4);
    let analytic = isda_loss_backward(&inst.head, &inst.batch, lambda, &inst.covariances)?;
    let fd = finite_difference_gradients(&inst.head, &inst.batch, lambda, &inst.covariances, GRADIENT_STEP)?;
    let head_err = Gradients::from(&analytic).max_relative_error(&fd);

    let mut rng = seeded_rng(derive_seed(seed, 1));
    let net = init_network(&[2, 4, 3], derive_seed(seed, 2))?;
    let head = isda_core::ClassifierHead::init(3, 3, derive_seed(seed, 3))?;
    let inputs = Matrix::from_vec(5, 2, (0..10).map(|_| rng.sample(StandardNormal)).collect())?;
    let labels: Vec<usize> = (0..5).map(|_| rng.gen_range(0..3)).collect();
    let covs: Vec<_> = (0..3).map(|_| random_psd(&mut rng, 3, 3, 0.5)).collect();
    let (features, trace) = net.forward(&inputs)?;
    let r = isda_loss_backward(&head, &FeatureBatch::new(features, labels.clone())?, lambda, &covs)?;
    let analytic_net = net.backward(&trace, &r.grad_features)?;
    let fd_net = finite_difference_network_gradients(&net, &head, &inputs, &labels, lambda, &covs, GRADIENT_STEP)?;
    let net_err = analytic_net
        .iter()
        .zip(&fd_net)
        .flat_map(|(a, b)| {
            a.weights
                .as_slice()
                .iter()
                .zip(b.weights.as_slice())
                .chain(a.bias.iter().zip(&b.bias))
                .map(|(&x, &y)| relative_error(x, y))
        })
        .fold(0.0, f64::max);
    Ok(GradientTrial {
        trial,
        seed,
        lambda,
        head_relative_error: head_err,
        network_relative_error: net_err,
        passed: head_err <= GRADIENT_TOLERANCE && net_err <= GRADIENT_TOLERANCE,
    })
}

/// Streams random batches (`A ≤ 32`, at most 4000 samples) and compares each
/// class against moments recomputed from all of its samples at once.
pub fn covariance_trial(trial: usize, seed: u64) -> Result<CovarianceTrial, CliError> {
    let mut rng = seeded_rng(seed);
    let dim = rng.gen_range(1..=32);
    let classes = rng.gen_range(2..=5);
    let samples = rng.gen_range(classes..=4000);
    let offset: Vec<f64> = (0..dim).map(|_| 20.0 * rng.sample::<f64, _>(StandardNormal)).collect();
    let mut table = StatisticsTable::new(classes, dim);
    let mut rows: Vec<Vec<Vec<f64>>> = vec![Vec::new(); classes];
    let mut left = samples;
    while left > 0 {
        let n = rng.gen_range(1..=left.min(300));
        left -= n;
        let batch_rows: Vec<Vec<f64>> = (0..n)
            .map(|_| offset.iter().map(|o| o + rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        for (r, &y) in batch_rows.iter().zip(&labels) {
            rows[y].push(r.clone());
        }
        table.observe(&FeatureBatch::from_rows(&batch_rows, labels)?)?;
    }
    let mut worst = 0.0f64;
    for (c, class_rows) in rows.iter().enumerate() {
        if class_rows.is_empty() {
            continue;
        }
        let all = FeatureBatch::from_rows(class_rows, vec![c; class_rows.len()])?;
        let reference = batch_moments(&all, c);
        let streamed = &table.class(c).cov;
        let err = streamed.frobenius_distance(&reference.cov) / reference.cov.frobenius_norm().max(f64::MIN_POSITIVE);
        worst = worst.max(err);
    }
    Ok(CovarianceTrial {
        trial,
        seed,
        dim,
        samples,
        frobenius_error: worst,
        passed: worst <= COVARIANCE_TOLERANCE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_trials_pass_vacuously() {
        let r = run_suite(Suite::All, 0, 1).unwrap();
        assert!(r.passed);
        assert!(r.bound.unwrap().is_empty());
        assert!(r.failures.is_empty());
    }

    #[test]
    fn few_trials_of_each_suite_pass() {
        let r = run_suite(Suite::All, 3, 11).unwrap();
        assert!(r.passed, "{:?}", r.failures);
        assert_eq!(r.gradients.as_ref().unwrap().len(), 3);
        assert!(r.max_gradient_error <= GRADIENT_TOLERANCE);
        assert!(r.max_covariance_error <= COVARIANCE_TOLERANCE);
    }

    #[test]
    fn single_suite_reports_only_itself() {
        let r = run_suite(Suite::Covariance, 2, 0).unwrap();
        assert!(r.bound.is_none() && r.gradients.is_none());
        assert_eq!(r.covariance.unwrap().len(), 2);
    }
}
