//! Training loop.
//!
//! Each step samples a mini-batch, computes features, folds the batch moments
//! into the running class statistics, evaluates the augmented loss at the
//! current λ and applies an SGD update to the network and the head. Every
//! reduction runs in a fixed order, so a run is a pure function of its
//! configuration and seeds.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::batch::FeatureBatch;
use crate::data::Dataset;
use crate::error::{contract, IsdaError, Result};
use crate::linalg::Matrix;
use crate::loss::{cross_entropy_backward, cross_entropy_forward, isda_loss_backward, lambda_at, ClassifierHead, IsdaConfig};
use crate::model::{init_network, MlpNetwork};
use crate::rng::{derive_seed, seeded_rng};
use crate::stats::StatisticsTable;

/// Learning-rate multiplier applied from the start of `epoch` (0-based) on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrDrop {
    pub epoch: usize,
    pub multiplier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub nesterov: bool,
    pub lr_drops: Vec<LrDrop>,
    pub epochs: usize,
    pub batch_size: usize,
    pub shuffle_seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            nesterov: true,
            lr_drops: Vec::new(),
            epochs: 10,
            batch_size: 128,
            shuffle_seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        contract(self.learning_rate >= 0.0 && self.learning_rate.is_finite(), || {
            format!("learning rate must be finite and >= 0, got {}", self.learning_rate)
        })?;
        contract((0.0..1.0).contains(&self.momentum), || format!("momentum must be in [0, 1), got {}", self.momentum))?;
        contract(self.weight_decay >= 0.0, || "weight decay must be >= 0".into())?;
        contract(self.epochs >= 1, || "epochs must be >= 1".into())?;
        contract(self.batch_size >= 1, || "batch size must be >= 1".into())?;
        contract(self.lr_drops.windows(2).all(|w| w[0].epoch <= w[1].epoch), || {
            "lr drops must be sorted by epoch".into()
        })?;
        contract(self.lr_drops.iter().all(|d| d.multiplier > 0.0 && d.multiplier <= 1.0), || {
            "lr drop multipliers must be in (0, 1]".into()
        })
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.lr_drops
            .iter()
            .filter(|d| d.epoch <= epoch)
            .fold(self.learning_rate, |lr, d| lr * d.multiplier)
    }

    pub fn steps_per_epoch(&self, train_len: usize) -> usize {
        train_len.div_ceil(self.batch_size)
    }
}

/// What `t` and `T` count in the λ ramp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaUnit {
    /// Optimizer steps; `T` = epochs × steps per epoch.
    #[default]
    Steps,
    /// Epochs; `T` = epochs.
    Epochs,
}

impl LambdaUnit {
    pub fn total(self, optimizer: &OptimizerConfig, train_len: usize) -> usize {
        match self {
            Self::Steps => optimizer.epochs * optimizer.steps_per_epoch(train_len),
            Self::Epochs => optimizer.epochs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrainOptions {
    pub lambda_unit: LambdaUnit,
    /// Train with plain cross-entropy, bypassing the augmented loss entirely.
    pub cross_entropy_only: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    /// Error on the evaluation set, if one was given.
    pub val_err: Option<f64>,
    /// λ used by the last step of the epoch.
    pub lambda: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingMetrics {
    pub records: Vec<EpochRecord>,
}

pub const METRICS_HEADER: &str = "epoch,loss,train_acc,val_err,lambda,seconds";

impl TrainingMetrics {
    pub fn final_error(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.val_err)
    }

    pub fn best_error(&self) -> Option<f64> {
        self.records.iter().filter_map(|r| r.val_err).reduce(f64::min)
    }

    /// Mean evaluation error over the last `k` epochs.
    pub fn mean_last(&self, k: usize) -> Option<f64> {
        let tail: Vec<f64> = self.records.iter().rev().take(k).filter_map(|r| r.val_err).collect();
        (!tail.is_empty()).then(|| tail.iter().sum::<f64>() / tail.len() as f64)
    }

    /// Metrics as CSV. `seconds` is left empty when `with_time` is false.
    pub fn to_csv(&self, with_time: bool) -> String {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        for r in &self.records {
            let val = r.val_err.map_or(String::new(), |v| format!("{v:?}"));
            let secs = if with_time { format!("{:?}", r.seconds) } else { String::new() };
            out.push_str(&format!("{},{:?},{:?},{},{:?},{}\n", r.epoch, r.loss, r.train_acc, val, r.lambda, secs));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub error_rate: f64,
    pub mean_loss: f64,
}

/// Plain classification error and mean cross-entropy (no augmentation term).
pub fn evaluate(net: &MlpNetwork, head: &ClassifierHead, dataset: &Dataset) -> Result<Evaluation> {
    contract(!dataset.is_empty(), || "cannot evaluate an empty dataset".into())?;
    let features = net.features(&dataset.inputs)?;
    let mut wrong = 0usize;
    for (a, &y) in features.iter_rows().zip(&dataset.labels) {
        if head.predict(a)? != y {
            wrong += 1;
        }
    }
    let batch = FeatureBatch::new(features, dataset.labels.clone())?;
    Ok(Evaluation {
        error_rate: wrong as f64 / dataset.len() as f64,
        mean_loss: cross_entropy_forward(head, &batch)?,
    })
}

/// SGD with momentum (optionally Nesterov) and L2 weight decay:
/// `v ← μ v − lr (g + wd θ)`, then `θ ← θ + v`, or `θ ← θ + μ v − lr (g + wd θ)`
/// for Nesterov.
#[derive(Debug, Clone)]
struct Sgd {
    velocity: Vec<Vec<f64>>,
    momentum: f64,
    weight_decay: f64,
    nesterov: bool,
}

impl Sgd {
    fn new(config: &OptimizerConfig, shapes: &[usize]) -> Self {
        Self {
            velocity: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            momentum: config.momentum,
            weight_decay: config.weight_decay,
            nesterov: config.nesterov,
        }
    }

    fn step(&mut self, lr: f64, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) {
        for ((theta, g), v) in params.into_iter().zip(grads).zip(&mut self.velocity) {
            for ((t, &gi), vi) in theta.iter_mut().zip(g).zip(v.iter_mut()) {
                let d = gi + self.weight_decay * *t;
                *vi = self.momentum * *vi - lr * d;
                if self.nesterov {
                    *t += self.momentum * *vi - lr * d;
                } else {
                    *t += *vi;
                }
            }
        }
    }
}

fn parameter_slices<'a>(net: &'a mut MlpNetwork, head: &'a mut ClassifierHead) -> Vec<&'a mut [f64]> {
    let mut out: Vec<&mut [f64]> = Vec::new();
    for layer in net.layers_mut() {
        out.push(layer.weights.as_mut_slice());
        out.push(&mut layer.bias);
    }
    let (w, b) = head.parts_mut();
    out.push(w.as_mut_slice());
    out.push(b);
    out
}

/// Everything produced by a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: MlpNetwork,
    pub head: ClassifierHead,
    pub stats: StatisticsTable,
    pub metrics: TrainingMetrics,
    pub steps: usize,
}

/// State handed to the per-epoch observer.
pub struct EpochState<'a> {
    pub record: &'a EpochRecord,
    pub net: &'a MlpNetwork,
    pub head: &'a ClassifierHead,
    pub stats: &'a StatisticsTable,
    pub steps: usize,
}

pub fn train(
    net: MlpNetwork,
    head: ClassifierHead,
    train_set: &Dataset,
    eval_set: Option<&Dataset>,
    optimizer: &OptimizerConfig,
    isda: &IsdaConfig,
    options: &TrainOptions,
) -> Result<TrainOutcome> {
    train_with_observer(net, head, train_set, eval_set, optimizer, isda, options, |_| Ok(()))
}

/// [`train`] with a callback after every epoch (checkpointing, logging).
#[allow(clippy::too_many_arguments)]
pub fn train_with_observer<F>(
    mut net: MlpNetwork,
    mut head: ClassifierHead,
    train_set: &Dataset,
    eval_set: Option<&Dataset>,
    optimizer: &OptimizerConfig,
    isda: &IsdaConfig,
    options: &TrainOptions,
    mut observer: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&EpochState<'_>) -> Result<()>,
{
    optimizer.validate()?;
    isda.validate()?;
    contract(train_set.input_dim() == net.input_dim(), || {
        format!("dataset has {} inputs, network expects {}", train_set.input_dim(), net.input_dim())
    })?;
    contract(head.feature_dim() == net.feature_dim(), || "head and network feature dims differ".into())?;
    contract(train_set.num_classes <= head.num_classes(), || "dataset has more classes than the head".into())?;
    contract(train_set.class_counts().iter().all(|&n| n > 0), || "every class needs a training sample".into())?;

    let mut stats = StatisticsTable::new(head.num_classes(), head.feature_dim());
    let mut shapes: Vec<usize> = net
        .layers()
        .iter()
        .flat_map(|l| [l.weights.as_slice().len(), l.bias.len()])
        .collect();
    shapes.extend([head.weights().as_slice().len(), head.bias().len()]);
    let mut sgd = Sgd::new(optimizer, &shapes);

    let steps_per_epoch = optimizer.steps_per_epoch(train_set.len());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut metrics = TrainingMetrics::default();
    let mut step = 0usize;

    for epoch in 0..optimizer.epochs {
        let started = Instant::now();
        let lr = optimizer.learning_rate_at(epoch);
        order.shuffle(&mut seeded_rng(derive_seed(optimizer.shuffle_seed, epoch as u64)));
        let (mut loss_sum, mut correct, mut lambda) = (0.0, 0usize, 0.0);

        for chunk in order.chunks(optimizer.batch_size) {
            let mut inputs = Matrix::zeros(chunk.len(), train_set.input_dim());
            let mut labels = Vec::with_capacity(chunk.len());
            for (r, &i) in chunk.iter().enumerate() {
                inputs.row_mut(r).copy_from_slice(train_set.inputs.row(i));
                labels.push(train_set.labels[i]);
            }
            let (features, trace) = net.forward(&inputs)?;
            let batch = FeatureBatch::new(features, labels)?;
            stats.observe(&batch)?;

            let t = match options.lambda_unit {
                LambdaUnit::Steps => step,
                LambdaUnit::Epochs => epoch,
            };
            lambda = lambda_at(isda, t)?;
            let result = if options.cross_entropy_only {
                lambda = 0.0;
                cross_entropy_backward(&head, &batch)?
            } else {
                let covariances = stats.snapshot_all(isda.covariance_mode)?;
                isda_loss_backward(&head, &batch, lambda, &covariances)?
            };
            if !result.loss.is_finite() {
                return Err(IsdaError::Divergence { step, loss: result.loss });
            }
            for (a, y) in batch.iter() {
                if head.predict(a)? == y {
                    correct += 1;
                }
            }
            loss_sum += result.loss * batch.len() as f64;

            let net_grads = net.backward(&trace, &result.grad_features)?;
            let mut grads: Vec<&[f64]> = net_grads
                .iter()
                .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
                .collect();
            grads.push(result.grad_weights.as_slice());
            grads.push(&result.grad_bias);
            sgd.step(lr, parameter_slices(&mut net, &mut head), grads);
            step += 1;
        }
        debug_assert_eq!(step, (epoch + 1) * steps_per_epoch);

        let val_err = eval_set.map(|d| evaluate(&net, &head, d)).transpose()?.map(|e| e.error_rate);
        let record = EpochRecord {
            epoch: epoch + 1,
            loss: loss_sum / train_set.len() as f64,
            train_acc: correct as f64 / train_set.len() as f64,
            val_err,
            lambda,
            seconds: started.elapsed().as_secs_f64(),
        };
        observer(&EpochState {
            record: &record,
            net: &net,
            head: &head,
            stats: &stats,
            steps: step,
        })?;
        metrics.records.push(record);
    }

    Ok(TrainOutcome {
        net,
        head,
        stats,
        metrics,
        steps: step,
    })
}

/// A complete, seedable training setup.
#[derive(Debug, Clone)]
pub struct ExperimentSetup {
    /// `[d_in, h_1, …, h_L, A]`
    pub layer_sizes: Vec<usize>,
    pub train: Dataset,
    pub eval: Dataset,
    pub optimizer: OptimizerConfig,
    pub isda: IsdaConfig,
    pub options: TrainOptions,
}

impl ExperimentSetup {
    /// Initializes network and head from `seed` and trains. `isda.total_steps`
    /// is derived from the optimizer and the λ unit.
    pub fn run(&self, seed: u64) -> Result<TrainOutcome> {
        self.run_with_observer(seed, |_| Ok(()))
    }

    pub fn run_with_observer<F>(&self, seed: u64, observer: F) -> Result<TrainOutcome>
    where
        F: FnMut(&EpochState<'_>) -> Result<()>,
    {
        let net = init_network(&self.layer_sizes, derive_seed(seed, 0))?;
        let feature_dim = *self.layer_sizes.last().expect("validated by init_network");
        let head = ClassifierHead::init(self.train.num_classes, feature_dim, derive_seed(seed, 1))?;
        let mut optimizer = self.optimizer.clone();
        optimizer.shuffle_seed = derive_seed(self.optimizer.shuffle_seed, seed);
        let isda = self.isda_config();
        train_with_observer(net, head, &self.train, Some(&self.eval), &optimizer, &isda, &self.options, observer)
    }

    pub fn isda_config(&self) -> IsdaConfig {
        IsdaConfig {
            total_steps: self.options.lambda_unit.total(&self.optimizer, self.train.len()).max(1),
            ..self.isda
        }
    }

    pub fn with_lambda0(&self, lambda0: f64) -> Self {
        let mut s = self.clone();
        s.isda.lambda0 = lambda0;
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda0: f64,
    pub mean_val_err: f64,
    /// Sample standard deviation over seeds (0 for a single seed).
    pub std: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub selected: f64,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda0,mean_val_err,std,runs\n");
        for r in &self.rows {
            out.push_str(&format!("{:?},{:?},{:?},{}\n", r.lambda0, r.mean_val_err, r.std, r.runs));
        }
        out
    }
}

pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs `jobs` closures on up to `threads` workers, returning results in job
/// order.
pub fn run_parallel<T, F>(jobs: usize, threads: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let threads = threads.clamp(1, jobs.max(1));
    if threads == 1 {
        return (0..jobs).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<T>>> = (0..jobs).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs {
                    break;
                }
                let out = f(i);
                *slots[i].lock().expect("poisoned slot") = Some(out);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().expect("poisoned slot").expect("every job ran"))
        .collect()
}

/// Error assigned to a sweep run that diverged.
pub const DIVERGED_ERROR: f64 = 1.0;

/// Trains one run per `(λ₀, seed)` and scores each λ₀ by its mean final
/// evaluation error. The smallest mean wins; ties go to the smaller λ₀.
/// Diverged runs count as [`DIVERGED_ERROR`].
pub fn sweep_lambda(setup: &ExperimentSetup, candidates: &[f64], seeds: &[u64], threads: usize) -> Result<SweepReport> {
    contract(!candidates.is_empty(), || "need at least one λ₀ candidate".into())?;
    contract(!seeds.is_empty(), || "need at least one seed".into())?;
    let jobs = candidates.len() * seeds.len();
    let errors = run_parallel(jobs, threads, |j| {
        let (ci, si) = (j / seeds.len(), j % seeds.len());
        match setup.with_lambda0(candidates[ci]).run(seeds[si]) {
            Ok(outcome) => outcome
                .metrics
                .final_error()
                .ok_or_else(|| IsdaError::Contract("run produced no evaluation error".into())),
            // a diverged run is scored as the worst possible error
            Err(IsdaError::Divergence { .. }) => Ok(DIVERGED_ERROR),
            Err(e) => Err(e),
        }
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;

    let rows: Vec<SweepRow> = candidates
        .iter()
        .zip(errors.chunks(seeds.len()))
        .map(|(&lambda0, errs)| {
            let (mean, std) = mean_and_std(errs);
            SweepRow {
                lambda0,
                mean_val_err: mean,
                std,
                runs: errs.len(),
            }
        })
        .collect();
    let best = rows
        .iter()
        .min_by(|a, b| a.mean_val_err.total_cmp(&b.mean_val_err).then(a.lambda0.total_cmp(&b.lambda0)))
        .expect("non-empty");
    Ok(SweepReport {
        selected: best.lambda0,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use crate::linalg::SymMatrix;
    use crate::loss::LambdaSchedule;
    use crate::stats::CovarianceMode;

    fn blobs(train: usize, test: usize) -> (Dataset, Dataset) {
        let spec = SyntheticSpec {
            means: vec![vec![3.0, 0.0], vec![-3.0, 0.0]],
            covariances: vec![SymMatrix::identity(2); 2],
            train_per_class: train,
            test_per_class: test,
        };
        generate_synthetic(&spec, 21).unwrap()
    }

    fn isda(lambda0: f64) -> IsdaConfig {
        IsdaConfig {
            lambda0,
            schedule: LambdaSchedule::LinearRamp,
            covariance_mode: CovarianceMode::Full,
            total_steps: 1,
        }
    }

    fn setup(lambda0: f64) -> ExperimentSetup {
        let (train, test) = blobs(40, 100);
        ExperimentSetup {
            layer_sizes: vec![2, 4],
            train,
            eval: test,
            optimizer: OptimizerConfig {
                epochs: 5,
                batch_size: 16,
                learning_rate: 0.05,
                ..OptimizerConfig::default()
            },
            isda: isda(lambda0),
            options: TrainOptions::default(),
        }
    }

    #[test]
    fn learning_rate_drops() {
        let cfg = OptimizerConfig {
            learning_rate: 0.1,
            lr_drops: vec![LrDrop { epoch: 2, multiplier: 0.1 }, LrDrop { epoch: 4, multiplier: 0.5 }],
            ..OptimizerConfig::default()
        };
        assert_eq!(cfg.learning_rate_at(0), 0.1);
        assert_eq!(cfg.learning_rate_at(1), 0.1);
        assert!((cfg.learning_rate_at(2) - 0.01).abs() < 1e-16);
        assert!((cfg.learning_rate_at(5) - 0.005).abs() < 1e-16);
    }

    #[test]
    fn optimizer_validation() {
        let ok = OptimizerConfig::default();
        ok.validate().unwrap();
        assert_eq!((ok.momentum, ok.weight_decay), (0.9, 1e-4));
        for bad in [
            OptimizerConfig { momentum: 1.0, ..ok.clone() },
            OptimizerConfig { epochs: 0, ..ok.clone() },
            OptimizerConfig { batch_size: 0, ..ok.clone() },
            OptimizerConfig {
                lr_drops: vec![LrDrop { epoch: 3, multiplier: 0.1 }, LrDrop { epoch: 1, multiplier: 0.1 }],
                ..ok.clone()
            },
            OptimizerConfig {
                lr_drops: vec![LrDrop { epoch: 3, multiplier: 1.5 }],
                ..ok.clone()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn sgd_update_rules() {
        let cfg = OptimizerConfig {
            momentum: 0.5,
            weight_decay: 0.1,
            nesterov: false,
            ..OptimizerConfig::default()
        };
        let mut sgd = Sgd::new(&cfg, &[1]);
        let mut theta = [2.0];
        // d = 1 + 0.2 = 1.2; v = -0.12; θ = 1.88
        sgd.step(0.1, vec![&mut theta], vec![&[1.0]]);
        assert!((theta[0] - 1.88).abs() < 1e-15);
        // d = 1 + 0.188 = 1.188; v = -0.06 - 0.1188 = -0.1788; θ = 1.7012
        sgd.step(0.1, vec![&mut theta], vec![&[1.0]]);
        assert!((theta[0] - 1.7012).abs() < 1e-15);

        let mut nesterov = Sgd::new(&OptimizerConfig { nesterov: true, ..cfg }, &[1]);
        let mut theta = [2.0];
        // v = -0.12; θ = 2 + 0.5·(-0.12) - 0.12 = 1.82
        nesterov.step(0.1, vec![&mut theta], vec![&[1.0]]);
        assert!((theta[0] - 1.82).abs() < 1e-15);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let mut s = setup(0.5);
        s.optimizer.learning_rate = 0.0;
        let net = init_network(&s.layer_sizes, derive_seed(3, 0)).unwrap();
        let head = ClassifierHead::init(2, 4, derive_seed(3, 1)).unwrap();
        let out = s.run(3).unwrap();
        assert_eq!(out.net, net);
        assert_eq!(out.head, head);
    }

    #[test]
    fn zero_lambda_matches_cross_entropy_path() {
        let s = setup(0.0);
        let isda_run = s.run(9).unwrap();
        let mut ce = s.clone();
        ce.options.cross_entropy_only = true;
        let ce_run = ce.run(9).unwrap();
        assert_eq!(isda_run.net, ce_run.net);
        assert_eq!(isda_run.head, ce_run.head);
        assert_eq!(isda_run.metrics.to_csv(false), ce_run.metrics.to_csv(false));
    }

    #[test]
    fn statistics_count_every_sample_each_epoch() {
        let s = setup(0.5);
        let out = s.run(1).unwrap();
        for (c, &n) in s.train.class_counts().iter().enumerate() {
            assert_eq!(out.stats.class(c).count, (s.optimizer.epochs * n) as u64);
        }
        assert_eq!(out.steps, s.optimizer.epochs * s.optimizer.steps_per_epoch(s.train.len()));
    }

    #[test]
    fn lambda_trace() {
        let out = setup(0.5).run(2).unwrap();
        let lambdas: Vec<f64> = out.metrics.records.iter().map(|r| r.lambda).collect();
        assert!(lambdas.windows(2).all(|w| w[0] <= w[1]));
        assert!(lambdas.iter().all(|&l| (0.0..=0.5).contains(&l)));

        let mut constant = setup(0.5);
        constant.isda.schedule = LambdaSchedule::Constant;
        let out = constant.run(2).unwrap();
        assert!(out.metrics.records.iter().all(|r| r.lambda == 0.5));

        let mut epochs = setup(0.5);
        epochs.options.lambda_unit = LambdaUnit::Epochs;
        assert_eq!(epochs.isda_config().total_steps, 5);
        let out = epochs.run(2).unwrap();
        let lambdas: Vec<f64> = out.metrics.records.iter().map(|r| r.lambda).collect();
        for (e, l) in lambdas.iter().enumerate() {
            assert_eq!(*l, (e as f64 / 5.0) * 0.5);
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let s = setup(0.5);
        let a = s.run(4).unwrap();
        let b = s.run(4).unwrap();
        assert_eq!(a.metrics.to_csv(false), b.metrics.to_csv(false));
        assert_eq!(a.net, b.net);
        assert_eq!(a.stats, b.stats);
    }

    #[test]
    fn linear_model_separates_blobs() {
        let (train, test) = blobs(1000, 1000);
        let s = ExperimentSetup {
            layer_sizes: vec![2, 2],
            train,
            eval: test.clone(),
            optimizer: OptimizerConfig {
                epochs: 5,
                batch_size: 64,
                learning_rate: 0.05,
                ..OptimizerConfig::default()
            },
            isda: isda(0.0),
            options: TrainOptions::default(),
        };
        let out = s.run(0).unwrap();
        let e = evaluate(&out.net, &out.head, &test).unwrap();
        assert!(e.error_rate < 0.01, "error {}", e.error_rate);
    }

    #[test]
    fn zero_head_error_is_fraction_not_class_zero() {
        let (_, test) = blobs(1, 30);
        let net = init_network(&[2, 3], 0).unwrap();
        let head = ClassifierHead::zeros(2, 3).unwrap();
        let e = evaluate(&net, &head, &test).unwrap();
        assert_eq!(e.error_rate, 0.5);
        assert!((e.mean_loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn evaluate_ignores_order() {
        let out = setup(0.5).run(5).unwrap();
        let (_, test) = blobs(1, 50);
        let reversed: Vec<usize> = (0..test.len()).rev().collect();
        let a = evaluate(&out.net, &out.head, &test).unwrap();
        let b = evaluate(&out.net, &out.head, &test.subset(&reversed)).unwrap();
        assert_eq!(a.error_rate, b.error_rate);
        assert!((a.mean_loss - b.mean_loss).abs() < 1e-14);
    }

    #[test]
    fn evaluate_empty_fails() {
        let (_, test) = blobs(1, 2);
        let net = init_network(&[2, 3], 0).unwrap();
        let head = ClassifierHead::zeros(2, 3).unwrap();
        assert!(evaluate(&net, &head, &test.subset(&[])).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let mut s = setup(0.0);
        s.optimizer.learning_rate = 1e200;
        s.optimizer.epochs = 20;
        match s.run(0) {
            Err(IsdaError::Divergence { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn sweep_selection() {
        let s = setup(0.0);
        let single = sweep_lambda(&s, &[0.75], &[1], 1).unwrap();
        assert_eq!(single.selected, 0.75);
        assert_eq!(single.rows.len(), 1);
        assert_eq!(single.rows[0].std, 0.0);

        let dup = sweep_lambda(&s, &[0.5, 0.5], &[1, 2], 2).unwrap();
        assert_eq!(dup.rows[0], dup.rows[1]);
        assert_eq!(dup.selected, 0.5);

        let serial = sweep_lambda(&s, &[0.1, 1.0], &[3, 4], 1).unwrap();
        let parallel = sweep_lambda(&s, &[0.1, 1.0], &[3, 4], 4).unwrap();
        assert_eq!(serial, parallel);
        assert!(sweep_lambda(&s, &[], &[1], 1).is_err());
        assert!(sweep_lambda(&s, &[0.1], &[], 1).is_err());
    }

    #[test]
    fn two_point_std() {
        let (m, s) = mean_and_std(&[0.1, 0.3]);
        assert!((m - 0.2).abs() < 1e-15);
        // sample std of two points: |a - b| / √2
        assert!((s - 0.2 / 2f64.sqrt()).abs() < 1e-15);
    }
}
