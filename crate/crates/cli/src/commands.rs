use std::path::{Path, PathBuf};
use std::time::Instant;

use isda_core::data::load_csv;
use isda_core::trainer::{evaluate, sweep_lambda, SweepReport};
use isda_core::{CovarianceMode, IsdaError};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::error::CliError;

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const SWEEP_FILE: &str = "sweep.csv";

/// Caps worker threads for sweeps.
pub const THREADS_ENV: &str = "ISDA_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub config_hash: String,
    pub seed: u64,
    pub lambda0: f64,
    pub covariance_mode: CovarianceMode,
    pub epochs: usize,
    pub steps: usize,
    /// Evaluation-set error after the last epoch.
    pub final_error: f64,
    pub best_error: f64,
    pub mean_last_10_error: f64,
    pub test_error: f64,
    pub test_loss: f64,
    pub total_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub error_rate: f64,
    pub mean_loss: f64,
}

/// Worker threads for sweeps: `ISDA_THREADS` if set, else the machine's
/// parallelism.
pub fn thread_budget() -> Result<usize, CliError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn output_dir(config: &ExperimentConfig, out: Option<&Path>) -> Result<PathBuf, CliError> {
    let dir = out.map_or_else(|| config.output.directory.clone(), Path::to_path_buf);
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    Ok(dir)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

pub fn train(config_path: &Path, seed: u64, out: Option<&Path>) -> Result<TrainSummary, CliError> {
    let config = ExperimentConfig::load(config_path)?;
    let splits = config.splits()?;
    let setup = config.setup(&splits);
    let hash = config.hash();
    let dir = output_dir(&config, out)?;
    let interval = config.output.checkpoint_interval;

    let start = Instant::now();
    let outcome = setup.run_with_observer(seed, |state| {
        if interval > 0 && state.record.epoch % interval == 0 {
            let ck = Checkpoint::new(&hash, state.steps as u64, state.net, state.head, state.stats);
            let path = dir.join(format!("checkpoint-epoch-{}.bin", state.record.epoch));
            std::fs::write(path, ck.to_bytes()).map_err(IsdaError::from)?;
        }
        Ok(())
    })?;
    let test = evaluate(&outcome.net, &outcome.head, &splits.test)?;
    let total_seconds = start.elapsed().as_secs_f64();

    write(&dir.join(METRICS_FILE), outcome.metrics.to_csv(true))?;
    Checkpoint::new(&hash, outcome.steps as u64, &outcome.net, &outcome.head, &outcome.stats)
        .save(&dir.join(CHECKPOINT_FILE))?;
    let missing = || CliError::Config("no evaluation records".into());
    let summary = TrainSummary {
        config_hash: hash,
        seed,
        lambda0: config.isda.lambda0,
        covariance_mode: config.isda.covariance_mode,
        epochs: config.optimizer.epochs,
        steps: outcome.steps,
        final_error: outcome.metrics.final_error().ok_or_else(missing)?,
        best_error: outcome.metrics.best_error().ok_or_else(missing)?,
        mean_last_10_error: outcome.metrics.mean_last(10).ok_or_else(missing)?,
        test_error: test.error_rate,
        test_loss: test.mean_loss,
        total_seconds,
    };
    write(&dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary).expect("summary serializes"))?;
    Ok(summary)
}

pub fn sweep(config_path: &Path, lambdas: &[f64], seeds: &[u64], out: Option<&Path>) -> Result<SweepReport, CliError> {
    if lambdas.is_empty() || seeds.is_empty() {
        return Err(CliError::Config("need at least one λ₀ and one seed".into()));
    }
    if let Some(bad) = lambdas.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
        return Err(CliError::Config(format!("λ₀ must be finite and >= 0, got {bad}")));
    }
    let config = ExperimentConfig::load(config_path)?;
    let splits = config.splits()?;
    let setup = config.setup(&splits);
    let dir = output_dir(&config, out)?;
    let report = sweep_lambda(&setup, lambdas, seeds, thread_budget()?)?;
    write(&dir.join(SWEEP_FILE), report.to_csv())?;
    Ok(report)
}

pub fn eval(checkpoint: &Path, csv: &Path) -> Result<EvalReport, CliError> {
    let ck = Checkpoint::load(checkpoint)?;
    let data = load_csv(csv)?;
    if data.input_dim() != ck.net.input_dim() {
        return Err(CliError::Config(format!(
            "{} has {} features, checkpoint expects {}",
            csv.display(),
            data.input_dim(),
            ck.net.input_dim()
        )));
    }
    if data.num_classes > ck.head.num_classes() {
        return Err(CliError::Config(format!(
            "{} has labels up to {}, checkpoint has {} classes",
            csv.display(),
            data.num_classes - 1,
            ck.head.num_classes()
        )));
    }
    let e = evaluate(&ck.net, &ck.head, &data)?;
    Ok(EvalReport {
        samples: data.len(),
        error_rate: e.error_rate,
        mean_loss: e.mean_loss,
    })
}
