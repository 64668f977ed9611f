//! Experiment configuration: one strict JSON document per run.

use std::path::{Path, PathBuf};

use isda_core::data::{generate_synthetic, load_csv, split, AnisotropicParams, Dataset, SyntheticSpec};
use isda_core::loss::LambdaSchedule;
use isda_core::rng::derive_seed;
use isda_core::trainer::{ExperimentSetup, LambdaUnit, OptimizerConfig, TrainOptions};
use isda_core::{CovarianceMode, IsdaConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub isda: IsdaSection,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Fraction of the training set held out for validation. With 0 and no
    /// separate validation draw, evaluation uses the test set.
    #[serde(default)]
    pub validation_fraction: f64,
    /// Seeds sample draws and the validation split.
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SyntheticSource),
    Csv(CsvSource),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSource {
    #[serde(default)]
    pub params: AnisotropicParams,
    /// Seeds the class geometry (means and covariances).
    #[serde(default)]
    pub spec_seed: u64,
    /// Size of an independent validation draw per class; 0 disables it.
    #[serde(default)]
    pub validation_per_class: usize,
}

/// Paths are relative to the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub train: PathBuf,
    pub test: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// `[d_in, h_1, …, h_L, A]`
    pub layer_sizes: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IsdaSection {
    pub lambda0: f64,
    pub schedule: LambdaSchedule,
    pub covariance_mode: CovarianceMode,
    pub lambda_unit: LambdaUnit,
    pub cross_entropy_only: bool,
}

impl Default for IsdaSection {
    fn default() -> Self {
        Self {
            lambda0: 0.5,
            schedule: LambdaSchedule::LinearRamp,
            covariance_mode: CovarianceMode::Full,
            lambda_unit: LambdaUnit::Steps,
            cross_entropy_only: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub directory: PathBuf,
    /// Write `checkpoint-epoch-N.bin` every N epochs; 0 keeps only the final one.
    pub checkpoint_interval: usize,
    /// Fixed-order reductions. Runs are always serial internally, so this is
    /// recorded rather than switched.
    pub reproducible: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("runs"),
            checkpoint_interval: 0,
            reproducible: true,
        }
    }
}

/// Datasets resolved from a config.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    /// What the trainer evaluates every epoch: validation if present, else test.
    pub eval: Dataset,
    pub test: Dataset,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let config: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads and validates a config; relative data paths are resolved against
    /// the config's directory and must exist.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let DataSource::Csv(csv) = &mut config.data.source {
            for p in [&mut csv.train, &mut csv.test] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
                if !p.exists() {
                    return Err(CliError::Config(format!("data file {} does not exist", p.display())));
                }
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let fraction = self.data.validation_fraction;
        if !(0.0..1.0).contains(&fraction) {
            return Err(CliError::Config(format!("validation_fraction must be in [0, 1), got {fraction}")));
        }
        if let DataSource::Synthetic(s) = &self.data.source {
            s.params.validate()?;
            if s.validation_per_class > 0 && fraction > 0.0 {
                return Err(CliError::Config(
                    "use either validation_fraction or validation_per_class, not both".into(),
                ));
            }
            if self.model.layer_sizes.first() != Some(&s.params.input_dim) {
                return Err(CliError::Config(format!(
                    "layer_sizes must start with input_dim {}, got {:?}",
                    s.params.input_dim, self.model.layer_sizes
                )));
            }
        }
        if self.model.layer_sizes.len() < 2 || self.model.layer_sizes.contains(&0) {
            return Err(CliError::Config(format!(
                "layer_sizes needs at least an input and a feature size, all positive; got {:?}",
                self.model.layer_sizes
            )));
        }
        self.optimizer.validate()?;
        self.isda_config(1).validate()?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn isda_config(&self, total_steps: usize) -> IsdaConfig {
        IsdaConfig {
            lambda0: self.isda.lambda0,
            schedule: self.isda.schedule,
            covariance_mode: self.isda.covariance_mode,
            total_steps,
        }
    }

    pub fn splits(&self) -> Result<Splits, CliError> {
        let seed = self.data.seed;
        let (train, test, validation) = match &self.data.source {
            DataSource::Synthetic(s) => {
                let spec = SyntheticSpec::anisotropic(&s.params, s.spec_seed)?;
                let (train, test) = generate_synthetic(&spec, seed)?;
                let validation = if s.validation_per_class > 0 {
                    let val_spec = SyntheticSpec {
                        train_per_class: s.validation_per_class,
                        test_per_class: 0,
                        ..spec
                    };
                    let (mut val, _) = generate_synthetic(&val_spec, derive_seed(seed, u64::MAX))?;
                    val.name = "synthetic-validation".into();
                    Some(val)
                } else {
                    None
                };
                (train, test, validation)
            }
            DataSource::Csv(c) => {
                let train = load_csv(&c.train)?;
                let mut test = load_csv(&c.test)?;
                test.num_classes = test.num_classes.max(train.num_classes);
                (train, test, None)
            }
        };
        let input_dim = self.model.layer_sizes[0];
        for d in [&train, &test] {
            if d.input_dim() != input_dim {
                return Err(CliError::Config(format!(
                    "dataset {} has {} features but layer_sizes starts with {input_dim}",
                    d.name,
                    d.input_dim()
                )));
            }
        }
        let (train, validation) = if self.data.validation_fraction > 0.0 {
            let (t, v) = split(&train, self.data.validation_fraction, seed)?;
            (t, Some(v))
        } else {
            (train, validation)
        };
        Ok(Splits {
            eval: validation.unwrap_or_else(|| test.clone()),
            train,
            test,
        })
    }

    pub fn setup(&self, splits: &Splits) -> ExperimentSetup {
        ExperimentSetup {
            layer_sizes: self.model.layer_sizes.clone(),
            train: splits.train.clone(),
            eval: splits.eval.clone(),
            optimizer: self.optimizer.clone(),
            isda: self.isda_config(1),
            options: TrainOptions {
                lambda_unit: self.isda.lambda_unit,
                cross_entropy_only: self.isda.cross_entropy_only,
            },
        }
    }
}
