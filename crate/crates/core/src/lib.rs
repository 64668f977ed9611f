//! Implicit semantic data augmentation (ISDA) for desk-scale classifiers.
//!
//! Deep features are augmented along class-conditional covariance directions
//! without sampling: the expected cross-entropy under Gaussian feature noise
//! is replaced by a closed-form upper bound that acts as a robust loss.
//!
//! - [`linalg`]: dense vectors, symmetric matrices, multivariate normal draws
//! - [`stats`]: streaming per-class means and covariances
//! - [`loss`]: the augmented loss, its gradients and the λ schedule
//! - [`oracle`]: Monte-Carlo and finite-difference checks of [`loss`]
//! - [`model`]: a small ReLU network producing the features
//! - [`data`]: synthetic and CSV datasets with stratified splits
//! - [`trainer`]: SGD training loop, evaluation and λ₀ sweeps

pub mod batch;
pub mod data;
pub mod error;
pub mod linalg;
pub mod loss;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod stats;
pub mod trainer;

pub use batch::FeatureBatch;
pub use error::{IsdaError, Result};
pub use linalg::{Matrix, SymMatrix};
pub use loss::{ClassifierHead, IsdaConfig, LambdaSchedule, LossResult};
pub use stats::{ClassStatistics, CovarianceMode, StatisticsTable};
