//! Binary checkpoints.
//!
//! A checkpoint is one line of JSON (the header) terminated by `\n`, followed
//! by little-endian `f64` values (counts are `u64`) in this order:
//!
//! 1. each network layer in turn: weights row-major (`out × in`), then bias;
//! 2. the head: weights row-major (`C × A`), then bias;
//! 3. each class in turn: count (`u64`), mean (`A`), covariance row-major (`A × A`).

use std::path::Path;

use isda_core::linalg::{Matrix, SymMatrix};
use isda_core::model::{DenseLayer, MlpNetwork};
use isda_core::stats::ClassStatistics;
use isda_core::{ClassifierHead, StatisticsTable};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub config_hash: String,
    pub step: u64,
    pub layer_sizes: Vec<usize>,
    pub num_classes: usize,
    pub feature_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub net: MlpNetwork,
    pub head: ClassifierHead,
    pub stats: StatisticsTable,
}

impl Checkpoint {
    pub fn new(config_hash: &str, step: u64, net: &MlpNetwork, head: &ClassifierHead, stats: &StatisticsTable) -> Self {
        Self {
            header: CheckpointHeader {
                format_version: FORMAT_VERSION,
                config_hash: config_hash.to_string(),
                step,
                layer_sizes: net.sizes(),
                num_classes: head.num_classes(),
                feature_dim: head.feature_dim(),
            },
            net: net.clone(),
            head: head.clone(),
            stats: stats.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec(&self.header).expect("header serializes");
        out.push(b'\n');
        let mut put = |values: &[f64]| values.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        for layer in self.net.layers() {
            put(layer.weights.as_slice());
            put(&layer.bias);
        }
        put(self.head.weights().as_slice());
        put(self.head.bias());
        for class in self.stats.classes() {
            out.extend_from_slice(&class.count.to_le_bytes());
            out.extend(class.mean.iter().chain(class.cov.as_slice()).flat_map(|v| v.to_le_bytes()));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CliError> {
        let bad = |msg: String| CliError::Checkpoint(msg);
        let newline = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing header line".into()))?;
        let header: CheckpointHeader =
            serde_json::from_slice(&bytes[..newline]).map_err(|e| bad(format!("bad header: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {}", header.format_version)));
        }
        let sizes = &header.layer_sizes;
        if sizes.len() < 2 || sizes.last() != Some(&header.feature_dim) || header.num_classes < 2 {
            return Err(bad(format!("inconsistent shapes in header {header:?}")));
        }
        let (c, a) = (header.num_classes, header.feature_dim);
        let expected: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum::<usize>()
            + c * a
            + c
            + c * (1 + a + a * a);
        let payload = &bytes[newline + 1..];
        if payload.len() != 8 * expected {
            return Err(bad(format!("payload has {} bytes, expected {}", payload.len(), 8 * expected)));
        }
        let mut words = payload.chunks_exact(8).map(|c| <[u8; 8]>::try_from(c).expect("8 bytes"));
        let mut take = |n: usize| -> Vec<f64> { words.by_ref().take(n).map(f64::from_le_bytes).collect() };

        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for w in sizes.windows(2) {
            let weights = Matrix::from_vec(w[1], w[0], take(w[0] * w[1]))?;
            layers.push(DenseLayer { weights, bias: take(w[1]) });
        }
        let net = MlpNetwork::from_layers(layers)?;
        let head = ClassifierHead::new(Matrix::from_vec(c, a, take(c * a))?, take(c))?;
        let mut classes = Vec::with_capacity(c);
        for class_id in 0..c {
            let count = take(1)[0].to_bits();
            let mean = take(a);
            let cov = SymMatrix::from_row_major(a, take(a * a))?;
            classes.push(ClassStatistics { class_id, count, mean, cov });
        }
        Ok(Self {
            header,
            net,
            head,
            stats: StatisticsTable::from_classes(classes)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.to_bytes()).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
