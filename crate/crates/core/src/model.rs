//! Feed-forward feature extractor with ReLU hidden layers and a linear
//! feature output, plus exact backpropagation.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, contract, Result};
use crate::linalg::{all_finite, axpy, dot, Matrix};
use crate::rng::seeded_rng;

/// Affine layer `y = W x + b` with `W` stored as `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weights: Matrix::zeros(output, input),
            bias: vec![0.0; output],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.rows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpNetwork {
    layers: Vec<DenseLayer>,
}

/// Values retained by [`MlpNetwork::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `inputs[l]` is the input of layer `l`.
    inputs: Vec<Matrix>,
    /// Pre-activation outputs of every layer.
    pre_activations: Vec<Matrix>,
}

impl ForwardTrace {
    pub fn batch_size(&self) -> usize {
        self.inputs.first().map_or(0, Matrix::rows)
    }
}

pub type MlpGradients = Vec<DenseLayer>;

/// Builds a network with layer sizes `[d_in, h_1, …, h_L, A]`. Weights are
/// drawn from `N(0, 1/fan_in)`; biases start at zero.
pub fn init_network(sizes: &[usize], seed: u64) -> Result<MlpNetwork> {
    contract(sizes.len() >= 2, || format!("need at least input and output sizes, got {sizes:?}"))?;
    contract(sizes.iter().all(|&s| s > 0), || format!("layer sizes must be positive, got {sizes:?}"))?;
    let mut rng = seeded_rng(seed);
    let layers = sizes
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let scale = 1.0 / (fan_in as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            Ok(DenseLayer {
                weights: Matrix::from_vec(fan_out, fan_in, data)?,
                bias: vec![0.0; fan_out],
            })
        })
        .collect::<Result<_>>()?;
    Ok(MlpNetwork { layers })
}

impl MlpNetwork {
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        contract(!layers.is_empty(), || "network needs at least one layer".into())?;
        for pair in layers.windows(2) {
            check_dim("layer chaining", pair[0].output_dim(), pair[1].input_dim())?;
        }
        for l in &layers {
            check_dim("layer bias", l.output_dim(), l.bias.len())?;
            contract(all_finite(l.weights.as_slice()) && all_finite(&l.bias), || {
                "network has non-finite parameters".into()
            })?;
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(DenseLayer::output_dim));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.layers.last().map_or(0, DenseLayer::output_dim)
    }

    /// Features for each input row, with the trace needed by [`Self::backward`].
    pub fn forward(&self, inputs: &Matrix) -> Result<(Matrix, ForwardTrace)> {
        check_dim("MlpNetwork::forward", self.input_dim(), inputs.cols())?;
        let last = self.layers.len() - 1;
        let mut trace = ForwardTrace {
            inputs: Vec::with_capacity(self.layers.len()),
            pre_activations: Vec::with_capacity(self.layers.len()),
        };
        let mut current = inputs.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut pre = Matrix::zeros(current.rows(), layer.output_dim());
            for (i, x) in current.iter_rows().enumerate() {
                for (o, out) in pre.row_mut(i).iter_mut().enumerate() {
                    *out = dot(layer.weights.row(o), x) + layer.bias[o];
                }
            }
            let mut act = pre.clone();
            if l != last {
                act.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
            }
            trace.inputs.push(current);
            trace.pre_activations.push(pre);
            current = act;
        }
        Ok((current, trace))
    }

    /// Features only.
    pub fn features(&self, inputs: &Matrix) -> Result<Matrix> {
        Ok(self.forward(inputs)?.0)
    }

    /// Parameter gradients given the loss gradient at the features.
    pub fn backward(&self, trace: &ForwardTrace, grad_features: &Matrix) -> Result<MlpGradients> {
        check_dim("backward trace depth", self.layers.len(), trace.inputs.len())?;
        check_dim("backward batch size", trace.batch_size(), grad_features.rows())?;
        check_dim("backward feature dim", self.feature_dim(), grad_features.cols())?;
        for (layer, (x, pre)) in self.layers.iter().zip(trace.inputs.iter().zip(&trace.pre_activations)) {
            check_dim("backward trace input", layer.input_dim(), x.cols())?;
            check_dim("backward trace output", layer.output_dim(), pre.cols())?;
        }

        let last = self.layers.len() - 1;
        let mut grads: MlpGradients = self
            .layers
            .iter()
            .map(|l| DenseLayer::zeros(l.input_dim(), l.output_dim()))
            .collect();
        // gradient w.r.t. the output of layer l (post-activation)
        let mut upstream = grad_features.clone();
        for l in (0..=last).rev() {
            let layer = &self.layers[l];
            let mut delta = upstream;
            if l != last {
                for (d, &z) in delta.as_mut_slice().iter_mut().zip(trace.pre_activations[l].as_slice()) {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let x = &trace.inputs[l];
            let g = &mut grads[l];
            for (i, d_row) in delta.iter_rows().enumerate() {
                let x_row = x.row(i);
                for (o, &d) in d_row.iter().enumerate() {
                    g.bias[o] += d;
                    axpy(d, x_row, g.weights.row_mut(o));
                }
            }
            upstream = Matrix::zeros(delta.rows(), layer.input_dim());
            if l > 0 {
                for (i, d_row) in delta.iter_rows().enumerate() {
                    let out = layer.weights.matvec_transposed(d_row)?;
                    upstream.row_mut(i).copy_from_slice(&out);
                }
            }
        }
        Ok(grads)
    }
}
