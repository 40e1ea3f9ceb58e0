//! Minimal fully connected network engine: dense layers, optional batch
//! normalization, exact backpropagation, Adam, and versioned checkpoints.
//!
//! Everything runs in f64; gradients are checked against central finite
//! differences in the test suite, so the backward pass is treated as exact.

pub mod adam;
pub mod matrix;

pub use adam::{adam_step, AdamState};
pub use matrix::{matmul, matmul_nt, matmul_tn, Matrix};

use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply(&self, v: f64) -> f64 {
        match self {
            Activation::Identity => v,
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
        }
    }

    /// Derivative expressed through the activation's own output.
    fn derivative_from_output(&self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

/// Batch normalization over a feature column: `y = scale * (x - mean) /
/// sqrt(var + eps) + shift` with batch statistics in train mode and running
/// statistics at inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    fn new(dim: usize) -> Self {
        Self {
            scale: vec![1.0; dim],
            shift: vec![0.0; dim],
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            momentum: 0.9,
            eps: 1e-5,
        }
    }
}

/// A dense layer: affine map, optional batch norm, then the activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// (input_dim x output_dim)
    pub weights: Matrix,
    pub biases: Vec<f64>,
    pub batch_norm: Option<BatchNorm>,
    pub activation: Activation,
}

/// Specification of one layer for [`Network::new`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
    pub batch_norm: bool,
}

impl LayerSpec {
    pub fn new(input: usize, output: usize, activation: Activation) -> Self {
        Self {
            input,
            output,
            activation,
            batch_norm: false,
        }
    }

    pub fn with_batch_norm(mut self) -> Self {
        self.batch_norm = true;
        self
    }
}

#[derive(Debug, Clone)]
struct BnCache {
    mean: Vec<f64>,
    var: Vec<f64>,
    inv_std: Vec<f64>,
    x_hat: Matrix,
}

/// Intermediates of one layer's training-mode forward pass.
#[derive(Debug, Clone)]
pub struct LayerCache {
    input: Matrix,
    bn: Option<BnCache>,
    output: Matrix,
}

impl LayerCache {
    pub fn output(&self) -> &Matrix {
        &self.output
    }
}

/// Intermediates of a network forward pass in train mode.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub layers: Vec<LayerCache>,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        &self.layers.last().expect("non-empty network").output
    }
}

/// Parameter gradients for one layer, shapes mirroring [`Layer`].
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub d_weights: Matrix,
    pub d_biases: Vec<f64>,
    pub d_scale: Option<Vec<f64>>,
    pub d_shift: Option<Vec<f64>>,
}

/// Gradients for every parameter of a network, same ordering as
/// [`Network::param_slices_mut`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetGrads {
    pub layers: Vec<LayerGrads>,
}

impl NetGrads {
    pub fn zeros_like(net: &Network) -> Self {
        let layers = net
            .layers
            .iter()
            .map(|l| LayerGrads {
                d_weights: Matrix::zeros(l.weights.rows, l.weights.cols),
                d_biases: vec![0.0; l.biases.len()],
                d_scale: l.batch_norm.as_ref().map(|bn| vec![0.0; bn.scale.len()]),
                d_shift: l.batch_norm.as_ref().map(|bn| vec![0.0; bn.shift.len()]),
            })
            .collect();
        Self { layers }
    }

    /// Flattened gradient views in parameter order.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(l.d_weights.data.as_slice());
            out.push(l.d_biases.as_slice());
            if let Some(s) = &l.d_scale {
                out.push(s.as_slice());
            }
            if let Some(s) = &l.d_shift {
                out.push(s.as_slice());
            }
        }
        out
    }

    /// Adds the gradient of `lambda * sum(w^2)` over the weight matrices
    /// (biases and batch-norm parameters excluded).
    pub fn add_weight_decay(&mut self, net: &Network, lambda: f64) {
        for (g, l) in self.layers.iter_mut().zip(&net.layers) {
            for (dw, w) in g.d_weights.data.iter_mut().zip(&l.weights.data) {
                *dw += 2.0 * lambda * w;
            }
        }
    }

    pub fn accumulate(&mut self, other: &NetGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.d_weights.data.iter_mut().zip(&b.d_weights.data) {
                *x += y;
            }
            for (x, y) in a.d_biases.iter_mut().zip(&b.d_biases) {
                *x += y;
            }
            if let (Some(x), Some(y)) = (&mut a.d_scale, &b.d_scale) {
                for (p, q) in x.iter_mut().zip(y) {
                    *p += q;
                }
            }
            if let (Some(x), Some(y)) = (&mut a.d_shift, &b.d_shift) {
                for (p, q) in x.iter_mut().zip(y) {
                    *p += q;
                }
            }
        }
    }
}

/// Fully connected feed-forward network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<Layer>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NetworkCheckpoint {
    version: u32,
    network: Network,
}

impl Network {
    /// Builds a network from layer specs with seeded Kaiming-uniform weights
    /// (bound `sqrt(6 / fan_in)`) and zero biases.
    pub fn new(specs: &[LayerSpec], seed: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            if i > 0 {
                assert_eq!(
                    specs[i - 1].output,
                    spec.input,
                    "layer {i} input does not match previous output"
                );
            }
            let bound = (6.0 / spec.input as f64).sqrt();
            let mut weights = Matrix::zeros(spec.input, spec.output);
            for w in weights.data.iter_mut() {
                *w = rng.gen_range(-bound..=bound);
            }
            layers.push(Layer {
                weights,
                biases: vec![0.0; spec.output],
                batch_norm: spec.batch_norm.then(|| BatchNorm::new(spec.output)),
                activation: spec.activation,
            });
        }
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().expect("non-empty network").weights.rows
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty network").weights.cols
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| {
                l.weights.data.len()
                    + l.biases.len()
                    + l.batch_norm
                        .as_ref()
                        .map_or(0, |bn| bn.scale.len() + bn.shift.len())
            })
            .sum()
    }

    /// Inference-mode forward pass: pure, uses running batch-norm statistics.
    pub fn infer(&self, batch: &Matrix) -> Matrix {
        let mut x = batch.clone();
        for (idx, layer) in self.layers.iter().enumerate() {
            x = layer.infer(&x, idx);
        }
        x
    }

    /// Training-mode forward pass: batch statistics for batch norm, returns
    /// every intermediate needed by [`Network::backward`]. Does not touch the
    /// running statistics; apply [`Network::update_running_stats`] afterwards.
    pub fn forward_train(&self, batch: &Matrix) -> ForwardCache {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = batch.clone();
        for (idx, layer) in self.layers.iter().enumerate() {
            let cache = layer.forward_train(&x, idx);
            x = cache.output.clone();
            caches.push(cache);
        }
        ForwardCache { layers: caches }
    }

    /// Folds the batch statistics of a cached forward pass into the running
    /// batch-norm statistics.
    pub fn update_running_stats(&mut self, cache: &ForwardCache) {
        for (layer, lc) in self.layers.iter_mut().zip(&cache.layers) {
            if let (Some(bn), Some(bc)) = (layer.batch_norm.as_mut(), lc.bn.as_ref()) {
                let m = bn.momentum;
                for ((rm, rv), (bm, bv)) in bn
                    .running_mean
                    .iter_mut()
                    .zip(bn.running_var.iter_mut())
                    .zip(bc.mean.iter().zip(&bc.var))
                {
                    *rm = m * *rm + (1.0 - m) * bm;
                    *rv = m * *rv + (1.0 - m) * bv;
                }
            }
        }
    }

    /// Sets the running batch-norm statistics directly to the batch
    /// statistics of one input. For an input that never varies (a fixed
    /// scene grid) these are the stationary values, making inference agree
    /// with train mode from the first epoch instead of after many momentum
    /// updates.
    pub fn converge_running_stats(&mut self, input: &Matrix) {
        let cache = self.forward_train(input);
        for (layer, lc) in self.layers.iter_mut().zip(&cache.layers) {
            if let (Some(bn), Some(bc)) = (layer.batch_norm.as_mut(), lc.bn.as_ref()) {
                bn.running_mean.copy_from_slice(&bc.mean);
                bn.running_var.copy_from_slice(&bc.var);
            }
        }
    }

    /// Exact gradients of the scalar loss whose output gradient is supplied.
    /// Returns parameter gradients and the gradient with respect to the input
    /// batch.
    pub fn backward(&self, cache: &ForwardCache, output_gradient: &Matrix) -> (NetGrads, Matrix) {
        let mut grads: Vec<LayerGrads> = Vec::with_capacity(self.layers.len());
        let mut g = output_gradient.clone();
        for (layer, lc) in self.layers.iter().zip(&cache.layers).rev() {
            let (lg, gin) = layer.backward(lc, &g);
            grads.push(lg);
            g = gin;
        }
        grads.reverse();
        (NetGrads { layers: grads }, g)
    }

    /// Mutable views of every parameter, in checkpoint order: per layer the
    /// weights, biases, then batch-norm scale and shift when present.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for layer in self.layers.iter_mut() {
            out.push(layer.weights.data.as_mut_slice());
            out.push(layer.biases.as_mut_slice());
            if let Some(bn) = layer.batch_norm.as_mut() {
                out.push(bn.scale.as_mut_slice());
                out.push(bn.shift.as_mut_slice());
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let doc = NetworkCheckpoint {
            version: CHECKPOINT_VERSION,
            network: self.clone(),
        };
        std::fs::write(path, serde_json::to_string(&doc)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Network> {
        let doc: NetworkCheckpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if doc.version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                found: doc.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        Ok(doc.network)
    }
}

impl Layer {
    fn affine(&self, x: &Matrix, layer_idx: usize) -> Matrix {
        assert_eq!(
            x.cols, self.weights.rows,
            "layer {layer_idx}: input width {} does not match weight rows {}",
            x.cols, self.weights.rows
        );
        let mut z = matmul(x, &self.weights);
        for i in 0..z.rows {
            for (v, b) in z.row_mut(i).iter_mut().zip(&self.biases) {
                *v += b;
            }
        }
        z
    }

    fn infer(&self, x: &Matrix, layer_idx: usize) -> Matrix {
        let mut z = self.affine(x, layer_idx);
        if let Some(bn) = &self.batch_norm {
            for i in 0..z.rows {
                let row = z.row_mut(i);
                for (j, v) in row.iter_mut().enumerate() {
                    let inv = 1.0 / (bn.running_var[j] + bn.eps).sqrt();
                    *v = bn.scale[j] * (*v - bn.running_mean[j]) * inv + bn.shift[j];
                }
            }
        }
        z.map(|v| self.activation.apply(v))
    }

    /// Forward in train mode; public so composite models (residual trunks)
    /// can assemble their own passes from layers.
    pub fn forward_train(&self, x: &Matrix, layer_idx: usize) -> LayerCache {
        let z = self.affine(x, layer_idx);
        let (u, bn_cache) = match &self.batch_norm {
            None => (z, None),
            Some(bn) => {
                let m = z.rows as f64;
                let mean = z.column_means();
                let mut var = vec![0.0; z.cols];
                for i in 0..z.rows {
                    for (j, v) in z.row(i).iter().enumerate() {
                        let d = v - mean[j];
                        var[j] += d * d;
                    }
                }
                var.iter_mut().for_each(|v| *v /= m);
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + bn.eps).sqrt()).collect();
                let mut x_hat = Matrix::zeros(z.rows, z.cols);
                let mut u = Matrix::zeros(z.rows, z.cols);
                for i in 0..z.rows {
                    for j in 0..z.cols {
                        let h = (z.get(i, j) - mean[j]) * inv_std[j];
                        x_hat.set(i, j, h);
                        u.set(i, j, bn.scale[j] * h + bn.shift[j]);
                    }
                }
                (
                    u,
                    Some(BnCache {
                        mean,
                        var,
                        inv_std,
                        x_hat,
                    }),
                )
            }
        };
        let output = u.map(|v| self.activation.apply(v));
        LayerCache {
            input: x.clone(),
            bn: bn_cache,
            output,
        }
    }

    /// Backward through activation, batch norm, and the affine map.
    pub fn backward(&self, cache: &LayerCache, grad_out: &Matrix) -> (LayerGrads, Matrix) {
        // Through the activation, using its output form of the derivative.
        let mut du = Matrix::zeros(grad_out.rows, grad_out.cols);
        for i in 0..grad_out.rows {
            for j in 0..grad_out.cols {
                let dy = grad_out.get(i, j);
                let y = cache.output.get(i, j);
                du.set(i, j, dy * self.activation.derivative_from_output(y));
            }
        }

        // Through batch norm when present.
        let (dz, d_scale, d_shift) = match (&self.batch_norm, &cache.bn) {
            (Some(bn), Some(bc)) => {
                let m = du.rows as f64;
                let mut d_scale = vec![0.0; du.cols];
                let mut d_shift = vec![0.0; du.cols];
                let mut sum_dxhat = vec![0.0; du.cols];
                let mut sum_dxhat_xhat = vec![0.0; du.cols];
                for i in 0..du.rows {
                    for j in 0..du.cols {
                        let g = du.get(i, j);
                        let h = bc.x_hat.get(i, j);
                        d_scale[j] += g * h;
                        d_shift[j] += g;
                        let dxh = g * bn.scale[j];
                        sum_dxhat[j] += dxh;
                        sum_dxhat_xhat[j] += dxh * h;
                    }
                }
                let mut dz = Matrix::zeros(du.rows, du.cols);
                for i in 0..du.rows {
                    for j in 0..du.cols {
                        let dxh = du.get(i, j) * bn.scale[j];
                        let h = bc.x_hat.get(i, j);
                        let v = (bc.inv_std[j] / m)
                            * (m * dxh - sum_dxhat[j] - h * sum_dxhat_xhat[j]);
                        dz.set(i, j, v);
                    }
                }
                (dz, Some(d_scale), Some(d_shift))
            }
            _ => (du, None, None),
        };

        let d_weights = matmul_tn(&cache.input, &dz);
        let d_biases = dz.column_sums();
        let d_input = matmul_nt(&dz, &self.weights);
        (
            LayerGrads {
                d_weights,
                d_biases,
                d_scale,
                d_shift,
            },
            d_input,
        )
    }
}

/// Mean squared error over every entry of the two matrices.
pub fn mse(pred: &Matrix, target: &Matrix) -> f64 {
    assert_eq!(pred.rows, target.rows);
    assert_eq!(pred.cols, target.cols);
    let n = (pred.rows * pred.cols) as f64;
    pred.data
        .iter()
        .zip(&target.data)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n
}

/// Gradient of [`mse`] with respect to the predictions.
pub fn mse_gradient(pred: &Matrix, target: &Matrix) -> Matrix {
    let n = (pred.rows * pred.cols) as f64;
    let mut g = Matrix::zeros(pred.rows, pred.cols);
    for (gv, (p, t)) in g.data.iter_mut().zip(pred.data.iter().zip(&target.data)) {
        *gv = 2.0 * (p - t) / n;
    }
    g
}
