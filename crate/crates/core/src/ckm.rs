//! Channel-knowledge-map predictors: a residual fully connected trunk over
//! (positions, environment features), in three variants.
//!
//! * plain: learns the loss purely from data.
//! * knowledge-featured (KF): the analytic loss joins the input features.
//! * knowledge-driven (KD): the trunk output is a residual added to the
//!   analytic loss, so a zero trunk reproduces the analytic model exactly.

use crate::channel::{expected_loss_db, ChannelParams};
use crate::dataset::{Dataset, NormStats, Sample};
use crate::error::{Error, Result};
use crate::geometry::{HeightGrid, Position};
use crate::nn::{
    adam_step, mse_gradient, AdamState, Activation, Layer, LayerCache, LayerGrads, LayerSpec,
    Matrix, Network,
};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

const CKM_CHECKPOINT_VERSION: u32 = 1;
/// Gain column index in the eight-feature sample layout.
const GAIN: usize = 7;
const POSITION_FEATURES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CkmVariant {
    Plain,
    KnowledgeFeatured,
    KnowledgeDriven,
}

impl CkmVariant {
    pub fn label(&self) -> &'static str {
        match self {
            CkmVariant::Plain => "ckm",
            CkmVariant::KnowledgeFeatured => "kf-ckm",
            CkmVariant::KnowledgeDriven => "kd-ckm",
        }
    }
}

/// Architecture knobs shared by the three variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CkmDims {
    /// Number of height-grid cells fed to the encoder.
    pub grid_input: usize,
    /// Encoder widths; each dense layer is followed by batch normalization.
    /// The last width is the environment feature dimension.
    pub encoder_hidden: Vec<usize>,
    /// Residual block widths of the trunk.
    pub trunk_sizes: Vec<usize>,
    /// Heights are divided by this scale before entering the encoder.
    pub grid_scale: f64,
}

impl Default for CkmDims {
    fn default() -> Self {
        Self {
            grid_input: 400,
            encoder_hidden: vec![256, 64],
            trunk_sizes: vec![512, 256, 128, 64],
            grid_scale: 250.0,
        }
    }
}

impl CkmDims {
    pub fn encoder_output(&self) -> usize {
        *self.encoder_hidden.last().expect("encoder has layers")
    }

    /// Compact dimensions for quick experiments and tests.
    pub fn small(grid_input: usize) -> Self {
        Self {
            grid_input,
            encoder_hidden: vec![64, 16],
            trunk_sizes: vec![128, 64],
            grid_scale: 250.0,
        }
    }
}

/// Two dense layers with a skip connection; a linear projection aligns the
/// skip when the width changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResBlock {
    entry: Layer,
    inner: Layer,
    projection: Option<Layer>,
}

struct BlockCache {
    entry: LayerCache,
    inner: LayerCache,
    projection: Option<LayerCache>,
    output: Matrix,
}

struct BlockGrads {
    entry: LayerGrads,
    inner: LayerGrads,
    projection: Option<LayerGrads>,
}

impl ResBlock {
    fn new(input: usize, output: usize, rng: &mut ChaCha12Rng) -> Self {
        let make = |spec: LayerSpec, rng: &mut ChaCha12Rng| {
            Network::new(&[spec], rng.gen()).layers.remove(0)
        };
        Self {
            entry: make(LayerSpec::new(input, output, Activation::Relu), rng),
            inner: make(LayerSpec::new(output, output, Activation::Identity), rng),
            projection: (input != output)
                .then(|| make(LayerSpec::new(input, output, Activation::Identity), rng)),
        }
    }

    fn infer(&self, x: &Matrix) -> Matrix {
        let h = self.inner.forward_train(&self.entry.forward_train(x, 0).output().clone(), 0);
        let skip = match &self.projection {
            Some(p) => p.forward_train(x, 0).output().clone(),
            None => x.clone(),
        };
        let mut out = h.output().clone();
        for (o, s) in out.data.iter_mut().zip(&skip.data) {
            *o = (*o + s).max(0.0);
        }
        out
    }

    fn forward_train(&self, x: &Matrix) -> BlockCache {
        let entry = self.entry.forward_train(x, 0);
        let inner = self.inner.forward_train(entry.output(), 0);
        let projection = self.projection.as_ref().map(|p| p.forward_train(x, 0));
        let skip = match &projection {
            Some(c) => c.output(),
            None => x,
        };
        let mut output = inner.output().clone();
        for (o, s) in output.data.iter_mut().zip(&skip.data) {
            *o = (*o + s).max(0.0);
        }
        BlockCache {
            entry,
            inner,
            projection,
            output,
        }
    }

    fn backward(&self, cache: &BlockCache, grad_out: &Matrix) -> (BlockGrads, Matrix) {
        // Through the closing ReLU.
        let mut d_sum = grad_out.clone();
        for (g, y) in d_sum.data.iter_mut().zip(&cache.output.data) {
            if *y <= 0.0 {
                *g = 0.0;
            }
        }
        let (inner_grads, d_entry_out) = self.inner.backward(&cache.inner, &d_sum);
        let (entry_grads, mut d_input) = self.entry.backward(&cache.entry, &d_entry_out);
        let projection = match (&self.projection, &cache.projection) {
            (Some(p), Some(c)) => {
                let (pg, d_skip) = p.backward(c, &d_sum);
                for (a, b) in d_input.data.iter_mut().zip(&d_skip.data) {
                    *a += b;
                }
                Some(pg)
            }
            _ => {
                for (a, b) in d_input.data.iter_mut().zip(&d_sum.data) {
                    *a += b;
                }
                None
            }
        };
        (
            BlockGrads {
                entry: entry_grads,
                inner: inner_grads,
                projection,
            },
            d_input,
        )
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        out.push(self.entry.weights.data.as_mut_slice());
        out.push(self.entry.biases.as_mut_slice());
        out.push(self.inner.weights.data.as_mut_slice());
        out.push(self.inner.biases.as_mut_slice());
        if let Some(p) = self.projection.as_mut() {
            out.push(p.weights.data.as_mut_slice());
            out.push(p.biases.as_mut_slice());
        }
        out
    }

    fn param_count(&self) -> usize {
        let count = |l: &Layer| l.weights.data.len() + l.biases.len();
        count(&self.entry)
            + count(&self.inner)
            + self.projection.as_ref().map_or(0, count)
    }

    fn zero_params(&mut self) {
        for s in self.param_slices_mut() {
            s.fill(0.0);
        }
    }
}

/// A trained (or trainable) channel-knowledge map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CkmModel {
    pub variant: CkmVariant,
    pub encoder: Network,
    pub blocks: Vec<ResBlock>,
    pub head: Layer,
    pub channel_params: ChannelParams,
    /// Normalization of the training data; required before predicting.
    pub stats: Option<NormStats>,
    pub dims: CkmDims,
}

#[derive(Debug, Serialize, Deserialize)]
struct CkmCheckpoint {
    version: u32,
    model: CkmModel,
}

/// Builds an untrained model. The trunk input is the six normalized
/// coordinates, plus the analytic-loss feature for the KF variant, plus the
/// encoder output.
pub fn build_ckm(
    variant: CkmVariant,
    dims: &CkmDims,
    params: &ChannelParams,
    seed: u64,
) -> CkmModel {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut encoder_specs = Vec::new();
    let mut prev = dims.grid_input;
    for &h in &dims.encoder_hidden {
        encoder_specs.push(LayerSpec::new(prev, h, Activation::Identity).with_batch_norm());
        prev = h;
    }
    let encoder = Network::new(&encoder_specs, rng.gen());

    let mut blocks = Vec::with_capacity(dims.trunk_sizes.len());
    let mut width = trunk_input_dim(variant, dims);
    for &size in &dims.trunk_sizes {
        blocks.push(ResBlock::new(width, size, &mut rng));
        width = size;
    }
    let mut head = Network::new(&[LayerSpec::new(width, 1, Activation::Identity)], rng.gen())
        .layers
        .remove(0);
    // The knowledge-driven model opens exactly at the analytic prior: a zero
    // head makes the initial residual zero, so early epochs refine the prior
    // instead of unlearning a random offset.
    if matches!(variant, CkmVariant::KnowledgeDriven) {
        head.weights.data.fill(0.0);
    }

    CkmModel {
        variant,
        encoder,
        blocks,
        head,
        channel_params: *params,
        stats: None,
        dims: dims.clone(),
    }
}

fn trunk_input_dim(variant: CkmVariant, dims: &CkmDims) -> usize {
    let kf = matches!(variant, CkmVariant::KnowledgeFeatured) as usize;
    POSITION_FEATURES + kf + dims.encoder_output()
}

/// Height grid flattened and rescaled for the encoder.
pub fn grid_features(grid: &HeightGrid, scale: f64) -> Matrix {
    let data = grid.cell_heights.iter().map(|h| h / scale).collect();
    Matrix::from_vec(1, grid.len(), data)
}

/// Runs the encoder on a rasterized environment (inference mode).
pub fn encode_environment(grid: &HeightGrid, encoder: &Network, scale: f64) -> Vec<f64> {
    encoder.infer(&grid_features(grid, scale)).data
}

/// The analytic loss of a sample's geometry, the "knowledge" of the KF/KD
/// variants. Delegates to the channel model.
pub fn knowledge_loss_db(sample: &Sample, params: &ChannelParams) -> f64 {
    expected_loss_db(&sample.uav, &sample.gu, params)
}

impl CkmModel {
    pub fn param_count(&self) -> usize {
        self.encoder.param_count()
            + self.blocks.iter().map(ResBlock::param_count).sum::<usize>()
            + self.head.weights.data.len()
            + self.head.biases.len()
    }

    /// Zeroes the trunk and head; a KD model then reproduces the analytic
    /// loss exactly.
    pub fn zero_trunk(&mut self) {
        for b in &mut self.blocks {
            b.zero_params();
        }
        self.head.weights.data.fill(0.0);
        self.head.biases.fill(0.0);
    }

    pub fn encode(&self, grid: &HeightGrid) -> Vec<f64> {
        encode_environment(grid, &self.encoder, self.dims.grid_scale)
    }

    fn stats(&self) -> Result<&NormStats> {
        self.stats
            .as_ref()
            .ok_or_else(|| Error::Config("model has no normalization stats".into()))
    }

    /// Normalized analytic gain for a normalized sample row.
    fn knowledge_normalized(&self, row: &Sample, stats: &NormStats) -> f64 {
        let gu = Position::new(
            stats.denormalize_value(0, row.gu.x),
            stats.denormalize_value(1, row.gu.y),
            stats.denormalize_value(2, row.gu.z),
        );
        let uav = Position::new(
            stats.denormalize_value(3, row.uav.x),
            stats.denormalize_value(4, row.uav.y),
            stats.denormalize_value(5, row.uav.z),
        );
        let gain = -expected_loss_db(&uav, &gu, &self.channel_params);
        stats.normalize_value(GAIN, gain)
    }

    /// Assembles the trunk input matrix for normalized rows against a fixed
    /// environment encoding, plus the knowledge column used by KD.
    fn trunk_inputs(
        &self,
        rows: &[Sample],
        enc: &[f64],
        stats: &NormStats,
    ) -> (Matrix, Vec<f64>) {
        let dim = trunk_input_dim(self.variant, &self.dims);
        let knowledge: Vec<f64> = if matches!(
            self.variant,
            CkmVariant::KnowledgeFeatured | CkmVariant::KnowledgeDriven
        ) {
            rows.iter()
                .map(|r| self.knowledge_normalized(r, stats))
                .collect()
        } else {
            Vec::new()
        };
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.iter().enumerate() {
            let f = row.features();
            data.extend_from_slice(&f[..POSITION_FEATURES]);
            if matches!(self.variant, CkmVariant::KnowledgeFeatured) {
                data.push(knowledge[i]);
            }
            data.extend_from_slice(enc);
        }
        (Matrix::from_vec(rows.len(), dim, data), knowledge)
    }

    fn trunk_infer(&self, x: &Matrix) -> Matrix {
        let mut h = x.clone();
        for b in &self.blocks {
            h = b.infer(&h);
        }
        self.head.forward_train(&h, 0).output().clone()
    }

    /// Normalized-gain predictions for normalized rows (inference mode).
    pub fn predict_normalized(&self, rows: &[Sample], grid: &HeightGrid) -> Result<Vec<f64>> {
        let stats = self.stats()?.clone();
        let enc = self.encode(grid);
        let (x, knowledge) = self.trunk_inputs(rows, &enc, &stats);
        let out = self.trunk_infer(&x);
        let mut preds: Vec<f64> = out.data;
        if matches!(self.variant, CkmVariant::KnowledgeDriven) {
            for (p, k) in preds.iter_mut().zip(&knowledge) {
                *p += k;
            }
        }
        Ok(preds)
    }

    /// Loss prediction in dB for a raw-coordinate query; `enc` is the cached
    /// output of [`CkmModel::encode`] for the scene.
    pub fn predict_loss_db(&self, uav: &Position, gu: &Position, enc: &[f64]) -> Result<f64> {
        let stats = self.stats()?;
        let row = Sample {
            gu: Position::new(
                stats.normalize_value(0, gu.x),
                stats.normalize_value(1, gu.y),
                stats.normalize_value(2, gu.z),
            ),
            uav: Position::new(
                stats.normalize_value(3, uav.x),
                stats.normalize_value(4, uav.y),
                stats.normalize_value(5, uav.z),
            ),
            distance: 0.0,
            gain_db: 0.0,
        };
        let (x, knowledge) = self.trunk_inputs(std::slice::from_ref(&row), enc, stats);
        let mut pred = self.trunk_infer(&x).data[0];
        if matches!(self.variant, CkmVariant::KnowledgeDriven) {
            pred += knowledge[0];
        }
        Ok(-stats.denormalize_value(GAIN, pred))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let doc = CkmCheckpoint {
            version: CKM_CHECKPOINT_VERSION,
            model: self.clone(),
        };
        std::fs::write(path, serde_json::to_string(&doc)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<CkmModel> {
        let doc: CkmCheckpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if doc.version != CKM_CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                found: doc.version,
                expected: CKM_CHECKPOINT_VERSION,
            });
        }
        Ok(doc.model)
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.encoder.param_slices_mut();
        for b in &mut self.blocks {
            out.extend(b.param_slices_mut());
        }
        out.push(self.head.weights.data.as_mut_slice());
        out.push(self.head.biases.as_mut_slice());
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CkmTrainConfig {
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Epochs without improvement before the learning rate halves.
    pub lr_patience: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// L2 weight decay on the dense weights.
    pub l2: f64,
    /// Global-norm gradient clip; keeps rare steep minibatches from blowing
    /// up the residual trunk.
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for CkmTrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 500,
            patience: 10,
            lr_patience: 5,
            batch_size: 128,
            lr: 1e-3,
            l2: 1e-4,
            grad_clip: 5.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CkmEpochStats {
    pub epoch: usize,
    /// Normalized-scale training MSE.
    pub train_mse: f64,
    /// Normalized-scale validation MSE.
    pub val_mse: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct CkmTrainOutcome {
    pub model: CkmModel,
    pub history: Vec<CkmEpochStats>,
    pub best_val_mse: f64,
    pub stopped_early: bool,
    /// Training hit a non-finite loss and returned the last good weights.
    pub aborted_on_nan: bool,
}

/// Trains a model on normalized data with early stopping on validation MSE;
/// the best-epoch weights are restored on exit.
pub fn train_ckm(
    model: CkmModel,
    train: &Dataset,
    val: &Dataset,
    grid: &HeightGrid,
    cfg: &CkmTrainConfig,
) -> Result<CkmTrainOutcome> {
    if cfg.patience >= cfg.max_epochs {
        return Err(Error::Config("patience must be below max_epochs".into()));
    }
    if !train.normalized || !val.normalized {
        return Err(Error::Config("CKM training data must be normalized".into()));
    }
    if train.stats != val.stats {
        return Err(Error::Config(
            "train and validation must share normalization stats".into(),
        ));
    }
    let stats = train
        .stats
        .clone()
        .ok_or_else(|| Error::Config("normalized dataset lost its stats".into()))?;

    let mut model = model;
    model.stats = Some(stats.clone());
    let enc_input = grid_features(grid, model.dims.grid_scale);
    // The grid is constant for the whole run; pin the encoder's running
    // statistics to their stationary values so validation (inference mode)
    // sees the same environment features as training from epoch one.
    model.encoder.converge_running_stats(&enc_input);

    // Knowledge columns and targets are fixed; precompute them.
    let enc_probe = model.encode(grid);
    let (_, train_knowledge) = model.trunk_inputs(&train.rows, &enc_probe, &stats);
    let targets: Vec<f64> = train.rows.iter().map(|r| r.gain_db).collect();

    let mut opt = AdamState::new(cfg.lr);
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, CkmModel)> = None;
    let mut since_best = 0usize;
    let mut since_lr_drop = 0usize;
    let mut aborted = false;

    'epochs: for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let rows: Vec<Sample> = chunk.iter().map(|&i| train.rows[i]).collect();
            let y = Matrix::from_vec(rows.len(), 1, chunk.iter().map(|&i| targets[i]).collect());

            // Environment encoding in train mode (batch statistics).
            let enc_cache = model.encoder.forward_train(&enc_input);
            let enc_out = enc_cache.output().data.clone();

            let dim = trunk_input_dim(model.variant, &model.dims);
            let mut data = Vec::with_capacity(rows.len() * dim);
            for (&idx, row) in chunk.iter().zip(&rows) {
                let f = row.features();
                data.extend_from_slice(&f[..POSITION_FEATURES]);
                if matches!(model.variant, CkmVariant::KnowledgeFeatured) {
                    data.push(train_knowledge[idx]);
                }
                data.extend_from_slice(&enc_out);
            }
            let x = Matrix::from_vec(rows.len(), dim, data);

            // Forward through the residual trunk and head.
            let mut block_caches = Vec::with_capacity(model.blocks.len());
            let mut h = x.clone();
            for b in &model.blocks {
                let c = b.forward_train(&h);
                h = c.output.clone();
                block_caches.push(c);
            }
            let head_cache = model.head.forward_train(&h, 0);
            let mut pred = head_cache.output().clone();
            if matches!(model.variant, CkmVariant::KnowledgeDriven) {
                for (p, &idx) in pred.data.iter_mut().zip(chunk) {
                    *p += train_knowledge[idx];
                }
            }
            let loss = crate::nn::mse(&pred, &y);
            if !loss.is_finite() {
                aborted = true;
                break 'epochs;
            }
            epoch_loss += loss;
            batches += 1;

            // Backward: head -> blocks -> encoder columns.
            let dl = mse_gradient(&pred, &y);
            let (head_grads, mut g) = model.head.backward(&head_cache, &dl);
            let mut block_grads = Vec::with_capacity(model.blocks.len());
            for (b, c) in model.blocks.iter().zip(&block_caches).rev() {
                let (bg, gin) = b.backward(c, &g);
                block_grads.push(bg);
                g = gin;
            }
            block_grads.reverse();

            // The encoder saw one (broadcast) row; its output gradient is the
            // column sum over the batch of the encoder slice of the input
            // gradient.
            let enc_dim = model.dims.encoder_output();
            let offset = dim - enc_dim;
            let mut enc_grad = Matrix::zeros(1, enc_dim);
            for i in 0..g.rows {
                for j in 0..enc_dim {
                    enc_grad.data[j] += g.get(i, offset + j);
                }
            }
            let (mut enc_grads, _) = model.encoder.backward(&enc_cache, &enc_grad);
            if cfg.l2 > 0.0 {
                enc_grads.add_weight_decay(&model.encoder, cfg.l2);
            }

            // Assemble gradient slices in the same order as param_slices_mut.
            let mut grad_slices: Vec<&[f64]> = enc_grads.slices();
            let l2_scale = 2.0 * cfg.l2;
            let mut decayed: Vec<Vec<f64>> = Vec::new();
            for (bg, b) in block_grads.iter().zip(&model.blocks) {
                let mut push = |g: &LayerGrads, l: &Layer| {
                    let mut dw = g.d_weights.data.clone();
                    if cfg.l2 > 0.0 {
                        for (d, w) in dw.iter_mut().zip(&l.weights.data) {
                            *d += l2_scale * w;
                        }
                    }
                    decayed.push(dw);
                    decayed.push(g.d_biases.clone());
                };
                push(&bg.entry, &b.entry);
                push(&bg.inner, &b.inner);
                if let (Some(pg), Some(pl)) = (&bg.projection, &b.projection) {
                    push(pg, pl);
                }
            }
            {
                let mut dw = head_grads.d_weights.data.clone();
                if cfg.l2 > 0.0 {
                    for (d, w) in dw.iter_mut().zip(&model.head.weights.data) {
                        *d += l2_scale * w;
                    }
                }
                decayed.push(dw);
                decayed.push(head_grads.d_biases.clone());
            }
            grad_slices.extend(decayed.iter().map(|v| v.as_slice()));

            let clipped;
            if cfg.grad_clip > 0.0 {
                let norm: f64 = grad_slices
                    .iter()
                    .flat_map(|s| s.iter())
                    .map(|g| g * g)
                    .sum::<f64>()
                    .sqrt();
                if norm > cfg.grad_clip {
                    let scale = cfg.grad_clip / norm;
                    clipped = grad_slices
                        .iter()
                        .map(|s| s.iter().map(|g| g * scale).collect::<Vec<f64>>())
                        .collect::<Vec<_>>();
                    grad_slices = clipped.iter().map(|v| v.as_slice()).collect();
                }
            }

            opt.lr = opt_lr(cfg.lr, since_lr_drop, cfg.lr_patience);
            adam_step(&mut model.param_slices_mut(), &grad_slices, &mut opt)?;
            model.encoder.update_running_stats(&enc_cache);
        }

        let train_mse = if batches > 0 { epoch_loss / batches as f64 } else { f64::NAN };
        // Re-pin the encoder's running statistics before validating: the
        // momentum-lagged stats trail the moving weights, and for a constant
        // grid the exact stationary values are one forward pass away.
        model.encoder.converge_running_stats(&enc_input);
        let val_pred = model.predict_normalized(&val.rows, grid)?;
        let val_mse = val
            .rows
            .iter()
            .zip(&val_pred)
            .map(|(r, p)| (r.gain_db - p) * (r.gain_db - p))
            .sum::<f64>()
            / val.len().max(1) as f64;
        if !val_mse.is_finite() {
            aborted = true;
            break;
        }
        history.push(CkmEpochStats {
            epoch,
            train_mse,
            val_mse,
            lr: opt.lr,
        });

        let improved = best.as_ref().map_or(true, |(b, _)| val_mse < *b);
        if improved {
            best = Some((val_mse, model.clone()));
            since_best = 0;
            since_lr_drop = 0;
        } else {
            since_best += 1;
            since_lr_drop += 1;
        }
        if since_best >= cfg.patience {
            let (best_mse, best_model) = best.take().expect("had a best epoch");
            return Ok(CkmTrainOutcome {
                model: best_model,
                history,
                best_val_mse: best_mse,
                stopped_early: true,
                aborted_on_nan: false,
            });
        }
    }

    match best {
        Some((best_mse, best_model)) => Ok(CkmTrainOutcome {
            model: best_model,
            history,
            best_val_mse: best_mse,
            stopped_early: false,
            aborted_on_nan: aborted,
        }),
        None => Err(Error::Diverged {
            context: "ckm training".into(),
            step: 0,
        }),
    }
}

/// Halve the learning rate each time `lr_patience` epochs pass without
/// validation improvement.
fn opt_lr(base: f64, since_improvement: usize, lr_patience: usize) -> f64 {
    let drops = if lr_patience == 0 {
        0
    } else {
        since_improvement / lr_patience
    };
    base * 0.5f64.powi(drops as i32)
}

/// Accuracy on denormalized loss values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CkmMetrics {
    /// Mean squared error in dB^2.
    pub mse_db2: f64,
    /// Mean absolute percentage error over the loss, percent.
    pub mape_percent: f64,
}

/// Evaluates a trained model on a normalized test set, reporting errors on
/// the denormalized (dB) loss scale.
pub fn evaluate_ckm(model: &CkmModel, test: &Dataset, grid: &HeightGrid) -> Result<CkmMetrics> {
    let stats = model.stats()?.clone();
    let preds = model.predict_normalized(&test.rows, grid)?;
    let mut se = 0.0;
    let mut ape = 0.0;
    for (row, p) in test.rows.iter().zip(&preds) {
        let true_loss = -stats.denormalize_value(GAIN, row.gain_db);
        let pred_loss = -stats.denormalize_value(GAIN, *p);
        se += (pred_loss - true_loss) * (pred_loss - true_loss);
        ape += ((pred_loss - true_loss) / true_loss).abs();
    }
    let n = test.len().max(1) as f64;
    Ok(CkmMetrics {
        mse_db2: se / n,
        mape_percent: 100.0 * ape / n,
    })
}

/// Relative MSE improvement from augmentation, percent. Negative when the
/// augmented model is worse.
pub fn mse_reduction(mse_without_aug: f64, mse_with_aug: f64) -> f64 {
    100.0 * (mse_without_aug - mse_with_aug) / mse_without_aug
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::fspl_db;
    use crate::dataset::{generate_dataset_from, ChannelSource};
    use crate::geometry::{rasterize_heights, sample_environment, EnvGenConfig};

    fn test_dims() -> CkmDims {
        CkmDims {
            grid_input: 16,
            encoder_hidden: vec![8, 4],
            trunk_sizes: vec![12, 6],
            grid_scale: 250.0,
        }
    }

    fn test_scene() -> (crate::geometry::Environment, HeightGrid) {
        let env = sample_environment(5, &EnvGenConfig::default()).unwrap();
        let grid = rasterize_heights(&env, 4, 4);
        (env, grid)
    }

    #[test]
    fn variants_differ_in_input_dim_by_one() {
        let dims = test_dims();
        let plain = trunk_input_dim(CkmVariant::Plain, &dims);
        let kf = trunk_input_dim(CkmVariant::KnowledgeFeatured, &dims);
        let kd = trunk_input_dim(CkmVariant::KnowledgeDriven, &dims);
        assert_eq!(kf, plain + 1);
        assert_eq!(kd, plain);
    }

    #[test]
    fn build_is_reproducible() {
        let dims = test_dims();
        let p = ChannelParams::default();
        let a = build_ckm(CkmVariant::KnowledgeDriven, &dims, &p, 3);
        let b = build_ckm(CkmVariant::KnowledgeDriven, &dims, &p, 3);
        assert_eq!(a, b);
    }

    #[test]
    fn zero_trunk_kd_reproduces_analytic_loss() {
        let (env, grid) = test_scene();
        let params = ChannelParams::default();
        let ds = generate_dataset_from(&env, &params, 60, 8, ChannelSource::GroundTruth);
        let (norm, stats) = ds.normalize();
        let mut model = build_ckm(CkmVariant::KnowledgeDriven, &test_dims(), &params, 1);
        model.stats = Some(stats.clone());
        model.zero_trunk();
        let enc = model.encode(&grid);
        for row in ds.rows.iter().take(20) {
            let pred = model.predict_loss_db(&row.uav, &row.gu, &enc).unwrap();
            let analytic = expected_loss_db(&row.uav, &row.gu, &params);
            assert!(
                (pred - analytic).abs() < 1e-9,
                "pred {pred} vs analytic {analytic}"
            );
        }
        // Batch-path agreement too.
        let preds = model.predict_normalized(&norm.rows, &grid).unwrap();
        for (row, p) in ds.rows.iter().zip(&preds) {
            let analytic = -expected_loss_db(&row.uav, &row.gu, &params);
            let denorm = stats.denormalize_value(GAIN, *p);
            assert!((denorm - analytic).abs() < 1e-9);
        }
    }

    #[test]
    fn knowledge_loss_delegates_to_channel_model() {
        let params = ChannelParams::default();
        let gu = Position::new(300.0, 400.0, 0.0);
        let uav = Position::new(0.0, 0.0, 500.0);
        let s = Sample::from_positions(gu, uav, -100.0);
        assert_eq!(knowledge_loss_db(&s, &params), expected_loss_db(&uav, &gu, &params));
        // 45 degrees, d = 500*sqrt(2): spot value against hand math.
        let d = 500.0 * 2f64.sqrt();
        let blend = (1.0 - 20.0) / (1.0 + 9.61 * (-0.16f64 * (45.0 - 9.61)).exp());
        assert!((knowledge_loss_db(&s, &params) - (fspl_db(d, &params) + blend + 20.0)).abs() < 1e-9);
    }

    #[test]
    fn encoder_is_deterministic_and_sensitive() {
        let dims = test_dims();
        let model = build_ckm(CkmVariant::Plain, &dims, &ChannelParams::default(), 2);
        let grid = HeightGrid {
            width_cells: 4,
            depth_cells: 4,
            cell_heights: vec![0.0; 16],
        };
        let a = model.encode(&grid);
        let b = model.encode(&grid);
        assert_eq!(a, b);
        let mut bumped = grid.clone();
        bumped.cell_heights[5] = 200.0;
        let c = model.encode(&bumped);
        assert_ne!(a, c, "a changed cell must move the encoding");
    }

    #[test]
    fn zero_grid_zero_encoder_weights_gives_zero_vector() {
        let dims = test_dims();
        let mut model = build_ckm(CkmVariant::Plain, &dims, &ChannelParams::default(), 2);
        for s in model.encoder.param_slices_mut() {
            s.fill(0.0);
        }
        let grid = HeightGrid {
            width_cells: 4,
            depth_cells: 4,
            cell_heights: vec![0.0; 16],
        };
        assert!(model.encode(&grid).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_prediction_matches_row_by_row() {
        let (env, grid) = test_scene();
        let params = ChannelParams::default();
        let ds = generate_dataset_from(&env, &params, 30, 4, ChannelSource::GroundTruth);
        let (norm, _) = ds.normalize();
        let mut model = build_ckm(CkmVariant::KnowledgeFeatured, &test_dims(), &params, 6);
        model.stats = norm.stats.clone();
        let batch = model.predict_normalized(&norm.rows, &grid).unwrap();
        for (i, row) in norm.rows.iter().enumerate() {
            let single = model
                .predict_normalized(std::slice::from_ref(row), &grid)
                .unwrap();
            assert!((batch[i] - single[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn evaluate_perfect_and_biased_predictors() {
        // A KD model with zero trunk on analytic data is a perfect predictor.
        let (env, grid) = test_scene();
        let params = ChannelParams::default();
        let ds = generate_dataset_from(&env, &params, 50, 3, ChannelSource::Analytic);
        let (norm, stats) = ds.normalize();
        let mut model = build_ckm(CkmVariant::KnowledgeDriven, &test_dims(), &params, 1);
        model.stats = Some(stats.clone());
        model.zero_trunk();
        let m = evaluate_ckm(&model, &norm, &grid).unwrap();
        assert!(m.mse_db2 < 1e-15);
        assert!(m.mape_percent < 1e-9);

        // Bias the head by +1 dB of gain: MSE becomes 1 dB^2.
        let range = stats.max[GAIN] - stats.min[GAIN];
        model.head.biases[0] = 1.0 / range;
        let m = evaluate_ckm(&model, &norm, &grid).unwrap();
        assert!((m.mse_db2 - 1.0).abs() < 1e-9, "got {}", m.mse_db2);

        // Brute-force spot check of both metrics on ten rows.
        let subset = Dataset {
            rows: norm.rows[..10].to_vec(),
            stats: norm.stats.clone(),
            normalized: true,
        };
        let preds = model.predict_normalized(&subset.rows, &grid).unwrap();
        let mut se = 0.0;
        let mut ape = 0.0;
        for (row, p) in subset.rows.iter().zip(&preds) {
            let t = -stats.denormalize_value(GAIN, row.gain_db);
            let q = -stats.denormalize_value(GAIN, *p);
            se += (q - t) * (q - t);
            ape += ((q - t) / t).abs();
        }
        let m = evaluate_ckm(&model, &subset, &grid).unwrap();
        assert!((m.mse_db2 - se / 10.0).abs() < 1e-12);
        assert!((m.mape_percent - 10.0 * ape).abs() < 1e-12);
    }

    #[test]
    fn mse_reduction_reference_points() {
        assert_eq!(mse_reduction(2.0, 2.0), 0.0);
        assert!((mse_reduction(1.0, 0.6977) - 30.23).abs() < 1e-9);
        assert!(mse_reduction(1.0, 1.5) < 0.0);
    }

    #[test]
    fn lr_schedule_halves_on_stagnation() {
        assert_eq!(opt_lr(1e-3, 0, 5), 1e-3);
        assert_eq!(opt_lr(1e-3, 4, 5), 1e-3);
        assert_eq!(opt_lr(1e-3, 5, 5), 5e-4);
        assert_eq!(opt_lr(1e-3, 10, 5), 2.5e-4);
    }

    #[test]
    fn checkpoint_round_trip() {
        let model = build_ckm(
            CkmVariant::KnowledgeDriven,
            &test_dims(),
            &ChannelParams::default(),
            12,
        );
        let dir = std::env::temp_dir().join("skymap-ckm-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ckm.json");
        model.save(&path).unwrap();
        let loaded = CkmModel::load(&path).unwrap();
        assert_eq!(model, loaded);
    }
}
