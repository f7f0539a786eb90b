use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;

use crate::dataset::{assign_unit_targets, window_sample, VideoRecord};
use crate::optim::{add_weight_decay, scheduled_lr, Adam, Parameters};

use super::{accumulate_backward, model_forward, weighted_bce_loss, ModelParams, ModelShape};

#[derive(Clone, Debug, PartialEq)]
pub struct ProbTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub window: usize,
    /// Windows drawn from every video per epoch.
    pub windows_per_video: usize,
    pub lr: f64,
    pub decay_epoch: usize,
    pub decay_factor: f64,
    /// L2 coefficient on weights.
    pub lambda: f64,
    /// Positive-class weight of the cross-entropy.
    pub beta: f64,
    pub dropout: f64,
    pub expansion_ratio: f64,
    pub seed: u64,
}

impl Default for ProbTrainConfig {
    fn default() -> Self {
        ProbTrainConfig {
            epochs: 20,
            batch: 32,
            window: 100,
            windows_per_video: 1,
            lr: 1e-3,
            decay_epoch: 10,
            decay_factor: 0.1,
            lambda: 1e-4,
            beta: 2.0,
            dropout: 0.3,
            expansion_ratio: 0.5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrainError {
    EmptyDataset,
    InvalidConfig(&'static str),
    /// The loss or the parameters stopped being finite.
    NonFinite { epoch: usize, batch: usize },
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::EmptyDataset => f.write_str("training set is empty"),
            TrainError::InvalidConfig(msg) => write!(f, "invalid training configuration: {msg}"),
            TrainError::NonFinite { epoch, batch } => {
                write!(f, "non-finite loss or parameters at epoch {epoch}, batch {batch}")
            }
        }
    }
}

impl core::error::Error for TrainError {}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub params: ModelParams,
    /// Mean data loss (without the L2 term) of every epoch.
    pub epoch_losses: Vec<f64>,
}

/// Trains the probability model with Adam on random windows.
///
/// Each epoch shuffles `windows_per_video` copies of every video index,
/// cuts the list into batches and takes one Adam step per batch with the
/// batch-averaged gradient. The whole run is a function of `cfg.seed`.
pub fn train_probability_model(
    videos: &[VideoRecord],
    shape: &ModelShape,
    cfg: &ProbTrainConfig,
) -> Result<TrainedModel, TrainError> {
    if videos.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    shape.check().map_err(TrainError::InvalidConfig)?;
    if cfg.batch == 0 || cfg.window == 0 || cfg.windows_per_video == 0 {
        return Err(TrainError::InvalidConfig("batch, window and windows_per_video must be positive"));
    }
    if !(0.0..1.0).contains(&cfg.dropout) {
        return Err(TrainError::InvalidConfig("dropout must lie in [0, 1)"));
    }
    if !(cfg.beta > 0.0) {
        return Err(TrainError::InvalidConfig("beta must be positive"));
    }

    let mut rng = crate::seeded_rng(cfg.seed);
    let mut params = ModelParams::init(shape, &mut rng);
    let targets: Vec<_> = videos.iter().map(|v| assign_unit_targets(v, cfg.expansion_ratio)).collect();
    let mut adam = Adam::default();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = scheduled_lr(cfg.lr, epoch, cfg.decay_epoch, cfg.decay_factor);
        let mut order: Vec<usize> =
            (0..videos.len()).flat_map(|i| core::iter::repeat_n(i, cfg.windows_per_video)).collect();
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for (batch, chunk) in order.chunks(cfg.batch).enumerate() {
            let mut grads = params.zeros_like();
            let mut batch_loss = 0.0;
            for &i in chunk {
                let w = window_sample(&videos[i], &targets[i], cfg.window, &mut rng);
                let (grid, cache) = model_forward(&w.features, &params, cfg.dropout, true, &mut rng);
                let out = weighted_bce_loss(&grid, &w.targets, cfg.beta, &w.valid);
                batch_loss += out.loss;
                accumulate_backward(&cache, &out.dlogits, &params, &mut grads);
            }
            let n = chunk.len() as f64;
            grads.scale(1.0 / n);
            add_weight_decay(&mut grads, &params, cfg.lambda);
            batch_loss /= n;
            if !batch_loss.is_finite() || !grads.is_finite() {
                return Err(TrainError::NonFinite { epoch, batch });
            }
            adam.step(&mut params, &grads, lr);
            if !params.is_finite() {
                return Err(TrainError::NonFinite { epoch, batch });
            }
            epoch_loss += batch_loss;
            batches += 1;
        }
        epoch_losses.push(epoch_loss / batches as f64);
    }
    Ok(TrainedModel { params, epoch_losses })
}
