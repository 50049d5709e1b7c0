//! SGD training loop: per-epoch shuffling, averaged mini-batch gradients,
//! optional label smoothing of the mixing weights, inverse-decay learning
//! rate, and best-validation checkpointing. Everything is seeded, so a run
//! is reproducible byte for byte.

use std::fs::File;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{self, EstimatorParams, ParamGrads};
use crate::imagecore::{
    self, io, ChromaImage, IlluminantChroma, IlluminationMap, DEFAULT_EPSILON,
};
use crate::losses;
use crate::synth::{derive_seed, smooth_alpha, AlphaMap, DatasetManifest, Split};

fn default_epochs() -> usize {
    300
}
fn default_batch_size() -> usize {
    8
}
fn default_lr() -> f64 {
    5e-4
}
fn default_lambda_tv() -> f64 {
    2e-4
}
fn default_w_n() -> f64 {
    10.0
}
fn default_decay_start() -> usize {
    200
}
fn default_decay_constant() -> f64 {
    200.0
}
fn default_input_size() -> usize {
    64
}
fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_lambda_tv")]
    pub lambda_tv: f64,
    #[serde(default)]
    pub label_smooth: bool,
    #[serde(default = "default_w_n")]
    pub w_n: f64,
    #[serde(default = "default_decay_start")]
    pub decay_start_epoch: usize,
    #[serde(default = "default_decay_constant")]
    pub decay_constant: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_input_size")]
    pub input_size: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            lr: default_lr(),
            lambda_tv: default_lambda_tv(),
            label_smooth: false,
            w_n: default_w_n(),
            decay_start_epoch: default_decay_start(),
            decay_constant: default_decay_constant(),
            seed: 0,
            input_size: default_input_size(),
            epsilon: default_epsilon(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs and batch_size must be at least 1".to_string(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.lambda_tv < 0.0 || !self.lambda_tv.is_finite() {
            return Err(Error::Config(format!(
                "lambda_tv must be non-negative, got {}",
                self.lambda_tv
            )));
        }
        if !(self.w_n > 0.0) {
            return Err(Error::Config(format!("w_n must be positive, got {}", self.w_n)));
        }
        if !(self.decay_constant > 0.0) {
            return Err(Error::Config(format!(
                "decay_constant must be positive, got {}",
                self.decay_constant
            )));
        }
        if self.input_size == 0 || self.input_size % 4 != 0 {
            return Err(Error::Config(format!(
                "input_size must be a positive multiple of 4, got {}",
                self.input_size
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        Ok(())
    }

    /// Inverse decay: lr before `decay_start_epoch`, then
    /// lr / (1 + (epoch − decay_start) / decay_constant).
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        if epoch < self.decay_start_epoch {
            self.lr
        } else {
            self.lr / (1.0 + (epoch - self.decay_start_epoch) as f64 / self.decay_constant)
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_mean_angular_error: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingLog {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = File::create(path).map_err(|source| Error::io(path, source))?;
        let mut out = String::from("epoch,lr,train_loss,val_mean_angular_error\n");
        for r in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.epoch, r.lr, r.train_loss, r.val_mean_angular_error
            ));
        }
        f.write_all(out.as_bytes())
            .map_err(|source| Error::io(path, source))
    }
}

/// A training sample held fully in memory at the training resolution.
struct CachedSample {
    input_uv: ChromaImage,
    alpha: AlphaMap,
    illum_a: [f64; 3],
    illum_b: [f64; 3],
    /// uv of the unsmoothed ground-truth map; reused when smoothing is off.
    gt_uv: ChromaImage,
    gt_map: IlluminationMap,
}

fn load_split(
    manifest: &DatasetManifest,
    base_dir: &Path,
    split: Split,
    cfg: &TrainConfig,
) -> Result<Vec<CachedSample>> {
    let entries: Vec<_> = manifest.samples_in(split).collect();
    entries
        .into_par_iter()
        .map(|entry| {
            let side = cfg.input_size;
            let mut input = io::read_image(base_dir.join(&entry.input_png))?;
            let mut gt_map = io::read_illumination_map(base_dir.join(&entry.gt_map_pwcc))?;
            let mut alpha = io::read_alpha_map(base_dir.join(&entry.alpha_pwcc))?;
            if input.width() != side || input.height() != side {
                input = imagecore::resize_bilinear(&input, side, side)?;
                gt_map = imagecore::resize_map_bilinear(&gt_map, side, side)?.g_normalized();
                let values = imagecore::resize_bilinear_raw(
                    alpha.values(),
                    alpha.width(),
                    alpha.height(),
                    1,
                    side,
                    side,
                )?;
                alpha = AlphaMap::new(side, side, values)?;
            }
            Ok(CachedSample {
                input_uv: imagecore::to_log_chroma(&input, cfg.epsilon)?,
                gt_uv: gt_map.to_log_chroma(cfg.epsilon)?,
                gt_map,
                alpha,
                illum_a: entry.illum_a,
                illum_b: entry.illum_b,
            })
        })
        .collect()
}

/// Remixes the ground-truth map from a smoothed mixing field (same formula
/// the synthesizer uses) and returns its uv representation.
fn smoothed_target(sample: &CachedSample, cfg: &TrainConfig, seed: u64) -> Result<ChromaImage> {
    let alpha = smooth_alpha(&sample.alpha, cfg.w_n, seed)?;
    let la = IlluminantChroma::new(sample.illum_a)?.rgb();
    let lb = IlluminantChroma::new(sample.illum_b)?.rgb();
    let mut gains = Vec::with_capacity(alpha.width() * alpha.height() * 3);
    for &a in alpha.values() {
        for c in 0..3 {
            gains.push(a * la[c] + (1.0 - a) * lb[c]);
        }
    }
    IlluminationMap::new(alpha.width(), alpha.height(), gains)?
        .g_normalized()
        .to_log_chroma(cfg.epsilon)
}

fn val_mean_angular_error(params: &EstimatorParams, val: &[CachedSample]) -> Result<f64> {
    let errors: Vec<f64> = val
        .par_iter()
        .map(|s| {
            let (pred_uv, _) = estimator::forward(params, &s.input_uv)?;
            let pred = imagecore::from_log_chroma(&pred_uv)?;
            crate::eval::image_error(&s.gt_map, &pred)
        })
        .collect::<Result<_>>()?;
    Ok(errors.iter().sum::<f64>() / errors.len() as f64)
}

// seed namespaces so shuffle and smoothing draws never collide
const SHUFFLE_SALT: u64 = 0x5348_5546_464C_4531;
const SMOOTH_SALT: u64 = 0x534D_4F4F_5448_4531;

/// Trains from a fresh `init_params(cfg.seed)` initialization and returns the
/// parameters with the best validation angular error alongside the per-epoch
/// log. Falls back to the training loss as the checkpoint metric when the
/// dataset has no validation split.
pub fn train(
    manifest: &DatasetManifest,
    base_dir: &Path,
    cfg: &TrainConfig,
) -> Result<(EstimatorParams, TrainingLog)> {
    cfg.validate()?;
    let train_set = load_split(manifest, base_dir, Split::Train, cfg)?;
    if train_set.is_empty() {
        return Err(Error::Config(
            "dataset has no training samples".to_string(),
        ));
    }
    let val_set = load_split(manifest, base_dir, Split::Val, cfg)?;

    let mut params = estimator::init_params(cfg.seed);
    let mut best_params = params.clone();
    let mut best_metric = f64::INFINITY;
    let mut log = TrainingLog::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate(epoch);
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed ^ SHUFFLE_SALT, epoch as u64));
        order.shuffle(&mut shuffle_rng);

        let mut epoch_loss = 0.0;
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let batch_seed = derive_seed(
                derive_seed(cfg.seed ^ SMOOTH_SALT, epoch as u64),
                batch_idx as u64,
            );
            let results: Vec<(f64, ParamGrads)> = batch
                .par_iter()
                .enumerate()
                .map(|(slot, &idx)| {
                    let sample = &train_set[idx];
                    let target = if cfg.label_smooth {
                        smoothed_target(sample, cfg, derive_seed(batch_seed, slot as u64))?
                    } else {
                        sample.gt_uv.clone()
                    };
                    let (pred, cache) = estimator::forward(&params, &sample.input_uv)?;
                    let (report, grad_out) =
                        losses::combined_loss(&pred, &target, cfg.lambda_tv)?;
                    let grads = estimator::backward(&params, &cache, &grad_out)?;
                    Ok((report.total, grads))
                })
                .collect::<Result<_>>()?;

            // accumulate in slot order so the update is scheduler-independent
            let mut batch_grads = ParamGrads::zeros_like(&params);
            let mut batch_loss = 0.0;
            for (loss, grads) in &results {
                batch_loss += loss;
                batch_grads.add_assign(grads);
            }
            let inv_n = 1.0 / batch.len() as f64;
            batch_loss *= inv_n;
            batch_grads.scale(inv_n);

            if !batch_loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: batch_idx,
                    reason: format!("non-finite batch loss {batch_loss}"),
                });
            }
            for (layer, (dw, db)) in params.layers.iter_mut().zip(&batch_grads.layers) {
                for (w, g) in layer.weights.iter_mut().zip(dw) {
                    *w -= lr * g;
                }
                for (b, g) in layer.biases.iter_mut().zip(db) {
                    *b -= lr * g;
                }
            }
            if !params.all_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: batch_idx,
                    reason: "non-finite parameter after update".to_string(),
                });
            }
            epoch_loss += batch_loss * batch.len() as f64;
        }
        let train_loss = epoch_loss / train_set.len() as f64;

        let (val_err, metric) = if val_set.is_empty() {
            (f64::NAN, train_loss)
        } else {
            let err = val_mean_angular_error(&params, &val_set)?;
            (err, err)
        };
        if metric < best_metric {
            best_metric = metric;
            best_params = params.clone();
        }
        log.epochs.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val_mean_angular_error: val_err,
        });
    }
    Ok((best_params, log))
}
