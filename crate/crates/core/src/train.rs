//! Mini-batch training with AdamW and a per-epoch cosine learning rate.
//!
//! Chunks of a batch run in parallel on private copies of the model; their
//! gradients are summed in batch order, so a run is bit-reproducible for a
//! given seed regardless of the number of worker threads.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::LinnConfig;
use crate::data::TrainingChunk;
use crate::error::{config_err, Error, Result};
use crate::model::Linn;
use crate::optim::{cosine_lr, AdamW};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    /// 1-based epoch number.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub seconds: f64,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str = "epoch,lr,train_loss,valid_loss,seconds";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{},{},{:.3}",
            self.epoch, self.lr, self.train_loss, self.valid_loss, self.seconds
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub final_model: Linn<f32>,
    pub best_model: Linn<f32>,
    pub best_epoch: usize,
    pub best_valid: f64,
    /// Validation loss before the first update.
    pub initial_valid: f64,
    pub log: Vec<EpochLog>,
}

/// Mean loss over `chunks` (sum in chunk order).
pub fn mean_loss(model: &Linn<f32>, chunks: &[TrainingChunk], cfg: &LinnConfig) -> Result<f64> {
    if chunks.is_empty() {
        return Ok(f64::NAN);
    }
    let losses: Vec<f64> = chunks
        .par_iter()
        .map(|c| model.chunk_loss(&c.mono, &c.track, &c.binaural, &cfg.train.loss))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Trains a freshly initialized model seeded from `cfg.train.seed`.
pub fn train(
    cfg: &LinnConfig,
    train_chunks: &[TrainingChunk],
    valid_chunks: &[TrainingChunk],
    on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    let model = Linn::<f32>::new(cfg.model, cfg.ablation, cfg.train.seed)?;
    train_model(model, cfg, train_chunks, valid_chunks, on_epoch)
}

/// Trains `model` in place of a fresh one.
pub fn train_model(
    mut model: Linn<f32>,
    cfg: &LinnConfig,
    train_chunks: &[TrainingChunk],
    valid_chunks: &[TrainingChunk],
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    cfg.train.loss.validate()?;
    if train_chunks.is_empty() {
        return Err(config_err!(
            "no training chunks: items must be at least {} samples long",
            cfg.model.chunk_len
        ));
    }
    let sched = cfg.train.schedule();
    let mut opt = AdamW::new(cfg.train.adamw);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed ^ 0x005e_ed0f_c4a7);
    let mut order: Vec<usize> = (0..train_chunks.len()).collect();

    let selection = |m: &Linn<f32>, train_loss: f64| -> Result<f64> {
        if valid_chunks.is_empty() {
            Ok(train_loss)
        } else {
            mean_loss(m, valid_chunks, cfg)
        }
    };
    let initial_valid = if valid_chunks.is_empty() {
        mean_loss(&model, train_chunks, cfg)?
    } else {
        mean_loss(&model, valid_chunks, cfg)?
    };
    let mut best = (model.clone(), 0usize, initial_valid);
    let mut log = Vec::with_capacity(cfg.train.epochs);

    for epoch in 0..cfg.train.epochs {
        let t0 = Instant::now();
        let lr = cosine_lr(epoch, &sched)?;
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        for (b, batch) in order.chunks(cfg.train.batch_size).enumerate() {
            let results: Vec<(f64, Vec<Tensor<f32>>)> = batch
                .par_iter()
                .map(|&i| {
                    let c = &train_chunks[i];
                    let mut local = model.clone();
                    local.zero_grad();
                    let loss = local
                        .chunk_loss_and_backward(&c.mono, &c.track, &c.binaural, &cfg.train.loss)
                        .map_err(|e| match e {
                            Error::NonFinite(msg) => Error::NonFinite(format!(
                                "{msg} (epoch {}, batch {b}, item {} at sample {})",
                                epoch + 1,
                                c.item,
                                c.start
                            )),
                            other => other,
                        })?;
                    let grads = local
                        .trainable_params_mut()
                        .into_iter()
                        .map(|p| p.grad.clone())
                        .collect();
                    Ok((loss, grads))
                })
                .collect::<Result<_>>()?;
            let scale = 1.0 / batch.len() as f32;
            let mut params = model.trainable_params_mut();
            for p in params.iter_mut() {
                p.zero_grad();
            }
            for (loss, grads) in &results {
                epoch_sum += loss;
                for (p, g) in params.iter_mut().zip(grads) {
                    for (acc, &v) in p.grad.data_mut().iter_mut().zip(g.data()) {
                        *acc += v * scale;
                    }
                }
            }
            for p in params.iter() {
                p.grad.check_finite("gradient").map_err(|e| {
                    Error::NonFinite(format!("{e} (epoch {}, batch {b})", epoch + 1))
                })?;
            }
            if !params.is_empty() {
                opt.step(&mut params, lr);
            }
        }
        let train_loss = epoch_sum / train_chunks.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss {train_loss} in epoch {}",
                epoch + 1
            )));
        }
        let valid_loss = selection(&model, train_loss)?;
        let entry = EpochLog {
            epoch: epoch + 1,
            lr,
            train_loss,
            valid_loss,
            seconds: t0.elapsed().as_secs_f64(),
        };
        log::info!("{}", entry.csv_row());
        on_epoch(&entry);
        log.push(entry);
        if valid_loss < best.2 {
            best = (model.clone(), epoch + 1, valid_loss);
        }
    }
    Ok(TrainOutcome {
        final_model: model,
        best_model: best.0,
        best_epoch: best.1,
        best_valid: best.2,
        initial_valid,
        log,
    })
}
