use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::loss::{draw_noise, forward_loss, loss_and_grads, LossBreakdown};
use super::model::{init_model, MlpVae};
use super::TrainConfig;
use crate::error::{LpathError, Result};
use crate::matrix::DataMatrix;
use crate::rng::{derive_seed, stream_rng};

const SPLIT_STREAM: u64 = 1;
const INIT_STREAM: u64 = 2;
const SHUFFLE_STREAM: u64 = 3;
const NOISE_STREAM: u64 = 4;
const VAL_STREAM: u64 = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train: LossBreakdown,
    pub val: LossBreakdown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Validation loss of the freshly initialized model.
    pub initial_val: LossBreakdown,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
}

/// Row-weighted loss over `data`, evaluated in chunks of `config.batch_size`.
pub fn evaluate_loss<R: rand::Rng + ?Sized>(
    model: &MlpVae,
    data: ArrayView2<'_, f64>,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<LossBreakdown> {
    if data.nrows() == 0 {
        return Err(LpathError::InvalidInput("cannot evaluate loss on zero rows".into()));
    }
    let mut acc = LossBreakdown::default();
    for chunk in data.axis_chunks_iter(Axis(0), config.batch_size) {
        let (eps, prior) = draw_noise(model, chunk.nrows(), config, rng);
        let l = forward_loss(model, chunk, config, eps.view(), prior.as_ref().map(|p| p.view()))?;
        let w = chunk.nrows() as f64 / data.nrows() as f64;
        acc.total += w * l.total;
        acc.recon += w * l.recon;
        acc.kl += w * l.kl;
        acc.mmd += w * l.mmd;
    }
    Ok(acc)
}

/// Trains a model with shuffled mini-batch Adam and returns the snapshot with
/// the lowest validation loss. Parameters of the returned model are rounded to
/// `f32` so they survive the checkpoint format unchanged.
pub fn train(dataset: ArrayView2<'_, f64>, config: &TrainConfig) -> Result<(MlpVae, TrainHistory)> {
    config.validate()?;
    let n = dataset.nrows();
    if n == 0 || dataset.ncols() == 0 {
        return Err(LpathError::InvalidInput("training set is empty".into()));
    }
    crate::matrix::check_finite(dataset, "training set")?;

    let n_val = ((n as f64 * config.val_fraction).round() as usize).max(1);
    if n_val >= n {
        return Err(LpathError::InvalidConfig(format!(
            "val_fraction {} leaves no training rows out of {n}",
            config.val_fraction
        )));
    }
    let n_train = n - n_val;
    if config.batch_size > n_train {
        return Err(LpathError::InvalidConfig(format!(
            "batch_size {} exceeds the {n_train} training rows",
            config.batch_size
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(config.seed, SPLIT_STREAM));
    let val: DataMatrix = dataset.select(Axis(0), &order[..n_val]);
    let train_rows: DataMatrix = dataset.select(Axis(0), &order[n_val..]);

    let mut model = init_model(
        config,
        dataset.ncols(),
        config.latent_dim,
        derive_seed(config.seed, INIT_STREAM),
    )?;
    let mut adam = AdamState::for_model(&model);
    let mut shuffle_rng = stream_rng(config.seed, SHUFFLE_STREAM);
    let mut noise_rng = stream_rng(config.seed, NOISE_STREAM);
    // Same validation noise every epoch so snapshots are compared fairly.
    let val_loss = |m: &MlpVae| evaluate_loss(m, val.view(), config, &mut stream_rng(config.seed, VAL_STREAM));

    let initial_val = val_loss(&model)?;
    let mut best = (model.clone(), initial_val.total, 0usize);
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut idx: Vec<usize> = (0..n_train).collect();

    for epoch in 1..=config.epochs {
        idx.shuffle(&mut shuffle_rng);
        let mut acc = LossBreakdown::default();
        for chunk in idx.chunks(config.batch_size) {
            let batch = train_rows.select(Axis(0), chunk);
            let (loss, grads) = loss_and_grads(&model, batch.view(), config, &mut noise_rng)?;
            adam.step_model(&mut model, &grads, config.learning_rate)?;
            let w = chunk.len() as f64 / n_train as f64;
            acc.total += w * loss.total;
            acc.recon += w * loss.recon;
            acc.kl += w * loss.kl;
            acc.mmd += w * loss.mmd;
        }
        let val = val_loss(&model)?;
        log::info!(
            "epoch {epoch}/{}: train {:.4} (recon {:.4}, kl {:.4}, mmd {:.5}) val {:.4}",
            config.epochs,
            acc.total,
            acc.recon,
            acc.kl,
            acc.mmd,
            val.total
        );
        if val.total < best.1 {
            best = (model.clone(), val.total, epoch);
        }
        epochs.push(EpochLog {
            epoch,
            train: acc,
            val,
        });
    }

    let (mut best_model, _, best_epoch) = best;
    best_model.round_to_f32();
    Ok((
        best_model,
        TrainHistory {
            initial_val,
            epochs,
            best_epoch,
        },
    ))
}
