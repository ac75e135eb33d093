use rand::seq::SliceRandom;

use super::model::{model_backward, model_forward, predict_from_prefix, DeterministicPrefix};
use super::{adam_step, he_normal_init, AdamState, ModelConfig, ModelParams, NnError};
use crate::seed::{derive_seed, rng_for};
use crate::signal::PreparedSeries;

/// Model input with its regression target on the `[0, 1]` scale.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSeries {
    pub input: PreparedSeries,
    pub target: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean minibatch loss over the epoch, with dropout active.
    pub train_mse: f64,
    /// Validation loss with dropout off.
    pub val_mse: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
}

impl TrainHistory {
    pub fn final_train_mse(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_mse)
    }
}

pub fn mse_loss(predictions: &[f64], targets: &[f64]) -> Result<f64, NnError> {
    if predictions.len() != targets.len() {
        return Err(NnError::LengthMismatch(predictions.len(), targets.len()));
    }
    if predictions.is_empty() {
        return Err(NnError::EmptyDataset("mse of empty vectors"));
    }
    let n = predictions.len() as f64;
    Ok(predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n)
}

/// MSE of the dropout-off predictions over `set`.
pub fn evaluate_mse(
    params: &ModelParams,
    config: &ModelConfig,
    set: &[LabeledSeries],
) -> Result<f64, NnError> {
    let mut preds = Vec::with_capacity(set.len());
    for s in set {
        let prefix = DeterministicPrefix::compute(&s.input, params, config)?;
        preds.push(predict_from_prefix(&prefix, params, config, false, 0)?);
    }
    let targets: Vec<f64> = set.iter().map(|s| s.target).collect();
    mse_loss(&preds, &targets)
}

/// Trains with Adam on minibatch MSE.
///
/// After every epoch the validation MSE is measured with dropout off. The
/// learning rate is halved (never below `lr_floor`) whenever validation MSE
/// has not improved for `lr_patience_epochs` epochs, and the returned
/// parameters are the snapshot from the epoch with the lowest validation MSE.
pub fn train(
    config: &ModelConfig,
    train_set: &[LabeledSeries],
    val_set: &[LabeledSeries],
    seed: u64,
) -> Result<(ModelParams, TrainHistory), NnError> {
    train_observed(config, train_set, val_set, seed, &mut |_| {})
}

/// [`train`] with a per-epoch callback.
pub fn train_observed(
    config: &ModelConfig,
    train_set: &[LabeledSeries],
    val_set: &[LabeledSeries],
    seed: u64,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<(ModelParams, TrainHistory), NnError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(NnError::EmptyDataset("training set"));
    }
    if val_set.is_empty() {
        return Err(NnError::EmptyDataset("validation set"));
    }
    if config.epochs == 0 {
        return Err(NnError::InvalidConfig("epochs must be positive".into()));
    }

    let mut params = he_normal_init(config, seed);
    let mut adam = AdamState::new(&params);
    let mut best = params.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut lr = config.lr_initial;
    let mut since_improvement = 0;
    let mut step: u64 = 0;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut records = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let non_finite = |e: NnError| match e {
            NnError::NonFiniteActivation(_) => NnError::NonFiniteLoss { epoch },
            other => other,
        };
        order.shuffle(&mut rng_for(seed, "shuffle", epoch as u64));
        let dropout_base = derive_seed(seed, "train_dropout", epoch as u64);
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let n = batch.len() as f64;
            let mut grads = params.zeros_like();
            for (k, &idx) in batch.iter().enumerate() {
                let sample = &train_set[idx];
                let pos = (b * config.batch_size + k) as u64;
                let (y, cache) = model_forward(
                    &sample.input,
                    &params,
                    config,
                    true,
                    derive_seed(dropout_base, "sample", pos),
                )
                .map_err(non_finite)?;
                let err = y - sample.target;
                loss_sum += err * err;
                let g = model_backward(&cache, &params, 2.0 * err / n)?;
                grads.add_assign(&g)?;
            }
            step += 1;
            adam_step(&mut params, &grads, &mut adam, step, lr)?;
        }
        let train_mse = loss_sum / train_set.len() as f64;
        let val_mse = evaluate_mse(&params, config, val_set).map_err(non_finite)?;
        if !train_mse.is_finite() || !val_mse.is_finite() || !params.all_finite() {
            return Err(NnError::NonFiniteLoss { epoch });
        }
        let record = EpochRecord {
            epoch,
            train_mse,
            val_mse,
            learning_rate: lr,
        };
        on_epoch(&record);
        records.push(record);

        if val_mse < best_val {
            best_val = val_mse;
            best_epoch = epoch;
            best = params.clone();
            since_improvement = 0;
        } else {
            since_improvement += 1;
            if since_improvement >= config.lr_patience_epochs {
                lr = (lr * 0.5).max(config.lr_floor);
                since_improvement = 0;
            }
        }
        log::debug!("epoch {epoch}: train {train_mse:.5} val {val_mse:.5} lr {lr:.2e}");
    }

    Ok((
        best,
        TrainHistory {
            epochs: records,
            best_epoch,
            best_val_mse: best_val,
        },
    ))
}
