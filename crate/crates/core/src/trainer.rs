//! The training loop: validation split, per-epoch distillation, shuffled
//! mini-batches, hard-term mining, Adam updates, and validation-based
//! best-model tracking with patience.
//!
//! Each epoch recomputes the latent center over the full training partition
//! and distills the closest fraction rho_n of it; every weight update in
//! that epoch uses only distilled rows. Within a mini-batch the distance
//! terms are ranked and only the hardest fraction rho_h contributes to the
//! loss. The center is a constant within the epoch: gradients never flow
//! through it.
//!
//! Validation never mixes into training: the split happens once up front,
//! the validation rows are excluded from every distillation, and the
//! validation loss only selects which parameters to keep.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{
    add_weight_decay, latent_center, loss_and_upstream, regularized_loss, validation_loss,
    DistanceSet, LossKind, PairConvention,
};
use crate::matrix::Matrix;
use crate::mining::{distill, mine};
use crate::net::{adam_step, AdamHyper, AdamState, MetricNet};
use crate::seeds;

/// When the validation loss is measured for best-model tracking.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationCadence {
    /// After every weight update. Patience still decrements per epoch.
    PerMinibatch,
    /// Once at the end of each epoch; cheaper for large validation sets.
    PerEpoch,
}

/// Everything that shapes one training run. `Default` gives the engine's
/// reference configuration: a single tanh layer into a 64-dimensional
/// metric space, 50 epochs of batches of 256 at learning rate 1e-3 with
/// weight decay 1e-5, distillation fraction 2/3, mining fraction 1/3,
/// a 10% validation split with patience 5, and the instance loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Dimension of the metric space the data is mapped into.
    pub metric_dim: usize,
    /// Widths of hidden layers between input and metric space; empty means
    /// a single layer.
    pub hidden_dims: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Fraction of the training partition each epoch's distillation keeps.
    pub rho_n: f64,
    /// Fraction of a mini-batch's distance terms mining keeps.
    pub rho_h: f64,
    /// Fraction of the data held out for validation; 0 disables validation
    /// and early stopping.
    pub rho_v: f64,
    /// Improvement-free epochs tolerated before stopping early.
    pub patience: usize,
    pub loss: LossKind,
    pub validation_cadence: ValidationCadence,
    /// Pair set of the instance-kind validation loss.
    pub validation_pairs: PairConvention,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            metric_dim: 64,
            hidden_dims: Vec::new(),
            epochs: 50,
            batch_size: 256,
            learning_rate: 1e-3,
            weight_decay: 1e-5,
            rho_n: 2.0 / 3.0,
            rho_h: 1.0 / 3.0,
            rho_v: 0.1,
            patience: 5,
            loss: LossKind::InstanceCloseness,
            validation_cadence: ValidationCadence::PerMinibatch,
            validation_pairs: PairConvention::DistinctUnordered,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.metric_dim == 0 {
            return bad("metric_dim must be at least 1".into());
        }
        if self.hidden_dims.contains(&0) {
            return bad("hidden layer widths must be at least 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        let min_batch = match self.loss {
            LossKind::InstanceCloseness => 2,
            LossKind::CenterCloseness => 1,
        };
        if self.batch_size < min_batch {
            return bad(format!(
                "batch_size must be at least {min_batch} for the {} loss",
                self.loss
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be nonnegative, got {}", self.weight_decay));
        }
        if !(self.rho_n > 0.0 && self.rho_n <= 1.0) {
            return bad(format!("rho_n must lie in (0, 1], got {}", self.rho_n));
        }
        if !(self.rho_h > 0.0 && self.rho_h <= 1.0) {
            return bad(format!("rho_h must lie in (0, 1], got {}", self.rho_h));
        }
        if !(self.rho_v >= 0.0 && self.rho_v < 1.0) {
            return bad(format!("rho_v must lie in [0, 1), got {}", self.rho_v));
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        Ok(())
    }

    /// Layer dimension chain for data of width `input_dim`.
    pub fn network_dims(&self, input_dim: usize) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.metric_dim);
        dims
    }
}

/// One epoch's history line.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Mean regularized mini-batch loss over the epoch's updates; 0 when
    /// the epoch had no batch with any loss term.
    pub train_loss: f64,
    /// Validation loss of the parameters at the end of the epoch; None when
    /// validation is disabled.
    pub val_loss: Option<f64>,
    /// Size of the epoch's distilled set.
    pub distilled: usize,
}

/// Outcome of a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Parameters with the lowest recorded validation loss; the final
    /// parameters when validation is disabled.
    pub best_net: MetricNet,
    /// Lowest recorded validation loss; None when validation is disabled.
    pub best_val_loss: Option<f64>,
    /// Completed epochs.
    pub epochs_run: usize,
    /// True when patience ran out before the epoch budget did.
    pub stopped_early: bool,
    pub history: Vec<EpochStats>,
    /// Rows of the input matrix in the training partition, ascending.
    pub train_indices: Vec<usize>,
    /// Rows of the input matrix held out for validation, ascending.
    pub val_indices: Vec<usize>,
    /// Rows of the input matrix in the last epoch's distilled set,
    /// ascending. Always a subset of `train_indices`.
    pub final_distilled: Vec<usize>,
}

/// Splits `n_rows` rows into training and validation index sets: a uniform
/// draw without replacement of round-half-up(rho_v * n) rows (capped so the
/// training side keeps at least one) becomes the validation set. Both index
/// lists come back ascending.
pub fn split_validation(
    n_rows: usize,
    rho_v: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if n_rows < 2 {
        return Err(Error::EmptyBatch(format!(
            "need at least 2 rows to split, got {n_rows}"
        )));
    }
    if !(0.0..1.0).contains(&rho_v) {
        return Err(Error::InvalidConfig(format!(
            "rho_v must lie in [0, 1), got {rho_v}"
        )));
    }
    let want = (rho_v * n_rows as f64 + 0.5).floor() as usize;
    let n_val = want.min(n_rows - 1);
    let mut perm: Vec<usize> = (0..n_rows).collect();
    perm.shuffle(rng);
    let mut val: Vec<usize> = perm[..n_val].to_vec();
    let mut train: Vec<usize> = perm[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

/// One training mini-batch: row indices into the training partition and
/// the number of loss terms the block yields under the loss kind (pairs
/// for the instance loss, rows for the center loss).
#[derive(Clone, Debug, PartialEq)]
pub struct MiniBatch {
    pub rows: Vec<usize>,
    pub terms: usize,
}

/// Shuffles the distilled indices once and cuts them into consecutive
/// blocks of `batch_size` (the last may be smaller): ceil(|P|/b) batches
/// that partition P exactly.
pub fn build_minibatches(
    distilled: &[usize],
    batch_size: usize,
    kind: LossKind,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<MiniBatch>> {
    if distilled.is_empty() {
        return Err(Error::EmptyBatch("no distilled rows to batch".into()));
    }
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
    }
    let mut order = distilled.to_vec();
    order.shuffle(rng);
    Ok(order
        .chunks(batch_size)
        .map(|rows| {
            let s = rows.len();
            let terms = match kind {
                LossKind::InstanceCloseness => s * (s - 1) / 2,
                LossKind::CenterCloseness => s,
            };
            MiniBatch { rows: rows.to_vec(), terms }
        })
        .collect())
}

/// Trains a freshly initialized network on `m` (rows are instances,
/// columns features). The architecture comes from the config; parameters
/// start Glorot-initialized from a sub-stream of the config seed.
pub fn train(m: &Matrix, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    let dims = config.network_dims(m.cols());
    let net = MetricNet::glorot(&dims, seeds::derive(config.seed, seeds::STREAM_PARAMS))?;
    train_from(net, m, config)
}

/// Trains starting from the given parameters. The config's architecture
/// fields are ignored; the network's own shape is used as is.
pub fn train_from(mut net: MetricNet, m: &Matrix, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    if net.input_dim() != m.cols() {
        return Err(Error::ShapeMismatch(format!(
            "network expects {} inputs, data has {} columns",
            net.input_dim(),
            m.cols()
        )));
    }
    if !m.all_finite() {
        return Err(Error::Numeric("training data contains non-finite values".into()));
    }

    let mut data_rng =
        ChaCha8Rng::seed_from_u64(seeds::derive(config.seed, seeds::STREAM_DATA));
    let (train_idx, val_idx) = split_validation(m.rows(), config.rho_v, &mut data_rng)?;
    let train_matrix = m.gather_rows(&train_idx);
    let val_matrix = m.gather_rows(&val_idx);
    let has_validation = !val_idx.is_empty();

    let hyper = AdamHyper { learning_rate: config.learning_rate, ..AdamHyper::default() };
    let mut adam = AdamState::new(&net, hyper);

    let mut best_net = net.clone();
    let mut best_val: Option<f64> = None;
    let mut patience_left = config.patience;
    let mut history = Vec::with_capacity(config.epochs);
    let mut final_distilled: Vec<usize> = Vec::new();
    let mut epochs_run = 0;
    let mut stopped_early = false;

    for epoch in 1..=config.epochs {
        if has_validation && patience_left == 0 {
            stopped_early = true;
            break;
        }

        // The epoch's center: full training partition, current parameters.
        // Constant for the rest of the epoch.
        let mu = latent_center(&net, &train_matrix)?;
        let mut distilled = distill(&net, &train_matrix, config.rho_n)?;
        distilled.epoch = epoch;

        let batches =
            build_minibatches(&distilled.indices, config.batch_size, config.loss, &mut data_rng)?;

        let mut loss_sum = 0.0;
        let mut updates = 0usize;
        let mut improved = false;
        let mut last_val: Option<f64> = None;

        let consider = |lv: f64,
                            net: &MetricNet,
                            best_net: &mut MetricNet,
                            best_val: &mut Option<f64>,
                            patience_left: &mut usize,
                            improved: &mut bool| {
            if best_val.is_none_or(|b| lv < b) {
                *best_val = Some(lv);
                *best_net = net.clone();
                *patience_left = config.patience;
                *improved = true;
            }
        };

        for batch in &batches {
            if batch.terms == 0 {
                // A one-row block under the instance loss has no pair to
                // form; there is nothing to update from.
                continue;
            }
            let rows = train_matrix.gather_rows(&batch.rows);
            let trace = net.trace(&rows)?;
            let distances = DistanceSet::for_batch(config.loss, trace.output(), &mu)?;
            let selection = mine(&distances, config.rho_h)?;
            let (raw, upstream) =
                loss_and_upstream(config.loss, trace.output(), &mu, &selection.kept)?;
            let loss = regularized_loss(raw, &net, config.weight_decay)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite training loss in epoch {epoch}"
                )));
            }
            let mut grads = net.backward_with_trace(&rows, &trace, &upstream)?;
            add_weight_decay(&mut grads, &net, config.weight_decay);
            adam_step(&mut net, &grads, &mut adam)?;
            loss_sum += loss;
            updates += 1;

            if has_validation && config.validation_cadence == ValidationCadence::PerMinibatch {
                let lv = validation_loss(
                    config.loss,
                    &net,
                    &val_matrix,
                    &mu,
                    config.validation_pairs,
                )?;
                last_val = Some(lv);
                consider(lv, &net, &mut best_net, &mut best_val, &mut patience_left, &mut improved);
            }
        }

        if has_validation && config.validation_cadence == ValidationCadence::PerEpoch {
            let lv =
                validation_loss(config.loss, &net, &val_matrix, &mu, config.validation_pairs)?;
            last_val = Some(lv);
            consider(lv, &net, &mut best_net, &mut best_val, &mut patience_left, &mut improved);
        }

        if has_validation && !improved {
            patience_left -= 1;
        }

        history.push(EpochStats {
            epoch,
            train_loss: if updates > 0 { loss_sum / updates as f64 } else { 0.0 },
            val_loss: last_val,
            distilled: distilled.indices.len(),
        });
        final_distilled = distilled.indices.iter().map(|&i| train_idx[i]).collect();
        epochs_run = epoch;
    }

    if !has_validation {
        best_net = net;
    }

    Ok(TrainReport {
        best_net,
        best_val_loss: best_val,
        epochs_run,
        stopped_early,
        history,
        train_indices: train_idx,
        val_indices: val_idx,
        final_distilled,
    })
}
