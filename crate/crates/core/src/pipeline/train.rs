use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PipelineError, PreparedData, WindowSet};
use crate::gru::{
    adam_step, forward_batch, AdamState, GruDims, GruModel, MixedPrecision, PlateauScheduler, ALLOWED_HIDDEN,
    ALLOWED_LAYERS,
};
use crate::schema::{INPUT_DIM, OUTPUT_DIM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden: usize,
    pub layers: usize,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: 256,
            layers: 2,
            batch: 128,
            lr: 1e-3,
            weight_decay: 1e-5,
            early_stop_patience: 100,
            max_epochs: 2000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !ALLOWED_HIDDEN.contains(&self.hidden) {
            return Err(PipelineError::InvalidConfig(format!("hidden must be one of {ALLOWED_HIDDEN:?}, got {}", self.hidden)));
        }
        if !ALLOWED_LAYERS.contains(&self.layers) {
            return Err(PipelineError::InvalidConfig(format!("layers must be one of {ALLOWED_LAYERS:?}, got {}", self.layers)));
        }
        if self.batch == 0 || self.max_epochs == 0 || !(self.lr > 0.0) || self.weight_decay < 0.0 {
            return Err(PipelineError::InvalidConfig("batch, max_epochs and lr must be positive".into()));
        }
        Ok(())
    }
}

/// Stop once validation loss has not strictly improved for `patience` epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping { patience, best: f64::INFINITY, best_epoch: 0 }
    }

    /// Record epoch `epoch` (1-based). Returns `(improved, stop)`.
    pub fn update(&mut self, epoch: usize, val_loss: f64) -> (bool, bool) {
        let improved = val_loss < self.best;
        if improved {
            self.best = val_loss;
            self.best_epoch = epoch;
        }
        (improved, epoch - self.best_epoch >= self.patience)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Snapshot from the best validation epoch, with statistics embedded.
    pub model: GruModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainOutcome {
    pub fn best(&self) -> &EpochRecord {
        &self.history[self.best_epoch - 1]
    }

    pub fn last(&self) -> &EpochRecord {
        self.history.last().expect("at least one epoch")
    }
}

/// Mean normalised MSE over every window of `set`.
pub fn dataset_loss(model: &GruModel, set: &WindowSet, chunk: usize) -> Result<f64, PipelineError> {
    let starts: Vec<usize> = (0..set.len()).collect();
    let mut total = 0.0;
    for part in starts.chunks(chunk.max(1)) {
        let (x, y) = set.gather::<f64>(part);
        let cache = forward_batch(model, x.view(), part.len())?;
        total += (&cache.pred - &y).iter().map(|v| v * v).sum::<f64>();
    }
    Ok(total / (set.len() * model.dims.head_width()) as f64)
}

/// [`dataset_loss`] evaluated in single precision.
fn dataset_loss_f32(mp: &mut MixedPrecision, model: &GruModel, set: &WindowSet, chunk: usize) -> Result<f64, PipelineError> {
    let starts: Vec<usize> = (0..set.len()).collect();
    let mut total = 0.0;
    for part in starts.chunks(chunk.max(1)) {
        let (x, y) = set.gather::<f32>(part);
        let pred = mp.forward(model, x.view(), part.len())?;
        total += pred.iter().zip(&y).map(|(p, t)| (*p as f64 - *t as f64).powi(2)).sum::<f64>();
    }
    Ok(total / (set.len() * model.dims.head_width()) as f64)
}

/// Train on already-normalised window sets.
///
/// Forward and backward passes run in f32 against f64 master weights.
pub fn train_windows(
    train: &WindowSet,
    valid: &WindowSet,
    norm: &super::NormStats,
    cfg: &TrainConfig,
    dims: GruDims,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome, PipelineError> {
    if train.is_empty() || valid.is_empty() {
        return Err(PipelineError::TooShort { need: super::WINDOW_SPAN, got: 0 });
    }
    let mut model = GruModel::init(dims, cfg.seed)?;
    model.norm = norm.clone();
    let mut adam = AdamState::new(&model.params, cfg.lr, cfg.weight_decay);
    let mut sched = PlateauScheduler::default();
    let mut stopper = EarlyStopping::new(cfg.early_stop_patience);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e37_79b9));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = model.params.clone();
    let mut history = Vec::new();
    let mut mp = MixedPrecision::new(&model);

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for part in order.chunks(cfg.batch) {
            let (x, y) = train.gather::<f32>(part);
            let (loss, grads) = mp.loss_and_grads(&model, x.view(), y.view(), part.len())?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(PipelineError::Diverged { epoch });
            }
            adam_step(&mut model, &grads, &mut adam);
            sum += loss * part.len() as f64;
        }
        let train_loss = sum / order.len() as f64;
        let valid_loss = dataset_loss_f32(&mut mp, &model, valid, 256)?;
        if !valid_loss.is_finite() {
            return Err(PipelineError::Diverged { epoch });
        }
        let rec = EpochRecord { epoch, train_loss, valid_loss, lr: adam.lr };
        on_epoch(&rec);
        history.push(rec);
        adam.lr = sched.observe(valid_loss, adam.lr);
        let (improved, stop) = stopper.update(epoch, valid_loss);
        if improved {
            best = model.params.clone();
        }
        if stop {
            break;
        }
    }
    model.params = best;
    model.touch();
    Ok(TrainOutcome { model, history, best_epoch: stopper.best_epoch })
}

/// Train the facility model on prepared data.
pub fn train(data: &PreparedData, cfg: &TrainConfig, on_epoch: impl FnMut(&EpochRecord)) -> Result<TrainOutcome, PipelineError> {
    cfg.validate()?;
    let dims = GruDims::facility(cfg.hidden, cfg.layers);
    debug_assert_eq!((dims.d_x, dims.d_out), (INPUT_DIM, OUTPUT_DIM));
    train_windows(&data.train, &data.valid, &data.norm, cfg, dims, on_epoch)
}

pub fn write_history(history: &[EpochRecord], path: &Path) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "epoch,train_loss,valid_loss,lr")?;
    for r in history {
        writeln!(f, "{},{},{},{}", r.epoch, r.train_loss, r.valid_loss, r.lr)?;
    }
    f.flush()
}
