//! From trajectories to trained surrogates: normalisation, windowing,
//! sequential splits, training with early stopping, metrics and sweeps.

mod data;
mod metrics;
mod norm;
mod sweep;
mod train;

use thiserror::Error;

pub use data::{make_windows, pack_rows, split_sequential, PreparedData, Splits, WindowSample, WindowSet, WINDOW_SPAN};
pub use metrics::{evaluate, group_metrics, predict_set, ErrorStats, GroupMetrics, ACTUATOR_RANGE};
pub use norm::{Direction, NormStats};
pub use sweep::{full_grid, sweep, write_sweep, SweepRow, ADOPTED};
pub use train::{dataset_loss, train, train_windows, write_history, EarlyStopping, EpochRecord, TrainConfig, TrainOutcome};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("too few rows: need {need}, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Schema(#[from] crate::schema::SchemaError),
    #[error(transparent)]
    Gru(#[from] crate::gru::GruError),
}
