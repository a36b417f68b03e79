use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{train, PipelineError, PreparedData, TrainConfig};
use crate::gru::{param_count, ALLOWED_HIDDEN, ALLOWED_LAYERS};

/// The configuration carried forward when the sweep leaves the choice open.
pub const ADOPTED: (usize, usize) = (256, 2);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub hidden: usize,
    pub layers: usize,
    /// Losses at the best validation epoch.
    pub train_loss: f64,
    pub valid_loss: f64,
    pub param_count: usize,
    /// Losses at the last epoch run.
    pub final_train_loss: f64,
    pub final_valid_loss: f64,
    pub diverged: bool,
    pub is_best: bool,
    pub is_adopted: bool,
}

/// Every hidden size × depth in the supported value space.
pub fn full_grid() -> Vec<(usize, usize)> {
    ALLOWED_HIDDEN.iter().flat_map(|&h| ALLOWED_LAYERS.iter().map(move |&l| (h, l))).collect()
}

fn run_cell(data: &PreparedData, base: &TrainConfig, (hidden, layers): (usize, usize)) -> Result<SweepRow, PipelineError> {
    let cfg = TrainConfig { hidden, layers, ..base.clone() };
    let row = |train_loss, valid_loss, final_train_loss, final_valid_loss, diverged| SweepRow {
        hidden,
        layers,
        train_loss,
        valid_loss,
        param_count: param_count(hidden, layers),
        final_train_loss,
        final_valid_loss,
        diverged,
        is_best: false,
        is_adopted: (hidden, layers) == ADOPTED,
    };
    match train(data, &cfg, |_| {}) {
        Ok(out) => {
            let (b, l) = (out.best(), out.last());
            Ok(row(b.train_loss, b.valid_loss, l.train_loss, l.valid_loss, false))
        }
        Err(PipelineError::Diverged { .. }) => Ok(row(f64::NAN, f64::NAN, f64::NAN, f64::NAN, true)),
        Err(e) => Err(e),
    }
}

/// Train every grid cell with the same seed and settings; rows come back
/// sorted by `(hidden, layers)` with the lowest validation loss flagged.
/// Cells run on up to `jobs` threads; results do not depend on `jobs`.
pub fn sweep(grid: &[(usize, usize)], data: &PreparedData, base: &TrainConfig, jobs: usize) -> Result<Vec<SweepRow>, PipelineError> {
    if grid.is_empty() {
        return Err(PipelineError::InvalidConfig("empty sweep grid".into()));
    }
    let mut cells = grid.to_vec();
    cells.sort();
    cells.dedup();
    let results: Mutex<Vec<Option<Result<SweepRow, PipelineError>>>> = Mutex::new((0..cells.len()).map(|_| None).collect());
    let next = Mutex::new(0usize);
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, cells.len()) {
            s.spawn(|| loop {
                let i = {
                    let mut n = next.lock().expect("queue lock");
                    let i = *n;
                    *n += 1;
                    i
                };
                let Some(&cell) = cells.get(i) else { break };
                tracing::info!(hidden = cell.0, layers = cell.1, "sweep cell");
                let r = run_cell(data, base, cell);
                results.lock().expect("results lock")[i] = Some(r);
            });
        }
    });
    let mut rows = results
        .into_inner()
        .expect("results lock")
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect::<Result<Vec<_>, _>>()?;
    let best = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| !r.diverged)
        .min_by(|a, b| a.1.valid_loss.total_cmp(&b.1.valid_loss))
        .map(|(i, _)| i);
    if let Some(i) = best {
        rows[i].is_best = true;
    }
    Ok(rows)
}

pub fn write_sweep(rows: &[SweepRow], path: &Path) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "hidden,layers,train_loss,valid_loss,param_count,final_train_loss,final_valid_loss,diverged,is_best,is_adopted")?;
    for r in rows {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{},{}",
            r.hidden, r.layers, r.train_loss, r.valid_loss, r.param_count, r.final_train_loss, r.final_valid_loss, r.diverged, r.is_best, r.is_adopted
        )?;
    }
    f.flush()
}
