use std::ops::Range;

use ndarray::{s, Array2};

use super::{Direction, NormStats, PipelineError};
use crate::gru::{Real, DECODER_STEPS, ENCODER_STEPS};
use crate::schema::{pack_input, pack_output, SensorFrame, INPUT_DIM, OUTPUT_DIM};

/// Rows spanned by one window: 30 input steps followed by 10 target steps.
pub const WINDOW_SPAN: usize = ENCODER_STEPS + DECODER_STEPS;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Range<usize>,
    pub valid: Range<usize>,
    pub test: Range<usize>,
}

/// Contiguous 70/10/20 partition by floor, remainder to the test split.
pub fn split_sequential(n_steps: usize) -> Result<Splits, PipelineError> {
    if n_steps < 50 {
        return Err(PipelineError::TooShort { need: 50, got: n_steps });
    }
    let n_train = n_steps * 7 / 10;
    let n_valid = n_steps / 10;
    Ok(Splits { train: 0..n_train, valid: n_train..n_train + n_valid, test: n_train + n_valid..n_steps })
}

/// One training example in physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    /// 30 × 26
    pub input: Array2<f64>,
    /// 10 × 29
    pub target: Array2<f64>,
    pub origin_index: usize,
}

/// Packed input and output rows of a trajectory.
pub fn pack_rows(traj: &[SensorFrame]) -> Result<(Vec<[f64; INPUT_DIM]>, Vec<[f64; OUTPUT_DIM]>), PipelineError> {
    let inputs = traj.iter().map(pack_input).collect::<Result<Vec<_>, _>>()?;
    let outputs = traj.iter().map(pack_output).collect::<Result<Vec<_>, _>>()?;
    Ok((inputs, outputs))
}

/// Every window lying wholly inside `range`, one per start index.
pub fn make_windows(range: Range<usize>, traj: &[SensorFrame]) -> Result<Vec<WindowSample>, PipelineError> {
    if range.len() < WINDOW_SPAN || range.end > traj.len() {
        return Err(PipelineError::TooShort { need: WINDOW_SPAN, got: range.len().min(traj.len()) });
    }
    let (inputs, outputs) = pack_rows(&traj[range.clone()])?;
    Ok((0..=range.len() - WINDOW_SPAN)
        .map(|k| WindowSample {
            input: Array2::from_shape_fn((ENCODER_STEPS, INPUT_DIM), |(t, c)| inputs[k + t][c]),
            target: Array2::from_shape_fn((DECODER_STEPS, OUTPUT_DIM), |(t, c)| outputs[k + ENCODER_STEPS + t][c]),
            origin_index: range.start + k,
        })
        .collect())
}

/// Normalised rows of one split, from which windows are gathered on demand.
#[derive(Debug, Clone)]
pub struct WindowSet {
    /// rows × 26, normalised
    pub inputs: Array2<f64>,
    /// rows × 29, normalised
    pub outputs: Array2<f64>,
    /// Offset of row 0 in the source trajectory.
    pub offset: usize,
}

impl WindowSet {
    pub fn from_rows(
        inputs: &[[f64; INPUT_DIM]],
        outputs: &[[f64; OUTPUT_DIM]],
        offset: usize,
        norm: &NormStats,
    ) -> Result<Self, PipelineError> {
        if inputs.len() < WINDOW_SPAN {
            return Err(PipelineError::TooShort { need: WINDOW_SPAN, got: inputs.len() });
        }
        let mut i: Vec<f64> = inputs.iter().flatten().copied().collect();
        let mut o: Vec<f64> = outputs.iter().flatten().copied().collect();
        norm.zscore_input(&mut i, Direction::Forward);
        norm.zscore_output(&mut o, Direction::Forward);
        Ok(WindowSet {
            inputs: Array2::from_shape_vec((inputs.len(), INPUT_DIM), i).expect("row count"),
            outputs: Array2::from_shape_vec((outputs.len(), OUTPUT_DIM), o).expect("row count"),
            offset,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows() + 1 - WINDOW_SPAN
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Time-major `(30·B) × 26` inputs and `B × 290` targets for the given
    /// window starts (relative to this set).
    pub fn gather<T: Real>(&self, starts: &[usize]) -> (Array2<T>, Array2<T>) {
        let b = starts.len();
        let cast = |v: &f64| T::from(*v).expect("finite");
        let mut x = Array2::zeros((ENCODER_STEPS * b, INPUT_DIM));
        let mut y = Array2::zeros((b, DECODER_STEPS * OUTPUT_DIM));
        for (j, &k) in starts.iter().enumerate() {
            for t in 0..ENCODER_STEPS {
                x.row_mut(t * b + j).assign(&self.inputs.row(k + t).map(cast));
            }
            let block = self.outputs.slice(s![k + ENCODER_STEPS..k + WINDOW_SPAN, ..]);
            y.row_mut(j).assign(&ndarray::Array1::from_iter(block.iter().map(cast)));
        }
        (x, y)
    }
}

/// A trajectory split, normalised with training statistics, ready to train.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub splits: Splits,
    pub norm: NormStats,
    pub train: WindowSet,
    pub valid: WindowSet,
    pub test: WindowSet,
}

impl PreparedData {
    pub fn new(traj: &[SensorFrame]) -> Result<Self, PipelineError> {
        let splits = split_sequential(traj.len())?;
        let (inputs, outputs) = pack_rows(traj)?;
        let tr = splits.train.clone();
        let norm = NormStats::fit(&inputs[tr.clone()], &outputs[tr]);
        let set = |r: &Range<usize>| WindowSet::from_rows(&inputs[r.clone()], &outputs[r.clone()], r.start, &norm);
        Ok(PreparedData { train: set(&splits.train)?, valid: set(&splits.valid)?, test: set(&splits.test)?, norm, splits })
    }
}
