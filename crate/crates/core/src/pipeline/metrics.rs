use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{Direction, PipelineError, WindowSet};
use crate::gru::{forward_batch, GruModel};
use crate::schema::OUTPUT_DIM;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mae: f64,
    pub rmse: f64,
}

/// Errors per channel group in physical units; actuators in percent of range.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub temperature: ErrorStats,
    pub pressure: ErrorStats,
    pub flow: ErrorStats,
    pub power: ErrorStats,
    pub actuator: ErrorStats,
    pub windows: usize,
}

pub const TEMPERATURE_COLS: Range<usize> = 0..16;
pub const PRESSURE_COLS: Range<usize> = 16..20;
pub const FLOW_COLS: Range<usize> = 20..23;
pub const POWER_COLS: Range<usize> = 23..25;
pub const ACTUATOR_COLS: Range<usize> = 25..29;
/// Full-scale of Heater_AO, Pump1_AO, Pump2_AO, CR_AO.
pub const ACTUATOR_RANGE: [f64; 4] = [100.0, 60.0, 60.0, 100.0];

/// Group errors between predicted and true output rows (physical units).
pub fn group_metrics(pred: &[[f64; OUTPUT_DIM]], target: &[[f64; OUTPUT_DIM]]) -> GroupMetrics {
    assert_eq!(pred.len(), target.len());
    let stats = |cols: Range<usize>, scale: &dyn Fn(usize) -> f64| {
        let (mut abs, mut sq, mut n) = (0.0, 0.0, 0usize);
        for (p, t) in pred.iter().zip(target) {
            for c in cols.clone() {
                let e = (p[c] - t[c]) * scale(c);
                abs += e.abs();
                sq += e * e;
                n += 1;
            }
        }
        if n == 0 {
            return ErrorStats::default();
        }
        ErrorStats { mae: abs / n as f64, rmse: (sq / n as f64).sqrt() }
    };
    let unit = |_| 1.0;
    GroupMetrics {
        temperature: stats(TEMPERATURE_COLS, &unit),
        pressure: stats(PRESSURE_COLS, &unit),
        flow: stats(FLOW_COLS, &unit),
        power: stats(POWER_COLS, &unit),
        actuator: stats(ACTUATOR_COLS, &|c| 100.0 / ACTUATOR_RANGE[c - ACTUATOR_COLS.start]),
        windows: 0,
    }
}

/// Denormalised predictions and targets for every window of `set`, each
/// window contributing its 10 horizon rows.
pub fn predict_set(model: &GruModel, set: &WindowSet) -> Result<(Vec<[f64; OUTPUT_DIM]>, Vec<[f64; OUTPUT_DIM]>), PipelineError> {
    let starts: Vec<usize> = (0..set.len()).collect();
    let mut pred = Vec::with_capacity(set.len() * model.dims.t_d);
    let mut target = Vec::with_capacity(pred.capacity());
    for part in starts.chunks(256) {
        let (x, y) = set.gather::<f64>(part);
        let cache = forward_batch(model, x.view(), part.len())?;
        for (src, dst) in [(cache.pred.as_slice().expect("contiguous"), &mut pred), (y.as_slice().expect("contiguous"), &mut target)] {
            let mut buf = src.to_vec();
            model.norm.zscore_output(&mut buf, Direction::Inverse);
            dst.extend(buf.chunks_exact(OUTPUT_DIM).map(|r| <[f64; OUTPUT_DIM]>::try_from(r).expect("row width")));
        }
    }
    Ok((pred, target))
}

pub fn evaluate(model: &GruModel, set: &WindowSet) -> Result<GroupMetrics, PipelineError> {
    let (pred, target) = predict_set(model, set)?;
    Ok(GroupMetrics { windows: set.len(), ..group_metrics(&pred, &target) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(n: usize) -> Vec<[f64; OUTPUT_DIM]> {
        (0..n).map(|i| std::array::from_fn(|c| (i * 31 + c * 7) as f64 % 13.0)).collect()
    }

    #[test]
    fn perfect_prediction_has_zero_error() {
        let t = rows(20);
        assert_eq!(group_metrics(&t, &t), GroupMetrics::default());
    }

    #[test]
    fn one_kelvin_offset_on_temperatures_only() {
        let t = rows(20);
        let p: Vec<_> = t
            .iter()
            .map(|r| {
                let mut r = *r;
                TEMPERATURE_COLS.for_each(|c| r[c] += 1.0);
                r
            })
            .collect();
        let m = group_metrics(&p, &t);
        assert_eq!(m.temperature, ErrorStats { mae: 1.0, rmse: 1.0 });
        assert_eq!(m.pressure, ErrorStats::default());
        assert_eq!(m.actuator, ErrorStats::default());
    }

    #[test]
    fn actuator_errors_in_percent_of_range() {
        let t = rows(4);
        let p: Vec<_> = t
            .iter()
            .map(|r| {
                let mut r = *r;
                r[26] += 6.0;
                r
            })
            .collect();
        // 6 Hz on a 60 Hz pump is 10 %, averaged over four actuator columns.
        let m = group_metrics(&p, &t);
        assert!((m.actuator.mae - 2.5).abs() < 1e-12);
        assert!((m.actuator.rmse - 5.0).abs() < 1e-12);
    }
}
