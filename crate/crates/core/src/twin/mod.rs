//! Surrogate-driven twin: autoregressive rollout, steady-state detection,
//! speed accounting and demand-following control of the plant.

mod control;
mod steady;

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gru::{FastGru, GruError, GruModel};
use crate::pipeline::Direction;
use crate::plant::{run_scenario, OperatorPolicy, PlantConfig, PlantError, Scenario, ScheduleEvent};
use crate::schema::{pack_input, unpack_output, SchemaError, SensorFrame, INPUT_DIM, MEASURED_DIM, OUTPUT_DIM};

pub use control::{clamp_actions, closed_loop_step, run_closed_loop, ControlActions, TwinController};
pub use steady::{detect_steady_state, SteadyDetector};

pub const DEFAULT_EPS: f64 = 1e-3;
pub const DEFAULT_WINDOW: usize = 30;

#[derive(Debug, Error)]
pub enum TwinError {
    #[error("need {need} frames of history, have {have}")]
    ColdStart { need: usize, have: usize },
    #[error("non-finite prediction at rollout step {step}")]
    NonFinitePrediction { step: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Gru(#[from] GruError),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutOptions {
    pub max_steps: usize,
    /// Largest per-step change, in normalised units, still counted as steady.
    pub eps: f64,
    /// Consecutive quiet steps required.
    pub window: usize,
}

impl Default for RolloutOptions {
    fn default() -> Self {
        RolloutOptions { max_steps: 3600, eps: DEFAULT_EPS, window: DEFAULT_WINDOW }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    /// Predicted frames, one per simulated second, starting one second after
    /// the last input frame.
    pub trajectory: Vec<SensorFrame>,
    pub steps_run: usize,
    pub converged: bool,
    pub convergence_step: Option<usize>,
    pub wall_clock_s: f64,
    pub speedup: f64,
}

/// Roll the surrogate forward from the last `T_e` physical input rows,
/// holding the demand channel at `demand`.
///
/// Each step predicts the next 10 s, keeps only the first predicted second,
/// appends its measured channels (with the target demand) to the window and
/// drops the oldest row.
pub fn rollout(model: &GruModel, init_window: &[[f64; INPUT_DIM]], demand: f64, opts: RolloutOptions) -> Result<RolloutResult, TwinError> {
    let mut fast = FastGru::new(model);
    rollout_with(&mut fast, model, init_window, demand, 0.0, opts)
}

/// As [`rollout`] with a prebuilt fast model; `t0` timestamps the last
/// input row.
pub fn rollout_with(
    fast: &mut FastGru,
    model: &GruModel,
    init_window: &[[f64; INPUT_DIM]],
    demand: f64,
    t0: f64,
    opts: RolloutOptions,
) -> Result<RolloutResult, TwinError> {
    let d = model.dims;
    if d.d_x != INPUT_DIM || d.d_out != OUTPUT_DIM {
        return Err(TwinError::InvalidArgument("model is not shaped for the facility channels".into()));
    }
    if init_window.len() != d.t_e {
        return Err(TwinError::ColdStart { need: d.t_e, have: init_window.len() });
    }
    if !(demand >= 0.0) || opts.window < 2 {
        return Err(TwinError::InvalidArgument("demand must be >= 0 and window >= 2".into()));
    }
    let norm = &model.norm;
    let start = Instant::now();

    let mut rows: Vec<f64> = init_window.iter().flatten().copied().collect();
    norm.zscore_input(&mut rows, Direction::Forward);
    let mut window: Vec<f32> = rows.iter().map(|v| *v as f32).collect();

    let mut detector = SteadyDetector::new(opts.eps, opts.window);
    let mut last = [0.0; OUTPUT_DIM];
    last[..MEASURED_DIM].copy_from_slice(&init_window[d.t_e - 1][..MEASURED_DIM]);
    norm.zscore_output(&mut last, Direction::Forward);
    detector.push(&last[..MEASURED_DIM]);

    let mut trajectory = Vec::with_capacity(opts.max_steps.min(4096));
    let mut convergence_step = None;
    let mut demand_row = [0.0; INPUT_DIM];
    demand_row[INPUT_DIM - 1] = demand;
    norm.zscore_input(&mut demand_row, Direction::Forward);
    let demand_norm = demand_row[INPUT_DIM - 1] as f32;

    for step in 1..=opts.max_steps {
        let pred = fast.predict(&window).map_err(|e| match e {
            GruError::NonFinitePrediction => TwinError::NonFinitePrediction { step },
            e => e.into(),
        })?;
        let first_norm: Vec<f64> = pred[..OUTPUT_DIM].iter().map(|v| *v as f64).collect();
        let mut phys = first_norm.clone();
        norm.zscore_output(&mut phys, Direction::Inverse);
        let out: [f64; OUTPUT_DIM] = phys.as_slice().try_into().expect("row width");
        trajectory.push(unpack_output(t0 + step as f64, &out, demand));

        // Slide: measured channels renormalised with input statistics.
        let mut next = [0.0; INPUT_DIM];
        next[..MEASURED_DIM].copy_from_slice(&out[..MEASURED_DIM]);
        norm.zscore_input(&mut next, Direction::Forward);
        window.drain(..INPUT_DIM);
        window.extend(next[..MEASURED_DIM].iter().map(|v| *v as f32));
        window.push(demand_norm);

        if detector.push(&first_norm[..MEASURED_DIM]) {
            convergence_step = Some(step);
            break;
        }
    }
    let wall_clock_s = start.elapsed().as_secs_f64();
    let steps_run = trajectory.len();
    Ok(RolloutResult {
        trajectory,
        steps_run,
        converged: convergence_step.is_some(),
        convergence_step,
        wall_clock_s,
        speedup: speedup(steps_run as f64, wall_clock_s),
    })
}

/// Simulated seconds per wall-clock second.
pub fn speedup(simulated_s: f64, wall_clock_s: f64) -> f64 {
    if wall_clock_s > 0.0 { simulated_s / wall_clock_s } else { f64::INFINITY }
}

/// Pack the last `n` frames into input rows.
pub fn input_rows(frames: &[SensorFrame]) -> Result<Vec<[f64; INPUT_DIM]>, TwinError> {
    Ok(frames.iter().map(pack_input).collect::<Result<Vec<_>, _>>()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupReport {
    pub steps: usize,
    pub converged: bool,
    pub convergence_step: Option<usize>,
    pub wall_clock_s: f64,
    pub speedup: f64,
    pub simulated_s: f64,
    pub final_values: BTreeMap<String, f64>,
}

pub fn speedup_report(result: &RolloutResult) -> SpeedupReport {
    let simulated_s = result.trajectory.len() as f64;
    let final_values = result
        .trajectory
        .last()
        .map(|f| {
            let mut m = f.values.clone();
            m.extend(f.actuators.clone());
            m.insert("Demand_Elec".into(), f.demand_elec);
            m
        })
        .unwrap_or_default();
    SpeedupReport {
        steps: result.steps_run,
        converged: result.converged,
        convergence_step: result.convergence_step,
        wall_clock_s: result.wall_clock_s,
        speedup: speedup(simulated_s, result.wall_clock_s),
        simulated_s,
        final_values,
    }
}

/// Thirty seconds of the idle line-up (pumps at base speed, heater off, rod
/// inserted) with sensor noise: the starting window for a cold start.
pub fn cold_start_frames(cfg: &PlantConfig, seed: u64) -> Result<Vec<SensorFrame>, TwinError> {
    let sc = Scenario {
        duration: (DEFAULT_WINDOW - 1) as u64,
        dt: 0.1,
        schedule: vec![ScheduleEvent { t: 0.0, demand: Some(0.0), ..Default::default() }],
        noise_enabled: true,
        seed,
        operator: Some(OperatorPolicy::default()),
        initial: None,
    };
    Ok(run_scenario(cfg, &sc)?)
}

/// Heater power (kW) the plant settles at when the reference operator follows
/// `demand` from a cold start, read from a noiseless run of `seconds`.
pub fn plant_steady_heat(cfg: &PlantConfig, demand: f64, seconds: u64) -> Result<f64, TwinError> {
    let sc = Scenario {
        duration: seconds,
        dt: 0.1,
        schedule: vec![ScheduleEvent { t: 0.0, demand: Some(demand), ..Default::default() }],
        noise_enabled: false,
        seed: 0,
        operator: Some(OperatorPolicy::default()),
        initial: None,
    };
    let frames = run_scenario(cfg, &sc)?;
    let q = |f: &SensorFrame| f.value("Heat_Power").expect("measured channel");
    let last = q(frames.last().expect("non-empty"));
    let before = q(&frames[frames.len() - 61]);
    if (last - before).abs() > 1e-6 * last.max(1.0) {
        return Err(TwinError::InvalidArgument(format!("plant still moving after {seconds} s")));
    }
    Ok(last)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gru::GruDims;
    use crate::plant::heat_for_demand;

    fn zero_model() -> GruModel {
        GruModel::zeros(GruDims::facility(128, 1)).unwrap()
    }

    #[test]
    fn speedup_examples() {
        assert!((speedup(345.0, 0.575) - 600.0).abs() < 1e-9);
        assert_eq!(speedup(100.0, 100.0), 1.0);
    }

    #[test]
    fn zero_model_is_immediately_steady() {
        // A zero network predicts the normalised mean forever: constant output.
        let m = zero_model();
        let init = vec![[0.0; INPUT_DIM]; 30];
        let r = rollout(&m, &init, 1.0, RolloutOptions::default()).unwrap();
        assert!(r.converged);
        assert_eq!(r.convergence_step, Some(DEFAULT_WINDOW));
        assert_eq!(r.steps_run, DEFAULT_WINDOW);
        let rep = speedup_report(&r);
        assert_eq!(rep.simulated_s, r.trajectory.len() as f64);
        assert_eq!(rep.final_values.len(), OUTPUT_DIM + 1);
        assert_eq!(r.trajectory[0].t, 1.0);
    }

    #[test]
    fn strict_tolerance_runs_to_max_steps() {
        let mut m = GruModel::init(GruDims::facility(128, 1), 3).unwrap();
        m.params.head_b.fill(0.5);
        let init: Vec<[f64; INPUT_DIM]> = (0..30).map(|t| std::array::from_fn(|c| (t * c) as f64 * 0.01)).collect();
        let opts = RolloutOptions { max_steps: 10, eps: 1e-15, window: 30 };
        let r = rollout(&m, &init, 1.889, opts).unwrap();
        assert!(!r.converged);
        assert_eq!(r.steps_run, 10);
        assert_eq!(r.trajectory.len(), 10);
    }

    #[test]
    fn rollout_is_deterministic_and_checks_window() {
        let m = GruModel::init(GruDims::facility(128, 1), 8).unwrap();
        let init: Vec<[f64; INPUT_DIM]> = (0..30).map(|t| std::array::from_fn(|c| ((t + c) % 5) as f64)).collect();
        let opts = RolloutOptions { max_steps: 40, ..Default::default() };
        let a = rollout(&m, &init, 1.0, opts).unwrap();
        let b = rollout(&m, &init, 1.0, opts).unwrap();
        assert_eq!(a.trajectory, b.trajectory);
        assert!(matches!(rollout(&m, &init[1..], 1.0, opts), Err(TwinError::ColdStart { .. })));
        assert!(rollout(&m, &init, -1.0, opts).is_err());
    }

    #[test]
    fn cold_start_window_is_idle() {
        let cfg = PlantConfig::default();
        let f = cold_start_frames(&cfg, 1).unwrap();
        assert_eq!(f.len(), 30);
        assert!(f.iter().all(|f| f.actuator("CR_AO").unwrap() == 100.0 && f.demand_elec == 0.0));
    }

    #[test]
    fn plant_oracle_matches_steady_solution() {
        let cfg = PlantConfig::default();
        let q = plant_steady_heat(&cfg, 1.889, 2400).unwrap();
        let exact = heat_for_demand(&cfg, 1.889, 12.8, 12.8).unwrap() / 1000.0;
        assert!((q - exact).abs() < 1e-6 * exact, "{q} vs {exact}");
    }
}
