use std::collections::VecDeque;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::TwinError;
use crate::gru::{FastGru, GruModel};
use crate::pipeline::Direction;
use crate::plant::{Commands, PlantConfig, PlantSim};
use crate::schema::{pack_input, SensorFrame, INPUT_DIM, MEASURED_DIM, OUTPUT_DIM};

/// Actuator commands as applied to the plant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlActions {
    /// % of heater power
    pub heater_ao: f64,
    /// Hz
    pub pump1_ao: f64,
    /// Hz
    pub pump2_ao: f64,
    /// % inserted
    pub cr_ao: f64,
}

impl ControlActions {
    pub fn commands(&self) -> Commands {
        Commands { heater: self.heater_ao, pump1: self.pump1_ao, pump2: self.pump2_ao, rod: self.cr_ao }
    }
}

/// Clip raw `[heater, pump1, pump2, rod]` to the actuator ranges and keep the
/// rod command within one `dt` of travel from `current_rod`.
pub fn clamp_actions(raw: [f64; 4], current_rod: f64, dt: f64, cfg: &PlantConfig) -> Result<ControlActions, TwinError> {
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(TwinError::NonFinitePrediction { step: 0 });
    }
    let travel = cfg.rod_rate_pct() * dt;
    let rod = raw[3].clamp(0.0, 100.0).clamp(current_rod - travel, current_rod + travel).clamp(0.0, 100.0);
    Ok(ControlActions {
        heater_ao: raw[0].clamp(0.0, 100.0),
        pump1_ao: raw[1].clamp(0.0, cfg.pump_max_freq),
        pump2_ao: raw[2].clamp(0.0, cfg.pump_max_freq),
        cr_ao: rod,
    })
}

/// Learned controller: the surrogate's first predicted actuator row,
/// applied once per second.
#[derive(Debug, Clone)]
pub struct TwinController {
    model: GruModel,
    fast: FastGru,
    history: VecDeque<SensorFrame>,
    pub last_latency: Duration,
}

impl TwinController {
    pub fn new(model: GruModel) -> Self {
        let fast = FastGru::new(&model);
        let cap = model.dims.t_e;
        TwinController { model, fast, history: VecDeque::with_capacity(cap + 1), last_latency: Duration::ZERO }
    }

    pub fn model(&self) -> &GruModel {
        &self.model
    }

    /// Append a measured frame; only the latest `T_e` are kept.
    pub fn observe(&mut self, frame: SensorFrame) {
        if self.history.len() == self.model.dims.t_e {
            self.history.pop_front();
        }
        self.history.push_back(frame);
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    /// Physical actuator values of the first predicted second, with the
    /// newest row's demand replaced by `demand`.
    pub fn predict_actions(&mut self, demand: f64) -> Result<[f64; 4], TwinError> {
        let need = self.model.dims.t_e;
        if self.history.len() < need {
            return Err(TwinError::ColdStart { need, have: self.history.len() });
        }
        let start = Instant::now();
        let mut rows = Vec::with_capacity(need * INPUT_DIM);
        for f in &self.history {
            rows.extend(pack_input(f)?);
        }
        rows[need * INPUT_DIM - 1] = demand;
        self.model.norm.zscore_input(&mut rows, Direction::Forward);
        let window: Vec<f32> = rows.iter().map(|v| *v as f32).collect();
        let pred = self.fast.predict(&window)?;
        let mut first = [0.0; OUTPUT_DIM];
        for (d, s) in first.iter_mut().zip(pred) {
            *d = *s as f64;
        }
        self.model.norm.zscore_output(&mut first, Direction::Inverse);
        self.last_latency = start.elapsed();
        Ok(first[MEASURED_DIM..].try_into().expect("four actuators"))
    }
}

/// Predict, clamp and apply one second of actuation. The caller advances
/// the plant and feeds the next frame back through
/// [`TwinController::observe`].
pub fn closed_loop_step(plant: &mut PlantSim, ctrl: &mut TwinController, demand: f64) -> Result<ControlActions, TwinError> {
    if !(demand >= 0.0) {
        return Err(TwinError::InvalidArgument("demand must be >= 0".into()));
    }
    let raw = ctrl.predict_actions(demand)?;
    let actions = clamp_actions(raw, plant.state.rod_position, 1.0, &plant.config)?;
    plant.apply(&actions.commands(), demand)?;
    Ok(actions)
}

/// Run the closed loop for `seconds`, returning each applied action with
/// the frame measured after it.
pub fn run_closed_loop(
    plant: &mut PlantSim,
    ctrl: &mut TwinController,
    demand: f64,
    seconds: usize,
) -> Result<Vec<(ControlActions, SensorFrame)>, TwinError> {
    let mut out = Vec::with_capacity(seconds);
    for _ in 0..seconds {
        let a = closed_loop_step(plant, ctrl, demand)?;
        let cmds = plant.state.commands;
        plant.advance(&cmds, demand, 1.0)?;
        let frame = plant.measure();
        ctrl.observe(frame.clone());
        out.push((a, frame));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gru::GruDims;
    use crate::plant::PlantState;
    use crate::twin::cold_start_frames;
    use proptest::prelude::*;

    fn cfg() -> PlantConfig {
        PlantConfig::default()
    }

    #[test]
    fn pump_over_range_is_clipped() {
        let a = clamp_actions([50.0, 75.0, -3.0, 20.0], 20.0, 1.0, &cfg()).unwrap();
        assert_eq!((a.pump1_ao, a.pump2_ao, a.heater_ao, a.cr_ao), (60.0, 0.0, 50.0, 20.0));
    }

    #[test]
    fn rod_jump_is_slew_limited() {
        let a = clamp_actions([0.0, 10.0, 10.0, 0.0], 100.0, 1.0, &cfg()).unwrap();
        let rate = 50.8 / 609.6 * 100.0;
        assert!((a.cr_ao - (100.0 - rate)).abs() < 1e-12);
        assert!((100.0 - a.cr_ao - 8.333).abs() < 1e-3);
    }

    #[test]
    fn nan_action_is_rejected() {
        assert!(clamp_actions([f64::NAN, 10.0, 10.0, 0.0], 0.0, 1.0, &cfg()).is_err());
    }

    proptest! {
        #[test]
        fn clamped_actions_are_always_safe(
            raw in prop::array::uniform4(-1e4f64..1e4),
            rod in 0.0f64..=100.0,
            dt in 0.1f64..2.0,
        ) {
            let c = cfg();
            let a = clamp_actions(raw, rod, dt, &c).unwrap();
            prop_assert!((0.0..=100.0).contains(&a.heater_ao));
            prop_assert!((0.0..=c.pump_max_freq).contains(&a.pump1_ao));
            prop_assert!((0.0..=c.pump_max_freq).contains(&a.pump2_ao));
            prop_assert!((0.0..=100.0).contains(&a.cr_ao));
            prop_assert!((a.cr_ao - rod).abs() <= c.rod_rate_pct() * dt + 1e-9);
            prop_assert!(a.commands().validate(&c).is_ok());
        }
    }

    #[test]
    fn cold_start_is_refused_until_warm() {
        let c = cfg();
        let model = GruModel::init(GruDims::facility(128, 1), 2).unwrap();
        let mut ctrl = TwinController::new(model);
        let mut plant = PlantSim::new(c.clone(), PlantState::ambient(&c), false, 1).unwrap();
        let frames = cold_start_frames(&c, 3).unwrap();
        for f in frames.iter().take(29) {
            ctrl.observe(f.clone());
        }
        assert!(matches!(closed_loop_step(&mut plant, &mut ctrl, 1.0), Err(TwinError::ColdStart { need: 30, have: 29 })));
        ctrl.observe(frames[29].clone());
        let a = closed_loop_step(&mut plant, &mut ctrl, 1.0).unwrap();
        assert_eq!(plant.state.commands, a.commands().quantized(&c));
        assert_eq!(plant.state.demand, 1.0);
        // The window keeps only the latest frames.
        ctrl.observe(frames[0].clone());
        assert_eq!(ctrl.history_len(), 30);
    }

    #[test]
    fn closed_loop_runs_and_stays_in_bounds() {
        let c = cfg();
        let model = GruModel::init(GruDims::facility(128, 1), 5).unwrap();
        let mut ctrl = TwinController::new(model);
        let mut plant = PlantSim::new(c.clone(), PlantState::ambient(&c), true, 1).unwrap();
        for f in cold_start_frames(&c, 4).unwrap() {
            ctrl.observe(f);
        }
        let mut prev_rod = plant.state.rod_position;
        for (a, _) in run_closed_loop(&mut plant, &mut ctrl, 1.5, 20).unwrap() {
            assert!((a.cr_ao - prev_rod).abs() <= c.rod_rate_pct() + 1e-9);
            prev_rod = plant.state.rod_position;
        }
        assert!(ctrl.last_latency < Duration::from_millis(100));
    }
}
