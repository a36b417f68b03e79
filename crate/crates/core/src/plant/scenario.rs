use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{measure, step, OperatorPolicy, PlantConfig, PlantError, PlantState, ReferenceOperator};
use crate::schema::SensorFrame;

/// Heater power levels of the validation staircase, W.
pub const STAIRCASE_LEVELS_W: [f64; 4] = [490.0, 1692.0, 4536.0, 9220.0];
/// Seconds each staircase level is held.
pub const STAIRCASE_HOLD_S: u64 = 1500;

/// A setpoint change. Unset fields keep their previous value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScheduleEvent {
    pub t: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heater: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pump1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pump2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rod: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demand: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    /// Whole seconds; the trajectory has `duration + 1` frames.
    pub duration: u64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub schedule: Vec<ScheduleEvent>,
    #[serde(default)]
    pub noise_enabled: bool,
    #[serde(default)]
    pub seed: u64,
    /// When set, actuators follow the demand through the reference operator
    /// and scheduled actuator setpoints are ignored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operator: Option<OperatorPolicy>,
    /// Defaults to the plant at ambient with the rod fully inserted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<PlantState>,
}

fn default_dt() -> f64 {
    0.1
}

impl Scenario {
    pub fn validate(&self) -> Result<(), PlantError> {
        let substeps = 1.0 / self.dt;
        if !(self.dt > 0.0 && self.dt <= 0.1) || (substeps - substeps.round()).abs() > 1e-9 {
            return Err(PlantError::InvalidScenario(format!("dt must divide 1 s and be <= 0.1 s, got {}", self.dt)));
        }
        let mut prev = f64::NEG_INFINITY;
        for e in &self.schedule {
            if !(0.0..=self.duration as f64).contains(&e.t) {
                return Err(PlantError::InvalidScenario(format!("event at t = {} outside [0, {}]", e.t, self.duration)));
            }
            if e.t < prev {
                return Err(PlantError::InvalidScenario("schedule is not time-ordered".into()));
            }
            prev = e.t;
        }
        Ok(())
    }

    fn initial_state(&self, cfg: &PlantConfig) -> PlantState {
        self.initial.clone().unwrap_or_else(|| {
            let mut s = PlantState::ambient(cfg);
            s.rod_position = 100.0;
            s.commands.rod = 100.0;
            s
        })
    }
}

/// Simulate the scenario and return one frame per second.
///
/// At each whole second the due schedule events (and the operator, if any)
/// set the commands for the following second; the frame taken at that
/// instant reports those commands.
pub fn run_scenario(cfg: &PlantConfig, scenario: &Scenario) -> Result<Vec<SensorFrame>, PlantError> {
    cfg.validate()?;
    scenario.validate()?;
    let substeps = (1.0 / scenario.dt).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let mut operator = scenario.operator.clone().map(ReferenceOperator::new);
    let mut state = scenario.initial_state(cfg);
    let mut cmds = state.commands;
    let mut demand = state.demand;
    let mut events = scenario.schedule.iter().peekable();
    let mut frames = Vec::with_capacity(scenario.duration as usize + 1);

    for sec in 0..=scenario.duration {
        while let Some(e) = events.next_if(|e| e.t <= sec as f64) {
            cmds.heater = e.heater.unwrap_or(cmds.heater);
            cmds.pump1 = e.pump1.unwrap_or(cmds.pump1);
            cmds.pump2 = e.pump2.unwrap_or(cmds.pump2);
            cmds.rod = e.rod.unwrap_or(cmds.rod);
            demand = e.demand.unwrap_or(demand);
        }
        if let Some(op) = operator.as_mut() {
            cmds = op.act(cfg, demand, 1.0)?;
        }
        cmds.validate(cfg)?;
        state.commands = cmds.quantized(cfg);
        state.demand = demand;
        frames.push(measure(cfg, &state, scenario.noise_enabled, &mut rng));
        if sec == scenario.duration {
            break;
        }
        for _ in 0..substeps {
            state = step(cfg, &state, &cmds, demand, scenario.dt)?;
        }
        // Re-anchor the clock to avoid drift from summing dt.
        state.t = (sec + 1) as f64;
    }
    Ok(frames)
}

/// Heater at full command with the rod trimming delivered power through the
/// four validation levels, pumps at 10 Hz, noise off.
pub fn staircase_scenario() -> Scenario {
    let schedule = STAIRCASE_LEVELS_W
        .iter()
        .enumerate()
        .map(|(i, &w)| ScheduleEvent {
            t: (i as u64 * STAIRCASE_HOLD_S) as f64,
            heater: Some(100.0),
            pump1: Some(10.0),
            pump2: Some(10.0),
            rod: Some(100.0 * (1.0 - w / 15_700.0)),
            demand: None,
        })
        .collect();
    Scenario {
        duration: STAIRCASE_LEVELS_W.len() as u64 * STAIRCASE_HOLD_S,
        dt: 0.1,
        schedule,
        noise_enabled: false,
        seed: 0,
        operator: None,
        initial: None,
    }
}

/// Demand bands visited by [`dataset_scenario`], in kW. Zero stands for the
/// idle line-up.
pub const DATASET_DEMAND_BANDS: [(f64, f64); 5] = [(0.0, 0.0), (0.4, 1.0), (1.0, 1.6), (1.6, 2.3), (2.3, 3.0)];

/// Randomised demand plateaus followed by the reference operator, with
/// sensor noise, producing `steps` frames.
///
/// Levels cycle through shuffled demand bands and holds are short relative
/// to the thermal response, so every stretch of a few hundred seconds spans
/// most of the operating range.
pub fn dataset_scenario(steps: u64, seed: u64) -> Scenario {
    let duration = steps.saturating_sub(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_da7a);
    let mut schedule = vec![ScheduleEvent { t: 0.0, demand: Some(0.0), ..Default::default() }];
    let mut bands = Vec::new();
    let mut t = 30u64;
    while t < duration {
        if bands.is_empty() {
            bands = DATASET_DEMAND_BANDS.to_vec();
            bands.shuffle(&mut rng);
        }
        let (lo, hi) = bands.pop().expect("refilled above");
        let demand = if hi > 0.0 { (rng.gen_range(lo..=hi) * 1000.0).round() / 1000.0 } else { 0.0 };
        schedule.push(ScheduleEvent { t: t as f64, demand: Some(demand), ..Default::default() });
        t += rng.gen_range(150..=300);
    }
    Scenario {
        duration,
        dt: 0.1,
        schedule,
        noise_enabled: true,
        seed,
        operator: Some(OperatorPolicy::default()),
        initial: None,
    }
}
