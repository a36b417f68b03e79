//! Lumped-parameter reference simulator of the three-loop facility.
//!
//! Each fluid node obeys `C dT/dt = m cp (T_up - T) + Q_in - UA_loss (T - T_amb)`
//! and is advanced with classic RK4. Heat exchangers use counter-flow
//! effectiveness-NTU on inlet temperatures and deposit their duty on the
//! outlet nodes. Heater sheaths are first-order lags toward
//! `T_fluid + Q/hA`; they carry no energy, so the heater power goes straight
//! into the test-section node.

mod components;
mod config;
mod operator;
mod scenario;
mod steady;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{
    canonical_catalog, SensorFrame, ACTUATOR_IDS, AUX_HEATER_CURRENT, AUX_HEATER_VOLTAGE,
    AUX_ROD_POSITION, MEASURED_DIM, MEASURED_IDS,
};

pub use components::{
    counterflow_effectiveness, hx_heat_rate, pump_flow, quantize_freq, quantize_heater,
    rod_power_factor,
};
pub use config::PlantConfig;
pub use operator::{OperatorPolicy, ReferenceOperator};
pub use scenario::{
    dataset_scenario, run_scenario, staircase_scenario, Scenario, ScheduleEvent, STAIRCASE_HOLD_S, STAIRCASE_LEVELS_W,
};
pub use steady::{heat_for_demand, steady_state};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("{what} out of range: {value}")]
    OutOfRange { what: &'static str, value: f64 },
    #[error("non-finite state at t = {t} s (unstable dt or bad configuration)")]
    NonFinite { t: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

pub const N_FLUID: usize = 12;
pub const N_HEATER: usize = 4;
pub const N_STATE: usize = N_FLUID + N_HEATER;

/// Fluid nodes in flow order; the discriminant indexes [`PlantState::fluid`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FluidNode {
    Tf11 = 0,
    Tf12,
    Tf13,
    Tf14,
    Tf15,
    Tf21,
    Tf22,
    Tf23,
    Tf24,
    Tf25,
    Tf31,
    Tf32,
}

const TF11: usize = FluidNode::Tf11 as usize;
const TF12: usize = FluidNode::Tf12 as usize;
const TF14: usize = FluidNode::Tf14 as usize;
const TF15: usize = FluidNode::Tf15 as usize;
const TF21: usize = FluidNode::Tf21 as usize;
const TF22: usize = FluidNode::Tf22 as usize;
const TF24: usize = FluidNode::Tf24 as usize;
const TF25: usize = FluidNode::Tf25 as usize;
const TF31: usize = FluidNode::Tf31 as usize;
const TF32: usize = FluidNode::Tf32 as usize;

/// Actuator commands: heater %, pump frequencies Hz, rod % inserted.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Commands {
    pub heater: f64,
    pub pump1: f64,
    pub pump2: f64,
    pub rod: f64,
}

impl Commands {
    pub fn idle() -> Self {
        Commands { heater: 0.0, pump1: 0.0, pump2: 0.0, rod: 100.0 }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.heater, self.pump1, self.pump2, self.rod]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Commands { heater: a[0], pump1: a[1], pump2: a[2], rod: a[3] }
    }

    pub fn validate(&self, cfg: &PlantConfig) -> Result<(), PlantError> {
        let checks = [
            ("heater command", self.heater, 100.0),
            ("pump 1 frequency", self.pump1, cfg.pump_max_freq),
            ("pump 2 frequency", self.pump2, cfg.pump_max_freq),
            ("rod command", self.rod, 100.0),
        ];
        for (what, value, max) in checks {
            if !(0.0..=max).contains(&value) {
                return Err(PlantError::OutOfRange { what, value });
            }
        }
        Ok(())
    }

    /// Apply the controllers' resolution: 5 % heater steps, 0.1 Hz VFD steps.
    pub fn quantized(&self, cfg: &PlantConfig) -> Self {
        Commands {
            heater: quantize_heater(self.heater, cfg.heater_power_resolution),
            pump1: quantize_freq(self.pump1, cfg.vfd_resolution),
            pump2: quantize_freq(self.pump2, cfg.vfd_resolution),
            rod: self.rod,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub t: f64,
    /// °C, indexed by [`FluidNode`].
    pub fluid: [f64; N_FLUID],
    /// °C, heater sheaths TH1..TH4.
    pub heater_temps: [f64; N_HEATER],
    /// % inserted.
    pub rod_position: f64,
    /// Applied (quantized) commands.
    pub commands: Commands,
    /// kW
    pub demand: f64,
}

impl PlantState {
    /// Everything at ambient, pumps stopped, rod at `rod_position`.
    pub fn ambient(cfg: &PlantConfig) -> Self {
        PlantState {
            t: 0.0,
            fluid: [cfg.ambient_temp; N_FLUID],
            heater_temps: [cfg.ambient_temp; N_HEATER],
            rod_position: 0.0,
            commands: Commands::default(),
            demand: 0.0,
        }
    }

    pub fn temp(&self, node: FluidNode) -> f64 {
        self.fluid[node as usize]
    }

    /// kg/s for the primary, secondary and heat-sink loops.
    pub fn flows(&self, cfg: &PlantConfig) -> [f64; 3] {
        let f = |hz: f64| cfg.pump_max_flow * hz.clamp(0.0, cfg.pump_max_freq) / cfg.pump_max_freq;
        [f(self.commands.pump1), f(self.commands.pump2), cfg.sink_flow]
    }

    /// kPa at PT1..PT4.
    pub fn pressures(&self, cfg: &PlantConfig) -> [f64; 4] {
        let [m1, m2, _] = self.flows(cfg);
        let m = [m1, m1, m1, m2];
        std::array::from_fn(|i| cfg.pressure_ref[i] + cfg.pressure_coeff[i] * m[i] * m[i])
    }

    /// Thermal power delivered to the fluid, W.
    pub fn heater_power(&self, cfg: &PlantConfig) -> f64 {
        heater_power_at(cfg, self.commands.heater, self.rod_position)
    }

    /// Heat carried away by the heat-sink line, W.
    pub fn sink_removal(&self, cfg: &PlantConfig) -> f64 {
        cfg.sink_flow * cfg.cp * (self.fluid[TF32] - cfg.sink_supply_temp)
    }

    pub fn elec_power_kw(&self, cfg: &PlantConfig) -> f64 {
        cfg.conversion_efficiency * self.sink_removal(cfg) / 1000.0
    }

    /// Heater supply voltage and current (electrical side, before the rod).
    pub fn heater_electrical(&self, cfg: &PlantConfig) -> (f64, f64) {
        let frac = self.commands.heater / 100.0;
        let volts = cfg.heater_rated_voltage * frac.sqrt();
        let watts = frac * cfg.heater_max_power;
        let amps = if volts > 0.0 { watts / volts } else { 0.0 };
        (volts, amps)
    }

    pub fn energy_balance(&self, cfg: &PlantConfig) -> EnergyBalance {
        let losses = (0..N_FLUID)
            .map(|i| node_loss_ua(cfg, i) * (self.fluid[i] - cfg.ambient_temp))
            .sum();
        let heater = self.heater_power(cfg);
        let sink = self.sink_removal(cfg);
        EnergyBalance { heater_w: heater, sink_w: sink, losses_w: losses }
    }

    /// Noise-free projection onto the 25 measured channels.
    pub fn truth(&self, cfg: &PlantConfig) -> [f64; MEASURED_DIM] {
        let mut out = [0.0; MEASURED_DIM];
        out[..N_FLUID].copy_from_slice(&self.fluid);
        out[N_FLUID..N_FLUID + N_HEATER].copy_from_slice(&self.heater_temps);
        out[16..20].copy_from_slice(&self.pressures(cfg));
        out[20..23].copy_from_slice(&self.flows(cfg));
        out[23] = self.heater_power(cfg) / 1000.0;
        out[24] = self.elec_power_kw(cfg);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBalance {
    pub heater_w: f64,
    pub sink_w: f64,
    pub losses_w: f64,
}

impl EnergyBalance {
    /// Heater input minus sink removal minus ambient losses, W.
    pub fn residual(&self) -> f64 {
        self.heater_w - self.sink_w - self.losses_w
    }
}

fn heater_power_at(cfg: &PlantConfig, heater_pct: f64, rod_pct: f64) -> f64 {
    let factor = 1.0 - rod_pct.clamp(0.0, 100.0) / 100.0;
    heater_pct / 100.0 * cfg.heater_max_power * factor
}

fn loop_of(node: usize) -> usize {
    match node {
        0..=4 => 0,
        5..=9 => 1,
        _ => 2,
    }
}

fn node_capacity(cfg: &PlantConfig, node: usize) -> f64 {
    match loop_of(node) {
        0 => cfg.primary_capacity[node],
        1 => cfg.secondary_capacity[node - 5],
        _ => cfg.sink_capacity[node - 10],
    }
}

fn node_loss_ua(cfg: &PlantConfig, node: usize) -> f64 {
    let l = loop_of(node);
    let n = if l == 2 { 2.0 } else { 5.0 };
    cfg.loss_ua[l] / n
}

/// Node temperatures plus heater sheaths, the RK4 state vector.
type StateVec = [f64; N_STATE];

/// Right-hand side with flows and heater power frozen for the evaluation.
pub(crate) fn derivatives(cfg: &PlantConfig, flows: [f64; 3], q_heat: f64, y: &StateVec) -> StateVec {
    let [m1, m2, m3] = flows;
    let q1 = hx_heat_rate(y[TF14], y[TF21], m1, m2, cfg.hx1_ua, cfg.cp);
    let q2 = hx_heat_rate(y[TF24], y[TF31], m2, m3, cfg.hx2_ua, cfg.cp);
    let mut dy = [0.0; N_STATE];
    for i in 0..N_FLUID {
        let (m, upstream) = match i {
            TF11 => (m1, y[TF15]),
            TF21 => (m2, y[TF25]),
            TF31 => (m3, cfg.sink_supply_temp),
            _ => (if loop_of(i) == 0 { m1 } else if loop_of(i) == 1 { m2 } else { m3 }, y[i - 1]),
        };
        let source = match i {
            TF12 => q_heat,
            TF15 => -q1,
            TF22 => q1,
            TF25 => -q2,
            TF32 => q2,
            _ => 0.0,
        };
        let loss = node_loss_ua(cfg, i) * (y[i] - cfg.ambient_temp);
        dy[i] = (m * cfg.cp * (upstream - y[i]) + source - loss) / node_capacity(cfg, i);
    }
    let fluid_avg = 0.5 * (y[TF11] + y[TF12]);
    for k in 0..N_HEATER {
        let target = fluid_avg + q_heat / N_HEATER as f64 / cfg.heater_ha[k];
        dy[N_FLUID + k] = (target - y[N_FLUID + k]) / cfg.heater_lag;
    }
    dy
}

/// Rod position `tau` seconds into a slew from `start` toward `target`.
fn rod_at(start: f64, target: f64, rate_pct_s: f64, tau: f64) -> f64 {
    let gap = target - start;
    start + gap.signum() * (rate_pct_s * tau).min(gap.abs())
}

/// Advance the plant by `dt` seconds under constant `commands`.
pub fn step(
    cfg: &PlantConfig,
    state: &PlantState,
    commands: &Commands,
    demand: f64,
    dt: f64,
) -> Result<PlantState, PlantError> {
    if !(dt > 0.0 && dt <= 0.5) {
        return Err(PlantError::OutOfRange { what: "dt", value: dt });
    }
    commands.validate(cfg)?;
    let cmds = commands.quantized(cfg);
    let mut next = state.clone();
    next.commands = cmds;
    let flows = next.flows(cfg);
    let rate = cfg.rod_rate_pct();
    let rod0 = state.rod_position;
    let power = |tau: f64| heater_power_at(cfg, cmds.heater, rod_at(rod0, cmds.rod, rate, tau));

    let mut y: StateVec = [0.0; N_STATE];
    y[..N_FLUID].copy_from_slice(&state.fluid);
    y[N_FLUID..].copy_from_slice(&state.heater_temps);

    let axpy = |a: &StateVec, h: f64, k: &StateVec| -> StateVec { std::array::from_fn(|i| a[i] + h * k[i]) };
    let k1 = derivatives(cfg, flows, power(0.0), &y);
    let k2 = derivatives(cfg, flows, power(0.5 * dt), &axpy(&y, 0.5 * dt, &k1));
    let k3 = derivatives(cfg, flows, power(0.5 * dt), &axpy(&y, 0.5 * dt, &k2));
    let k4 = derivatives(cfg, flows, power(dt), &axpy(&y, dt, &k3));
    for i in 0..N_STATE {
        y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }

    next.fluid.copy_from_slice(&y[..N_FLUID]);
    next.heater_temps.copy_from_slice(&y[N_FLUID..]);
    next.rod_position = rod_at(rod0, cmds.rod, rate, dt);
    next.t = state.t + dt;
    next.demand = demand;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(PlantError::NonFinite { t: next.t });
    }
    Ok(next)
}

/// Read all channels, optionally corrupted by Gaussian sensor noise.
///
/// Temperatures get absolute noise, flows/pressures/powers relative noise,
/// and the rod readback a uniform error of up to 5 % of stroke. Actuator
/// values are the applied commands and are reported exactly.
pub fn measure(cfg: &PlantConfig, state: &PlantState, noise: bool, rng: &mut ChaCha8Rng) -> SensorFrame {
    let truth = state.truth(cfg);
    let catalog = canonical_catalog();
    let mut frame = SensorFrame { t: state.t, demand_elec: state.demand, ..Default::default() };
    for (id, v) in MEASURED_IDS.iter().zip(truth) {
        let value = if noise {
            let sigma = catalog.get(id).expect("catalog channel").uncertainty.sigma_at(v);
            if sigma > 0.0 {
                v + Normal::new(0.0, sigma).expect("finite sigma").sample(rng)
            } else {
                v
            }
        } else {
            v
        };
        frame.values.insert(id.to_string(), value);
    }
    for (id, v) in ACTUATOR_IDS.iter().zip(state.commands.as_array()) {
        frame.actuators.insert(id.to_string(), v);
    }
    let (volts, amps) = state.heater_electrical(cfg);
    let rod = if noise { state.rod_position + rng.gen_range(-5.0..=5.0) } else { state.rod_position };
    frame.aux.insert(AUX_HEATER_VOLTAGE.to_string(), volts);
    frame.aux.insert(AUX_HEATER_CURRENT.to_string(), amps);
    frame.aux.insert(AUX_ROD_POSITION.to_string(), rod);
    frame
}

/// A single-owner simulator instance stepping at a fixed internal `dt`.
#[derive(Debug, Clone)]
pub struct PlantSim {
    pub config: PlantConfig,
    pub state: PlantState,
    pub noise: bool,
    pub dt: f64,
    rng: ChaCha8Rng,
}

impl PlantSim {
    pub fn new(config: PlantConfig, state: PlantState, noise: bool, seed: u64) -> Result<Self, PlantError> {
        use rand::SeedableRng;
        config.validate()?;
        Ok(PlantSim { config, state, noise, dt: 0.1, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    /// Hold `commands` for `seconds`, stepping at the internal `dt`.
    pub fn advance(&mut self, commands: &Commands, demand: f64, seconds: f64) -> Result<(), PlantError> {
        let n = (seconds / self.dt).round().max(1.0) as usize;
        let h = seconds / n as f64;
        for _ in 0..n {
            self.state = step(&self.config, &self.state, commands, demand, h)?;
        }
        Ok(())
    }

    /// Apply commands without advancing time.
    pub fn apply(&mut self, commands: &Commands, demand: f64) -> Result<(), PlantError> {
        commands.validate(&self.config)?;
        self.state.commands = commands.quantized(&self.config);
        self.state.demand = demand;
        Ok(())
    }

    pub fn measure(&mut self) -> SensorFrame {
        measure(&self.config, &self.state, self.noise, &mut self.rng)
    }
}
