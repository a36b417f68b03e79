use serde::{Deserialize, Serialize};

use super::PlantError;

/// Physical constants of the three-loop facility.
///
/// Loop temperatures are lumped into five nodes per closed loop plus two
/// nodes on the once-through heat-sink line; capacities are listed in flow
/// order (see [`super::FluidNode`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantConfig {
    /// W, four cartridges at 3.925 kW.
    pub heater_max_power: f64,
    pub heater_rated_voltage: f64,
    /// Percent step of the heater power controller.
    pub heater_power_resolution: f64,
    /// kg/s at `pump_max_freq`.
    pub pump_max_flow: f64,
    pub pump_max_freq: f64,
    pub vfd_resolution: f64,
    /// mm
    pub rod_stroke: f64,
    /// mm/s
    pub rod_speed: f64,
    /// J/(kg K)
    pub cp: f64,
    /// J/K per node.
    pub primary_capacity: [f64; 5],
    pub secondary_capacity: [f64; 5],
    pub sink_capacity: [f64; 2],
    /// W/K
    pub hx1_ua: f64,
    pub hx2_ua: f64,
    /// W/K per loop, spread evenly over the loop's nodes.
    pub loss_ua: [f64; 3],
    pub ambient_temp: f64,
    pub sink_supply_temp: f64,
    /// kg/s, facility water through the heat-sink exchanger.
    pub sink_flow: f64,
    /// W/K sheath-to-fluid conductance per heater.
    pub heater_ha: [f64; 4],
    /// s
    pub heater_lag: f64,
    /// kPa at zero flow for PT1..PT4.
    pub pressure_ref: [f64; 4],
    /// kPa/(kg/s)^2 for PT1..PT4.
    pub pressure_coeff: [f64; 4],
    pub conversion_efficiency: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        PlantConfig {
            heater_max_power: 4.0 * 3925.0,
            heater_rated_voltage: 208.0,
            heater_power_resolution: 5.0,
            pump_max_flow: 0.76,
            pump_max_freq: 60.0,
            vfd_resolution: 0.1,
            rod_stroke: 609.6,
            rod_speed: 50.8,
            cp: 4186.0,
            primary_capacity: [6.3e3, 1.575e4, 6.3e3, 6.3e3, 6.3e3],
            secondary_capacity: [5.1e3; 5],
            sink_capacity: [2.55e3; 2],
            hx1_ua: 2500.0,
            hx2_ua: 2000.0,
            loss_ua: [56.0, 28.0, 2.8],
            ambient_temp: 26.3,
            sink_supply_temp: 26.3,
            sink_flow: 0.1018,
            heater_ha: [23.0, 23.1, 22.8, 22.7],
            heater_lag: 20.0,
            pressure_ref: [110.0, 105.0, 100.0, 100.0],
            pressure_coeff: [177.6, 80.1, 1.86, 3.32],
            conversion_efficiency: 0.45,
        }
    }
}

impl PlantConfig {
    pub fn validate(&self) -> Result<(), PlantError> {
        let scalars = [
            ("heater_max_power", self.heater_max_power),
            ("heater_rated_voltage", self.heater_rated_voltage),
            ("heater_power_resolution", self.heater_power_resolution),
            ("pump_max_flow", self.pump_max_flow),
            ("pump_max_freq", self.pump_max_freq),
            ("vfd_resolution", self.vfd_resolution),
            ("rod_stroke", self.rod_stroke),
            ("rod_speed", self.rod_speed),
            ("cp", self.cp),
            ("hx1_ua", self.hx1_ua),
            ("hx2_ua", self.hx2_ua),
            ("sink_flow", self.sink_flow),
            ("heater_lag", self.heater_lag),
        ];
        for (name, v) in scalars {
            if !(v.is_finite() && v > 0.0) {
                return Err(PlantError::InvalidConfig(format!("{name} must be > 0, got {v}")));
            }
        }
        let arrays = self
            .primary_capacity
            .iter()
            .chain(&self.secondary_capacity)
            .chain(&self.sink_capacity)
            .chain(&self.loss_ua)
            .chain(&self.heater_ha);
        for v in arrays {
            if !(v.is_finite() && *v > 0.0) {
                return Err(PlantError::InvalidConfig(format!("capacities, losses and hA must be > 0, got {v}")));
            }
        }
        if !(self.conversion_efficiency > 0.0 && self.conversion_efficiency < 1.0) {
            return Err(PlantError::InvalidConfig("conversion_efficiency must lie in (0,1)".into()));
        }
        Ok(())
    }

    /// Rod traverse rate in percent of stroke per second.
    pub fn rod_rate_pct(&self) -> f64 {
        self.rod_speed / self.rod_stroke * 100.0
    }

    /// Largest electric output the facility can deliver, kW.
    pub fn max_demand_kw(&self) -> f64 {
        self.heater_max_power * self.conversion_efficiency / 1000.0
    }
}
