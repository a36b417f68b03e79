//! Scripted demand-following operator used to generate training actions.
//!
//! Pumps follow a demand-proportional speed target, the heater is stepped in
//! 5 % increments with some headroom, and the rod trims the delivered power.
//! Every command moves at a bounded rate so the recorded actions are smooth
//! enough to learn.

use serde::{Deserialize, Serialize};

use super::{heat_for_demand, Commands, PlantConfig, PlantError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OperatorPolicy {
    /// Hz at zero demand.
    pub pump_base: f64,
    /// Hz per kW of demand.
    pub pump_per_kw: f64,
    /// Hz/s
    pub pump_ramp: f64,
    /// W/s, rate of the delivered-power setpoint.
    pub power_ramp: f64,
    /// Percent of heater command kept above the delivered power.
    pub heater_margin: f64,
    /// %/s
    pub heater_ramp: f64,
}

impl Default for OperatorPolicy {
    fn default() -> Self {
        OperatorPolicy {
            pump_base: 10.0,
            pump_per_kw: 1.5,
            pump_ramp: 0.5,
            power_ramp: 100.0,
            heater_margin: 10.0,
            heater_ramp: 5.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReferenceOperator {
    pub policy: OperatorPolicy,
    pump: f64,
    heater: f64,
    power: f64,
    cached: Option<(f64, f64, f64)>,
}

fn toward(x: f64, target: f64, max_step: f64) -> f64 {
    x + (target - x).clamp(-max_step, max_step)
}

impl ReferenceOperator {
    /// Starts from the idle line-up: pumps at base speed, heater off.
    pub fn new(policy: OperatorPolicy) -> Self {
        let pump = policy.pump_base;
        ReferenceOperator { policy, pump, heater: 0.0, power: 0.0, cached: None }
    }

    pub fn pump_target(&self, cfg: &PlantConfig, demand_kw: f64) -> f64 {
        (self.policy.pump_base + self.policy.pump_per_kw * demand_kw).clamp(0.0, cfg.pump_max_freq)
    }

    fn power_target(&mut self, cfg: &PlantConfig, demand_kw: f64, pump: f64) -> Result<f64, PlantError> {
        if demand_kw <= 0.0 {
            return Ok(0.0);
        }
        if let Some((d, p, q)) = self.cached {
            if d == demand_kw && p == pump {
                return Ok(q);
            }
        }
        let q = heat_for_demand(cfg, demand_kw, pump, pump)?.min(cfg.heater_max_power);
        self.cached = Some((demand_kw, pump, q));
        Ok(q)
    }

    /// Commands for the next `dt` seconds given the current demand.
    pub fn act(&mut self, cfg: &PlantConfig, demand_kw: f64, dt: f64) -> Result<Commands, PlantError> {
        let p = &self.policy;
        let pump_target = self.pump_target(cfg, demand_kw);
        self.pump = quantize(toward(self.pump, pump_target, p.pump_ramp * dt), cfg.vfd_resolution);

        // The steady target is evaluated at the final pump speed so it does
        // not jitter while the pumps ramp.
        let q_target = self.power_target(cfg, demand_kw, quantize(pump_target, cfg.vfd_resolution))?;
        let p = &self.policy;
        self.power = toward(self.power, q_target, p.power_ramp * dt);

        let step = cfg.heater_power_resolution;
        let heater_target = if demand_kw <= 0.0 {
            0.0
        } else {
            ((100.0 * q_target / cfg.heater_max_power / step).ceil() * step + p.heater_margin).min(100.0)
        };
        let needed = ((100.0 * self.power / cfg.heater_max_power / step).ceil() * step).min(100.0);
        self.heater = toward(self.heater, heater_target, p.heater_ramp * dt).max(needed);
        self.heater = ((self.heater / step).round() * step).clamp(0.0, 100.0);

        let rod = if self.heater > 0.0 {
            (100.0 * (1.0 - self.power / (self.heater / 100.0 * cfg.heater_max_power))).clamp(0.0, 100.0)
        } else {
            100.0
        };
        Ok(Commands { heater: self.heater, pump1: self.pump, pump2: self.pump, rod })
    }
}

fn quantize(f: f64, res: f64) -> f64 {
    super::quantize_freq(f, res)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idle_without_demand() {
        let cfg = PlantConfig::default();
        let mut op = ReferenceOperator::new(OperatorPolicy::default());
        for _ in 0..10 {
            let c = op.act(&cfg, 0.0, 1.0).unwrap();
            assert_eq!(c, Commands { heater: 0.0, pump1: 10.0, pump2: 10.0, rod: 100.0 });
        }
    }

    #[test]
    fn converges_to_demand_power_with_bounded_moves() {
        let cfg = PlantConfig::default();
        let mut op = ReferenceOperator::new(OperatorPolicy::default());
        let mut prev = op.act(&cfg, 0.0, 1.0).unwrap();
        let mut last = prev;
        for _ in 0..600 {
            last = op.act(&cfg, 1.889, 1.0).unwrap();
            assert!((last.pump1 - prev.pump1).abs() <= 0.5 + 1e-9);
            last.validate(&cfg).unwrap();
            prev = last;
        }
        let q_target = heat_for_demand(&cfg, 1.889, last.pump1, last.pump2).unwrap();
        let delivered = last.heater / 100.0 * cfg.heater_max_power * (1.0 - last.rod / 100.0);
        assert!((delivered - q_target).abs() < 1e-6 * q_target);
        assert!(last.heater > 100.0 * q_target / cfg.heater_max_power);
    }
}
