//! Static component characteristics: rod worth, pump curve, heat exchangers.

use super::PlantError;

/// Fraction of heater output delivered at a given rod insertion (0 = withdrawn).
///
/// Linear worth: the delivered fraction falls from 1 at full withdrawal to 0 at
/// full insertion.
pub fn rod_power_factor(position_pct: f64) -> Result<f64, PlantError> {
    if !(0.0..=100.0).contains(&position_pct) {
        return Err(PlantError::OutOfRange { what: "rod position", value: position_pct });
    }
    Ok(1.0 - position_pct / 100.0)
}

/// Round a VFD frequency to the drive resolution.
pub fn quantize_freq(freq_hz: f64, resolution_hz: f64) -> f64 {
    (freq_hz / resolution_hz).round() / resolution_hz.recip()
}

/// Round a heater command to the controller's power resolution.
pub fn quantize_heater(cmd_pct: f64, resolution_pct: f64) -> f64 {
    (cmd_pct / resolution_pct).round() * resolution_pct
}

/// Pump mass flow under the affinity law (flow proportional to speed).
pub fn pump_flow(freq_hz: f64, max_freq_hz: f64, max_flow: f64, resolution_hz: f64) -> Result<f64, PlantError> {
    if !(0.0..=max_freq_hz).contains(&freq_hz) {
        return Err(PlantError::OutOfRange { what: "pump frequency", value: freq_hz });
    }
    Ok(max_flow * quantize_freq(freq_hz, resolution_hz) / max_freq_hz)
}

/// Counter-flow effectiveness for the given NTU and capacity ratio.
pub fn counterflow_effectiveness(ntu: f64, c_r: f64) -> f64 {
    if (1.0 - c_r).abs() < 1e-9 {
        ntu / (1.0 + ntu)
    } else {
        let e = (-ntu * (1.0 - c_r)).exp();
        (1.0 - e) / (1.0 - c_r * e)
    }
}

/// Heat moved from the hot to the cold stream, W (negative when the "hot"
/// inlet is actually colder).
pub fn hx_heat_rate(t_hot_in: f64, t_cold_in: f64, mdot_hot: f64, mdot_cold: f64, ua: f64, cp: f64) -> f64 {
    if mdot_hot <= 0.0 || mdot_cold <= 0.0 {
        return 0.0;
    }
    let c_hot = mdot_hot * cp;
    let c_cold = mdot_cold * cp;
    let c_min = c_hot.min(c_cold);
    let c_max = c_hot.max(c_cold);
    let eff = counterflow_effectiveness(ua / c_min, c_min / c_max);
    eff * c_min * (t_hot_in - t_cold_in)
}
