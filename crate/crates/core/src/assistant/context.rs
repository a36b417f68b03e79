use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{AssistError, DerivedMetrics};
use crate::schema::{SensorFrame, AUX_ROD_POSITION};

pub const PRIMARY_LABELS: [&str; 5] =
    ["Testsection Inlet Temp", "Testsection Outlet Temp", "Top Pump Inlet Temp", "1st-HX Inlet Temp", "1st-HX Outlet Temp"];
// The facility's own label set spells the second exchanger "2st".
pub const SECONDARY_LABELS: [&str; 5] = [
    "1st-HX 2nd-side Inlet Temp",
    "1st-HX 2nd-side Outlet Temp",
    "Top Pump Inlet Temp",
    "2st-HX Inlet Temp",
    "2st-HX Outlet Temp",
];
pub const SINK_LABELS: [&str; 2] = ["HX Inlet Temp", "HX Outlet Temp"];
pub const PRESSURE_LABELS: [&str; 4] =
    ["1st Loop Testsection Inlet", "1st Loop Testsection Outlet", "1st Loop Top", "2nd Loop Top"];
pub const FLOW_LABELS: [&str; 3] = ["1st Loop", "2nd Loop", "3rd Loop"];

const PRIMARY_IDS: [&str; 5] = ["TF11", "TF12", "TF13", "TF14", "TF15"];
const SECONDARY_IDS: [&str; 5] = ["TF21", "TF22", "TF23", "TF24", "TF25"];
const HEATER_IDS: [&str; 4] = ["TH1", "TH2", "TH3", "TH4"];
const SINK_IDS: [&str; 2] = ["TF31", "TF32"];
const PRESSURE_IDS: [&str; 4] = ["PT1", "PT2", "PT3", "PT4"];
const FLOW_IDS: [&str; 3] = ["FT1", "FT2", "FT3"];

/// The twin's predicted steady state for a requested demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwinExpectation {
    /// kW requested
    pub demand_kw: f64,
    /// Predicted frame; its `Heat_Power` and `CR_AO` give the expected total
    /// power and rod position.
    pub frame: SensorFrame,
}

/// Rendered facility state, ready to go into a prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FacilityContext {
    pub text: String,
}

fn values(frame: &SensorFrame, ids: &[&str]) -> Result<Vec<f64>, AssistError> {
    ids.iter().map(|id| frame.value(id).map_err(|_| AssistError::MissingChannel(id.to_string()))).collect()
}

fn join(vals: &[f64], decimals: usize, unit: &str) -> String {
    vals.iter().map(|v| format!("{v:.decimals$}{unit}")).collect::<Vec<_>>().join(", ")
}

fn labelled(out: &mut String, prefix: &str, name: &str, labels: &[&str], vals: &[f64], decimals: usize, unit: &str) {
    if labels.is_empty() {
        let _ = writeln!(out, "- {prefix}{name}: {}", join(vals, decimals, unit));
    } else {
        let _ = writeln!(out, "- {prefix}{name} [{}]: {}", labels.join(", "), join(vals, decimals, unit));
    }
}

/// Temperature, pressure and flow lines shared by the measured and the
/// expected blocks.
fn thermal_hydraulic(out: &mut String, frame: &SensorFrame, prefix: &str) -> Result<(), AssistError> {
    labelled(out, prefix, "Primary Loop Temperatures", &PRIMARY_LABELS, &values(frame, &PRIMARY_IDS)?, 2, "°C");
    labelled(out, prefix, "Secondary Loop Temperatures", &SECONDARY_LABELS, &values(frame, &SECONDARY_IDS)?, 2, "°C");
    labelled(out, prefix, "Four Heater Temperature in Test Section", &[], &values(frame, &HEATER_IDS)?, 2, "°C");
    labelled(out, prefix, "Heat Sink Loop Temperatures", &SINK_LABELS, &values(frame, &SINK_IDS)?, 2, "°C");
    labelled(out, prefix, "Gauge Pressure", &PRESSURE_LABELS, &values(frame, &PRESSURE_IDS)?, 2, " kPa");
    labelled(out, prefix, "Flow Rate", &FLOW_LABELS, &values(frame, &FLOW_IDS)?, 4, " kg/s");
    Ok(())
}

/// Rod readback when present, otherwise the rod command.
pub fn rod_position(frame: &SensorFrame) -> Result<f64, AssistError> {
    match frame.aux.get(AUX_ROD_POSITION) {
        Some(v) => Ok(*v),
        None => frame.actuator("CR_AO").map_err(|_| AssistError::MissingChannel("CR_AO".into())),
    }
}

/// Render the measured state and, when given, the twin's expectation.
///
/// `heater_max_kw` scales the percentages shown next to powers.
pub fn build_context(
    frame: &SensorFrame,
    derived: &DerivedMetrics,
    twin: Option<&TwinExpectation>,
    heater_max_kw: f64,
) -> Result<FacilityContext, AssistError> {
    let mut out = String::new();
    let pct = |kw: f64| 100.0 * kw / heater_max_kw;
    let heat = values(frame, &["Heat_Power", "Elec_Power"])?;
    out.push_str("Current Facility Data:\n");
    let _ = writeln!(out, "- Total Heater Voltage: {:.2} V", derived.voltage);
    let _ = writeln!(out, "- Total Heater Current: {:.2} A", derived.current);
    let _ = writeln!(out, "- Total Power: {:.2} kW ({:.1}%)", derived.p_kw, pct(derived.p_kw));
    let _ = writeln!(out, "- Control Rod Position: {:.2}%", rod_position(frame)?);
    let _ = writeln!(out, "- Delivered Power [Test Section Heat, Electric Output]: {:.2} kW, {:.2} kW", heat[0], heat[1]);
    thermal_hydraulic(&mut out, frame, "")?;

    if let Some(tw) = twin {
        let f = &tw.frame;
        let expected = f.value("Heat_Power").map_err(|_| AssistError::MissingChannel("Heat_Power".into()))?;
        let rod = f.actuator("CR_AO").map_err(|_| AssistError::MissingChannel("CR_AO".into()))?;
        out.push('\n');
        let _ = writeln!(out, "Digital Twin's Expectation Data for User's Demand Power: {:.2} kW", tw.demand_kw);
        let _ = writeln!(out, "- Expected Total Power: {:.2} kW ({:.1}%)", expected, pct(expected));
        let _ = writeln!(out, "- Expected Control Rod Position: {rod:.2}%");
        thermal_hydraulic(&mut out, f, "Digital Twin Expectation for ")?;
    }
    Ok(FacilityContext { text: out })
}
