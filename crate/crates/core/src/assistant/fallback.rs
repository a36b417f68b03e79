use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::context::{rod_position, TwinExpectation};
use super::{AssistError, DerivedMetrics};
use crate::schema::SensorFrame;

pub const LOOP_TEMP_LIMIT: f64 = 80.0;
pub const HEATER_TEMP_LIMIT: f64 = 200.0;

const LOOP_IDS: [&str; 12] = ["TF11", "TF12", "TF13", "TF14", "TF15", "TF21", "TF22", "TF23", "TF24", "TF25", "TF31", "TF32"];
const HEATER_IDS: [&str; 4] = ["TH1", "TH2", "TH3", "TH4"];
const FLOW_IDS: [&str; 3] = ["FT1", "FT2", "FT3"];
/// (exchanger, hot inlet, cold outlet)
const EXCHANGERS: [(&str, &str, &str); 2] = [("1st HX", "TF14", "TF22"), ("2nd HX", "TF24", "TF32")];
/// Readback at or above this counts as fully inserted.
const ROD_INSERTED: f64 = 99.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Info,
    Warning,
    Alarm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SafeToProceed {
    Yes,
    No,
    Conditional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flag {
    pub code: String,
    pub severity: Severity,
    pub message: String,
    pub channel: Option<String>,
    pub value: Option<f64>,
    pub limit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Advisory {
    pub flags: Vec<Flag>,
    pub recommendations: Vec<String>,
    pub safe_to_proceed: SafeToProceed,
}

fn get(frame: &SensorFrame, id: &str) -> Result<f64, AssistError> {
    frame.value(id).map_err(|_| AssistError::MissingChannel(id.to_string()))
}

fn flag(code: &str, severity: Severity, message: String, channel: &str, value: f64, limit: Option<f64>) -> Flag {
    Flag { code: code.into(), severity, message, channel: Some(channel.into()), value: Some(value), limit }
}

/// Deterministic rule-based advice used when no language model is reachable.
pub fn fallback_advise(
    frame: &SensorFrame,
    derived: &DerivedMetrics,
    twin: Option<&TwinExpectation>,
) -> Result<Advisory, AssistError> {
    let mut flags = Vec::new();
    let mut recommendations = Vec::new();

    for id in LOOP_IDS {
        let v = get(frame, id)?;
        if v > LOOP_TEMP_LIMIT {
            let msg = format!("{id} at {v:.2} °C exceeds the {LOOP_TEMP_LIMIT:.0} °C coolant loop limit");
            flags.push(flag("loop_temp_high", Severity::Alarm, msg, id, v, Some(LOOP_TEMP_LIMIT)));
        }
    }
    for id in HEATER_IDS {
        let v = get(frame, id)?;
        if v > HEATER_TEMP_LIMIT {
            let msg = format!("{id} at {v:.2} °C exceeds the {HEATER_TEMP_LIMIT:.0} °C heater element limit");
            flags.push(flag("heater_temp_high", Severity::Alarm, msg, id, v, Some(HEATER_TEMP_LIMIT)));
        }
    }
    for id in FLOW_IDS {
        let v = get(frame, id)?;
        if v < 0.0 {
            let msg = format!("negative flow rate on {id} ({v:.4} kg/s); check the flow meter");
            flags.push(flag("negative_flow", Severity::Warning, msg, id, v, Some(0.0)));
        }
    }
    for (hx, hot_in, cold_out) in EXCHANGERS {
        let (h, c) = (get(frame, hot_in)?, get(frame, cold_out)?);
        if c > h {
            let msg = format!("temperature inversion across the {hx}: cold outlet {cold_out} {c:.2} °C above hot inlet {hot_in} {h:.2} °C");
            flags.push(flag("hx_inversion", Severity::Warning, msg, cold_out, c, Some(h)));
        }
    }
    let rod = rod_position(frame)?;
    if rod >= ROD_INSERTED && (derived.voltage > 0.0 || derived.current > 0.0) {
        let msg = format!(
            "rod fully inserted, zero power despite electrical readings ({:.2} V, {:.2} A); no equipment fault implied",
            derived.voltage, derived.current
        );
        flags.push(flag("rod_inserted_powered", Severity::Info, msg, "CR_AO", rod, None));
    }

    let mut conditional = false;
    if let Some(tw) = twin {
        if tw.demand_kw > frame.demand_elec {
            conditional = true;
            let target = tw.frame.actuator("CR_AO").unwrap_or(rod);
            recommendations.push(format!(
                "Withdraw the control rod stepwise toward {target:.2}% in 5% increments, holding 30 s after each step"
            ));
            recommendations.push("Watch TH1-TH4 and the power-to-flow ratio after every step".into());
            if let Ok(th) = HEATER_IDS.iter().map(|id| tw.frame.value(id)).collect::<Result<Vec<_>, _>>() {
                let peak = th.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                recommendations.push(format!(
                    "Expected peak heater temperature {peak:.2} °C against the {HEATER_TEMP_LIMIT:.0} °C limit; stop and hold if it is exceeded"
                ));
            }
        }
    }
    if flags.iter().any(|f| f.severity == Severity::Alarm) {
        recommendations.insert(0, "Reduce heater power and insert the control rod until every alarm clears".into());
    }

    let worst = flags.iter().map(|f| f.severity).max();
    let safe_to_proceed = match worst {
        Some(Severity::Alarm) => SafeToProceed::No,
        Some(Severity::Warning) => SafeToProceed::Conditional,
        _ if conditional => SafeToProceed::Conditional,
        _ => SafeToProceed::Yes,
    };
    Ok(Advisory { flags, recommendations, safe_to_proceed })
}

impl Advisory {
    /// Plain-text rendering, marked as coming from the rule-based advisor.
    pub fn render(&self) -> String {
        let mut out = String::from("[fallback] Rule-based advisory\n");
        let safe = match self.safe_to_proceed {
            SafeToProceed::Yes => "yes",
            SafeToProceed::No => "no",
            SafeToProceed::Conditional => "conditional",
        };
        let _ = writeln!(out, "Safe to proceed: {safe}");
        if self.flags.is_empty() {
            out.push_str("Flags: none\n");
        } else {
            out.push_str("Flags:\n");
            for f in &self.flags {
                let sev = match f.severity {
                    Severity::Info => "INFO",
                    Severity::Warning => "WARNING",
                    Severity::Alarm => "ALARM",
                };
                let _ = writeln!(out, "- {sev} [{}] {}", f.code, f.message);
            }
        }
        if !self.recommendations.is_empty() {
            out.push_str("Recommendations:\n");
            for (i, r) in self.recommendations.iter().enumerate() {
                let _ = writeln!(out, "{}. {r}", i + 1);
            }
        }
        out
    }
}
