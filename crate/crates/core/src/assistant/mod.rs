//! Operator assistant: derived metrics, a text rendering of the facility
//! state, prompt assembly, a chat-completion backend and a rule-based
//! fallback advisor.

mod backend;
mod context;
mod fallback;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{SensorFrame, AUX_HEATER_CURRENT, AUX_HEATER_VOLTAGE};

pub use backend::{infer, Backend, HttpBackend, DEFAULT_TIMEOUT, SAMPLING_TEMPERATURE};
pub use context::{build_context, rod_position, FacilityContext, TwinExpectation};
pub use fallback::{fallback_advise, Advisory, Flag, SafeToProceed, Severity, HEATER_TEMP_LIMIT, LOOP_TEMP_LIMIT};

/// Electrical-to-electric conversion used for the power estimate.
pub const CONVERSION_EFFICIENCY: f64 = 0.45;

#[derive(Debug, Error)]
pub enum AssistError {
    #[error("channel {0} missing from frame")]
    MissingChannel(String),
    #[error("query is empty")]
    EmptyQuery,
    #[error("assistant backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("assistant backend timed out")]
    Timeout,
    #[error("unexpected backend response: {0}")]
    BadResponse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedMetrics {
    pub voltage: f64,
    pub current: f64,
    /// kW drawn by the heaters.
    pub p_kw: f64,
    /// kW of electricity that heat would yield.
    pub p_elec: f64,
    /// Mean of TH1..TH4, °C.
    pub avg_heater_temp: f64,
}

pub fn compute_derived(frame: &SensorFrame, voltage: f64, current: f64) -> Result<DerivedMetrics, AssistError> {
    let mut th = 0.0;
    for id in ["TH1", "TH2", "TH3", "TH4"] {
        th += frame.value(id).map_err(|_| AssistError::MissingChannel(id.into()))?;
    }
    let p_kw = (voltage * current / 1000.0).max(0.0);
    Ok(DerivedMetrics { voltage, current, p_kw, p_elec: p_kw * CONVERSION_EFFICIENCY, avg_heater_temp: th / 4.0 })
}

/// Derived metrics from the heater voltage and current carried in the
/// frame's auxiliary readings (zero when absent).
pub fn derived_from_frame(frame: &SensorFrame) -> Result<DerivedMetrics, AssistError> {
    let aux = |k: &str| frame.aux.get(k).copied().unwrap_or(0.0);
    compute_derived(frame, aux(AUX_HEATER_VOLTAGE), aux(AUX_HEATER_CURRENT))
}

pub const SYSTEM_PREAMBLE: &str = "\
You are an operations assistant for a three-loop thermal-fluid test facility. \
Electric cartridge heaters in the primary loop's test section (four elements, 15.7 kW in total) stand in for a reactor core, \
and a control rod sleeve between the heaters and the coolant sets how much of that heat reaches the water. \
The primary loop passes its heat to a secondary loop through the first heat exchanger, \
and the secondary loop rejects it to a once-through heat-sink loop through the second exchanger. \
Electric output is estimated as 45% of the heat removed by the sink. \
Operating limits: coolant loop temperatures must stay below 80 °C and heater element temperatures below 200 °C. \
Put safety first: name any limit violation, inconsistent sensor reading or risky action before anything else, \
and recommend gradual actuator moves over large steps. \
Values prefixed with \"Digital Twin Expectation\" are the surrogate model's predicted steady state for the user's demand, not measurements.";

const SEPARATOR: &str = "\n\n";
const QUERY_HEADER: &str = "User's Question: ";

/// The assembled prompt: system preamble, then facility context, then the
/// user's question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub system: String,
    pub user: String,
}

impl Prompt {
    pub fn text(&self) -> String {
        format!("{}{SEPARATOR}{}", self.system, self.user)
    }
}

pub fn augment_query(query: &str, context: &FacilityContext) -> Result<Prompt, AssistError> {
    if query.trim().is_empty() {
        return Err(AssistError::EmptyQuery);
    }
    Ok(Prompt { system: SYSTEM_PREAMBLE.to_string(), user: format!("{}{SEPARATOR}{QUERY_HEADER}{query}", context.text) })
}

/// Outcome of one assistant query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssistReply {
    pub response: String,
    /// `"llm"` or `"fallback"`.
    pub source: String,
    pub advisory: Advisory,
    pub derived: DerivedMetrics,
    pub prompt: Prompt,
}

/// Run the whole pipeline on one coherent snapshot.
pub async fn assist(
    query: &str,
    frame: &SensorFrame,
    twin: Option<&TwinExpectation>,
    backend: &Backend,
    heater_max_kw: f64,
) -> Result<AssistReply, AssistError> {
    let derived = derived_from_frame(frame)?;
    let context = build_context(frame, &derived, twin, heater_max_kw)?;
    let prompt = augment_query(query, &context)?;
    let advisory = fallback_advise(frame, &derived, twin)?;
    let (response, source) = match backend {
        Backend::Fallback => (advisory.render(), "fallback"),
        Backend::Http(http) => match infer(&prompt, http).await {
            Ok(text) => (text, "llm"),
            Err(e) if http.fallback_on_error => {
                tracing::warn!("assistant backend failed, using rule-based advice: {e}");
                (advisory.render(), "fallback")
            }
            Err(e) => return Err(e),
        },
    };
    Ok(AssistReply { response, source: source.into(), advisory, derived, prompt })
}

/// Reference validation case: facility idle with the
/// rod fully inserted, and the twin's expectation for a 1.89 kW demand.
/// Returns the frame (voltage and current in its auxiliary readings) and the
/// twin block.
pub fn idle_fixture() -> (SensorFrame, TwinExpectation) {
    let measured = [
        26.36, 26.39, 26.39, 26.38, 26.36, 26.32, 26.39, 26.38, 26.38, 26.33, 26.25, 26.38, 26.65, 26.65, 26.65, 26.65,
        112.86, 106.29, 100.03, 100.05, 0.1269, 0.1227, 0.1018, 0.0, 0.0,
    ];
    let mut frame = SensorFrame::from_measured(0.0, &measured, 0.0);
    for (id, v) in [("Heater_AO", 5.0), ("Pump1_AO", 10.0), ("Pump2_AO", 10.0), ("CR_AO", 100.0)] {
        frame.actuators.insert(id.into(), v);
    }
    frame.aux.insert(AUX_HEATER_VOLTAGE.into(), 35.78);
    frame.aux.insert(AUX_HEATER_CURRENT.into(), 0.72);

    let expected = [
        29.38, 37.71, 37.05, 37.48, 29.34, 28.08, 34.48, 34.37, 33.92, 28.05, 26.25, 32.05, 89.63, 89.52, 89.95, 90.19,
        109.67, 104.36, 97.67, 99.56, 0.1275, 0.1228, 0.1018, 5.33, 1.89,
    ];
    let mut tf = SensorFrame::from_measured(0.0, &expected, 1.89);
    for (id, v) in [("Heater_AO", 100.0), ("Pump1_AO", 10.0), ("Pump2_AO", 10.0), ("CR_AO", 65.91)] {
        tf.actuators.insert(id.into(), v);
    }
    (frame, TwinExpectation { demand_kw: 1.89, frame: tf })
}

#[cfg(test)]
mod tests;
