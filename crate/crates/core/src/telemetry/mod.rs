//! Unified namespace of plant and twin channels, and the newline-delimited
//! JSON wire format spoken by the telemetry server.
//!
//! Everything here is synchronous and clock-free: callers pass timestamps in
//! milliseconds. The async server lives in its own crate.

mod protocol;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plant::PlantConfig;
use crate::schema::{
    canonical_catalog, SamplingClass, SensorFrame, ACTUATOR_IDS, AUX_HEATER_CURRENT, AUX_HEATER_VOLTAGE,
    AUX_ROD_POSITION, DEMAND_ID, MEASURED_IDS,
};

pub use protocol::{error_reply, parse_request, read_reply, subscribe_ack, update_message, write_reply, Request};

pub const DEFAULT_PORT: u16 = 4840;
/// Prefix of nodes carrying the twin's expectation for a channel.
pub const TWIN_PREFIX: &str = "dt_";
/// A node goes stale after this many missed sampling periods.
pub const STALE_PERIODS: u64 = 3;
/// Clients whose outbound queue lags by more than this are dropped.
pub const MAX_BACKLOG_MS: u64 = 2000;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum TelemetryError {
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("node {0} is read-only")]
    AccessDenied(String),
    #[error("{node} = {value} is outside [{min}, {max}]")]
    OutOfRange { node: String, value: f64, min: f64, max: f64 },
    #[error("malformed message: {0}")]
    MalformedMessage(String),
}

impl TelemetryError {
    /// Short code carried in the `err` field of a reply.
    pub fn code(&self) -> &'static str {
        match self {
            TelemetryError::UnknownNode(_) => "UnknownNode",
            TelemetryError::AccessDenied(_) => "AccessDenied",
            TelemetryError::OutOfRange { .. } => "OutOfRange",
            TelemetryError::MalformedMessage(_) => "MalformedMessage",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quality {
    Good,
    Stale,
    /// Never sampled.
    Bad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Access {
    ReadOnly,
    Writable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamespaceNode {
    pub id: String,
    /// NaN until first sampled.
    pub value: f64,
    /// ms of the last acquisition; 0 if never sampled.
    pub t: u64,
    pub quality: Quality,
    pub access: Access,
    pub sampling_class: SamplingClass,
}

/// One node as seen by a reader at a given instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reading {
    pub value: f64,
    pub t: u64,
    pub quality: Quality,
}

#[derive(Debug, Clone)]
pub struct Namespace {
    nodes: BTreeMap<String, NamespaceNode>,
    bounds: BTreeMap<String, (f64, f64)>,
}

fn node(id: &str, access: Access, class: SamplingClass) -> NamespaceNode {
    NamespaceNode { id: id.to_string(), value: f64::NAN, t: 0, quality: Quality::Bad, access, sampling_class: class }
}

impl Namespace {
    /// Every catalog channel, the auxiliary electrical and rod readings, and a
    /// `dt_` twin node for each measured channel and actuator.
    pub fn new(cfg: &PlantConfig) -> Self {
        let mut nodes = BTreeMap::new();
        for spec in &canonical_catalog().channels {
            let writable = spec.id == DEMAND_ID || ACTUATOR_IDS.contains(&spec.id);
            let access = if writable { Access::Writable } else { Access::ReadOnly };
            nodes.insert(spec.id.to_string(), node(spec.id, access, spec.sampling_class));
        }
        for id in [AUX_HEATER_VOLTAGE, AUX_HEATER_CURRENT, AUX_ROD_POSITION] {
            nodes.insert(id.to_string(), node(id, Access::ReadOnly, SamplingClass::Auxiliary));
        }
        for id in MEASURED_IDS.iter().chain(&ACTUATOR_IDS).chain([&DEMAND_ID]) {
            let class = nodes[*id].sampling_class;
            let twin_id = format!("{TWIN_PREFIX}{id}");
            nodes.insert(twin_id.clone(), node(&twin_id, Access::ReadOnly, class));
        }
        let mut bounds = BTreeMap::new();
        bounds.insert("Heater_AO".to_string(), (0.0, 100.0));
        bounds.insert("Pump1_AO".to_string(), (0.0, cfg.pump_max_freq));
        bounds.insert("Pump2_AO".to_string(), (0.0, cfg.pump_max_freq));
        bounds.insert("CR_AO".to_string(), (0.0, 100.0));
        bounds.insert(DEMAND_ID.to_string(), (0.0, cfg.max_demand_kw()));
        Namespace { nodes, bounds }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.nodes.keys().map(String::as_str)
    }

    pub fn node(&self, id: &str) -> Result<&NamespaceNode, TelemetryError> {
        self.nodes.get(id).ok_or_else(|| TelemetryError::UnknownNode(id.to_string()))
    }

    /// Quality as of `now`: stale once older than three sampling periods.
    pub fn read(&self, id: &str, now: u64) -> Result<Reading, TelemetryError> {
        let n = self.node(id)?;
        let quality = match n.quality {
            Quality::Bad => Quality::Bad,
            _ if now.saturating_sub(n.t) > STALE_PERIODS * n.sampling_class.period_ms() => Quality::Stale,
            q => q,
        };
        Ok(Reading { value: n.value, t: n.t, quality })
    }

    /// Check a write without applying it.
    pub fn check_write(&self, id: &str, value: f64) -> Result<(), TelemetryError> {
        let n = self.node(id)?;
        if n.access != Access::Writable {
            return Err(TelemetryError::AccessDenied(id.to_string()));
        }
        let (min, max) = self.bounds[id];
        if !(min..=max).contains(&value) {
            return Err(TelemetryError::OutOfRange { node: id.to_string(), value, min, max });
        }
        Ok(())
    }

    /// Set a writable node's value. The timestamp is left at the last
    /// acquisition, so a write to a paused source reads back stale.
    pub fn write(&mut self, id: &str, value: f64) -> Result<(), TelemetryError> {
        self.check_write(id, value)?;
        self.nodes.get_mut(id).expect("checked").value = value;
        Ok(())
    }

    fn sample(&mut self, id: &str, value: f64, t: u64) {
        if let Some(n) = self.nodes.get_mut(id) {
            // Timestamps never go backwards.
            if t >= n.t {
                n.value = value;
                n.t = t;
                n.quality = Quality::Good;
            }
        }
    }

    /// Record one plant acquisition at `t` ms.
    pub fn ingest_frame(&mut self, frame: &SensorFrame, t: u64) {
        for (id, v) in frame.values.iter().chain(&frame.actuators).chain(&frame.aux) {
            self.sample(id, *v, t);
        }
        self.sample(DEMAND_ID, frame.demand_elec, t);
    }

    /// Record the twin's expectation under the `dt_` nodes.
    pub fn ingest_twin(&mut self, frame: &SensorFrame, t: u64) {
        for (id, v) in frame.values.iter().chain(&frame.actuators) {
            self.sample(&format!("{TWIN_PREFIX}{id}"), *v, t);
        }
        self.sample(&format!("{TWIN_PREFIX}{DEMAND_ID}"), frame.demand_elec, t);
    }

    /// Rebuild a frame from the plant nodes; `None` until all have been sampled.
    pub fn live_frame(&self) -> Option<SensorFrame> {
        self.frame_with_prefix("", true)
    }

    /// Rebuild the twin's expected frame from the `dt_` nodes.
    pub fn twin_frame(&self) -> Option<SensorFrame> {
        self.frame_with_prefix(TWIN_PREFIX, false)
    }

    fn frame_with_prefix(&self, prefix: &str, with_aux: bool) -> Option<SensorFrame> {
        let get = |id: &str| {
            let n = &self.nodes[&format!("{prefix}{id}")];
            (n.quality != Quality::Bad).then_some((n.value, n.t))
        };
        let mut frame = SensorFrame::default();
        let mut t = 0;
        for id in MEASURED_IDS {
            let (v, ts) = get(id)?;
            frame.values.insert(id.to_string(), v);
            t = t.max(ts);
        }
        for id in ACTUATOR_IDS {
            frame.actuators.insert(id.to_string(), get(id)?.0);
        }
        frame.demand_elec = get(DEMAND_ID)?.0;
        if with_aux {
            for id in [AUX_HEATER_VOLTAGE, AUX_HEATER_CURRENT, AUX_ROD_POSITION] {
                frame.aux.insert(id.to_string(), get(id)?.0);
            }
        }
        frame.t = t as f64 / 1000.0;
        Some(frame)
    }

    /// Rates are 1 or 10 Hz and no faster than any node's class allows.
    pub fn check_subscription(&self, nodes: &[String], rate_hz: f64) -> Result<(), TelemetryError> {
        if rate_hz != 1.0 && rate_hz != 10.0 {
            return Err(TelemetryError::MalformedMessage(format!("rate_hz must be 1 or 10, got {rate_hz}")));
        }
        if nodes.is_empty() {
            return Err(TelemetryError::MalformedMessage("empty node list".into()));
        }
        for id in nodes {
            let n = self.node(id)?;
            let max = n.sampling_class.rate_hz();
            if rate_hz > max {
                return Err(TelemetryError::OutOfRange { node: id.clone(), value: rate_hz, min: 1.0, max });
            }
        }
        Ok(())
    }

    /// Current values of `nodes`, as published in one update batch.
    pub fn snapshot(&self, nodes: &[String]) -> BTreeMap<String, f64> {
        nodes.iter().filter_map(|id| self.nodes.get(id).map(|n| (id.clone(), n.value))).collect()
    }

    /// Readings for every node.
    pub fn read_all(&self, now: u64) -> BTreeMap<String, Reading> {
        self.nodes.keys().map(|id| (id.clone(), self.read(id, now).expect("own key"))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{PlantSim, PlantState};
    use crate::schema::ChannelGroup;
    use proptest::prelude::*;

    fn ns() -> Namespace {
        Namespace::new(&PlantConfig::default())
    }

    fn frame() -> SensorFrame {
        let cfg = PlantConfig::default();
        PlantSim::new(cfg.clone(), PlantState::ambient(&cfg), false, 1).unwrap().measure()
    }

    #[test]
    fn namespace_is_complete() {
        let ns = ns();
        let catalog = canonical_catalog();
        for spec in &catalog.channels {
            assert_eq!(ns.ids().filter(|id| *id == spec.id).count(), 1, "{}", spec.id);
            assert_eq!(ns.ids().filter(|id| *id == format!("dt_{}", spec.id)).count(), 1, "dt_{}", spec.id);
        }
        // 30 catalog channels, their twin mirrors, three auxiliary readings.
        assert_eq!(ns.len(), 2 * catalog.channels.len() + 3);
    }

    #[test]
    fn only_actuators_and_demand_are_writable() {
        let ns = ns();
        let writable: Vec<&str> = ns.ids().filter(|id| ns.node(id).unwrap().access == Access::Writable).collect();
        assert_eq!(writable, vec!["CR_AO", "Demand_Elec", "Heater_AO", "Pump1_AO", "Pump2_AO"]);
    }

    #[test]
    fn classes_follow_the_channel_groups() {
        let ns = ns();
        let catalog = canonical_catalog();
        for spec in catalog.measured() {
            let want = match spec.group {
                ChannelGroup::Pressure => SamplingClass::Auxiliary,
                _ if spec.id == "Elec_Power" => SamplingClass::Auxiliary,
                _ => SamplingClass::Critical,
            };
            assert_eq!(ns.node(spec.id).unwrap().sampling_class, want, "{}", spec.id);
        }
        assert_eq!(ns.node("Heater_V").unwrap().sampling_class, SamplingClass::Auxiliary);
    }

    #[test]
    fn read_after_ingest_is_good() {
        let mut ns = ns();
        let f = frame();
        ns.ingest_frame(&f, 1234);
        let r = ns.read("TF11", 1300).unwrap();
        assert_eq!(r, Reading { value: f.values["TF11"], t: 1234, quality: Quality::Good });
        assert_eq!(ns.read("dt_TF11", 1300).unwrap().quality, Quality::Bad);
        assert_eq!(ns.read("XX9", 0), Err(TelemetryError::UnknownNode("XX9".into())));
    }

    #[test]
    fn staleness_is_three_periods_of_the_class() {
        let mut ns = ns();
        ns.ingest_frame(&frame(), 1000);
        assert_eq!(ns.read("TF11", 1300).unwrap().quality, Quality::Good);
        assert_eq!(ns.read("TF11", 1301).unwrap().quality, Quality::Stale);
        assert_eq!(ns.read("PT1", 4000).unwrap().quality, Quality::Good);
        assert_eq!(ns.read("PT1", 4001).unwrap().quality, Quality::Stale);
    }

    #[test]
    fn write_rules() {
        let mut ns = ns();
        assert_eq!(ns.write("TF11", 1.0), Err(TelemetryError::AccessDenied("TF11".into())));
        assert_eq!(ns.write("dt_Heater_AO", 1.0).unwrap_err().code(), "AccessDenied");
        assert_eq!(ns.write("Heater_AO", 150.0).unwrap_err().code(), "OutOfRange");
        assert_eq!(ns.write("Pump1_AO", 60.5).unwrap_err().code(), "OutOfRange");
        assert_eq!(ns.write("Heater_AO", f64::NAN).unwrap_err().code(), "OutOfRange");
        assert_eq!(ns.write("Nope", 1.0).unwrap_err().code(), "UnknownNode");
        ns.write("Heater_AO", 35.0).unwrap();
        ns.write("Demand_Elec", 1.889).unwrap();
        assert_eq!(ns.node("Heater_AO").unwrap().value, 35.0);
    }

    #[test]
    fn write_to_paused_source_reads_back_stale() {
        let mut ns = ns();
        ns.ingest_frame(&frame(), 1000);
        ns.write("Heater_AO", 40.0).unwrap();
        let r = ns.read("Heater_AO", 5000).unwrap();
        assert_eq!((r.value, r.quality), (40.0, Quality::Stale));
    }

    #[test]
    fn timestamps_never_go_backwards() {
        let mut ns = ns();
        let f = frame();
        ns.ingest_frame(&f, 2000);
        let mut older = f.clone();
        older.values.insert("TF11".into(), -1.0);
        ns.ingest_frame(&older, 1000);
        assert_eq!(ns.read("TF11", 2000).unwrap().t, 2000);
        assert_eq!(ns.read("TF11", 2000).unwrap().value, f.values["TF11"]);
    }

    #[test]
    fn frames_round_trip_through_the_namespace() {
        let mut ns = ns();
        assert!(ns.live_frame().is_none());
        let f = frame();
        ns.ingest_frame(&f, 3000);
        let back = ns.live_frame().unwrap();
        assert_eq!((back.values.clone(), back.actuators.clone(), back.aux.clone()), (f.values.clone(), f.actuators.clone(), f.aux.clone()));
        assert!(ns.twin_frame().is_none());
        ns.ingest_twin(&f, 3000);
        assert_eq!(ns.twin_frame().unwrap().values, f.values);
    }

    #[test]
    fn subscription_rates_respect_the_class() {
        let ns = ns();
        let ids = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        assert!(ns.check_subscription(&ids(&["TF11", "FT1"]), 10.0).is_ok());
        assert!(ns.check_subscription(&ids(&["PT1"]), 1.0).is_ok());
        assert_eq!(ns.check_subscription(&ids(&["PT1"]), 10.0).unwrap_err().code(), "OutOfRange");
        assert_eq!(ns.check_subscription(&ids(&["TF11"]), 5.0).unwrap_err().code(), "MalformedMessage");
        assert_eq!(ns.check_subscription(&ids(&["ZZ"]), 1.0).unwrap_err().code(), "UnknownNode");
    }

    proptest! {
        #[test]
        fn identical_writes_are_idempotent(id in prop::sample::select(vec!["Heater_AO", "Pump1_AO", "Pump2_AO", "CR_AO", "Demand_Elec"]), v in -10.0f64..120.0) {
            let mut a = ns();
            let r1 = a.write(id, v);
            let once = a.node(id).unwrap().clone();
            let r2 = a.write(id, v);
            prop_assert_eq!(r1, r2);
            let twice = a.node(id).unwrap();
            prop_assert!(once.value.to_bits() == twice.value.to_bits() && once.t == twice.t);
        }
    }
}
