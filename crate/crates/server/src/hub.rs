use std::collections::{BTreeMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::{json, Value};
use thermotwin::assistant::{Backend, TwinExpectation};
use thermotwin::plant::{Commands, PlantConfig, PlantError, PlantSim, PlantState};
use thermotwin::schema::{SensorFrame, DEMAND_ID, INPUT_DIM};
use thermotwin::telemetry::{Namespace, Reading, TelemetryError, TWIN_PREFIX};
use thermotwin::twin::input_rows;

/// Milliseconds since the Unix epoch.
pub fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

/// Idle line-up the served plant starts from: pumps at 10 Hz, heater off,
/// rod fully inserted.
pub fn idle_lineup() -> Commands {
    Commands { heater: 0.0, pump1: 10.0, pump2: 10.0, rod: 100.0 }
}

struct State {
    ns: Namespace,
    plant: PlantSim,
    paused: bool,
    ticks: u64,
    /// One frame per simulated second, newest last.
    history: VecDeque<SensorFrame>,
    twin: Option<SensorFrame>,
}

/// The single logical state shared by the pump, TCP clients and gateway.
/// The lock is never held across an await.
pub struct Hub {
    state: Mutex<State>,
    next_sub: AtomicU64,
    pub twin_enabled: bool,
    pub backend: Backend,
    pub heater_max_kw: f64,
    history_len: usize,
}

impl Hub {
    pub fn new(cfg: PlantConfig, noise: bool, seed: u64, twin_enabled: bool, history_len: usize, backend: Backend) -> Result<Self, PlantError> {
        let mut plant = PlantSim::new(cfg.clone(), PlantState::ambient(&cfg), noise, seed)?;
        plant.apply(&idle_lineup(), 0.0)?;
        let heater_max_kw = cfg.heater_max_power / 1000.0;
        let mut ns = Namespace::new(&cfg);
        let frame = plant.measure();
        ns.ingest_frame(&frame, now_ms());
        let state = State { ns, plant, paused: false, ticks: 0, history: VecDeque::from([frame]), twin: None };
        Ok(Hub { state: Mutex::new(state), next_sub: AtomicU64::new(1), twin_enabled, backend, heater_max_kw, history_len })
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Advance the plant by `dt` seconds and publish a fresh acquisition.
    /// Does nothing while paused.
    pub fn tick(&self, dt: f64, ticks_per_second: u64) -> Result<(), PlantError> {
        let mut s = self.lock();
        if s.paused {
            return Ok(());
        }
        let (cmds, demand) = (s.plant.state.commands, s.plant.state.demand);
        s.plant.advance(&cmds, demand, dt)?;
        let frame = s.plant.measure();
        let now = now_ms();
        s.ns.ingest_frame(&frame, now);
        if let Some(tw) = s.twin.clone() {
            s.ns.ingest_twin(&tw, now);
        }
        s.ticks += 1;
        if s.ticks.is_multiple_of(ticks_per_second) {
            s.history.push_back(frame);
            while s.history.len() > self.history_len {
                s.history.pop_front();
            }
        }
        Ok(())
    }

    pub fn set_paused(&self, paused: bool) {
        self.lock().paused = paused;
    }

    pub fn is_paused(&self) -> bool {
        self.lock().paused
    }

    pub fn read(&self, id: &str) -> Result<Reading, TelemetryError> {
        self.lock().ns.read(id, now_ms())
    }

    /// Validate, hand to the plant's command state and return the value the
    /// node now holds (the plant quantises heater and pump commands).
    pub fn write(&self, id: &str, value: f64) -> Result<f64, TelemetryError> {
        let mut s = self.lock();
        s.ns.check_write(id, value)?;
        let mut cmds = s.plant.state.commands;
        let mut demand = s.plant.state.demand;
        match id {
            "Heater_AO" => cmds.heater = value,
            "Pump1_AO" => cmds.pump1 = value,
            "Pump2_AO" => cmds.pump2 = value,
            "CR_AO" => cmds.rod = value,
            DEMAND_ID => demand = value,
            _ => unreachable!("check_write admits only actuators and demand"),
        }
        s.plant.apply(&cmds, demand).map_err(|e| TelemetryError::MalformedMessage(e.to_string()))?;
        let c = s.plant.state.commands;
        let applied = match id {
            "Heater_AO" => c.heater,
            "Pump1_AO" => c.pump1,
            "Pump2_AO" => c.pump2,
            "CR_AO" => c.rod,
            _ => demand,
        };
        s.ns.write(id, applied)?;
        Ok(applied)
    }

    pub fn check_subscription(&self, nodes: &[String], rate_hz: f64) -> Result<u64, TelemetryError> {
        self.lock().ns.check_subscription(nodes, rate_hz)?;
        Ok(self.next_sub.fetch_add(1, Ordering::Relaxed))
    }

    pub fn snapshot(&self, nodes: &[String]) -> (u64, BTreeMap<String, f64>) {
        let s = self.lock();
        (now_ms(), s.ns.snapshot(nodes))
    }

    /// Live readings and twin readings, split by prefix.
    pub fn state_json(&self) -> Value {
        let s = self.lock();
        let now = now_ms();
        let (twin, live): (BTreeMap<_, _>, BTreeMap<_, _>) =
            s.ns.read_all(now).into_iter().partition(|(id, _)| id.starts_with(TWIN_PREFIX));
        json!({ "t": now, "paused": s.paused, "twin_enabled": self.twin_enabled, "live": live, "twin": twin })
    }

    /// Latest plant frame and, when the twin has run, its expectation.
    pub fn assist_inputs(&self) -> (Option<SensorFrame>, Option<TwinExpectation>) {
        let s = self.lock();
        let twin = s.ns.twin_frame().map(|frame| TwinExpectation { demand_kw: frame.demand_elec, frame });
        (s.ns.live_frame(), twin)
    }

    /// The last `n` one-second frames as model input rows, the current demand
    /// and the plant time of the newest frame.
    pub fn twin_inputs(&self, n: usize) -> Option<(Vec<[f64; INPUT_DIM]>, f64, f64)> {
        let s = self.lock();
        if s.history.len() < n || s.paused {
            return None;
        }
        let frames: Vec<SensorFrame> = s.history.iter().skip(s.history.len() - n).cloned().collect();
        let t0 = frames.last().map(|f| f.t).unwrap_or(0.0);
        let rows = input_rows(&frames).ok()?;
        Some((rows, s.plant.state.demand, t0))
    }

    pub fn set_twin(&self, frame: SensorFrame) {
        let mut s = self.lock();
        s.ns.ingest_twin(&frame, now_ms());
        s.twin = Some(frame);
    }
}
