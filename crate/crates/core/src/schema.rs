//! Channel catalog, model vector layouts and the dataset CSV format.
//!
//! Every other module addresses facility quantities through the ids defined
//! here. The catalog is a process-wide constant: 25 measured channels, the
//! electric demand input and the four actuator commands.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MEASURED_DIM: usize = 25;
pub const INPUT_DIM: usize = 26;
pub const OUTPUT_DIM: usize = 29;
pub const ACTUATOR_DIM: usize = 4;

pub const DEMAND_ID: &str = "Demand_Elec";
pub const HEAT_POWER_ID: &str = "Heat_Power";
pub const ELEC_POWER_ID: &str = "Elec_Power";

/// Measured channel ids in canonical order.
pub const MEASURED_IDS: [&str; MEASURED_DIM] = [
    "TF11", "TF12", "TF13", "TF14", "TF15", "TF21", "TF22", "TF23", "TF24", "TF25", "TF31", "TF32",
    "TH1", "TH2", "TH3", "TH4", "PT1", "PT2", "PT3", "PT4", "FT1", "FT2", "FT3", "Heat_Power",
    "Elec_Power",
];

pub const ACTUATOR_IDS: [&str; ACTUATOR_DIM] = ["Heater_AO", "Pump1_AO", "Pump2_AO", "CR_AO"];

/// Auxiliary readings carried next to a frame but outside the model schema.
pub const AUX_HEATER_VOLTAGE: &str = "Heater_V";
pub const AUX_HEATER_CURRENT: &str = "Heater_I";
pub const AUX_ROD_POSITION: &str = "CR_Pos";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelGroup {
    Temperature,
    Pressure,
    Flow,
    Power,
    Demand,
    Actuator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingClass {
    /// 10 Hz
    Critical,
    /// 1 Hz
    Auxiliary,
}

impl SamplingClass {
    pub fn rate_hz(self) -> f64 {
        match self {
            SamplingClass::Critical => 10.0,
            SamplingClass::Auxiliary => 1.0,
        }
    }

    pub fn period_ms(self) -> u64 {
        match self {
            SamplingClass::Critical => 100,
            SamplingClass::Auxiliary => 1000,
        }
    }
}

/// One-sigma sensor uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Uncertainty {
    /// In the channel's unit.
    Absolute(f64),
    /// Fraction of the reading.
    Relative(f64),
}

impl Uncertainty {
    pub fn sigma_at(self, value: f64) -> f64 {
        match self {
            Uncertainty::Absolute(s) => s,
            Uncertainty::Relative(f) => f * value.abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelSpec {
    pub id: &'static str,
    pub group: ChannelGroup,
    pub unit: &'static str,
    pub max_value: f64,
    pub uncertainty: Uncertainty,
    pub sampling_class: SamplingClass,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelCatalog {
    pub channels: Vec<ChannelSpec>,
    pub input_order: Vec<&'static str>,
    pub output_order: Vec<&'static str>,
}

const FLUID_TC: Uncertainty = Uncertainty::Absolute(1.0);
const HEATER_TC: Uncertainty = Uncertainty::Absolute(2.2);

fn build_catalog() -> ChannelCatalog {
    use ChannelGroup::*;
    use SamplingClass::*;
    let spec = |id, group, unit, max_value, uncertainty, sampling_class| ChannelSpec {
        id,
        group,
        unit,
        max_value,
        uncertainty,
        sampling_class,
    };
    let mut channels = Vec::with_capacity(MEASURED_DIM + 1 + ACTUATOR_DIM);
    for id in &MEASURED_IDS[..12] {
        channels.push(spec(id, Temperature, "°C", 220.0, FLUID_TC, Critical));
    }
    for id in &MEASURED_IDS[12..16] {
        channels.push(spec(id, Temperature, "°C", 750.0, HEATER_TC, Critical));
    }
    for id in &MEASURED_IDS[16..20] {
        channels.push(spec(id, Pressure, "kPa", 206.8, Uncertainty::Relative(0.01), Auxiliary));
    }
    for id in &MEASURED_IDS[20..23] {
        channels.push(spec(id, Flow, "kg/s", 0.76, Uncertainty::Relative(0.05), Critical));
    }
    channels.push(spec(HEAT_POWER_ID, Power, "kW", 15.7, Uncertainty::Relative(0.05), Critical));
    // Derived from the tertiary-loop heat removal, hence auxiliary.
    channels.push(spec(ELEC_POWER_ID, Power, "kW", 15.7 * 0.45, Uncertainty::Relative(0.05), Auxiliary));
    channels.push(spec(DEMAND_ID, Demand, "kW", 15.7 * 0.45, Uncertainty::Absolute(0.0), Critical));
    channels.push(spec("Heater_AO", Actuator, "%", 100.0, Uncertainty::Relative(0.05), Critical));
    channels.push(spec("Pump1_AO", Actuator, "Hz", 60.0, Uncertainty::Relative(0.01), Critical));
    channels.push(spec("Pump2_AO", Actuator, "Hz", 60.0, Uncertainty::Relative(0.01), Critical));
    channels.push(spec("CR_AO", Actuator, "%", 100.0, Uncertainty::Relative(0.05), Critical));

    let mut input_order: Vec<&'static str> = MEASURED_IDS.to_vec();
    input_order.push(DEMAND_ID);
    let mut output_order: Vec<&'static str> = MEASURED_IDS.to_vec();
    output_order.extend_from_slice(&ACTUATOR_IDS);
    ChannelCatalog { channels, input_order, output_order }
}

/// The fixed channel catalog.
pub fn canonical_catalog() -> &'static ChannelCatalog {
    static CATALOG: OnceLock<ChannelCatalog> = OnceLock::new();
    CATALOG.get_or_init(build_catalog)
}

impl ChannelCatalog {
    pub fn get(&self, id: &str) -> Option<&ChannelSpec> {
        self.channels.iter().find(|c| c.id == id)
    }

    pub fn measured(&self) -> impl Iterator<Item = &ChannelSpec> {
        self.channels.iter().take(MEASURED_DIM)
    }

    pub fn count_group(&self, group: ChannelGroup) -> usize {
        self.channels.iter().filter(|c| c.group == group).count()
    }

    /// Indices into the 29-wide output vector belonging to `group`.
    pub fn output_indices(&self, group: ChannelGroup) -> Vec<usize> {
        self.output_order
            .iter()
            .enumerate()
            .filter(|(_, id)| self.get(id).map(|c| c.group) == Some(group))
            .map(|(i, _)| i)
            .collect()
    }
}

pub fn measured_index(id: &str) -> Option<usize> {
    MEASURED_IDS.iter().position(|m| *m == id)
}

pub fn actuator_index(id: &str) -> Option<usize> {
    ACTUATOR_IDS.iter().position(|m| *m == id)
}

#[derive(Debug, Error, PartialEq)]
pub enum SchemaError {
    #[error("missing channel {0}")]
    MissingChannel(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("parse error on line {line}: {msg}")]
    ParseError { line: usize, msg: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for SchemaError {
    fn from(e: std::io::Error) -> Self {
        SchemaError::Io(e.to_string())
    }
}

/// One timestamped readout of the facility.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SensorFrame {
    /// Seconds since scenario start.
    pub t: f64,
    pub values: BTreeMap<String, f64>,
    /// Requested electric power, kW.
    pub demand_elec: f64,
    pub actuators: BTreeMap<String, f64>,
    /// Readings outside the model schema (heater voltage/current, rod readback).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub aux: BTreeMap<String, f64>,
}

impl SensorFrame {
    pub fn value(&self, id: &str) -> Result<f64, SchemaError> {
        self.values
            .get(id)
            .copied()
            .ok_or_else(|| SchemaError::MissingChannel(id.to_string()))
    }

    pub fn actuator(&self, id: &str) -> Result<f64, SchemaError> {
        self.actuators
            .get(id)
            .copied()
            .ok_or_else(|| SchemaError::MissingChannel(id.to_string()))
    }

    pub fn measured_array(&self) -> Result<[f64; MEASURED_DIM], SchemaError> {
        let mut out = [0.0; MEASURED_DIM];
        for (slot, id) in out.iter_mut().zip(MEASURED_IDS) {
            *slot = self.value(id)?;
        }
        Ok(out)
    }

    pub fn from_measured(t: f64, measured: &[f64], demand_elec: f64) -> Self {
        let values = MEASURED_IDS
            .iter()
            .zip(measured)
            .map(|(id, v)| (id.to_string(), *v))
            .collect();
        SensorFrame { t, values, demand_elec, ..Default::default() }
    }
}

pub fn pack_input(frame: &SensorFrame) -> Result<[f64; INPUT_DIM], SchemaError> {
    let measured = frame.measured_array()?;
    let mut out = [0.0; INPUT_DIM];
    out[..MEASURED_DIM].copy_from_slice(&measured);
    out[MEASURED_DIM] = frame.demand_elec;
    Ok(out)
}

pub fn pack_output(frame: &SensorFrame) -> Result<[f64; OUTPUT_DIM], SchemaError> {
    let measured = frame.measured_array()?;
    let mut out = [0.0; OUTPUT_DIM];
    out[..MEASURED_DIM].copy_from_slice(&measured);
    for (slot, id) in out[MEASURED_DIM..].iter_mut().zip(ACTUATOR_IDS) {
        *slot = frame.actuator(id)?;
    }
    Ok(out)
}

/// Inverse of [`pack_output`] for the 29 covered fields.
pub fn unpack_output(t: f64, values: &[f64; OUTPUT_DIM], demand_elec: f64) -> SensorFrame {
    let mut frame = SensorFrame::from_measured(t, &values[..MEASURED_DIM], demand_elec);
    frame.actuators = ACTUATOR_IDS
        .iter()
        .zip(&values[MEASURED_DIM..])
        .map(|(id, v)| (id.to_string(), *v))
        .collect();
    frame
}

pub fn csv_header() -> String {
    let mut cols = vec!["t"];
    cols.extend_from_slice(&MEASURED_IDS);
    cols.push(DEMAND_ID);
    cols.extend_from_slice(&ACTUATOR_IDS);
    cols.join(",")
}

const CSV_COLUMNS: usize = 1 + MEASURED_DIM + 1 + ACTUATOR_DIM;

pub fn write_dataset_to<W: Write>(mut w: W, trajectory: &[SensorFrame]) -> Result<(), SchemaError> {
    writeln!(w, "{}", csv_header())?;
    let mut line = String::with_capacity(512);
    for frame in trajectory {
        let row = pack_output(frame)?;
        line.clear();
        line.push_str(&frame.t.to_string());
        for v in &row[..MEASURED_DIM] {
            line.push(',');
            line.push_str(&v.to_string());
        }
        line.push(',');
        line.push_str(&frame.demand_elec.to_string());
        for v in &row[MEASURED_DIM..] {
            line.push(',');
            line.push_str(&v.to_string());
        }
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset_from<R: Read>(r: R) -> Result<Vec<SensorFrame>, SchemaError> {
    let reader = BufReader::new(r);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| SchemaError::SchemaMismatch("empty file".into()))??;
    let expected = csv_header();
    if header.trim_end_matches('\r') != expected {
        let found = header.split(',').count();
        return Err(SchemaError::SchemaMismatch(format!(
            "expected {CSV_COLUMNS} columns `{expected}`, found {found} columns"
        )));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let lineno = i + 2;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != CSV_COLUMNS {
            return Err(SchemaError::ParseError {
                line: lineno,
                msg: format!("expected {CSV_COLUMNS} fields, found {}", fields.len()),
            });
        }
        let mut nums = [0.0f64; CSV_COLUMNS];
        for (slot, f) in nums.iter_mut().zip(&fields) {
            *slot = f.trim().parse::<f64>().map_err(|e| SchemaError::ParseError {
                line: lineno,
                msg: format!("`{f}`: {e}"),
            })?;
        }
        let mut row = [0.0; OUTPUT_DIM];
        row[..MEASURED_DIM].copy_from_slice(&nums[1..1 + MEASURED_DIM]);
        row[MEASURED_DIM..].copy_from_slice(&nums[2 + MEASURED_DIM..]);
        out.push(unpack_output(nums[0], &row, nums[1 + MEASURED_DIM]));
    }
    Ok(out)
}

pub fn write_dataset(path: impl AsRef<Path>, trajectory: &[SensorFrame]) -> Result<(), SchemaError> {
    let file = fs::File::create(path)?;
    write_dataset_to(std::io::BufWriter::new(file), trajectory)
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<SensorFrame>, SchemaError> {
    read_dataset_from(fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn zero_frame() -> SensorFrame {
        let mut f = SensorFrame::from_measured(0.0, &[0.0; MEASURED_DIM], 0.0);
        f.actuators = ACTUATOR_IDS.iter().map(|id| (id.to_string(), 0.0)).collect();
        f
    }

    #[test]
    fn catalog_layout() {
        let c = canonical_catalog();
        assert_eq!(c.count_group(ChannelGroup::Temperature), 16);
        assert_eq!(c.count_group(ChannelGroup::Pressure), 4);
        assert_eq!(c.count_group(ChannelGroup::Flow), 3);
        assert_eq!(c.count_group(ChannelGroup::Power), 2);
        assert_eq!(c.input_order.len(), 26);
        assert_eq!(c.output_order.len(), 29);
        assert_eq!(c.input_order[25], "Demand_Elec");
        assert_eq!(c.output_order[28], "CR_AO");
        assert_eq!(&c.output_order[25..], &["Heater_AO", "Pump1_AO", "Pump2_AO", "CR_AO"]);
        let mut ids: Vec<_> = c.channels.iter().map(|c| c.id).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), c.channels.len());
        for id in c.input_order.iter().chain(&c.output_order) {
            assert!(c.get(id).is_some(), "{id}");
        }
        for ch in &c.channels {
            assert!(ch.max_value > 0.0);
        }
        assert!(std::ptr::eq(canonical_catalog(), canonical_catalog()));
    }

    #[test]
    fn catalog_is_stable_across_builds() {
        assert_eq!(build_catalog(), build_catalog());
    }

    #[test]
    fn pack_zero_and_demand() {
        let f = zero_frame();
        assert_eq!(pack_input(&f).unwrap(), [0.0; 26]);
        assert_eq!(pack_output(&f).unwrap(), [0.0; 29]);
        let mut f = zero_frame();
        f.demand_elec = 1.889;
        assert_eq!(pack_input(&f).unwrap()[25], 1.889);
    }

    #[test]
    fn pack_output_places_actuators_last() {
        let mut f = zero_frame();
        for (id, v) in ACTUATOR_IDS.iter().zip([100.0, 60.0, 60.0, 0.0]) {
            f.actuators.insert(id.to_string(), v);
        }
        assert_eq!(&pack_output(&f).unwrap()[25..], &[100.0, 60.0, 60.0, 0.0]);
    }

    #[test]
    fn missing_channel_is_reported() {
        let mut f = zero_frame();
        f.values.remove("FT2");
        assert_eq!(pack_input(&f), Err(SchemaError::MissingChannel("FT2".into())));
        let mut f = zero_frame();
        f.actuators.remove("CR_AO");
        assert_eq!(pack_output(&f), Err(SchemaError::MissingChannel("CR_AO".into())));
    }

    #[test]
    fn insertion_order_does_not_matter() {
        let vals: Vec<f64> = (0..MEASURED_DIM).map(|i| i as f64 * 1.5).collect();
        let sorted = SensorFrame::from_measured(0.0, &vals, 0.3);
        let mut permuted = SensorFrame { demand_elec: 0.3, ..Default::default() };
        for i in (0..MEASURED_DIM).rev() {
            permuted.values.insert(MEASURED_IDS[i].to_string(), vals[i]);
        }
        assert_eq!(pack_input(&sorted).unwrap(), pack_input(&permuted).unwrap());
    }

    fn sample_trajectory(n: usize) -> Vec<SensorFrame> {
        (0..n)
            .map(|k| {
                let row: [f64; OUTPUT_DIM] =
                    std::array::from_fn(|i| (k as f64 + 1.0) * 0.1 + i as f64 / 7.0);
                unpack_output(k as f64, &row, 1.889 / (k as f64 + 1.0))
            })
            .collect()
    }

    #[test]
    fn dataset_round_trip() {
        let traj = sample_trajectory(3);
        let mut buf = Vec::new();
        write_dataset_to(&mut buf, &traj).unwrap();
        assert_eq!(read_dataset_from(&buf[..]).unwrap(), traj);
    }

    #[test]
    fn dataset_line_count() {
        let traj = sample_trajectory(3706);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        write_dataset(&path, &traj).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 3707);
        assert!(!text.contains('\r'));
        assert_eq!(text.lines().next().unwrap().split(',').count(), 31);
    }

    #[test]
    fn missing_column_is_schema_mismatch() {
        let header = csv_header();
        let short = header.trim_end_matches(",CR_AO");
        let text = format!("{short}\n{}\n", vec!["0"; 30].join(","));
        assert!(matches!(
            read_dataset_from(text.as_bytes()),
            Err(SchemaError::SchemaMismatch(_))
        ));
    }

    #[test]
    fn malformed_row_is_parse_error() {
        let text = format!("{}\n{}\n", csv_header(), vec!["1.0"; 30].join(","));
        assert!(matches!(
            read_dataset_from(text.as_bytes()),
            Err(SchemaError::ParseError { line: 2, .. })
        ));
        let mut fields = vec!["1.0"; 31];
        fields[4] = "abc";
        let text = format!("{}\n{}\n", csv_header(), fields.join(","));
        assert!(matches!(read_dataset_from(text.as_bytes()), Err(SchemaError::ParseError { .. })));
    }

    proptest! {
        #[test]
        fn csv_preserves_values(vals in prop::collection::vec(-1e6f64..1e6, OUTPUT_DIM + 2)) {
            let row: [f64; OUTPUT_DIM] = std::array::from_fn(|i| vals[i]);
            let frame = unpack_output(vals[OUTPUT_DIM], &row, vals[OUTPUT_DIM + 1]);
            let mut buf = Vec::new();
            write_dataset_to(&mut buf, std::slice::from_ref(&frame)).unwrap();
            let back = read_dataset_from(&buf[..]).unwrap();
            prop_assert_eq!(&back[0], &frame);
        }

        #[test]
        fn pack_output_is_injective(a in prop::collection::vec(-100f64..100.0, OUTPUT_DIM),
                                    b in prop::collection::vec(-100f64..100.0, OUTPUT_DIM)) {
            let ra: [f64; OUTPUT_DIM] = std::array::from_fn(|i| a[i]);
            let rb: [f64; OUTPUT_DIM] = std::array::from_fn(|i| b[i]);
            let fa = unpack_output(0.0, &ra, 0.0);
            let fb = unpack_output(0.0, &rb, 0.0);
            prop_assert_eq!(pack_output(&fa).unwrap() == pack_output(&fb).unwrap(), fa == fb);
        }
    }
}
