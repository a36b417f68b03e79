//! Digital-twin workbench for a three-loop thermal-fluid facility.

pub mod assistant;
pub mod gru;
pub mod pipeline;
pub mod plant;
pub mod schema;
pub mod telemetry;
pub mod twin;
