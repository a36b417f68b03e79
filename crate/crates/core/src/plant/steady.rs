//! Exact steady states of the frozen-command plant.
//!
//! With flows, rod and heater fixed the node equations are affine in the
//! temperatures, so the fixed point is one linear solve.

use nalgebra::{DMatrix, DVector};

use super::{derivatives, heater_power_at, Commands, PlantConfig, PlantError, PlantState, N_FLUID, N_STATE};

/// Steady state reached by holding `commands` (rod at its commanded position).
pub fn steady_state(cfg: &PlantConfig, commands: &Commands) -> Result<PlantState, PlantError> {
    commands.validate(cfg)?;
    let cmds = commands.quantized(cfg);
    let mut state = PlantState::ambient(cfg);
    state.commands = cmds;
    state.rod_position = cmds.rod;
    let flows = state.flows(cfg);
    let q = heater_power_at(cfg, cmds.heater, cmds.rod);

    // Columns of A from unit perturbations; exact because the RHS is affine.
    let zero = [0.0; N_STATE];
    let b = derivatives(cfg, flows, q, &zero);
    let mut a = DMatrix::<f64>::zeros(N_STATE, N_STATE);
    for j in 0..N_STATE {
        let mut e = zero;
        e[j] = 1.0;
        let col = derivatives(cfg, flows, q, &e);
        for i in 0..N_STATE {
            a[(i, j)] = col[i] - b[i];
        }
    }
    let rhs = -DVector::from_column_slice(&b);
    let y = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| PlantError::InvalidConfig("singular steady-state system (no flow path to the sink?)".into()))?;
    state.fluid.copy_from_slice(&y.as_slice()[..N_FLUID]);
    state.heater_temps.copy_from_slice(&y.as_slice()[N_FLUID..]);
    Ok(state)
}

/// Steady sink removal as an affine function `s0 + slope * Q_heat` of heater
/// power, for the given pump frequencies.
pub fn sink_response(cfg: &PlantConfig, pump1: f64, pump2: f64) -> Result<(f64, f64), PlantError> {
    let at = |heater: f64| -> Result<f64, PlantError> {
        let c = Commands { heater, pump1, pump2, rod: 0.0 };
        Ok(steady_state(cfg, &c)?.sink_removal(cfg))
    };
    let s0 = at(0.0)?;
    let s1 = at(100.0)?;
    Ok((s0, (s1 - s0) / cfg.heater_max_power))
}

/// Heater power (W) whose steady state delivers `demand_kw` of electric output.
pub fn heat_for_demand(cfg: &PlantConfig, demand_kw: f64, pump1: f64, pump2: f64) -> Result<f64, PlantError> {
    let (s0, slope) = sink_response(cfg, pump1, pump2)?;
    if slope <= 0.0 {
        return Err(PlantError::InvalidConfig("heater has no effect on the sink at these pump speeds".into()));
    }
    Ok(((demand_kw * 1000.0 / cfg.conversion_efficiency - s0) / slope).max(0.0))
}
