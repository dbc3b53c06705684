//! Shared run loop with blow-up detection and station sampling.

use crate::error::Result;
use crate::solver::{EnergyRecord, Stepper, SystemState};
use crate::verify::elastic::ElasticStepper;
use crate::verify::quantities::{mean_quantities, StationSample};

/// Blow-up threshold on the total energy.
pub const BLOWUP_ENERGY: f64 = 1e250;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunOutcome {
    Completed,
    /// Energy crossed the threshold or a field went non-finite at this step.
    BlewUp { step: usize },
}

pub struct RunResult {
    pub outcome: RunOutcome,
    /// (time, record) per step, in step order.
    pub energies: Vec<(f64, EnergyRecord)>,
    /// (time, samples) once every `station_every` steps, when requested.
    pub stations: Vec<(f64, Vec<StationSample>)>,
    pub final_state: SystemState,
}

pub trait TimeStepper {
    fn advance_state(&mut self, state: &SystemState) -> Result<SystemState>;
    fn energy(&self, state: &SystemState) -> EnergyRecord;
    fn n_steps(&self) -> Result<usize>;
}

impl TimeStepper for Stepper {
    fn advance_state(&mut self, state: &SystemState) -> Result<SystemState> {
        self.advance(state)
    }
    fn energy(&self, state: &SystemState) -> EnergyRecord {
        self.compute_energy(state)
    }
    fn n_steps(&self) -> Result<usize> {
        self.config.n_steps()
    }
}

impl TimeStepper for ElasticStepper {
    fn advance_state(&mut self, state: &SystemState) -> Result<SystemState> {
        self.advance(state)
    }
    fn energy(&self, state: &SystemState) -> EnergyRecord {
        self.compute_energy(state)
    }
    fn n_steps(&self) -> Result<usize> {
        self.config().n_steps()
    }
}

/// March the stepper to its horizon. `stations`: sample the averaged station
/// quantities every `station_every` steps (0 disables). `on_state` runs after
/// every accepted step (field dumps, custom probes).
pub fn run_simulation(
    stepper: &mut Stepper,
    stations: &[f64],
    station_every: usize,
    mut on_state: impl FnMut(&SystemState) -> Result<()>,
) -> Result<RunResult> {
    let n_steps = stepper.config.n_steps()?;
    let mut state = stepper.initial_state();
    let mut energies = Vec::with_capacity(n_steps);
    let mut station_log = Vec::new();
    for k in 0..n_steps {
        state = stepper.advance(&state)?;
        let rec = *stepper.energy_log.last().expect("advance logs energy");
        energies.push((state.t, rec));
        if station_every > 0 && (k + 1) % station_every == 0 {
            station_log.push((
                state.t,
                mean_quantities(&state, &stepper.mesh, &stepper.spaces, stations),
            ));
        }
        on_state(&state)?;
        if !state.is_finite() || rec.total() > BLOWUP_ENERGY {
            return Ok(RunResult {
                outcome: RunOutcome::BlewUp { step: k + 1 },
                energies,
                stations: station_log,
                final_state: state,
            });
        }
    }
    Ok(RunResult {
        outcome: RunOutcome::Completed,
        energies,
        stations: station_log,
        final_state: state,
    })
}
