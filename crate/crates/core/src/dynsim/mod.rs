//! Fixed-step transient simulation with classical machines, scripted
//! contingencies and relay-commanded line trips.

mod export;
mod solver;
mod state;
mod study;

pub use export::{trace_csv, trip_table_csv};
pub use state::{initialize_dynamics, network_solve, step, DynamicState, MachineState};
pub use study::{run_study, StudyOptions, StudyOutcome, Termination};

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::{BranchId, BusId, GenId, NetError};
use crate::phasor::{serde_phasor, Phasor};
use crate::relay::{End, RelayError};

/// Synchronous speed, rad/s (60 Hz).
pub const OMEGA_S: f64 = 2.0 * PI * 60.0;
/// Default integration step: a quarter cycle.
pub const DEFAULT_DT: f64 = 1.0 / 240.0;
/// Relays see no current below this magnitude, per-unit.
pub const CURRENT_FLOOR: f64 = 1e-4;
/// Largest admissible |Y V - I| after a network solve.
pub const RESIDUAL_LIMIT: f64 = 1e-6;
/// Fault location used to approximate a bus fault on an adjacent line.
pub const BUS_FAULT_FRACTION: f64 = 0.05;

pub fn default_fault_admittance() -> Phasor {
    Phasor::new(0.0, -1e4)
}

fn default_bus_fault_fraction() -> f64 {
    BUS_FAULT_FRACTION
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("network solution diverged at t = {t} s")]
    NetworkDiverged { t: f64 },
    #[error("generator {0} has no defined current (terminal voltage ~0)")]
    GeneratorCurrentUndefined(GenId),
    #[error("line current below the measurement floor")]
    CurrentBelowFloor,
    #[error("invalid contingency event: {0}")]
    InvalidEvent(String),
    #[error("invalid study parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Relay(#[from] RelayError),
}

/// A fault shunt on a line, `location_fraction` measured from `from_bus`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActiveFault {
    pub location_fraction: f64,
    pub admittance: Phasor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum EventKind {
    ApplyLineFault {
        branch: BranchId,
        location_fraction: f64,
        #[serde(with = "serde_phasor", default = "default_fault_admittance")]
        fault_admittance: Phasor,
    },
    ClearFault {
        branch: BranchId,
    },
    TripLine {
        branch: BranchId,
    },
    /// Bus fault approximated by a line fault a short way down `via_branch`.
    ApplyBusFaultApprox {
        bus: BusId,
        via_branch: BranchId,
        #[serde(default = "default_bus_fault_fraction")]
        location_fraction: f64,
        #[serde(with = "serde_phasor", default = "default_fault_admittance")]
        fault_admittance: Phasor,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContingencyEvent {
    pub t: f64,
    pub kind: EventKind,
}

impl ContingencyEvent {
    pub fn new(t: f64, kind: EventKind) -> Self {
        Self { t, kind }
    }

    pub fn line_fault(t: f64, branch: BranchId, location_fraction: f64) -> Self {
        Self::new(
            t,
            EventKind::ApplyLineFault { branch, location_fraction, fault_admittance: default_fault_admittance() },
        )
    }

    pub fn bus_fault(t: f64, bus: BusId, via_branch: BranchId) -> Self {
        Self::new(
            t,
            EventKind::ApplyBusFaultApprox {
                bus,
                via_branch,
                location_fraction: BUS_FAULT_FRACTION,
                fault_admittance: default_fault_admittance(),
            },
        )
    }

    pub fn clear(t: f64, branch: BranchId) -> Self {
        Self::new(t, EventKind::ClearFault { branch })
    }

    pub fn trip(t: f64, branch: BranchId) -> Self {
        Self::new(t, EventKind::TripLine { branch })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TripCause {
    Relay,
    Scripted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripRecord {
    /// Time the line opened.
    pub t: f64,
    pub branch: BranchId,
    /// Relay end; `None` for scripted trips.
    pub end: Option<End>,
    pub zone: Option<u8>,
    pub cause: TripCause,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FiredEvent {
    Scripted { kind: EventKind, applied: bool },
    BreakerOpen { branch: BranchId, end: End, zone: u8 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceSample {
    pub t: f64,
    pub bus_v: BTreeMap<BusId, Phasor>,
    pub line_end_i: BTreeMap<(BranchId, End), Phasor>,
    pub apparent_z: BTreeMap<(BranchId, End), Phasor>,
    /// Rotor angle (rad) and slip (pu) per machine.
    pub machine: BTreeMap<GenId, (f64, f64)>,
    pub events_fired: Vec<FiredEvent>,
    pub out_of_service: Vec<BranchId>,
    /// In-service lines carrying an active fault.
    pub faulted: Vec<BranchId>,
}

impl TraceSample {
    pub fn in_service(&self, branch: BranchId) -> bool {
        self.out_of_service.binary_search(&branch).is_err()
    }

    pub fn is_faulted(&self, branch: BranchId) -> bool {
        self.faulted.binary_search(&branch).is_ok()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimulationTrace {
    pub samples: Vec<TraceSample>,
}

impl SimulationTrace {
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    /// The trace truncated to samples at or before `t`.
    pub fn prefix_until(&self, t: f64) -> SimulationTrace {
        SimulationTrace { samples: self.samples.iter().take_while(|s| s.t <= t).cloned().collect() }
    }
}

/// Apparent impedance V/I seen at a line terminal.
pub fn apparent_impedance_at_end(v_terminal: Phasor, i_into_line: Phasor) -> Result<Phasor, SimError> {
    if !(i_into_line.norm() >= CURRENT_FLOOR) {
        return Err(SimError::CurrentBelowFloor);
    }
    Ok(v_terminal / i_into_line)
}
