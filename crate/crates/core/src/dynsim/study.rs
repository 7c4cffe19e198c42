use std::collections::{BTreeMap, BTreeSet};

use super::state::{initialize_dynamics, step, DynamicState};
use super::{
    apparent_impedance_at_end, ActiveFault, ContingencyEvent, EventKind, FiredEvent, SimError, SimulationTrace,
    TraceSample, TripCause, TripRecord, DEFAULT_DT,
};
use crate::netmodel::{solve_power_flow, BranchId, Network};
use crate::relay::{DistanceRelay, End, RelaySet, TripCommand, ZoneEntry, TIME_EPS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudyOptions {
    pub dt: f64,
    pub horizon: f64,
    pub pf_tol: f64,
    pub pf_max_iter: usize,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self { dt: DEFAULT_DT, horizon: 10.0, pf_tol: 1e-8, pf_max_iter: 50 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Termination {
    Completed,
    Diverged { t: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyOutcome {
    pub trace: SimulationTrace,
    pub trips: Vec<TripRecord>,
    pub zone_entries: Vec<ZoneEntry>,
    pub termination: Termination,
}

impl StudyOutcome {
    pub fn relay_trips(&self) -> impl Iterator<Item = &TripRecord> {
        self.trips.iter().filter(|r| r.cause == TripCause::Relay)
    }
}

fn validate_events(network: &Network, events: &[ContingencyEvent]) -> Result<Vec<ContingencyEvent>, SimError> {
    let invalid = |msg: String| Err(SimError::InvalidEvent(msg));
    for ev in events {
        if !(ev.t >= 0.0 && ev.t.is_finite()) {
            return invalid(format!("event time {} must be finite and non-negative", ev.t));
        }
        let branch = match &ev.kind {
            EventKind::ApplyLineFault { branch, .. } => *branch,
            EventKind::ClearFault { branch } | EventKind::TripLine { branch } => *branch,
            EventKind::ApplyBusFaultApprox { via_branch, .. } => *via_branch,
        };
        let Some(br) = network.branch(branch) else {
            return invalid(format!("event at t={} references missing branch {branch}", ev.t));
        };
        match &ev.kind {
            EventKind::ApplyLineFault { location_fraction, fault_admittance, .. }
            | EventKind::ApplyBusFaultApprox { location_fraction, fault_admittance, .. } => {
                if !(*location_fraction > 0.0 && *location_fraction < 1.0) {
                    return invalid(format!("fault location {location_fraction} on branch {branch} outside (0, 1)"));
                }
                if !crate::phasor::is_finite(*fault_admittance) {
                    return invalid(format!("fault admittance on branch {branch} is not finite"));
                }
            }
            _ => {}
        }
        if let EventKind::ApplyBusFaultApprox { bus, .. } = &ev.kind {
            if br.other_end(*bus).is_none() {
                return invalid(format!("bus {bus} is not an end of branch {branch}"));
            }
        }
    }
    let mut sorted = events.to_vec();
    sorted.sort_by(|a, b| a.t.total_cmp(&b.t));
    Ok(sorted)
}

/// Applies one scripted event. Returns whether it changed anything.
fn apply_event(state: &mut DynamicState, kind: &EventKind, t: f64, trips: &mut Vec<TripRecord>) -> bool {
    let in_service = |state: &DynamicState, b: BranchId| state.network.branch(b).is_some_and(|br| br.in_service);
    match *kind {
        EventKind::ApplyLineFault { branch, location_fraction, fault_admittance } => {
            if !in_service(state, branch) {
                return false;
            }
            state.faults.insert(branch, ActiveFault { location_fraction, admittance: fault_admittance });
            true
        }
        EventKind::ApplyBusFaultApprox { bus, via_branch, location_fraction, fault_admittance } => {
            if !in_service(state, via_branch) {
                return false;
            }
            let br = state.network.branch(via_branch).expect("validated");
            let from_start = if br.from_bus == bus { location_fraction } else { 1.0 - location_fraction };
            state
                .faults
                .insert(via_branch, ActiveFault { location_fraction: from_start, admittance: fault_admittance });
            true
        }
        EventKind::ClearFault { branch } => state.faults.remove(&branch).is_some(),
        EventKind::TripLine { branch } => {
            if !in_service(state, branch) {
                return false;
            }
            state.network.branch_mut(branch).expect("validated").in_service = false;
            trips.push(TripRecord { t, branch, end: None, zone: None, cause: TripCause::Scripted });
            true
        }
    }
}

fn snapshot(state: &mut DynamicState, fired: Vec<FiredEvent>) -> Result<TraceSample, SimError> {
    let t = state.t;
    let emf = state.emf();
    let machine = state.machines.iter().map(|(id, m)| (*id, (m.delta, m.slip))).collect();
    let out_of_service: Vec<BranchId> = state
        .network
        .branches
        .iter()
        .filter(|b| !b.in_service)
        .map(|b| b.id)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let faulted: Vec<BranchId> =
        state.faults.keys().copied().filter(|b| state.network.branch(*b).is_some_and(|br| br.in_service)).collect();

    let network = state.network.clone();
    let solver = state.solver()?;
    let nv = solver.solve(&emf, t)?;
    let bus_v = network.buses.iter().map(|b| (b.id, nv.at(b.id))).collect();
    let mut line_end_i = BTreeMap::new();
    let mut apparent_z = BTreeMap::new();
    for br in network.branches.iter().filter(|b| b.in_service) {
        for end in [End::From, End::To] {
            let Some(i) = nv.line_end_current(&network, br.id, end) else { continue };
            let terminal = match end {
                End::From => br.from_bus,
                End::To => br.to_bus,
            };
            line_end_i.insert((br.id, end), i);
            if solver.is_energized(terminal) {
                if let Ok(z) = apparent_impedance_at_end(nv.at(terminal), i) {
                    apparent_z.insert((br.id, end), z);
                }
            }
        }
    }
    Ok(TraceSample { t, bus_v, line_end_i, apparent_z, machine, events_fired: fired, out_of_service, faulted })
}

/// Runs one contingency from a fresh power-flow initialization.
///
/// At every step boundary, in order: scripted events due by then, breaker
/// openings due by then (ascending branch, end), network solve and trace
/// sample, then relay evaluation on that sample. A network divergence ends
/// the run and is reported as the termination, with the trace up to it.
pub fn run_study(
    network: &Network,
    contingency: &[ContingencyEvent],
    relays: &RelaySet,
    opts: StudyOptions,
) -> Result<StudyOutcome, SimError> {
    if !(opts.dt > 0.0 && opts.dt.is_finite()) {
        return Err(SimError::InvalidParameter(format!("dt must be positive, got {}", opts.dt)));
    }
    if !(opts.horizon >= 0.0 && opts.horizon.is_finite()) {
        return Err(SimError::InvalidParameter(format!("horizon must be non-negative, got {}", opts.horizon)));
    }
    let events = validate_events(network, contingency)?;
    let mut models = Vec::with_capacity(relays.len());
    for setting in relays.iter() {
        setting.validate()?;
        let br = network
            .branch(setting.branch)
            .ok_or_else(|| SimError::InvalidEvent(format!("relay on missing branch {}", setting.branch)))?;
        models.push(DistanceRelay::new(setting.clone(), br.z_series));
    }

    let pf = solve_power_flow(network, opts.pf_tol, opts.pf_max_iter)?;
    let mut state = initialize_dynamics(network, &pf)?;

    let n_steps = (opts.horizon / opts.dt).round() as usize;
    let mut next_event = 0;
    let mut pending: Vec<TripCommand> = Vec::new();
    let mut trace = SimulationTrace::default();
    let mut trips = Vec::new();
    let mut zone_entries = Vec::new();

    for k in 0..=n_steps {
        let t = k as f64 * opts.dt;
        if k > 0 {
            if let Err(e) = step(&mut state, opts.dt) {
                return diverged_or(e, trace, trips, zone_entries);
            }
            state.t = t;
        }

        let in_service_before: BTreeSet<BranchId> =
            state.network.branches.iter().filter(|b| b.in_service).map(|b| b.id).collect();
        let mut fired = Vec::new();
        let mut topology_changed = false;

        while next_event < events.len() && events[next_event].t <= t + TIME_EPS {
            let kind = &events[next_event].kind;
            let applied = apply_event(&mut state, kind, t, &mut trips);
            topology_changed |= applied;
            fired.push(FiredEvent::Scripted { kind: kind.clone(), applied });
            next_event += 1;
        }

        let (due, later): (Vec<TripCommand>, Vec<TripCommand>) =
            pending.into_iter().partition(|c| c.open_t <= t + TIME_EPS);
        pending = later;
        let mut due = due;
        due.sort_by_key(|c| (c.branch, c.end));
        for cmd in due {
            if !in_service_before.contains(&cmd.branch) {
                continue;
            }
            if let Some(br) = state.network.branch_mut(cmd.branch) {
                br.in_service = false;
            }
            topology_changed = true;
            trips.push(TripRecord {
                t,
                branch: cmd.branch,
                end: Some(cmd.end),
                zone: Some(cmd.zone),
                cause: TripCause::Relay,
            });
            fired.push(FiredEvent::BreakerOpen { branch: cmd.branch, end: cmd.end, zone: cmd.zone });
        }

        if topology_changed {
            state.invalidate();
        }
        let sample = match snapshot(&mut state, fired) {
            Ok(s) => s,
            Err(e) => return diverged_or(e, trace, trips, zone_entries),
        };

        for relay in models.iter_mut() {
            let z = sample.apparent_z.get(&(relay.branch(), relay.end())).copied();
            let out = relay.relay_step(z, t)?;
            for zone in out.entered {
                zone_entries.push(ZoneEntry { t, branch: relay.branch(), end: relay.end(), zone });
            }
            if let Some(cmd) = out.command {
                pending.push(cmd);
            }
        }
        trace.samples.push(sample);
    }
    Ok(StudyOutcome { trace, trips, zone_entries, termination: Termination::Completed })
}

fn diverged_or(
    e: SimError,
    trace: SimulationTrace,
    trips: Vec<TripRecord>,
    zone_entries: Vec<ZoneEntry>,
) -> Result<StudyOutcome, SimError> {
    match e {
        SimError::NetworkDiverged { t } => {
            Ok(StudyOutcome { trace, trips, zone_entries, termination: Termination::Diverged { t } })
        }
        other => Err(other),
    }
}
