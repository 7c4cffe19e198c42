use std::collections::BTreeMap;

use num_complex::Complex64;

use super::solver::{MachineStamp, NetworkSolver};
use super::{ActiveFault, SimError, OMEGA_S};
use crate::netmodel::{frozen_load_admittances, BranchId, BusId, GenId, Network, PowerFlowSolution};
use crate::phasor::Phasor;

/// Classical machine: constant EMF magnitude behind transient reactance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MachineState {
    /// Rotor angle, rad.
    pub delta: f64,
    /// Per-unit speed deviation.
    pub slip: f64,
    pub e_internal: f64,
    pub p_mech: f64,
}

#[derive(Debug, Clone, Copy)]
struct MachineParams {
    bus: BusId,
    xdp: f64,
    h: f64,
    d: f64,
}

/// Everything that evolves during a run.
#[derive(Debug, Clone)]
pub struct DynamicState {
    pub t: f64,
    /// Base network; `in_service` flags follow trips.
    pub network: Network,
    pub faults: BTreeMap<BranchId, ActiveFault>,
    pub load_admittance: BTreeMap<BusId, Phasor>,
    pub machines: BTreeMap<GenId, MachineState>,
    params: Vec<MachineParams>,
    solver: Option<NetworkSolver>,
}

impl DynamicState {
    pub(crate) fn solver(&mut self) -> Result<&NetworkSolver, SimError> {
        if self.solver.is_none() {
            let stamps: Vec<MachineStamp> =
                self.params.iter().map(|p| MachineStamp { bus: p.bus, xdp: p.xdp }).collect();
            let solver = NetworkSolver::build(&self.network, &self.faults, &self.load_admittance, &stamps, self.t)?;
            self.solver = Some(solver);
        }
        Ok(self.solver.as_ref().expect("solver just built"))
    }

    /// Drops the cached factorization after a topology change.
    pub fn invalidate(&mut self) {
        self.solver = None;
    }

    pub(crate) fn emf(&self) -> Vec<Complex64> {
        self.machines.values().map(|m| Complex64::from_polar(m.e_internal, m.delta)).collect()
    }

    /// Electrical power per machine at the current rotor angles.
    pub fn electrical_power(&mut self) -> Result<BTreeMap<GenId, f64>, SimError> {
        let emf = self.emf();
        let t = self.t;
        let pe = self.solver()?.electrical_power(&emf, t)?;
        Ok(self.machines.keys().copied().zip(pe).collect())
    }
}

/// Builds the initial machine states from a converged power flow.
///
/// Each EMF is E' = V + j xd' I with I the generator current at the
/// power-flow solution. Mechanical power is set to the electrical power of
/// the initial network solution so an undisturbed run stays put.
pub fn initialize_dynamics(network: &Network, pf: &PowerFlowSolution) -> Result<DynamicState, SimError> {
    let mut gens: Vec<_> = network.generators.iter().collect();
    gens.sort_by_key(|g| g.id);
    let mut machines = BTreeMap::new();
    let mut params = Vec::with_capacity(gens.len());
    for g in gens {
        let v = pf.voltage(g.bus);
        if v.norm() < 1e-6 {
            return Err(SimError::GeneratorCurrentUndefined(g.id));
        }
        let s = pf.generation.get(&g.id).copied().unwrap_or_default();
        let i = (s / v).conj();
        let e = v + Complex64::new(0.0, g.xdp) * i;
        machines.insert(g.id, MachineState { delta: e.arg(), slip: 0.0, e_internal: e.norm(), p_mech: 0.0 });
        params.push(MachineParams { bus: g.bus, xdp: g.xdp, h: network.h_system(g), d: network.d_system(g) });
    }
    let mut state = DynamicState {
        t: 0.0,
        network: network.clone(),
        faults: BTreeMap::new(),
        load_admittance: frozen_load_admittances(network, pf),
        machines,
        params,
        solver: None,
    };
    let pe = state.electrical_power()?;
    for (id, m) in state.machines.iter_mut() {
        m.p_mech = pe[id];
    }
    Ok(state)
}

/// Bus voltages for the current state. Buses in source-free islands read zero.
pub fn network_solve(state: &mut DynamicState) -> Result<BTreeMap<BusId, Phasor>, SimError> {
    let emf = state.emf();
    let t = state.t;
    let buses: Vec<BusId> = state.network.buses.iter().map(|b| b.id).collect();
    let nv = state.solver()?.solve(&emf, t)?;
    Ok(buses.into_iter().map(|b| (b, nv.at(b))).collect())
}

/// One explicit RK4 step of the swing equations, re-solving the network at
/// every stage:
///
/// dδ/dt = ωs·slip,  dslip/dt = (Pm − Pe − D·slip) / 2H
pub fn step(state: &mut DynamicState, dt: f64) -> Result<(), SimError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(SimError::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    let t0 = state.t;
    let delta0: Vec<f64> = state.machines.values().map(|m| m.delta).collect();
    let slip0: Vec<f64> = state.machines.values().map(|m| m.slip).collect();
    let e_mag: Vec<f64> = state.machines.values().map(|m| m.e_internal).collect();
    let p_mech: Vec<f64> = state.machines.values().map(|m| m.p_mech).collect();
    let params = state.params.clone();
    let solver = state.solver()?;

    let rates = |delta: &[f64], slip: &[f64], t: f64| -> Result<(Vec<f64>, Vec<f64>), SimError> {
        let emf: Vec<Complex64> = e_mag.iter().zip(delta).map(|(&e, &d)| Complex64::from_polar(e, d)).collect();
        let pe = solver.electrical_power(&emf, t)?;
        let d_delta = slip.iter().map(|s| OMEGA_S * s).collect();
        let d_slip =
            (0..slip.len()).map(|k| (p_mech[k] - pe[k] - params[k].d * slip[k]) / (2.0 * params[k].h)).collect();
        Ok((d_delta, d_slip))
    };
    let advance =
        |base: &[f64], rate: &[f64], h: f64| -> Vec<f64> { base.iter().zip(rate).map(|(b, r)| b + h * r).collect() };

    let (k1d, k1s) = rates(&delta0, &slip0, t0)?;
    let (k2d, k2s) = rates(&advance(&delta0, &k1d, dt / 2.0), &advance(&slip0, &k1s, dt / 2.0), t0 + dt / 2.0)?;
    let (k3d, k3s) = rates(&advance(&delta0, &k2d, dt / 2.0), &advance(&slip0, &k2s, dt / 2.0), t0 + dt / 2.0)?;
    let (k4d, k4s) = rates(&advance(&delta0, &k3d, dt), &advance(&slip0, &k3s, dt), t0 + dt)?;

    let combine = |y: f64, a: f64, b: f64, c: f64, d: f64| y + dt / 6.0 * (a + 2.0 * b + 2.0 * c + d);
    let mut next = Vec::with_capacity(delta0.len());
    for k in 0..delta0.len() {
        let delta = combine(delta0[k], k1d[k], k2d[k], k3d[k], k4d[k]);
        let slip = combine(slip0[k], k1s[k], k2s[k], k3s[k], k4s[k]);
        if !delta.is_finite() || !slip.is_finite() {
            return Err(SimError::NetworkDiverged { t: t0 + dt });
        }
        next.push((delta, slip));
    }
    for (m, (delta, slip)) in state.machines.values_mut().zip(next) {
        m.delta = delta;
        m.slip = slip;
    }
    state.t = t0 + dt;
    Ok(())
}
