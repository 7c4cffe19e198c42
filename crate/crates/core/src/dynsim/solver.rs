//! Algebraic network solution for the dynamic simulation.
//!
//! Generators appear as Norton equivalents behind their transient reactance,
//! loads as frozen shunts, and every active fault as a shunt on a node
//! inserted into its line. Only islands that contain a generator are solved;
//! everything else sits at zero voltage.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Dyn;
use nalgebra::{DMatrix, DVector, LU};
use num_complex::Complex64;

use super::{ActiveFault, SimError, RESIDUAL_LIMIT};
use crate::netmodel::{build_ybus, connected_components, split_line_at_fraction, BranchId, BusId, LoadStamp, Network};
use crate::phasor::Phasor;
use crate::relay::End;

/// Where a faulted line was split.
#[derive(Debug, Clone, Copy)]
pub(crate) struct FaultNode {
    #[cfg_attr(not(test), allow(dead_code))]
    pub node: BusId,
    pub near: BranchId,
    pub far: BranchId,
}

/// One generator as the network sees it.
#[derive(Debug, Clone, Copy)]
pub(crate) struct MachineStamp {
    pub bus: BusId,
    pub xdp: f64,
}

/// Factorized network for one topology.
#[derive(Debug, Clone)]
pub(crate) struct NetworkSolver {
    pub effective: Network,
    pub fault_nodes: BTreeMap<BranchId, FaultNode>,
    /// Solved nodes, in matrix order.
    active: Vec<BusId>,
    position: BTreeMap<BusId, usize>,
    /// Matrix row of each machine's terminal bus.
    machine_rows: Vec<usize>,
    machine_y: Vec<Complex64>,
    y: DMatrix<Complex64>,
    lu: LU<Complex64, Dyn, Dyn>,
}

/// Node voltages from one solve.
pub(crate) struct NodeVoltages<'a> {
    solver: &'a NetworkSolver,
    v: DVector<Complex64>,
}

impl NetworkSolver {
    pub fn build(
        base: &Network,
        faults: &BTreeMap<BranchId, ActiveFault>,
        loads: &BTreeMap<BusId, Phasor>,
        machines: &[MachineStamp],
        t: f64,
    ) -> Result<Self, SimError> {
        let mut effective = base.clone();
        let mut fault_nodes = BTreeMap::new();
        let mut fault_shunts = Vec::new();
        for (&branch, fault) in faults {
            let in_service = effective.branch(branch).is_some_and(|b| b.in_service);
            if !in_service {
                continue;
            }
            let split = split_line_at_fraction(&effective, branch, fault.location_fraction)?;
            fault_nodes
                .insert(branch, FaultNode { node: split.new_bus, near: split.near_segment, far: split.far_segment });
            fault_shunts.push((split.new_bus, fault.admittance));
            effective = split.network;
        }

        let mut ybus = build_ybus(&effective, LoadStamp::Frozen(loads))?;
        for m in machines {
            ybus.stamp_shunt(m.bus, Complex64::new(0.0, -1.0 / m.xdp))?;
        }
        for &(node, y_f) in &fault_shunts {
            ybus.stamp_shunt(node, y_f)?;
        }

        let source_buses: BTreeSet<BusId> = machines.iter().map(|m| m.bus).collect();
        let edges = effective.branches.iter().filter(|b| b.in_service).map(|b| (b.from_bus, b.to_bus));
        let islands = connected_components(effective.buses.iter().map(|b| b.id), edges);
        let active: Vec<BusId> =
            islands.into_iter().filter(|island| island.iter().any(|b| source_buses.contains(b))).flatten().collect();
        let position: BTreeMap<BusId, usize> = active.iter().enumerate().map(|(i, b)| (*b, i)).collect();

        let n = active.len();
        let mut y = DMatrix::zeros(n, n);
        for (&(r, c), &val) in &ybus.entries {
            if let (Some(&i), Some(&j)) = (position.get(&ybus.buses[r]), position.get(&ybus.buses[c])) {
                y[(i, j)] = val;
            }
        }
        let lu = y.clone().lu();
        if !lu.is_invertible() {
            return Err(SimError::NetworkDiverged { t });
        }
        let machine_rows = machines.iter().map(|m| position[&m.bus]).collect();
        let machine_y = machines.iter().map(|m| Complex64::new(0.0, -1.0 / m.xdp)).collect();
        Ok(Self { effective, fault_nodes, active, position, machine_rows, machine_y, y, lu })
    }

    /// Solves Y V = I for the given internal EMFs (one per machine, same
    /// order as at construction).
    pub fn solve(&self, emf: &[Complex64], t: f64) -> Result<NodeVoltages<'_>, SimError> {
        let mut inj = DVector::zeros(self.active.len());
        for ((&row, &y), &e) in self.machine_rows.iter().zip(&self.machine_y).zip(emf) {
            inj[row] += e * y;
        }
        let v = self.lu.solve(&inj).ok_or(SimError::NetworkDiverged { t })?;
        let residual = (&self.y * &v - &inj).iter().map(|r| r.norm()).fold(0.0, f64::max);
        if !(residual <= RESIDUAL_LIMIT) || v.iter().any(|x| !x.re.is_finite() || !x.im.is_finite()) {
            return Err(SimError::NetworkDiverged { t });
        }
        Ok(NodeVoltages { solver: self, v })
    }

    /// Electrical power of each machine for the given EMFs.
    pub fn electrical_power(&self, emf: &[Complex64], t: f64) -> Result<Vec<f64>, SimError> {
        let nv = self.solve(emf, t)?;
        Ok(self
            .machine_rows
            .iter()
            .zip(&self.machine_y)
            .zip(emf)
            .map(|((&row, &y), &e)| (e * ((e - nv.v[row]) * y).conj()).re)
            .collect())
    }

    pub fn is_energized(&self, bus: BusId) -> bool {
        self.position.contains_key(&bus)
    }
}

impl NodeVoltages<'_> {
    pub fn at(&self, bus: BusId) -> Phasor {
        self.solver.position.get(&bus).map_or(Phasor::default(), |&i| self.v[i])
    }

    /// Current flowing from the terminal into the line at `end` of an
    /// original branch, including that end's charging current. `None` when
    /// the branch is out of service.
    pub fn line_end_current(&self, base: &Network, branch: BranchId, end: End) -> Option<Phasor> {
        let original = base.branch(branch)?;
        if !original.in_service {
            return None;
        }
        let segment_id = match (self.solver.fault_nodes.get(&branch), end) {
            (Some(f), End::From) => f.near,
            (Some(f), End::To) => f.far,
            (None, _) => branch,
        };
        let seg = self.solver.effective.branch(segment_id)?;
        let (here, there) = match end {
            End::From => (seg.from_bus, seg.to_bus),
            End::To => (seg.to_bus, seg.from_bus),
        };
        let vh = self.at(here);
        let vt = self.at(there);
        Some((vh - vt) / seg.z_series + Complex64::new(0.0, seg.b_shunt_total / 2.0) * vh)
    }
}
