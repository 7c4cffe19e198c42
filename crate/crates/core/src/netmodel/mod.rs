//! Static bus-branch network: buses, branches, generators, admittance
//! matrix assembly, power flow, and topology edits.

mod powerflow;
mod ybus;

pub use powerflow::{frozen_load_admittances, solve_power_flow, PowerFlowSolution};
pub use ybus::{build_ybus, AdmittanceMatrix, LoadStamp};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::phasor::{self, serde_phasor, Phasor};

/// Default system base.
pub const DEFAULT_BASE_MVA: f64 = 100.0;

/// Branches whose series impedance magnitude falls below this are rejected.
pub const MIN_BRANCH_IMPEDANCE: f64 = 1e-9;

macro_rules! id_type {
    ($(#[$m:meta])* $name:ident) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                self.0.fmt(f)
            }
        }
    };
}

id_type!(BusId);
id_type!(BranchId);
id_type!(GenId);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: BusId,
    pub kv_base: f64,
    pub kind: BusKind,
    /// Voltage magnitude setpoint, per-unit. Used at slack and pv buses.
    #[serde(default = "unity")]
    pub v_setpoint: f64,
    /// Load at nominal voltage, per-unit on the system base.
    #[serde(with = "serde_phasor", default = "zero_phasor")]
    pub load: Phasor,
}

fn unity() -> f64 {
    1.0
}

fn zero_phasor() -> Phasor {
    Phasor::new(0.0, 0.0)
}

fn in_service_default() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Branch {
    pub id: BranchId,
    pub from_bus: BusId,
    pub to_bus: BusId,
    #[serde(with = "serde_phasor")]
    pub z_series: Phasor,
    /// Total line charging susceptance, half stamped at each end.
    #[serde(default)]
    pub b_shunt_total: f64,
    pub kv_level: f64,
    #[serde(default = "in_service_default")]
    pub in_service: bool,
}

impl Branch {
    pub fn other_end(&self, bus: BusId) -> Option<BusId> {
        if bus == self.from_bus {
            Some(self.to_bus)
        } else if bus == self.to_bus {
            Some(self.from_bus)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Generator {
    pub id: GenId,
    pub bus: BusId,
    /// Inertia constant, seconds on the machine base.
    pub h: f64,
    /// Damping, per-unit torque per per-unit speed deviation, machine base.
    #[serde(default)]
    pub d: f64,
    /// Transient reactance, per-unit on the system base.
    pub xdp: f64,
    pub mbase: f64,
    #[serde(default)]
    pub p_dispatch: f64,
    #[serde(default)]
    pub q_dispatch: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Network {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetError {
    #[error("branch {0} has zero series impedance")]
    ZeroImpedanceBranch(BranchId),
    #[error("branch {branch} references missing bus {bus}")]
    DanglingBranchEndpoint { branch: BranchId, bus: BusId },
    #[error("branch {0} connects a bus to itself")]
    SelfLoop(BranchId),
    #[error("duplicate {kind} id {id}")]
    DuplicateId { kind: &'static str, id: u32 },
    #[error("bus {0} has non-positive kv_base")]
    NonPositiveKv(BusId),
    #[error("generator {gen} references missing bus {bus}")]
    GeneratorBusMissing { gen: GenId, bus: BusId },
    #[error("generator {0}: h, xdp and mbase must be positive")]
    InvalidMachine(GenId),
    #[error("{0} contains a non-finite value")]
    NonFinite(String),
    #[error("island containing bus {bus} has {count} slack buses, expected exactly one")]
    SlackCount { bus: BusId, count: usize },
    #[error("{kind} bus {bus} has no generator")]
    BusWithoutGenerator { kind: &'static str, bus: BusId },
    #[error("base_mva must be positive")]
    NonPositiveBase,
    #[error("bus {0} not found")]
    UnknownBus(BusId),
    #[error("branch {0} not found")]
    BranchNotFound(BranchId),
    #[error("branch {0} is out of service")]
    BranchOutOfService(BranchId),
    #[error("split fraction {0} outside (0, 1)")]
    FractionOutOfRange(f64),
    #[error("power flow diverged at iteration {iteration} (mismatch {mismatch:e})")]
    PowerFlowDiverged { iteration: usize, mismatch: f64 },
}

/// Result of [`split_line_at_fraction`].
#[derive(Debug, Clone)]
pub struct LineSplit {
    pub network: Network,
    /// Node inserted at the split point.
    pub new_bus: BusId,
    /// Segment from the original `from_bus` to `new_bus`; keeps the original id.
    pub near_segment: BranchId,
    /// Segment from `new_bus` to the original `to_bus`.
    pub far_segment: BranchId,
}

impl Network {
    pub fn bus(&self, id: BusId) -> Option<&Bus> {
        self.buses.iter().find(|b| b.id == id)
    }

    pub fn branch(&self, id: BranchId) -> Option<&Branch> {
        self.branches.iter().find(|b| b.id == id)
    }

    pub fn branch_mut(&mut self, id: BranchId) -> Option<&mut Branch> {
        self.branches.iter_mut().find(|b| b.id == id)
    }

    pub fn generator(&self, id: GenId) -> Option<&Generator> {
        self.generators.iter().find(|g| g.id == id)
    }

    /// Position of each bus in `buses`, keyed by id.
    pub fn bus_positions(&self) -> BTreeMap<BusId, usize> {
        self.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect()
    }

    pub fn next_bus_id(&self) -> BusId {
        BusId(self.buses.iter().map(|b| b.id.0).max().map_or(1, |m| m + 1))
    }

    pub fn next_branch_id(&self) -> BranchId {
        BranchId(self.branches.iter().map(|b| b.id.0).max().map_or(1, |m| m + 1))
    }

    /// Inertia constant converted to the system base.
    pub fn h_system(&self, g: &Generator) -> f64 {
        g.h * g.mbase / self.base_mva
    }

    pub fn d_system(&self, g: &Generator) -> f64 {
        g.d * g.mbase / self.base_mva
    }

    /// Connected components over in-service branches, each sorted by bus id.
    pub fn islands(&self) -> Vec<BTreeSet<BusId>> {
        let edges = self.branches.iter().filter(|b| b.in_service).map(|b| (b.from_bus, b.to_bus));
        connected_components(self.buses.iter().map(|b| b.id), edges)
    }

    /// Checks every structural invariant of the network.
    pub fn validate(&self) -> Result<(), NetError> {
        if !(self.base_mva > 0.0 && self.base_mva.is_finite()) {
            return Err(NetError::NonPositiveBase);
        }
        let mut seen = BTreeSet::new();
        for bus in &self.buses {
            if !seen.insert(bus.id) {
                return Err(NetError::DuplicateId { kind: "bus", id: bus.id.0 });
            }
            if !(bus.kv_base > 0.0) {
                return Err(NetError::NonPositiveKv(bus.id));
            }
            if !bus.v_setpoint.is_finite() || !phasor::is_finite(bus.load) {
                return Err(NetError::NonFinite(format!("bus {}", bus.id)));
            }
        }
        let mut branch_ids = BTreeSet::new();
        for br in &self.branches {
            if !branch_ids.insert(br.id) {
                return Err(NetError::DuplicateId { kind: "branch", id: br.id.0 });
            }
            for end in [br.from_bus, br.to_bus] {
                if !seen.contains(&end) {
                    return Err(NetError::DanglingBranchEndpoint { branch: br.id, bus: end });
                }
            }
            if br.from_bus == br.to_bus {
                return Err(NetError::SelfLoop(br.id));
            }
            if !phasor::is_finite(br.z_series) || !br.b_shunt_total.is_finite() || !br.kv_level.is_finite() {
                return Err(NetError::NonFinite(format!("branch {}", br.id)));
            }
            if br.z_series.norm() < MIN_BRANCH_IMPEDANCE {
                return Err(NetError::ZeroImpedanceBranch(br.id));
            }
        }
        let mut gen_ids = BTreeSet::new();
        for g in &self.generators {
            if !gen_ids.insert(g.id) {
                return Err(NetError::DuplicateId { kind: "generator", id: g.id.0 });
            }
            if !seen.contains(&g.bus) {
                return Err(NetError::GeneratorBusMissing { gen: g.id, bus: g.bus });
            }
            let params = [g.h, g.d, g.xdp, g.mbase, g.p_dispatch, g.q_dispatch];
            if params.iter().any(|v| !v.is_finite()) {
                return Err(NetError::NonFinite(format!("generator {}", g.id)));
            }
            if !(g.h > 0.0 && g.xdp > 0.0 && g.mbase > 0.0) {
                return Err(NetError::InvalidMachine(g.id));
            }
        }
        let gen_buses: BTreeSet<BusId> = self.generators.iter().map(|g| g.bus).collect();
        for bus in &self.buses {
            let kind = match bus.kind {
                BusKind::Slack => "slack",
                BusKind::Pv => "pv",
                BusKind::Pq => continue,
            };
            if !gen_buses.contains(&bus.id) {
                return Err(NetError::BusWithoutGenerator { kind, bus: bus.id });
            }
        }
        let kinds: BTreeMap<BusId, BusKind> = self.buses.iter().map(|b| (b.id, b.kind)).collect();
        for island in self.islands() {
            let count = island.iter().filter(|b| kinds[b] == BusKind::Slack).count();
            if count != 1 {
                let bus = *island.iter().next().expect("islands are non-empty");
                return Err(NetError::SlackCount { bus, count });
            }
        }
        Ok(())
    }
}

/// Components of an undirected graph, in ascending order of their smallest node.
pub(crate) fn connected_components<N, I, E>(nodes: I, edges: E) -> Vec<BTreeSet<N>>
where
    N: Ord + Copy,
    I: IntoIterator<Item = N>,
    E: IntoIterator<Item = (N, N)>,
{
    let index: BTreeMap<N, usize> = nodes.into_iter().enumerate().map(|(i, n)| (n, i)).collect();
    let mut parent: Vec<usize> = (0..index.len()).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for (a, b) in edges {
        if let (Some(&ia), Some(&ib)) = (index.get(&a), index.get(&b)) {
            let (ra, rb) = (find(&mut parent, ia), find(&mut parent, ib));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
    }
    let mut groups: BTreeMap<usize, BTreeSet<N>> = BTreeMap::new();
    for (&n, &i) in &index {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().insert(n);
    }
    let mut out: Vec<BTreeSet<N>> = groups.into_values().collect();
    out.sort_by(|a, b| a.iter().next().cmp(&b.iter().next()));
    out
}

/// Splits an in-service branch at fraction `a` of its length (measured from
/// `from_bus`), inserting a new node between two series segments.
///
/// Series impedance and charging are divided in proportion to length. Relay
/// settings keep referring to the original branch impedance; that is the
/// caller's bookkeeping, not the network's.
pub fn split_line_at_fraction(network: &Network, branch: BranchId, a: f64) -> Result<LineSplit, NetError> {
    if !(a > 0.0 && a < 1.0) {
        return Err(NetError::FractionOutOfRange(a));
    }
    let original = network.branch(branch).ok_or(NetError::BranchNotFound(branch))?.clone();
    if !original.in_service {
        return Err(NetError::BranchOutOfService(branch));
    }
    let new_bus = network.next_bus_id();
    let far_segment = network.next_branch_id();
    let mut out = network.clone();
    out.buses.push(Bus {
        id: new_bus,
        kv_base: original.kv_level,
        kind: BusKind::Pq,
        v_setpoint: 1.0,
        load: zero_phasor(),
    });
    let near = out.branch_mut(branch).expect("branch exists in clone");
    near.to_bus = new_bus;
    near.z_series = original.z_series * a;
    near.b_shunt_total = original.b_shunt_total * a;
    out.branches.push(Branch {
        id: far_segment,
        from_bus: new_bus,
        to_bus: original.to_bus,
        z_series: original.z_series * (1.0 - a),
        b_shunt_total: original.b_shunt_total * (1.0 - a),
        kv_level: original.kv_level,
        in_service: true,
    });
    Ok(LineSplit { network: out, new_bus, near_segment: branch, far_segment })
}
