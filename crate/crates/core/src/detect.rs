//! Two ways of flagging lines whose distance relays matter for a run:
//! apparent-impedance zone entry, and minimum voltage evaluation (MVE),
//! which finds lines sitting on the electrical centre of a power swing.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::dynsim::SimulationTrace;
use crate::netmodel::{BranchId, Network};
use crate::phasor::Phasor;
use crate::relay::{DistanceRelay, End};

/// Default "voltage has collapsed" threshold for MVE, per-unit.
pub const DEFAULT_V_THRESHOLD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MvePoint {
    /// Fraction of the line, from the first end, where |V| is smallest.
    pub a_star: f64,
    pub v_min: f64,
}

/// Smallest voltage magnitude on the straight segment between the two end
/// voltages, i.e. min |(1-a) v1 + a v2| over 0 <= a <= 1 (line shunt
/// neglected, uniform impedance per unit length).
pub fn min_voltage_along_line(v1: Phasor, v2: Phasor) -> MvePoint {
    let d = v2 - v1;
    let d2 = d.norm_sqr();
    let a_unconstrained = if d2 == 0.0 { 0.0 } else { -(v1 * d.conj()).re / d2 };
    let a_star = a_unconstrained.clamp(0.0, 1.0);
    MvePoint { a_star, v_min: (v1 + d * a_star).norm() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FlagMethod {
    Impedance,
    Mve,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FlagDetail {
    Zone { end: End, zone: u8 },
    Voltage { v_min: f64, a_star: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Evidence {
    pub method: FlagMethod,
    pub first_flag_t: f64,
    pub detail: FlagDetail,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FlagSet {
    pub lines: BTreeSet<BranchId>,
    pub per_line_evidence: BTreeMap<BranchId, Evidence>,
}

impl FlagSet {
    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn contains(&self, branch: BranchId) -> bool {
        self.lines.contains(&branch)
    }

    /// Records a flag, keeping the earliest evidence per line. Ties go to the
    /// impedance method.
    pub fn flag(&mut self, branch: BranchId, evidence: Evidence) {
        self.lines.insert(branch);
        let slot = self.per_line_evidence.entry(branch).or_insert(evidence);
        if (evidence.first_flag_t, evidence.method) < (slot.first_flag_t, slot.method) {
            *slot = evidence;
        }
    }

    pub fn union(mut self, other: &FlagSet) -> FlagSet {
        for (&branch, &ev) in &other.per_line_evidence {
            self.flag(branch, ev);
        }
        self
    }

    /// Keeps only lines satisfying `keep`.
    pub fn filtered(&self, mut keep: impl FnMut(BranchId) -> bool) -> FlagSet {
        let mut out = FlagSet::default();
        for (&branch, &ev) in &self.per_line_evidence {
            if keep(branch) {
                out.flag(branch, ev);
            }
        }
        out
    }
}

/// Half-open time intervals `[start, end)` during which each line carried a
/// fault, read off the trace. A fault still on at the end of the trace has
/// an infinite end.
pub fn fault_windows(trace: &SimulationTrace) -> BTreeMap<BranchId, Vec<(f64, f64)>> {
    let mut windows: BTreeMap<BranchId, Vec<(f64, f64)>> = BTreeMap::new();
    let mut open: BTreeMap<BranchId, f64> = BTreeMap::new();
    for s in &trace.samples {
        let now: BTreeSet<BranchId> = s.faulted.iter().copied().collect();
        for &b in &now {
            open.entry(b).or_insert(s.t);
        }
        let ended: Vec<BranchId> = open.keys().filter(|b| !now.contains(b)).copied().collect();
        for b in ended {
            let start = open.remove(&b).expect("key just listed");
            windows.entry(b).or_default().push((start, s.t));
        }
    }
    for (b, start) in open {
        windows.entry(b).or_default().push((start, f64::INFINITY));
    }
    windows
}

fn in_window(windows: Option<&Vec<(f64, f64)>>, t: f64) -> bool {
    windows.is_some_and(|w| w.iter().any(|&(a, b)| t >= a && t < b))
}

/// Flags every in-service line whose minimum along-line voltage drops to
/// `v_threshold` or below at some sample, outside that line's own fault
/// windows.
pub fn mve_scan(
    trace: &SimulationTrace,
    network: &Network,
    v_threshold: f64,
    fault_windows: &BTreeMap<BranchId, Vec<(f64, f64)>>,
) -> FlagSet {
    let mut flags = FlagSet::default();
    for br in &network.branches {
        let windows = fault_windows.get(&br.id);
        for s in &trace.samples {
            if !s.in_service(br.id) || in_window(windows, s.t) {
                continue;
            }
            let (Some(&v1), Some(&v2)) = (s.bus_v.get(&br.from_bus), s.bus_v.get(&br.to_bus)) else { continue };
            let p = min_voltage_along_line(v1, v2);
            if p.v_min <= v_threshold {
                let detail = FlagDetail::Voltage { v_min: p.v_min, a_star: p.a_star };
                flags.flag(br.id, Evidence { method: FlagMethod::Mve, first_flag_t: s.t, detail });
                break;
            }
        }
    }
    flags
}

/// Flags every line for which some zone of a candidate relay at either end
/// contains some apparent-impedance sample. Timers play no part.
pub fn impedance_monitor_scan(trace: &SimulationTrace, candidate_relays: &[DistanceRelay]) -> FlagSet {
    let mut first: BTreeMap<BranchId, (f64, End, u8)> = BTreeMap::new();
    for relay in candidate_relays {
        let key = (relay.branch(), relay.end());
        for s in &trace.samples {
            let Some(&z) = s.apparent_z.get(&key) else { continue };
            if let Some(zone) = relay.innermost_zone(z) {
                let hit = (s.t, relay.end(), zone);
                first
                    .entry(relay.branch())
                    .and_modify(|cur| {
                        if (hit.0, hit.1) < (cur.0, cur.1) {
                            *cur = hit;
                        }
                    })
                    .or_insert(hit);
                break;
            }
        }
    }
    let mut flags = FlagSet::default();
    for (branch, (t, end, zone)) in first {
        flags.flag(
            branch,
            Evidence { method: FlagMethod::Impedance, first_flag_t: t, detail: FlagDetail::Zone { end, zone } },
        );
    }
    flags
}
