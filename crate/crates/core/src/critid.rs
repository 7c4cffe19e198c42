//! Iterative identification of the distance relays a contingency actually
//! depends on, and the comparison against a run with every relay modeled.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::detect::{fault_windows, impedance_monitor_scan, mve_scan, FlagSet, DEFAULT_V_THRESHOLD};
use crate::dynsim::{
    run_study, ContingencyEvent, SimError, StudyOptions, StudyOutcome, Termination, TripRecord, DEFAULT_DT,
};
use crate::netmodel::{BranchId, Network};
use crate::relay::{
    three_zone_setting, two_zone_setting, DistanceRelay, End, RelayMode, RelaySet, MONITOR_FLOOR_KV, THREE_ZONE_KV,
};

#[derive(Debug, Error)]
pub enum CritError {
    #[error("invalid identification config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentificationConfig {
    pub dt: f64,
    pub horizon: f64,
    pub v_threshold: f64,
    pub max_iterations: usize,
    /// Lines at or above this level are candidates for identification.
    pub kv_min_identify: f64,
    /// Half-open band `[lo, hi)` of lines that always carry a generic
    /// two-zone relay.
    pub kv_band_monitor: (f64, f64),
    pub monitor_mode: RelayMode,
    /// Settings replacing the defaults on matching (branch, end) pairs.
    pub overrides: RelaySet,
}

impl Default for IdentificationConfig {
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT,
            horizon: 10.0,
            v_threshold: DEFAULT_V_THRESHOLD,
            max_iterations: 20,
            kv_min_identify: THREE_ZONE_KV,
            kv_band_monitor: (MONITOR_FLOOR_KV, THREE_ZONE_KV),
            monitor_mode: RelayMode::Tripping,
            overrides: RelaySet::new(),
        }
    }
}

impl IdentificationConfig {
    pub fn validate(&self) -> Result<(), CritError> {
        let bad = |m: String| Err(CritError::InvalidConfig(m));
        if self.max_iterations < 1 {
            return bad("max_iterations must be at least 1".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return bad(format!("horizon must be non-negative, got {}", self.horizon));
        }
        if !(self.v_threshold >= 0.0 && self.v_threshold.is_finite()) {
            return bad(format!("v_threshold must be non-negative, got {}", self.v_threshold));
        }
        let (lo, hi) = self.kv_band_monitor;
        if !(lo <= hi) {
            return bad(format!("monitor band [{lo}, {hi}) is empty or reversed"));
        }
        if !(self.kv_min_identify > 0.0) {
            return bad(format!("kv_min_identify must be positive, got {}", self.kv_min_identify));
        }
        Ok(())
    }

    pub fn study_options(&self) -> StudyOptions {
        StudyOptions { dt: self.dt, horizon: self.horizon, ..StudyOptions::default() }
    }
}

/// In-service lines that may be identified as critical.
pub fn eligible_lines(network: &Network, cfg: &IdentificationConfig) -> BTreeSet<BranchId> {
    network.branches.iter().filter(|b| b.in_service && b.kv_level >= cfg.kv_min_identify).map(|b| b.id).collect()
}

/// Relays modeled in a run: generic two-zone relays across the monitor band,
/// three-zone relays on both ends of every `installed` line, then overrides.
pub fn relay_set_for(network: &Network, cfg: &IdentificationConfig, installed: &BTreeSet<BranchId>) -> RelaySet {
    let (lo, hi) = cfg.kv_band_monitor;
    let mut set = RelaySet::new();
    for br in network.branches.iter().filter(|b| b.in_service) {
        let ends = [End::From, End::To];
        if installed.contains(&br.id) {
            ends.into_iter().for_each(|e| set.insert(three_zone_setting(br.id, e)));
        } else if br.kv_level >= lo && br.kv_level < hi {
            for e in ends {
                let mut s = two_zone_setting(br.id, e);
                s.mode = cfg.monitor_mode;
                set.insert(s);
            }
        }
    }
    set.apply_overrides(&cfg.overrides);
    set
}

/// Relays that would be installed on eligible lines not yet modeled.
fn candidate_relays(
    network: &Network,
    cfg: &IdentificationConfig,
    installed: &BTreeSet<BranchId>,
) -> Vec<DistanceRelay> {
    let pending: BTreeSet<BranchId> = eligible_lines(network, cfg).difference(installed).copied().collect();
    let mut candidates = RelaySet::new();
    for &b in &pending {
        candidates.insert(three_zone_setting(b, End::From));
        candidates.insert(three_zone_setting(b, End::To));
    }
    candidates.apply_overrides(&cfg.overrides);
    candidates
        .iter()
        .map(|s| DistanceRelay::new(s.clone(), network.branch(s.branch).expect("eligible line exists").z_series))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub index: usize,
    pub newly_flagged: FlagSet,
    /// New lines each method flags on its own; either may also appear in
    /// `newly_flagged` under the other method's earlier evidence.
    pub flagged_by_impedance: BTreeSet<BranchId>,
    pub flagged_by_mve: BTreeSet<BranchId>,
    pub cumulative: BTreeSet<BranchId>,
    pub run_termination: Termination,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum IdentificationTermination {
    FixedPoint,
    MaxIterations,
    Diverged { t: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticalRelayReport {
    pub iterations: Vec<IterationRecord>,
    pub final_critical_lines: BTreeSet<BranchId>,
    pub trip_table: Vec<TripRecord>,
    pub termination: IdentificationTermination,
    pub fixed_point_reached: bool,
    /// Relays at both ends of the final critical lines.
    pub critical_count: usize,
    /// Two relays per eligible line.
    pub total_relays_in_reference: usize,
    pub critical_percentage: f64,
}

impl CriticalRelayReport {
    /// One line: `case,contingency,iterations,critical_count,total,percentage`.
    pub fn summary_line(&self, case: &str, contingency: &str) -> String {
        format!(
            "{case},{contingency},{},{},{},{:.2}",
            self.iterations.len(),
            self.critical_count,
            self.total_relays_in_reference,
            100.0 * self.critical_percentage
        )
    }
}

pub const SUMMARY_HEADER: &str = "case,contingency,iterations,critical_count,total,percentage";

/// Runs the contingency with relays on `installed` lines (plus the monitor
/// band) modeled.
pub fn run_with_installed(
    network: &Network,
    contingency: &[ContingencyEvent],
    cfg: &IdentificationConfig,
    installed: &BTreeSet<BranchId>,
) -> Result<StudyOutcome, CritError> {
    cfg.validate()?;
    let relays = relay_set_for(network, cfg, installed);
    Ok(run_study(network, contingency, &relays, cfg.study_options())?)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NewFlags {
    pub impedance: FlagSet,
    pub mve: FlagSet,
}

impl NewFlags {
    pub fn union(&self) -> FlagSet {
        self.impedance.clone().union(&self.mve)
    }
}

/// Scans one run with both methods, keeping eligible lines not yet modeled.
pub fn scan_new_flags(
    network: &Network,
    cfg: &IdentificationConfig,
    installed: &BTreeSet<BranchId>,
    outcome: &StudyOutcome,
) -> NewFlags {
    let eligible = eligible_lines(network, cfg);
    let keep = |b: BranchId| eligible.contains(&b) && !installed.contains(&b);
    let by_zone = impedance_monitor_scan(&outcome.trace, &candidate_relays(network, cfg, installed));
    let by_voltage = mve_scan(&outcome.trace, network, cfg.v_threshold, &fault_windows(&outcome.trace));
    NewFlags { impedance: by_zone.filtered(keep), mve: by_voltage.filtered(keep) }
}

/// Simulate, flag, install relays on flagged lines, repeat until nothing new
/// is flagged. Every iteration is a fresh run from t = 0.
pub fn identify_critical_relays(
    network: &Network,
    contingency: &[ContingencyEvent],
    cfg: &IdentificationConfig,
) -> Result<CriticalRelayReport, CritError> {
    cfg.validate()?;
    network.validate().map_err(SimError::from)?;
    let mut cumulative = BTreeSet::new();
    let mut iterations = Vec::new();
    let mut last: Option<StudyOutcome> = None;
    let mut fixed_point = false;

    for index in 0..cfg.max_iterations {
        let outcome = run_with_installed(network, contingency, cfg, &cumulative)?;
        let flags = scan_new_flags(network, cfg, &cumulative, &outcome);
        let newly = flags.union();
        cumulative.extend(newly.lines.iter().copied());
        fixed_point = newly.is_empty();
        iterations.push(IterationRecord {
            index,
            newly_flagged: newly,
            flagged_by_impedance: flags.impedance.lines,
            flagged_by_mve: flags.mve.lines,
            cumulative: cumulative.clone(),
            run_termination: outcome.termination,
        });
        last = Some(outcome);
        if fixed_point {
            break;
        }
    }

    let last = last.expect("at least one iteration");
    let termination = match (last.termination, fixed_point) {
        (Termination::Diverged { t }, _) => IdentificationTermination::Diverged { t },
        (Termination::Completed, true) => IdentificationTermination::FixedPoint,
        (Termination::Completed, false) => IdentificationTermination::MaxIterations,
    };
    let total = 2 * eligible_lines(network, cfg).len();
    let critical_count = 2 * cumulative.len();
    Ok(CriticalRelayReport {
        iterations,
        final_critical_lines: cumulative,
        trip_table: last.trips,
        termination,
        fixed_point_reached: fixed_point,
        critical_count,
        total_relays_in_reference: total,
        critical_percentage: if total == 0 { 0.0 } else { critical_count as f64 / total as f64 },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct TripKey {
    pub branch: BranchId,
    pub end: End,
    pub zone: u8,
}

impl fmt::Display for TripKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "branch {} {} zone {}", self.branch, self.end, self.zone)
    }
}

fn trip_key(r: &TripRecord) -> Option<TripKey> {
    Some(TripKey { branch: r.branch, end: r.end?, zone: r.zone? })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TripMismatch {
    /// Operates in the reference run only.
    Missing {
        relay: TripKey,
        t: f64,
    },
    /// Operates in the identification run only.
    Unexpected {
        relay: TripKey,
        t: f64,
    },
    /// Same relays, different order.
    OrderDiffers {
        position: usize,
        reference: TripKey,
        algorithm: TripKey,
    },
    TimeDiffers {
        relay: TripKey,
        reference_t: f64,
        algorithm_t: f64,
    },
}

impl fmt::Display for TripMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Missing { relay, t } => write!(f, "missing: {relay} operates at {t:.3} s in the reference only"),
            Self::Unexpected { relay, t } => {
                write!(f, "unexpected: {relay} operates at {t:.3} s without a reference trip")
            }
            Self::OrderDiffers { position, reference, algorithm } => {
                write!(f, "order: trip #{position} is {reference} in the reference but {algorithm}")
            }
            Self::TimeDiffers { relay, reference_t, algorithm_t } => {
                write!(f, "timing: {relay} at {reference_t:.3} s vs {algorithm_t:.3} s")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceReport {
    #[serde(rename = "match")]
    pub matched: bool,
    pub mismatches: Vec<TripMismatch>,
    pub reference_trip_table: Vec<TripRecord>,
    pub algorithm_trip_table: Vec<TripRecord>,
    pub reference_termination: Termination,
    pub identification: CriticalRelayReport,
}

/// Compares the relay-initiated trips of two runs: same (branch, end, zone)
/// sequence, and each pair of times within `tol`.
pub fn compare_trip_tables(reference: &[TripRecord], algorithm: &[TripRecord], tol: f64) -> Vec<TripMismatch> {
    let keyed =
        |rs: &[TripRecord]| -> Vec<(TripKey, f64)> { rs.iter().filter_map(|r| Some((trip_key(r)?, r.t))).collect() };
    let (r, a) = (keyed(reference), keyed(algorithm));
    let mut out = Vec::new();
    if r.iter().map(|x| x.0).eq(a.iter().map(|x| x.0)) {
        for (&(relay, rt), &(_, at)) in r.iter().zip(&a) {
            if (rt - at).abs() > tol {
                out.push(TripMismatch::TimeDiffers { relay, reference_t: rt, algorithm_t: at });
            }
        }
        return out;
    }

    let mut unmatched: BTreeMap<TripKey, Vec<f64>> = BTreeMap::new();
    for &(k, t) in &a {
        unmatched.entry(k).or_default().push(t);
    }
    for &(k, t) in &r {
        match unmatched.get_mut(&k).filter(|ts| !ts.is_empty()) {
            Some(ts) => {
                ts.remove(0);
            }
            None => out.push(TripMismatch::Missing { relay: k, t }),
        }
    }
    let mut extra: Vec<(TripKey, f64)> =
        unmatched.into_iter().flat_map(|(k, ts)| ts.into_iter().map(move |t| (k, t))).collect();
    extra.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));
    out.extend(extra.into_iter().map(|(relay, t)| TripMismatch::Unexpected { relay, t }));
    if out.is_empty() {
        if let Some(position) = r.iter().zip(&a).position(|(x, y)| x.0 != y.0) {
            out.push(TripMismatch::OrderDiffers { position, reference: r[position].0, algorithm: a[position].0 });
        }
    }
    out
}

/// Runs the identification loop and the all-eligible-relays reference with
/// the same configuration and compares their trip tables.
pub fn verify_against_reference(
    network: &Network,
    contingency: &[ContingencyEvent],
    cfg: &IdentificationConfig,
) -> Result<EquivalenceReport, CritError> {
    verify_against_reference_with(network, contingency, cfg, cfg)
}

/// As [`verify_against_reference`], with separate configurations for the
/// identification loop and the reference run.
pub fn verify_against_reference_with(
    network: &Network,
    contingency: &[ContingencyEvent],
    algorithm_cfg: &IdentificationConfig,
    reference_cfg: &IdentificationConfig,
) -> Result<EquivalenceReport, CritError> {
    let all = eligible_lines(network, reference_cfg);
    let reference = run_with_installed(network, contingency, reference_cfg, &all)?;
    let identification = identify_critical_relays(network, contingency, algorithm_cfg)?;
    let tol = algorithm_cfg.dt.max(reference_cfg.dt) + 1e-9;
    let mismatches = compare_trip_tables(&reference.trips, &identification.trip_table, tol);
    Ok(EquivalenceReport {
        matched: mismatches.is_empty(),
        mismatches,
        reference_trip_table: reference.trips,
        algorithm_trip_table: identification.trip_table.clone(),
        reference_termination: reference.termination,
        identification,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsim::TripCause;
    use crate::netmodel::test_cases::*;

    fn relay_trip(t: f64, branch: u32, end: End, zone: u8) -> TripRecord {
        TripRecord { t, branch: BranchId(branch), end: Some(end), zone: Some(zone), cause: TripCause::Relay }
    }

    #[test]
    fn identical_tables_match() {
        let a = [relay_trip(1.05, 3, End::From, 1), relay_trip(1.1, 3, End::To, 1)];
        assert!(compare_trip_tables(&a, &a, 1.0 / 240.0).is_empty());
    }

    #[test]
    fn scripted_trips_are_ignored() {
        let scripted = TripRecord { t: 0.2, branch: BranchId(9), end: None, zone: None, cause: TripCause::Scripted };
        let a = [relay_trip(1.05, 3, End::From, 1)];
        let b = [scripted, relay_trip(1.05, 3, End::From, 1)];
        assert!(compare_trip_tables(&a, &b, 1.0 / 240.0).is_empty());
    }

    #[test]
    fn timing_tolerance_is_one_step() {
        let dt = 1.0 / 240.0;
        let a = [relay_trip(1.0, 3, End::From, 2)];
        assert!(compare_trip_tables(&a, &[relay_trip(1.0 + dt, 3, End::From, 2)], dt + 1e-9).is_empty());
        let m = compare_trip_tables(&a, &[relay_trip(1.0 + 2.0 * dt, 3, End::From, 2)], dt + 1e-9);
        assert!(matches!(m[..], [TripMismatch::TimeDiffers { .. }]));
    }

    #[test]
    fn missing_relays_are_named() {
        let reference = [relay_trip(1.0, 3, End::From, 1), relay_trip(1.5, 7, End::To, 3)];
        let algorithm = [relay_trip(1.0, 3, End::From, 1), relay_trip(1.6, 8, End::To, 2)];
        let m = compare_trip_tables(&reference, &algorithm, 0.01);
        assert_eq!(m.len(), 2);
        assert!(m[0].to_string().contains("branch 7 to zone 3"));
        assert!(matches!(m[1], TripMismatch::Unexpected { relay: TripKey { branch: BranchId(8), .. }, .. }));
    }

    #[test]
    fn order_swap_is_reported() {
        let a = [relay_trip(1.0, 3, End::From, 1), relay_trip(1.0, 3, End::To, 1)];
        let b = [a[1], a[0]];
        assert!(matches!(compare_trip_tables(&a, &b, 0.01)[..], [TripMismatch::OrderDiffers { position: 0, .. }]));
    }

    fn small_case() -> Network {
        let mut net = two_bus(1.0, crate::phasor::Phasor::new(0.5, 0.1), 0.1);
        net.buses.iter_mut().for_each(|b| b.kv_base = 345.0);
        net.branches[0].kv_level = 345.0;
        net
    }

    #[test]
    fn relay_policy_by_voltage_class() {
        let mut net = small_case();
        let mut second = net.branches[0].clone();
        second.id = BranchId(2);
        second.kv_level = 230.0;
        net.branches.push(second);
        let mut third = net.branches[0].clone();
        third.id = BranchId(3);
        third.kv_level = 69.0;
        net.branches.push(third);

        let cfg = IdentificationConfig::default();
        assert_eq!(eligible_lines(&net, &cfg), BTreeSet::from([BranchId(1)]));
        let none = relay_set_for(&net, &cfg, &BTreeSet::new());
        assert_eq!(none.len(), 2);
        assert_eq!(none.get(BranchId(2), End::From).unwrap().zones.len(), 2);
        let one = relay_set_for(&net, &cfg, &BTreeSet::from([BranchId(1)]));
        assert_eq!(one.len(), 4);
        assert_eq!(one.get(BranchId(1), End::To).unwrap().zones.len(), 3);
        assert!(!one.contains_branch(BranchId(3)));
    }

    #[test]
    fn undisturbed_run_reaches_fixed_point_at_once() {
        let cfg = IdentificationConfig { horizon: 0.5, ..IdentificationConfig::default() };
        let r = identify_critical_relays(&small_case(), &[], &cfg).unwrap();
        assert_eq!(r.iterations.len(), 1);
        assert!(r.final_critical_lines.is_empty());
        assert_eq!(r.termination, IdentificationTermination::FixedPoint);
        assert_eq!(r.total_relays_in_reference, 2);
        assert_eq!(r.summary_line("two_bus", "none"), "two_bus,none,1,0,2,0.00");
        let v = verify_against_reference(&small_case(), &[], &cfg).unwrap();
        assert!(v.matched && v.reference_trip_table.is_empty());
    }

    #[test]
    fn rejects_zero_iterations() {
        let cfg = IdentificationConfig { max_iterations: 0, ..IdentificationConfig::default() };
        assert!(matches!(identify_critical_relays(&small_case(), &[], &cfg), Err(CritError::InvalidConfig(_))));
    }
}
