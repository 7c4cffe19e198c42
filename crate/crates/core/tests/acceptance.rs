//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use critrelay::critid::{
    compare_trip_tables, eligible_lines, identify_critical_relays, run_with_installed, verify_against_reference,
    IdentificationConfig,
};
use critrelay::detect::{fault_windows, min_voltage_along_line, mve_scan, DEFAULT_V_THRESHOLD};
use critrelay::dynsim::{
    initialize_dynamics, run_study, step, trace_csv, trip_table_csv, EventKind, StudyOptions, TripCause, OMEGA_S,
};
use critrelay::netmodel::{solve_power_flow, Bus, BusId, BusKind, GenId, Generator, Network};
use critrelay::phasor::{from_polar_deg, Phasor};
use critrelay::relay::{
    three_zone_setting, two_zone_setting, zone_contains, DistanceRelay, End, RelaySet, RelaySetting, Zone,
    DEFAULT_BREAKER_DELAY,
};
use critrelay::studio::{
    bundled_case, bundled_case_names, bundled_contingencies, export_rotor_angles, export_rx, to_json,
};

const DT: f64 = 1.0 / 240.0;

struct Outcome {
    ok: bool,
    detail: String,
}

fn outcome(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome { ok, detail: detail.into() }
}

// ---------------------------------------------------------------- 1

/// Minimum of |(1-a) v1 + a v2| over the grid a = k * 1e-6. |v(a)|^2 is
/// convex in a, so a ternary search over grid indices finds the grid minimum.
fn grid_min(v1: Phasor, v2: Phasor) -> f64 {
    const N: u64 = 1_000_000;
    let f = |k: u64| {
        let a = k as f64 / N as f64;
        (v1 * (1.0 - a) + v2 * a).norm_sqr()
    };
    let (mut lo, mut hi) = (0, N);
    while hi - lo > 3 {
        let m1 = lo + (hi - lo) / 3;
        let m2 = hi - (hi - lo) / 3;
        if f(m1) <= f(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    (lo..=hi).map(f).fold(f64::INFINITY, f64::min).sqrt()
}

fn full_scan(v1: Phasor, v2: Phasor) -> f64 {
    (0..=1_000_000u64)
        .map(|k| {
            let a = k as f64 / 1e6;
            (v1 * (1.0 - a) + v2 * a).norm_sqr()
        })
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

fn criterion_mve_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let phasor = |rng: &mut ChaCha8Rng| from_polar_deg(rng.random_range(0.0..2.0), rng.random_range(-180.0..180.0));
    let mut worst = 0.0f64;
    let mut resolution_limited = 0;
    let mut failures = 0;
    for k in 0..10_000 {
        let (v1, v2) = (phasor(&mut rng), phasor(&mut rng));
        let closed = min_voltage_along_line(v1, v2).v_min;
        let grid = grid_min(v1, v2);
        if k < 8 && (full_scan(v1, v2) - grid).abs() > 0.0 {
            failures += 1;
        }
        let diff = grid - closed;
        // Half a grid step off a minimum near zero costs up to |d| * 5e-7 in
        // magnitude; squared magnitudes are smooth and must agree regardless.
        let resolution = ((closed * closed + ((v2 - v1).norm() * 5e-7).powi(2)).sqrt() - closed) + 1e-12;
        let squared_ok = (grid * grid - closed * closed).abs() <= 1e-9;
        if diff < -1e-12 || !squared_ok || diff > 1e-9f64.max(resolution) {
            failures += 1;
        } else if diff > 1e-9 {
            resolution_limited += 1;
        } else {
            worst = worst.max(diff.abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        failures == 0 && secs < 5.0,
        format!(
            "10000 pairs, max |closed - grid| {worst:.1e} on {} pairs; {resolution_limited} pairs whose minimum lies \
             within the grid's own resolution of zero agree to that resolution; {failures} failures; {secs:.2} s",
            10_000 - resolution_limited - failures
        ),
    )
}

// ---------------------------------------------------------------- 2

fn criterion_zone_geometry() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut checked, mut banded, mut disagreements) = (0, 0, 0);
    for _ in 0..10_000 {
        let line = from_polar_deg(rng.random_range(0.01..0.3), rng.random_range(60.0..89.0));
        let zone = Zone { number: 1, reach_fraction: [0.8, 1.2, 2.2][rng.random_range(0..3)], delay_s: 0.0 };
        let reach = line * zone.reach_fraction;
        let z = Phasor::new(rng.random_range(-0.4..0.6), rng.random_range(-0.3..0.8));
        let (cr, cx) = (reach.re / 2.0, reach.im / 2.0);
        let radius = (reach.re * reach.re + reach.im * reach.im).sqrt() / 2.0;
        let dist = ((z.re - cr).powi(2) + (z.im - cx).powi(2)).sqrt();
        if (dist - radius).abs() <= 1e-12 {
            banded += 1;
            continue;
        }
        checked += 1;
        if zone_contains(&zone, line, z) != (dist < radius) {
            disagreements += 1;
        }
    }
    outcome(
        disagreements == 0,
        format!("{checked} points agree exactly, {banded} in the 1e-12 boundary band skipped, {disagreements} disagreements"),
    )
}

// ---------------------------------------------------------------- 3

fn single_machine() -> Network {
    Network {
        base_mva: 100.0,
        buses: vec![Bus {
            id: BusId(1),
            kv_base: 20.0,
            kind: BusKind::Slack,
            v_setpoint: 1.0,
            load: Phasor::default(),
        }],
        branches: vec![],
        generators: vec![Generator {
            id: GenId(1),
            bus: BusId(1),
            h: 3.0,
            d: 0.0,
            xdp: 0.3,
            mbase: 100.0,
            p_dispatch: 0.0,
            q_dispatch: 0.0,
        }],
    }
}

fn criterion_integrator() -> Outcome {
    let net = single_machine();
    let pf = solve_power_flow(&net, 1e-10, 50).unwrap();
    let mut state = initialize_dynamics(&net, &pf).unwrap();
    let pa = 0.5;
    state.machines.get_mut(&GenId(1)).unwrap().p_mech += pa;
    let d0 = state.machines[&GenId(1)].delta;
    for _ in 0..24 {
        step(&mut state, DT).unwrap();
    }
    let expected = OMEGA_S * pa * 0.1f64.powi(2) / (4.0 * 3.0);
    let accel_err = (state.machines[&GenId(1)].delta - d0 - expected).abs();

    let mut drifts = Vec::new();
    for name in bundled_case_names() {
        let case = bundled_case(name).unwrap();
        let opts = StudyOptions { horizon: 10.0, ..StudyOptions::default() };
        let out = run_study(&case.network, &[], &RelaySet::new(), opts).unwrap();
        let first = &out.trace.samples[0].machine;
        let drift = out
            .trace
            .samples
            .iter()
            .flat_map(|s| s.machine.iter().map(|(g, m)| (m.0 - first[g].0).abs()))
            .fold(0.0, f64::max);
        drifts.push((name, drift));
    }
    let ok = accel_err <= 1e-6 && drifts.iter().all(|d| d.1 <= 1e-3);
    let drift_text: Vec<String> = drifts.iter().map(|(n, d)| format!("{n} {d:.1e} rad")).collect();
    outcome(ok, format!("constant-acceleration error {accel_err:.1e} rad; flat 10 s drift: {}", drift_text.join(", ")))
}

// ---------------------------------------------------------------- 4

fn criterion_relay_timing() -> Outcome {
    let line = Phasor::new(0.01, 0.1);
    let mut worst_issue = 0.0f64;
    let mut worst_open = 0.0f64;
    let mut cases = 0;
    let settings: [(RelaySetting, &[(u8, f64)]); 2] = [
        (three_zone_setting(critrelay::netmodel::BranchId(1), End::From), &[(1, 0.5), (2, 1.0), (3, 1.8)]),
        (two_zone_setting(critrelay::netmodel::BranchId(1), End::To), &[(1, 0.5), (2, 1.1)]),
    ];
    for (setting, points) in &settings {
        for &(zone, scale) in points.iter() {
            for entry in [0.5, 0.5 + 0.3 * DT, 1.0 + 0.9 * DT] {
                let mut relay = DistanceRelay::new(setting.clone(), line);
                let mut command = None;
                let mut k = 0;
                while command.is_none() && k < 2400 {
                    let t = k as f64 * DT;
                    let z = if t >= entry { line * scale } else { Phasor::new(5.0, 0.0) };
                    command = relay.relay_step(Some(z), t).unwrap().command;
                    k += 1;
                }
                let Some(cmd) = command else { return outcome(false, format!("zone {zone} never issued a trip")) };
                let delay = setting.zones.iter().find(|z| z.number == zone).unwrap().delay_s;
                if cmd.zone != zone {
                    return outcome(false, format!("expected zone {zone}, got {}", cmd.zone));
                }
                let issue_err = cmd.issue_t - (entry + delay);
                if !(-1e-9..=DT + 1e-9).contains(&issue_err) {
                    return outcome(false, format!("zone {zone} entered at {entry}: issued at {}", cmd.issue_t));
                }
                worst_issue = worst_issue.max(issue_err);
                worst_open = worst_open.max((cmd.open_t - cmd.issue_t - DEFAULT_BREAKER_DELAY).abs());
                cases += 1;
            }
        }
    }
    outcome(
        worst_open <= 1e-12,
        format!("{cases} trajectories; issue lag behind entry + delay at most {worst_issue:.4} s (dt {DT:.4}); open - issue off 0.05 s by at most {worst_open:.1e}"),
    )
}

// ---------------------------------------------------------------- 5, 6

fn criterion_equivalence_and_reduction() -> (Outcome, Outcome) {
    let cfg = IdentificationConfig::default();
    let mut lines = Vec::new();
    let mut reductions = Vec::new();
    let (mut all_match, mut all_reduced) = (true, true);
    let mut slowest = 0.0f64;
    for name in bundled_case_names() {
        let case = bundled_case(name).unwrap();
        for c in bundled_contingencies(name).unwrap() {
            let start = Instant::now();
            let report = identify_critical_relays(&case.network, &c.events, &cfg).unwrap();
            slowest = slowest.max(start.elapsed().as_secs_f64());
            let eq = verify_against_reference(&case.network, &c.events, &cfg).unwrap();
            let relay_trips = eq.reference_trip_table.iter().filter(|r| r.cause == TripCause::Relay).count();
            all_match &= eq.matched && report.fixed_point_reached;
            lines.push(format!("{name}/{}: match={} ({relay_trips} relay trips)", c.name, eq.matched));
            all_reduced &= report.critical_count < report.total_relays_in_reference;
            reductions.push(report.summary_line(name, &c.name));
        }
    }
    (
        outcome(all_match && slowest < 30.0, format!("{}; slowest identification {slowest:.2} s", lines.join("; "))),
        outcome(all_reduced, reductions.join(" | ")),
    )
}

// ---------------------------------------------------------------- 7

fn criterion_bus_fault() -> Outcome {
    let cfg = IdentificationConfig::default();
    let mut details = Vec::new();
    let mut ok = true;
    for name in bundled_case_names() {
        let case = bundled_case(name).unwrap();
        let c = bundled_contingencies(name).unwrap().into_iter().find(|c| c.name == "bus_fault").unwrap();
        let via = c
            .events
            .iter()
            .find_map(|e| match e.kind {
                EventKind::ApplyBusFaultApprox { via_branch, .. } => Some(via_branch),
                _ => None,
            })
            .unwrap();
        let all = eligible_lines(&case.network, &cfg);
        let out = run_with_installed(&case.network, &c.events, &cfg, &all).unwrap();
        let window = fault_windows(&out.trace)[&via][0];
        let zone1: BTreeSet<_> = out
            .zone_entries
            .iter()
            .filter(|e| e.zone == 1 && e.t >= window.0 && e.t < window.1)
            .map(|e| e.branch)
            .collect();
        let only_faulted = zone1 == BTreeSet::from([via]);
        ok &= only_faulted;
        details.push(format!(
            "{name}: zone-1 pickups during [{:.3}, {:.3}) on lines {:?}, faulted line {via}",
            window.0, window.1, zone1
        ));
    }
    outcome(ok, details.join("; "))
}

// ---------------------------------------------------------------- 8

fn criterion_setting_sensitivity() -> Outcome {
    let case = bundled_case("two_area39").unwrap();
    let c = bundled_contingencies("two_area39").unwrap().into_iter().find(|c| c.name == "line_fault").unwrap();
    let base_cfg = IdentificationConfig::default();
    let all = eligible_lines(&case.network, &base_cfg);
    let base = run_with_installed(&case.network, &c.events, &base_cfg, &all).unwrap();
    let Some(target) = base.trips.iter().find(|r| r.cause == TripCause::Relay && r.zone.is_some_and(|z| z >= 2)) else {
        return outcome(false, "no zone-2/3 trip in the baseline to perturb");
    };
    let (branch, end) = (target.branch, target.end.unwrap());
    let mut changed = three_zone_setting(branch, end);
    changed.zones = vec![
        Zone { number: 1, reach_fraction: 0.8, delay_s: 0.0 },
        Zone { number: 2, reach_fraction: 1.0, delay_s: 0.25 },
        Zone { number: 3, reach_fraction: 1.2, delay_s: 0.35 },
    ];
    let mut overrides = RelaySet::new();
    overrides.insert(changed);
    let cfg = IdentificationConfig { overrides, ..IdentificationConfig::default() };
    let perturbed = run_with_installed(&case.network, &c.events, &cfg, &all).unwrap();
    let diffs = compare_trip_tables(&base.trips, &perturbed.trips, DT + 1e-9);
    outcome(
        !diffs.is_empty(),
        format!(
            "relay on branch {branch} {end} reset to 80/100/120% with 0/0.25/0.35 s: {} trip-table differences (first: {})",
            diffs.len(),
            diffs.first().map(|d| d.to_string()).unwrap_or_else(|| "none".into())
        ),
    )
}

// ---------------------------------------------------------------- 9

fn pipeline_bytes() -> Vec<(&'static str, String)> {
    let case = bundled_case("two_area39").unwrap();
    let c = bundled_contingencies("two_area39").unwrap().into_iter().find(|c| c.name == "line_fault").unwrap();
    let cfg = IdentificationConfig::default();
    let pf = solve_power_flow(&case.network, 1e-8, 50).unwrap();
    let relays = RelaySet::defaults_for(&case.network);
    let run = run_study(&case.network, &c.events, &relays, StudyOptions::default()).unwrap();
    let flags = mve_scan(&run.trace, &case.network, DEFAULT_V_THRESHOLD, &fault_windows(&run.trace));
    let tie = relays.iter().find(|s| s.branch == run.trips[0].branch).unwrap().clone();
    let z = case.network.branch(tie.branch).unwrap().z_series;
    let rx = export_rx(&run.trace, &DistanceRelay::new(tie, z)).map(|r| to_json(&r)).unwrap_or_default();
    vec![
        ("power flow", format!("{:?}", pf.voltages)),
        ("trace", trace_csv(&run.trace)),
        ("trip table", trip_table_csv(&run.trips)),
        ("rotor angles", export_rotor_angles(&run.trace, &case)),
        ("mve scan", to_json(&flags)),
        ("r-x export", rx),
        ("identification", to_json(&identify_critical_relays(&case.network, &c.events, &cfg).unwrap())),
        ("equivalence", to_json(&verify_against_reference(&case.network, &c.events, &cfg).unwrap())),
    ]
}

fn criterion_determinism() -> Outcome {
    let (a, b) = (pipeline_bytes(), pipeline_bytes());
    let differing: Vec<&str> = a.iter().zip(&b).filter(|(x, y)| x.1 != y.1).map(|(x, _)| x.0).collect();
    let bytes: usize = a.iter().map(|x| x.1.len()).sum();
    outcome(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} stages, {bytes} bytes identical across two runs", a.len())
        } else {
            format!("stages differ: {}", differing.join(", "))
        },
    )
}

fn main() {
    let (eq, reduction) = criterion_equivalence_and_reduction();
    let results = [
        ("MVE closed form vs grid-search oracle", criterion_mve_oracle()),
        ("mho zone geometry vs independent circle test", criterion_zone_geometry()),
        ("integrator accuracy and flat-run drift", criterion_integrator()),
        ("relay timing on synthetic trajectories", criterion_relay_timing()),
        ("fixed-point equivalence with all-relays reference", eq),
        ("critical relays fewer than reference relays", reduction),
        ("bus-fault approximation picks up zone 1 on the faulted line only", criterion_bus_fault()),
        ("relay setting change alters the trip table", criterion_setting_sensitivity()),
        ("determinism of every pipeline stage", criterion_determinism()),
    ];
    let mut failed = 0;
    for (k, (name, r)) in results.iter().enumerate() {
        println!("{} criterion {}: {name}: {}", if r.ok { "PASS" } else { "FAIL" }, k + 1, r.detail);
        failed += usize::from(!r.ok);
    }
    println!("acceptance: {} of {} criteria pass", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
