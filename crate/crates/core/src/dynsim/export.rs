use std::fmt::Write;

use super::{SimulationTrace, TripRecord};

/// Long-format trace: one row per (t, quantity), ordered by t, then kind,
/// then element id and end. Machine rows carry angle (rad) in `re` and slip
/// in `im`.
pub fn trace_csv(trace: &SimulationTrace) -> String {
    let mut out = String::from("t,kind,element,end,re,im\n");
    for s in &trace.samples {
        for ((branch, end), z) in &s.apparent_z {
            writeln!(out, "{},apparent_z,{},{},{},{}", s.t, branch, end, z.re, z.im).unwrap();
        }
        for (bus, v) in &s.bus_v {
            writeln!(out, "{},bus_v,{},,{},{}", s.t, bus, v.re, v.im).unwrap();
        }
        for ((branch, end), i) in &s.line_end_i {
            writeln!(out, "{},line_i,{},{},{},{}", s.t, branch, end, i.re, i.im).unwrap();
        }
        for (gen, (delta, slip)) in &s.machine {
            writeln!(out, "{},machine,{},,{},{}", s.t, gen, delta, slip).unwrap();
        }
    }
    out
}

/// Trip table, one row per line opening.
pub fn trip_table_csv(trips: &[TripRecord]) -> String {
    let mut out = String::from("time_s,branch,end,zone,cause\n");
    for r in trips {
        let end = r.end.map(|e| e.as_str()).unwrap_or("");
        let zone = r.zone.map(|z| z.to_string()).unwrap_or_default();
        let cause = match r.cause {
            super::TripCause::Relay => "relay",
            super::TripCause::Scripted => "scripted",
        };
        writeln!(out, "{:.3},{},{},{},{}", r.t, r.branch, end, zone, cause).unwrap();
    }
    out
}
