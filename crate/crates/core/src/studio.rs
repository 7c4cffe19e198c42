//! Case files, bundled test systems and plot-ready exports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynsim::{ContingencyEvent, SimulationTrace};
use crate::netmodel::BranchId;
use crate::netmodel::{Branch, Bus, BusKind, GenId, Generator, NetError, Network, DEFAULT_BASE_MVA};
use crate::relay::{zone_circle, DistanceRelay, End, RelaySet};

#[derive(Debug, Error)]
pub enum StudioError {
    #[error("cannot read {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{origin}: parse error at line {line}, column {column}: {message}")]
    Parse { origin: String, line: usize, column: usize, message: String },
    #[error("{origin}: {message}")]
    Validation { origin: String, message: String },
    #[error("no apparent-impedance samples for branch {branch} {end}")]
    NoSamples { branch: BranchId, end: End },
    #[error("unknown bundled item {0:?}")]
    UnknownBundled(String),
}

impl StudioError {
    fn parse(origin: &str, e: serde_json::Error) -> Self {
        Self::Parse { origin: origin.to_string(), line: e.line(), column: e.column(), message: e.to_string() }
    }

    fn invalid(origin: &str, message: impl ToString) -> Self {
        Self::Validation { origin: origin.to_string(), message: message.to_string() }
    }

    /// Whether the error is a problem with the input rather than with the run.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Self::NoSamples { .. })
    }
}

/// A network plus the generator that rotor angles are reported against.
#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub name: String,
    pub network: Network,
    pub reference_generator: GenId,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reference_generator: Option<GenId>,
    #[serde(default = "default_base")]
    base_mva: f64,
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    generators: Vec<Generator>,
}

fn default_base() -> f64 {
    DEFAULT_BASE_MVA
}

/// A named list of timed events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Contingency {
    pub name: String,
    pub events: Vec<ContingencyEvent>,
}

fn read(path: &Path) -> Result<String, StudioError> {
    std::fs::read_to_string(path).map_err(|source| StudioError::Io { path: path.to_path_buf(), source })
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "case".into())
}

/// Parses and validates a case. `origin` names the source in diagnostics and
/// is the fallback case name.
pub fn parse_case(text: &str, origin: &str) -> Result<Case, StudioError> {
    let file: CaseFile = serde_json::from_str(text).map_err(|e| StudioError::parse(origin, e))?;
    let network =
        Network { base_mva: file.base_mva, buses: file.buses, branches: file.branches, generators: file.generators };
    network.validate().map_err(|e: NetError| StudioError::invalid(origin, e))?;
    let reference_generator = match file.reference_generator {
        Some(g) if network.generator(g).is_some() => g,
        Some(g) => return Err(StudioError::invalid(origin, format!("reference generator {g} does not exist"))),
        None => slack_generator(&network).ok_or_else(|| StudioError::invalid(origin, "case has no generators"))?,
    };
    Ok(Case { name: file.name.unwrap_or_else(|| origin.to_string()), network, reference_generator })
}

/// Lowest-numbered generator on a slack bus, else the lowest-numbered one.
fn slack_generator(network: &Network) -> Option<GenId> {
    let on_slack = network
        .generators
        .iter()
        .filter(|g| network.bus(g.bus).is_some_and(|b| b.kind == BusKind::Slack))
        .map(|g| g.id)
        .min();
    on_slack.or_else(|| network.generators.iter().map(|g| g.id).min())
}

pub fn load_case(path: &Path) -> Result<Case, StudioError> {
    let text = read(path)?;
    let mut case = parse_case(&text, &path.display().to_string())?;
    if case.name == path.display().to_string() {
        case.name = file_stem(path);
    }
    Ok(case)
}

/// Pretty JSON that [`parse_case`] reads back to the same case.
pub fn write_case(case: &Case) -> String {
    let file = CaseFile {
        name: Some(case.name.clone()),
        reference_generator: Some(case.reference_generator),
        base_mva: case.network.base_mva,
        buses: case.network.buses.clone(),
        branches: case.network.branches.clone(),
        generators: case.network.generators.clone(),
    };
    serde_json::to_string_pretty(&file).expect("case serializes") + "\n"
}

pub fn parse_contingency(text: &str, origin: &str) -> Result<Contingency, StudioError> {
    serde_json::from_str(text).map_err(|e| StudioError::parse(origin, e))
}

pub fn load_contingency(path: &Path) -> Result<Contingency, StudioError> {
    parse_contingency(&read(path)?, &path.display().to_string())
}

/// Relay-set file: a JSON list of relay settings.
pub fn load_relay_set(path: &Path) -> Result<RelaySet, StudioError> {
    let origin = path.display().to_string();
    serde_json::from_str(&read(path)?).map_err(|e| StudioError::parse(&origin, e))
}

const BUNDLED: &[(&str, &str, &[(&str, &str)])] = &[
    (
        "ieee9",
        include_str!("../fixtures/ieee9.json"),
        &[
            ("line_fault", include_str!("../fixtures/ieee9_line_fault.json")),
            ("bus_fault", include_str!("../fixtures/ieee9_bus_fault.json")),
            ("n_minus_2", include_str!("../fixtures/ieee9_n_minus_2.json")),
        ],
    ),
    (
        "two_area39",
        include_str!("../fixtures/two_area39.json"),
        &[
            ("line_fault", include_str!("../fixtures/two_area39_line_fault.json")),
            ("bus_fault", include_str!("../fixtures/two_area39_bus_fault.json")),
            ("n_minus_2", include_str!("../fixtures/two_area39_n_minus_2.json")),
        ],
    ),
];

pub fn bundled_case_names() -> Vec<&'static str> {
    BUNDLED.iter().map(|b| b.0).collect()
}

pub fn bundled_case(name: &str) -> Result<Case, StudioError> {
    let (_, text, _) = BUNDLED.iter().find(|b| b.0 == name).ok_or_else(|| StudioError::UnknownBundled(name.into()))?;
    parse_case(text, name)
}

/// Contingencies shipped with a bundled case, in a fixed order.
pub fn bundled_contingencies(case: &str) -> Result<Vec<Contingency>, StudioError> {
    let (_, _, list) = BUNDLED.iter().find(|b| b.0 == case).ok_or_else(|| StudioError::UnknownBundled(case.into()))?;
    list.iter().map(|(name, text)| parse_contingency(text, &format!("{case}/{name}"))).collect()
}

pub fn bundled_contingency(case: &str, name: &str) -> Result<Contingency, StudioError> {
    bundled_contingencies(case)?
        .into_iter()
        .find(|c| c.name == name)
        .ok_or_else(|| StudioError::UnknownBundled(format!("{case}/{name}")))
}

/// CSV with `t` then one column per generator: its rotor angle minus the
/// reference generator's, in degrees.
pub fn export_rotor_angles(trace: &SimulationTrace, case: &Case) -> String {
    let mut gens: Vec<GenId> = case.network.generators.iter().map(|g| g.id).collect();
    gens.sort();
    let mut out = String::from("t");
    for g in &gens {
        write!(out, ",gen_{g}").unwrap();
    }
    out.push('\n');
    for s in &trace.samples {
        let reference = s.machine.get(&case.reference_generator).map_or(0.0, |m| m.0);
        write!(out, "{}", s.t).unwrap();
        for g in &gens {
            let delta = s.machine.get(g).map_or(f64::NAN, |m| m.0);
            write!(out, ",{}", (delta - reference).to_degrees()).unwrap();
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RxSample {
    pub t: f64,
    pub r: f64,
    pub x: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZoneCircle {
    pub zone: u8,
    pub center_r: f64,
    pub center_x: f64,
    pub radius: f64,
}

/// Apparent-impedance trajectory of one relay with its mho circles.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RxExport {
    pub branch: BranchId,
    pub end: End,
    pub samples: Vec<RxSample>,
    pub zone_circles: Vec<ZoneCircle>,
}

impl RxExport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,r,x\n");
        for s in &self.samples {
            writeln!(out, "{},{},{}", s.t, s.r, s.x).unwrap();
        }
        out
    }
}

pub fn export_rx(trace: &SimulationTrace, relay: &DistanceRelay) -> Result<RxExport, StudioError> {
    let key = (relay.branch(), relay.end());
    let samples: Vec<RxSample> = trace
        .samples
        .iter()
        .filter_map(|s| s.apparent_z.get(&key).map(|z| RxSample { t: s.t, r: z.re, x: z.im }))
        .collect();
    if samples.is_empty() {
        return Err(StudioError::NoSamples { branch: key.0, end: key.1 });
    }
    let zone_circles = relay
        .setting
        .zones
        .iter()
        .map(|zone| {
            let (c, radius) = zone_circle(zone, relay.line_z_full);
            ZoneCircle { zone: zone.number, center_r: c.re, center_x: c.im, radius }
        })
        .collect();
    Ok(RxExport { branch: key.0, end: key.1, samples, zone_circles })
}

/// Deterministic pretty JSON for any report.
pub fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes") + "\n"
}
