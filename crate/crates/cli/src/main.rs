use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use critrelay::critid::{
    identify_critical_relays, verify_against_reference, CritError, IdentificationConfig, SUMMARY_HEADER,
};
use critrelay::detect::min_voltage_along_line;
use critrelay::dynsim::{run_study, trace_csv, trip_table_csv, SimError, StudyOptions, DEFAULT_DT};
use critrelay::netmodel::NetError;
use critrelay::phasor::from_polar_deg;
use critrelay::relay::{RelayMode, RelaySet};
use critrelay::studio::{
    bundled_case, bundled_contingency, export_rotor_angles, load_case, load_contingency, load_relay_set, to_json, Case,
    Contingency, StudioError,
};

#[derive(Parser)]
#[command(
    name = "critrelay",
    version,
    about = "Transient stability studies with critical distance relay identification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one contingency and write the trace, trip table and rotor angles.
    Simulate(SimulateArgs),
    /// Run the identification loop for one contingency.
    Identify(IdentifyArgs),
    /// Compare the identification loop against the all-relays reference.
    Verify(IdentifyArgs),
    /// Minimum voltage along a line from its two end phasors.
    MveProbe { v1_mag: f64, v1_deg: f64, v2_mag: f64, v2_deg: f64 },
    /// Print the default relay set of a case as JSON.
    EmitDefaultRelays {
        /// Case file, or `bundled:<name>`.
        #[arg(long)]
        case: String,
    },
}

#[derive(Args)]
struct Inputs {
    /// Case file, or `bundled:<name>`.
    #[arg(long)]
    case: String,
    /// Contingency file, or `bundled:<case>/<name>`.
    #[arg(long)]
    contingency: String,
    #[arg(long, default_value_t = DEFAULT_DT)]
    dt: f64,
    #[arg(long, default_value_t = 10.0)]
    horizon: f64,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// `all`, `none`, or a relay-set file.
    #[arg(long, default_value = "all")]
    relays: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MonitorMode {
    Tripping,
    Monitoring,
}

#[derive(Args)]
struct IdentifyArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long, default_value_t = 0.02)]
    v_threshold: f64,
    #[arg(long, default_value_t = 20)]
    max_iterations: usize,
    #[arg(long, default_value_t = 345.0)]
    kv_min: f64,
    #[arg(long, default_value_t = 100.0)]
    kv_band_lo: f64,
    #[arg(long, default_value_t = 345.0)]
    kv_band_hi: f64,
    #[arg(long, value_enum, default_value_t = MonitorMode::Tripping)]
    monitor_mode: MonitorMode,
    /// Relay-set file overriding default settings.
    #[arg(long)]
    relay_overrides: Option<PathBuf>,
    /// Directory for the JSON report and trip table.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Input(String),
    Runtime(String),
}

impl From<StudioError> for Failure {
    fn from(e: StudioError) -> Self {
        if e.is_input_error() {
            Failure::Input(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InvalidEvent(_) | SimError::InvalidParameter(_) | SimError::Relay(_) => {
                Failure::Input(e.to_string())
            }
            SimError::Net(NetError::PowerFlowDiverged { .. }) => Failure::Runtime(e.to_string()),
            SimError::Net(_) => Failure::Input(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<CritError> for Failure {
    fn from(e: CritError) -> Self {
        match e {
            CritError::InvalidConfig(_) => Failure::Input(e.to_string()),
            CritError::Sim(s) => s.into(),
        }
    }
}

fn case_from(spec: &str) -> Result<Case, Failure> {
    Ok(match spec.strip_prefix("bundled:") {
        Some(name) => bundled_case(name)?,
        None => load_case(Path::new(spec))?,
    })
}

fn contingency_from(spec: &str) -> Result<Contingency, Failure> {
    match spec.strip_prefix("bundled:") {
        Some(rest) => {
            let (case, name) = rest
                .split_once('/')
                .ok_or_else(|| Failure::Input(format!("expected bundled:<case>/<name>, got {spec}")))?;
            Ok(bundled_contingency(case, name)?)
        }
        None => Ok(load_contingency(Path::new(spec))?),
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let case = case_from(&args.inputs.case)?;
    let contingency = contingency_from(&args.inputs.contingency)?;
    let relays = match args.relays.as_str() {
        "all" => RelaySet::defaults_for(&case.network),
        "none" => RelaySet::new(),
        path => load_relay_set(Path::new(path))?,
    };
    let opts = StudyOptions { dt: args.inputs.dt, horizon: args.inputs.horizon, ..StudyOptions::default() };
    let outcome = run_study(&case.network, &contingency.events, &relays, opts)?;
    write(&args.out, "trace.csv", &trace_csv(&outcome.trace))?;
    write(&args.out, "trip_table.csv", &trip_table_csv(&outcome.trips))?;
    write(&args.out, "rotor_angles.csv", &export_rotor_angles(&outcome.trace, &case))?;
    write(&args.out, "termination.json", &to_json(&outcome.termination))?;
    print!("{}", trip_table_csv(&outcome.trips));
    Ok(())
}

fn config(args: &IdentifyArgs) -> Result<IdentificationConfig, Failure> {
    let overrides = match &args.relay_overrides {
        Some(p) => load_relay_set(p)?,
        None => RelaySet::new(),
    };
    Ok(IdentificationConfig {
        dt: args.inputs.dt,
        horizon: args.inputs.horizon,
        v_threshold: args.v_threshold,
        max_iterations: args.max_iterations,
        kv_min_identify: args.kv_min,
        kv_band_monitor: (args.kv_band_lo, args.kv_band_hi),
        monitor_mode: match args.monitor_mode {
            MonitorMode::Tripping => RelayMode::Tripping,
            MonitorMode::Monitoring => RelayMode::Monitoring,
        },
        overrides,
    })
}

fn identify(args: &IdentifyArgs) -> Result<(), Failure> {
    let case = case_from(&args.inputs.case)?;
    let contingency = contingency_from(&args.inputs.contingency)?;
    let report = identify_critical_relays(&case.network, &contingency.events, &config(args)?)?;
    if let Some(dir) = &args.out {
        write(dir, "report.json", &to_json(&report))?;
        write(dir, "trip_table.csv", &trip_table_csv(&report.trip_table))?;
    }
    println!("{SUMMARY_HEADER}");
    println!("{}", report.summary_line(&case.name, &contingency.name));
    Ok(())
}

fn verify(args: &IdentifyArgs) -> Result<bool, Failure> {
    let case = case_from(&args.inputs.case)?;
    let contingency = contingency_from(&args.inputs.contingency)?;
    let report = verify_against_reference(&case.network, &contingency.events, &config(args)?)?;
    if let Some(dir) = &args.out {
        write(dir, "equivalence.json", &to_json(&report))?;
        write(dir, "reference_trip_table.csv", &trip_table_csv(&report.reference_trip_table))?;
        write(dir, "algorithm_trip_table.csv", &trip_table_csv(&report.algorithm_trip_table))?;
    }
    println!("match={}", report.matched);
    for m in &report.mismatches {
        println!("{m}");
    }
    Ok(report.matched)
}

fn short(x: f64) -> String {
    let s = format!("{x:.9}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn run(cli: Cli) -> Result<ExitCode, Failure> {
    match cli.command {
        Command::Simulate(a) => simulate(&a).map(|_| ExitCode::SUCCESS),
        Command::Identify(a) => identify(&a).map(|_| ExitCode::SUCCESS),
        Command::Verify(a) => verify(&a).map(|ok| if ok { ExitCode::SUCCESS } else { ExitCode::from(1) }),
        Command::MveProbe { v1_mag, v1_deg, v2_mag, v2_deg } => {
            if ![v1_mag, v1_deg, v2_mag, v2_deg].iter().all(|x| x.is_finite()) {
                return Err(Failure::Input("phasor components must be finite".into()));
            }
            let p = min_voltage_along_line(from_polar_deg(v1_mag, v1_deg), from_polar_deg(v2_mag, v2_deg));
            println!("a_star={} v_min={}", short(p.a_star), short(p.v_min));
            Ok(ExitCode::SUCCESS)
        }
        Command::EmitDefaultRelays { case } => {
            let case = case_from(&case)?;
            print!("{}", to_json(&RelaySet::defaults_for(&case.network)));
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
