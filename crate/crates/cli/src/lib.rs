//! `autoclima` subcommands. Everything except `serve` is deterministic given
//! its flags.

use std::fmt;
use std::fs;
use std::net::{Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use autoclima_core::profile::{generate_library, load_profile, Profile, ProfileError, Provenance};
use autoclima_core::sim::run::{run_scenario, EvalReport, LoopOptions, RunMode, RunSummary};
use autoclima_core::sim::Scenario;
use autoclima_service::{AppState, DriverMode, ServiceConfig, SessionSetup, DEFAULT_PORT};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "autoclima", version, about = "Self-learning cabin climate setpoint automation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario with its synthetic driver and write metrics, the final
    /// profile and a run summary.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        /// Master seed; replaces every seed in the scenario.
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Start from this profile instead of an untrained network.
        #[arg(long)]
        profile: Option<PathBuf>,
        /// Accept every handover proposal without asking the driver.
        #[arg(long)]
        auto_accept: bool,
    },
    /// Write the reference scenario for the given length as JSON, a starting
    /// point for custom scenarios.
    NewScenario {
        #[arg(long)]
        hours: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the three archetype profiles and write them to a directory.
    GenLibrary {
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a profile on a scenario with training off and every setpoint
    /// automated.
    Eval {
        #[arg(long)]
        profile: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        /// Master seed; the scenario's own seeds when absent.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the HTTP API and the panel.
    Serve {
        #[arg(long, default_value_t = DEFAULT_PORT)]
        port: u16,
        #[arg(long, value_enum, default_value_t = Mode::Human)]
        mode: Mode,
        /// Simulated seconds per wall-clock second.
        #[arg(long, default_value_t = 1.0)]
        time_scale: f64,
        /// Scenario for the initial session; a reference day when absent.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Profile the initial session starts from.
        #[arg(long)]
        profile: Option<PathBuf>,
        /// Library directory for sessions started by user type.
        #[arg(long)]
        library: Option<PathBuf>,
        /// Built panel bundle to serve at `/`.
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
        /// Do not start a session; wait for POST /api/session.
        #[arg(long)]
        idle: bool,
        /// Bind to all interfaces instead of localhost.
        #[arg(long)]
        public: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Human,
    Synthetic,
}

impl From<Mode> for DriverMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Human => DriverMode::Human,
            Mode::Synthetic => DriverMode::Synthetic,
        }
    }
}

/// A failed command and the exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    /// Missing, unreadable or invalid input file.
    Input(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            scenario,
            seed,
            out,
            profile,
            auto_accept,
        } => simulate(&scenario, seed, &out, profile.as_deref(), auto_accept),
        Command::NewScenario { hours, out } => {
            if !(hours.is_finite() && hours >= 0.0) {
                return Err(CliError::Input(format!("--hours must be a non-negative number, got {hours}")));
            }
            let mut s = Scenario::reference(hours * 3600.0);
            s.name = format!("reference-{hours}h");
            write(&out, s.to_json().as_bytes())
        }
        Command::GenLibrary { out } => gen_library(&out),
        Command::Eval {
            profile,
            scenario,
            seed,
            out,
        } => {
            let report = eval(&profile, &scenario, seed)?;
            let text = to_json(&report);
            print!("{text}");
            if let Some(path) = out {
                write(&path, text.as_bytes())?;
            }
            Ok(())
        }
        Command::Serve {
            port,
            mode,
            time_scale,
            scenario,
            profile,
            library,
            static_dir,
            idle,
            public,
        } => {
            let ip = if public { Ipv4Addr::UNSPECIFIED } else { Ipv4Addr::LOCALHOST };
            let config = ServiceConfig {
                default_mode: mode.into(),
                library_dir: library,
                static_dir,
            };
            let initial = if idle {
                None
            } else {
                let mut setup = SessionSetup::reference(mode.into());
                setup.time_scale = time_scale;
                if let Some(p) = scenario {
                    setup.scenario = read_scenario(&p)?;
                }
                setup.profile = profile.as_deref().map(read_profile).transpose()?;
                Some(setup)
            };
            serve(SocketAddr::from((ip, port)), config, initial)
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn read_scenario(path: &Path) -> Result<Scenario> {
    Scenario::from_json(&read_text(path)?).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn read_profile(path: &Path) -> Result<Profile> {
    load_profile(path).map_err(|e| match e {
        ProfileError::Generation(m) => CliError::Runtime(m),
        e => CliError::Input(e.to_string()),
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

/// Run summary written next to the metrics.
#[derive(Debug, Serialize)]
pub struct SimulateSummary<'a> {
    pub seed: u64,
    pub auto_accept: bool,
    pub start_profile: Option<&'a str>,
    #[serde(flatten)]
    pub run: &'a RunSummary,
}

pub fn simulate(scenario: &Path, seed: u64, out: &Path, profile: Option<&Path>, auto_accept: bool) -> Result<()> {
    let mut s = read_scenario(scenario)?.with_seed(seed);
    if auto_accept {
        s.estimator.auto_accept = true;
    }
    let start = profile.map(read_profile).transpose()?;
    let options = LoopOptions {
        start: start.as_ref().map(Profile::start_model),
        ..LoopOptions::default()
    };
    let output = run_scenario(&s, options).map_err(|e| CliError::Runtime(e.to_string()))?;

    fs::create_dir_all(out).map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;
    write(&out.join("metrics.csv"), output.metrics.to_csv().as_bytes())?;
    write(&out.join("rounds.csv"), output.rounds_csv().as_bytes())?;
    let learned = Profile::from_run(format!("{}-seed{seed}", s.name), &s, &output, Provenance::Learned)
        .and_then(|p| p.to_json())
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    write(&out.join("profile.json"), learned.as_bytes())?;
    let start_id = start.as_ref().map(|p| p.profile_id.as_str());
    let summary = SimulateSummary {
        seed,
        auto_accept,
        start_profile: start_id,
        run: &output.summary,
    };
    write(&out.join("summary.json"), to_json(&summary).as_bytes())?;
    eprintln!("{}", output.describe());
    Ok(())
}

pub fn gen_library(out: &Path) -> Result<()> {
    let paths = generate_library(out).map_err(|e| CliError::Runtime(e.to_string()))?;
    for p in paths {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct EvalOutput {
    pub profile: String,
    pub scenario: String,
    #[serde(flatten)]
    pub report: EvalReport,
}

pub fn eval(profile: &Path, scenario: &Path, seed: Option<u64>) -> Result<EvalOutput> {
    let p = read_profile(profile)?;
    let mut s = read_scenario(scenario)?;
    if let Some(seed) = seed {
        s = s.with_seed(seed);
    }
    let options = LoopOptions {
        mode: RunMode::Eval,
        start: Some(p.start_model()),
        ..LoopOptions::default()
    };
    let output = run_scenario(&s, options).map_err(|e| CliError::Runtime(e.to_string()))?;
    let report = output.eval.ok_or_else(|| CliError::Runtime("evaluation produced no report".into()))?;
    Ok(EvalOutput {
        profile: p.profile_id,
        scenario: s.name,
        report,
    })
}

pub fn serve(addr: SocketAddr, config: ServiceConfig, initial: Option<SessionSetup>) -> Result<()> {
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime(e.to_string()))?;
    rt.block_on(async move {
        let state = AppState::new(config);
        if let Some(setup) = initial {
            state.start_session(setup).map_err(|e| CliError::Input(e.message))?;
        }
        eprintln!("listening on http://{addr}");
        autoclima_service::serve(addr, state)
            .await
            .map_err(|e| CliError::Runtime(format!("{addr}: {e}")))
    })
}
