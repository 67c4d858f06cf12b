//! Command-line front end: golden runs, single executions under fault
//! plans, voting, self-tests, campaigns, single-trial recovery scenarios,
//! and the socket-mode variant server.
//!
//! Every verb reads a JSON spec file; `--seed` and `--out` override the
//! spec's seed and the output destination. Exit codes: 0 success, 1 spec
//! errors, 2 I/O errors.

use clap::{Parser, Subcommand};
use divsim::controller::Thresholds;
use divsim::diversity::DiversityConfig;
use divsim::faults::{FaultKind, FaultPlan, FaultSpace};
use divsim::harness::{
    self, CampaignMode, CampaignSpec, PersistenceMode, TrialRecord,
};
use divsim::machine::{parse_program, GoldenCache, Program, Word, DEFAULT_CYCLE_LIMIT};
use divsim::redundancy::{vote, NmrConfig, ReplicaOutcome};
use divsim::server;
use serde::Deserialize;
use std::collections::BTreeMap;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "divsim", version, about = "Fault-recovery simulator for N-modular-redundant multi-core systems with adaptive software diversity")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fault-free reference outputs for a program and input.
    Golden {
        spec: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One execution of a diversified image under a fault plan.
    Run {
        spec: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// M-out-of-N vote over canonical replica outputs.
    Vote {
        spec: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Software-based self-tests against an injected fault plan.
    Selftest {
        spec: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo fault-injection campaign; writes campaign.csv and
    /// summary.json into the output directory.
    Campaign {
        spec: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "campaign_out")]
        out: PathBuf,
    },
    /// One closed-loop recovery scenario with an explicitly located fault.
    Recover {
        spec: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Socket-mode variant-generation server (length-prefixed JSON records).
    Serve {
        addr: String,
        /// Stop after this many requests (serves forever by default).
        #[arg(long)]
        max_requests: Option<usize>,
    },
}

enum CliError {
    Spec(String),
    Io(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

fn spec_err(e: impl std::fmt::Display) -> CliError {
    CliError::Spec(e.to_string())
}

#[derive(Deserialize)]
#[serde(rename_all = "snake_case")]
enum ProgramSpec {
    Name(String),
    Text { name: String, source: String },
}

impl ProgramSpec {
    fn resolve(&self) -> Result<Program, CliError> {
        match self {
            ProgramSpec::Name(name) => divsim::programs::program(name)
                .cloned()
                .ok_or_else(|| CliError::Spec(format!("unknown program `{name}`"))),
            ProgramSpec::Text { name, source } => parse_program(name, source).map_err(spec_err),
        }
    }
}

#[derive(Deserialize)]
struct GoldenSpec {
    program: ProgramSpec,
    #[serde(with = "server::hex_words")]
    input: Vec<Vec<Word>>,
}

#[derive(Deserialize)]
struct RunSpec {
    program: ProgramSpec,
    #[serde(default)]
    config: DiversityConfig,
    #[serde(default)]
    fault_plan: FaultPlan,
    #[serde(with = "server::hex_words")]
    input: Vec<Vec<Word>>,
    #[serde(default = "default_cycle_limit")]
    cycle_limit: u32,
}

fn default_cycle_limit() -> u32 {
    DEFAULT_CYCLE_LIMIT
}

#[derive(Deserialize)]
struct VoteSpec {
    outputs: BTreeMap<u8, ReplicaOutcome>,
    m: u8,
}

#[derive(Deserialize)]
struct SelftestSpec {
    #[serde(default)]
    fault_plan: FaultPlan,
    #[serde(default)]
    seed: u64,
}

#[derive(Deserialize)]
struct RecoverSpec {
    benchmark: String,
    fault: FaultKind,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    thresholds: Thresholds,
    #[serde(default)]
    nmr: Option<NmrConfig>,
    #[serde(default)]
    max_rounds: Option<u32>,
    #[serde(default)]
    onset_rounds: Option<u32>,
}

fn read_spec<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Spec(format!("{}: {e}", path.display())))
}

fn emit(out: &Option<PathBuf>, body: String) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, body)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display()))),
        None => {
            println!("{body}");
            Ok(())
        }
    }
}

fn json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("results serialize")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Spec(msg)) => {
            eprintln!("spec error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Io(msg)) => {
            eprintln!("io error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::Golden { spec, out } => {
            let spec: GoldenSpec = read_spec(&spec)?;
            let program = spec.program.resolve()?;
            let mut results = Vec::new();
            for input in &spec.input {
                let outputs = divsim::machine::golden_run(&program, input).map_err(spec_err)?;
                let hex: Vec<String> = outputs.iter().map(|w| format!("{w:#010x}")).collect();
                results.push(serde_json::json!({
                    "input": input.iter().map(|w| format!("{w:#010x}")).collect::<Vec<_>>(),
                    "outputs": hex,
                }));
            }
            emit(&out, json(&results))
        }
        Cmd::Run { spec, out } => {
            let spec: RunSpec = read_spec(&spec)?;
            let program = spec.program.resolve()?;
            let image = divsim::machine::assemble(&program, &spec.config).map_err(spec_err)?;
            let mut results = Vec::new();
            for input in &spec.input {
                let re = divsim::diversity::reexpress_for(&program, &spec.config, input)
                    .map_err(spec_err)?;
                let outcome =
                    divsim::machine::run(&image, &re, &spec.fault_plan, spec.cycle_limit);
                results.push(outcome);
            }
            emit(&out, json(&results))
        }
        Cmd::Vote { spec, out } => {
            let spec: VoteSpec = read_spec(&spec)?;
            if (spec.outputs.len() as u8) < spec.m {
                return Err(CliError::Spec("fewer outputs than m".into()));
            }
            let result = vote(&spec.outputs, spec.m);
            emit(&out, json(&result))
        }
        Cmd::Selftest { spec, seed, out } => {
            let spec: SelftestSpec = read_spec(&spec)?;
            let report =
                divsim::selftest::run_self_tests(&spec.fault_plan, seed.unwrap_or(spec.seed));
            emit(&out, json(&report))
        }
        Cmd::Campaign { spec, seed, out } => {
            let mut spec: CampaignSpec = read_spec(&spec)?;
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            let (summary, records) = harness::run_campaign(&spec).map_err(spec_err)?;
            let (csv_path, summary_path) = harness::write_report(&out, &summary, &records)?;
            println!("{}", csv_path.display());
            println!("{}", summary_path.display());
            Ok(())
        }
        Cmd::Recover { spec, seed, out } => {
            let spec: RecoverSpec = read_spec(&spec)?;
            let campaign = CampaignSpec {
                benchmark: spec.benchmark,
                nmr: spec.nmr.unwrap_or_default(),
                fault_space: FaultSpace::singleton(spec.fault),
                trials: 1,
                seed: seed.unwrap_or(spec.seed),
                thresholds: spec.thresholds,
                mode: CampaignMode::ClosedLoopRecovery,
                max_rounds: spec.max_rounds.unwrap_or(64),
                onset_rounds: spec.onset_rounds.unwrap_or(10),
                persistence: PersistenceMode::Permanent,
                cycle_limit: DEFAULT_CYCLE_LIMIT,
            };
            let goldens = GoldenCache::new();
            let record: TrialRecord = harness::run_trial(&campaign, 0, &goldens);
            emit(&out, json(&record))
        }
        Cmd::Serve { addr, max_requests } => {
            let listener = TcpListener::bind(&addr)?;
            eprintln!("serving variant requests on {}", listener.local_addr()?);
            server::serve(listener, max_requests)?;
            Ok(())
        }
    }
}
