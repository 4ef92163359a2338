//! Command-line front end. [`run`] parses arguments, executes one command
//! and returns the process exit code: 0 on success, 1 for usage, I/O and
//! parse errors, 2 for inputs that parse but fail validation.

mod commands;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::sim::Rule;

pub const TOOL: &str = "conflux";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Domain(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Domain(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = TOOL, version, about = "Conflux DAG ordering, confirmation risk, network simulation and attack experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Total block order and transaction verdicts of a DAG file.
    Order(OrderArgs),
    /// Kick-out bound for one pivot block and sibling.
    Risk(RiskArgs),
    /// Run the network simulator.
    Simulate(SimulateArgs),
    /// Seeded double-spend experiment.
    Attack(AttackArgs),
    /// Liveness attack on PHANTOM's main chain.
    PhantomAttack(PhantomArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct OrderArgs {
    /// DAG file (`#conflux-dag v1`).
    pub file: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Also write the transaction verdict CSV here.
    #[arg(long)]
    pub verdicts_csv: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RiskArgs {
    /// Attacker rate over honest rate.
    #[arg(long)]
    pub q: f64,
    /// Honest blocks per second.
    #[arg(long)]
    pub lambda_h: f64,
    /// Seconds since the common parent was generated.
    #[arg(long)]
    pub t: f64,
    /// Honest blocks under the pivot block, seen by everyone.
    #[arg(long)]
    pub n: u64,
    /// Honest blocks under the sibling.
    #[arg(long)]
    pub m: u64,
    #[arg(long, default_value_t = 0.0)]
    pub d: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario TOML. Required unless `--replay` is given.
    #[arg(long, required_unless_present = "replay")]
    pub config: Option<PathBuf>,
    /// Base seed; overrides the config's.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of consecutive seeds to run.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    /// Chain rules to run, comma separated. Defaults to the config's.
    #[arg(long, value_delimiter = ',')]
    pub rules: Vec<Rule>,
    /// Values of lambda * d to sweep by changing lambda at fixed d.
    #[arg(long, value_delimiter = ',')]
    pub sweep_lambda_d: Vec<f64>,
    /// Write one per-block CSV per run into this directory.
    #[arg(long)]
    pub blocks_dir: Option<PathBuf>,
    /// Rerun from the header of an earlier summary.
    #[arg(long, conflicts_with_all = ["config", "seed", "seeds", "rules", "sweep_lambda_d"])]
    pub replay: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Attack plan TOML.
    #[arg(long)]
    pub plan: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub seeds: u64,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Victim's risk tolerance. Defaults to the config's.
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Write per-seed outcomes here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[arg(long)]
    pub k_delta: u64,
    #[arg(long, default_value_t = 0)]
    pub k_prime: u64,
    /// Malicious blocks to build. Defaults to `3 k_delta - 14`.
    #[arg(long)]
    pub i_max: Option<u64>,
    /// Attacker rate over honest rate, for the success bound.
    #[arg(long, conflicts_with = "attacker_share")]
    pub q: Option<f64>,
    /// Attacker's fraction of all mining power, for the success bound.
    #[arg(long)]
    pub attacker_share: Option<f64>,
    /// Write the attack DAG here in the DAG file format.
    #[arg(long)]
    pub dag_out: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Reproducibility header embedded in every JSON output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub config: Value,
}

impl Header {
    fn new(command: &str, seed: Option<u64>, config: Value) -> Self {
        Header {
            tool: TOOL.to_string(),
            version: VERSION.to_string(),
            command: command.to_string(),
            seed,
            config,
        }
    }
}

/// Rounds to 12 significant digits.
pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.11e}").parse().expect("formatted float parses")
}

fn round_value(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = round_sig(n.as_f64().expect("f64 number"));
            serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
        }
        Value::Array(a) => Value::Array(a.into_iter().map(round_value).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, round_value(v))).collect()),
        other => other,
    }
}

/// Pretty JSON with floats rounded, newline terminated.
pub fn render_json(value: &impl Serialize) -> String {
    let v = serde_json::to_value(value).expect("report serializes");
    let mut s = serde_json::to_string_pretty(&round_value(v)).expect("value serializes");
    s.push('\n');
    s
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn emit(out: &Option<PathBuf>, text: &str, stdout: &mut dyn Write) -> Result<(), CliError> {
    match out {
        Some(path) => write_file(path, text),
        None => stdout.write_all(text.as_bytes()).map_err(|e| CliError::Io {
            path: PathBuf::from("<stdout>"),
            message: e.to_string(),
        }),
    }
}

pub fn execute(cli: Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Order(a) => commands::order(a, stdout),
        Command::Risk(a) => commands::risk(a, stdout),
        Command::Simulate(a) => commands::simulate(a, stdout),
        Command::Attack(a) => commands::attack(a, stdout),
        Command::PhantomAttack(a) => commands::phantom_attack(a, stdout),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = stderr.write_all(text.as_bytes());
                1
            } else {
                let _ = stdout.write_all(text.as_bytes());
                0
            };
        }
    };
    match execute(cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
