use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::Value;

use scmsim::scenario::{ScenarioError, ScenarioFile};
use scmsim::sim::{run, SimConfig, SimError, SimulationReport};
use scmsim::tracing::{analyze, HistoryStore};

/// Run supply chain scenarios and analyze their order histories.
///
/// Run settings come from the command line first, then the scenario file,
/// then built-in defaults.
#[derive(Debug, Parser)]
#[command(name = "scmsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a scenario file and list every problem found.
    Validate { file: PathBuf },
    /// Run a scenario to its horizon and write the report.
    Simulate {
        file: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the scenario horizon.
        #[arg(long)]
        horizon: Option<u64>,
        /// Report path; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Message log path, one JSON envelope per line.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Per-tick order quantities as CSV.
        #[arg(long)]
        series: Option<PathBuf>,
    },
    /// Re-run the tracing analysis on a report, a history, or several
    /// concatenated histories.
    Trace { file: PathBuf },
}

enum Failure {
    Validation(String),
    Infeasible(String),
    Internal(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Internal(_) => 1,
            Failure::Validation(_) => 2,
            Failure::Infeasible(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Infeasible(m) | Failure::Internal(m) => m,
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        Failure::Validation(e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Validation(e) => e.into(),
            SimError::UnknownTarget(_) | SimError::Infeasible(_) => Failure::Infeasible(e.to_string()),
            SimError::Internal(_) => Failure::Internal(e.to_string()),
        }
    }
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::Internal(format!("cannot write {}: {e}", path.display())))
}

fn load(path: &Path) -> Result<ScenarioFile, Failure> {
    let s = ScenarioFile::load(path)?;
    s.validate()?;
    Ok(s)
}

fn simulate(
    file: &Path,
    seed: Option<u64>,
    horizon: Option<u64>,
    out: Option<&Path>,
    log: Option<&Path>,
    series: Option<&Path>,
) -> Result<(), Failure> {
    let scenario = load(file)?;
    let mut config = SimConfig::from_scenario(&scenario);
    config.seed = seed.unwrap_or(config.seed);
    config.horizon = horizon.unwrap_or(config.horizon);
    let output = run(&config, &scenario)?;
    let report = output.report.to_json();
    match out {
        Some(p) => write(p, &report)?,
        None => print!("{report}"),
    }
    if let Some(p) = log {
        write(p, &output.log)?;
    }
    if let Some(p) = series {
        write(p, &output.series.to_csv())?;
    }
    let m = &output.report.metrics;
    eprintln!(
        "fill rate {:.3} ({}/{}), {} failed, chain profit {}",
        m.fill_rate,
        m.on_time,
        m.measured,
        m.failed.len(),
        output.report.profit.chain
    );
    Ok(())
}

/// Histories from every JSON document in `text`. A document is either a
/// report, whose embedded history is used, or a bare history.
fn histories(text: &str) -> Result<HistoryStore, Failure> {
    let bad = |e: serde_json::Error| Failure::Validation(format!("parse error at line {}, column {}: {e}", e.line(), e.column()));
    let mut all = HistoryStore::new();
    for doc in serde_json::Deserializer::from_str(text).into_iter::<Value>() {
        let doc = doc.map_err(bad)?;
        let store = if doc.get("format").is_some() {
            serde_json::from_value::<SimulationReport>(doc).map_err(bad)?.history
        } else {
            serde_json::from_value::<HistoryStore>(doc).map_err(bad)?
        };
        all = all.merged(&store);
    }
    Ok(all)
}

fn trace(file: &Path) -> Result<(), Failure> {
    let text = fs::read_to_string(file).map_err(|e| Failure::Validation(format!("cannot read {}: {e}", file.display())))?;
    let report = analyze(&histories(&text)?);
    let json = serde_json::to_string_pretty(&report).map_err(|e| Failure::Internal(e.to_string()))?;
    println!("{json}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Validate { file } => load(file).map(|_| println!("ok")),
        Command::Simulate { file, seed, horizon, out, log, series } => {
            simulate(file, *seed, *horizon, out.as_deref(), log.as_deref(), series.as_deref())
        }
        Command::Trace { file } => trace(file),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
