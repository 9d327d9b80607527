//! `cookie-monster` subcommands.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cookie_monster_core::Database;

use crate::audit::{empirical_privacy_loss, three_device_scenario, AuditError};
use crate::compare::{compare, CompareError};
use crate::config::{ConfigError, FileConfig, OUTPUT_DIR_ENV};
use crate::events_csv::{read_events, write_events, LoadError};
use crate::export::{write_cdf, write_metrics, write_results, write_snapshot, RunSummary};
use crate::manifest::RunManifest;
use crate::scenario::{run_scenario, ScenarioError};
use crate::workload::{augment_impressions, generate_microbenchmark, WorkloadError};

pub const EVENTS_FILE: &str = "events.csv";
pub const RESULTS_FILE: &str = "results.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.jsonl";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CDF_FILE: &str = "budget_cdf.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const AUDIT_FILE: &str = "audit.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(name = "cookie-monster", version, about = "On-device privacy budgeting simulator")]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic event log and its manifest.
    Generate(CommonArgs),
    /// Run the query scenario and write results, snapshot and metrics.
    Run(CommonArgs),
    /// Tabulate budget and RMSRE statistics of several runs.
    Compare {
        /// Run directories or their summary.json files.
        #[arg(required = true, num_args = 2..)]
        runs: Vec<PathBuf>,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate the realized privacy loss of the built-in audit schedule.
    Audit(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON config file; defaults apply when absent.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(short, long, env = OUTPUT_DIR_ENV)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error(transparent)]
    Compare(#[from] CompareError),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}: {message}")]
    Summary { path: String, message: String },
}

impl CliError {
    /// 1 for problems the user can fix in the config, 2 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Workload(WorkloadError::InvalidConfig(_)) => 1,
            CliError::Scenario(ScenarioError::InvalidConfig(_)) => 1,
            CliError::Audit(AuditError::InsufficientTrials(_) | AuditError::InvalidBins(_)) => 1,
            _ => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.display().to_string(), source }
}

fn load_config(args: &CommonArgs) -> Result<(FileConfig, PathBuf), CliError> {
    let mut cfg = match &args.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(out) = &args.out {
        cfg.output.dir = Some(out.clone());
    }
    cfg.validate()?;
    if let Some(n) = cfg.parallelism {
        // Fails only if a pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let dir = cfg.output_dir();
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    Ok((cfg, dir))
}

fn write_file(dir: &Path, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> Result<(), CliError> {
    let path = dir.join(name);
    let file = File::create(&path).map_err(io_err(&path))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(io_err(&path))
}

fn csv_io(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

/// The event log in CSV form and as a database.
fn dataset(cfg: &FileConfig) -> Result<(Vec<u8>, Database), CliError> {
    let bench = &cfg.microbenchmark;
    let epochs = bench.epochs();
    let (bytes, events) = match &cfg.dataset.path {
        Some(p) => {
            let bytes = fs::read(p).map_err(io_err(p))?;
            let events = read_events(bytes.as_slice())?;
            (bytes, events)
        }
        None => {
            let events = generate_microbenchmark(bench, &cfg.scenario.schema)?;
            let mut bytes = Vec::new();
            write_events(&mut bytes, &events).map_err(LoadError::from)?;
            (bytes, events)
        }
    };
    let db = Database::from_events(events, &epochs).map_err(LoadError::from)?;
    let extra = cfg.dataset.extra_impressions_per_conversion;
    let db = augment_impressions(&db, extra, bench.attribution_window, cfg.scenario.seed, &cfg.scenario.schema, &epochs)?;
    Ok((bytes, db))
}

pub fn cmd_generate(args: &CommonArgs) -> Result<PathBuf, CliError> {
    let (cfg, dir) = load_config(args)?;
    let events = generate_microbenchmark(&cfg.microbenchmark, &cfg.scenario.schema)?;
    let mut bytes = Vec::new();
    write_events(&mut bytes, &events).map_err(LoadError::from)?;
    write_file(&dir, EVENTS_FILE, |w| w.write_all(&bytes))?;
    let manifest = RunManifest::new("generate", &cfg, &bytes, &[("events", EVENTS_FILE)]);
    write_file(&dir, MANIFEST_FILE, |w| w.write_all(manifest.to_json().as_bytes()))?;
    log::info!("wrote {} events to {}", events.len(), dir.join(EVENTS_FILE).display());
    Ok(dir)
}

pub fn cmd_run(args: &CommonArgs) -> Result<PathBuf, CliError> {
    let (cfg, dir) = load_config(args)?;
    let (bytes, db) = dataset(&cfg)?;
    let outcome = run_scenario(&db, &cfg.scenario_config(), &cfg.microbenchmark)?;
    write_file(&dir, RESULTS_FILE, |w| write_results(w, &outcome))?;
    write_file(&dir, SNAPSHOT_FILE, |w| write_snapshot(w, &outcome))?;
    write_file(&dir, METRICS_FILE, |w| write_metrics(w, &outcome, cfg.output.cutoff))?;
    let stats = outcome.budget_stats();
    write_file(&dir, CDF_FILE, |w| match &stats {
        Some(s) => write_cdf(w, s).map_err(csv_io),
        None => w.write_all(b"consumed,fraction\n"),
    })?;
    let summary = RunSummary::new(&outcome);
    write_file(&dir, SUMMARY_FILE, |w| {
        serde_json::to_writer_pretty(&mut *w, &summary)?;
        w.write_all(b"\n")
    })?;
    let manifest = RunManifest::new(
        "run",
        &cfg,
        &bytes,
        &[
            ("results", RESULTS_FILE),
            ("snapshot", SNAPSHOT_FILE),
            ("metrics", METRICS_FILE),
            ("cdf", CDF_FILE),
            ("summary", SUMMARY_FILE),
        ],
    );
    write_file(&dir, MANIFEST_FILE, |w| w.write_all(manifest.to_json().as_bytes()))?;
    let executed = outcome.executed().count();
    println!(
        "{}: {} queries ({} executed), avg budget {:.6}, max budget {:.6}, outputs in {}",
        outcome.system.name(),
        outcome.records.len(),
        executed,
        summary.avg_budget,
        summary.max_budget,
        dir.display()
    );
    Ok(dir)
}

fn read_summary(path: &Path) -> Result<RunSummary, CliError> {
    let file = if path.is_dir() { path.join(SUMMARY_FILE) } else { path.to_path_buf() };
    let text = fs::read_to_string(&file).map_err(io_err(&file))?;
    serde_json::from_str(&text).map_err(|e| CliError::Summary { path: file.display().to_string(), message: e.to_string() })
}

pub fn cmd_compare(runs: &[PathBuf], out: Option<&Path>) -> Result<(), CliError> {
    let summaries = runs.iter().map(|p| read_summary(p)).collect::<Result<Vec<_>, _>>()?;
    match out {
        Some(p) => {
            let file = File::create(p).map_err(io_err(p))?;
            compare(BufWriter::new(file), &summaries)?;
        }
        None => compare(io::stdout().lock(), &summaries)?,
    }
    Ok(())
}

pub fn cmd_audit(args: &CommonArgs) -> Result<PathBuf, CliError> {
    let (cfg, dir) = load_config(args)?;
    let a = &cfg.audit;
    let scenario = three_device_scenario(a.epsilon_global, a.epsilon_per_query, a.queries, a.trials, a.filters);
    let report = empirical_privacy_loss(&scenario, cfg.scenario.seed)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_file(&dir, AUDIT_FILE, |w| writeln!(w, "{json}"))?;
    println!("{json}");
    Ok(dir)
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Generate(a) => cmd_generate(a).map(|_| ()),
        Command::Run(a) => cmd_run(a).map(|_| ()),
        Command::Compare { runs, out } => cmd_compare(runs, out.as_deref()),
        Command::Audit(a) => cmd_audit(a).map(|_| ()),
    }
}

/// Parses `args`, runs the command and maps failures to exit codes.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
