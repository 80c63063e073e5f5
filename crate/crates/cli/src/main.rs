use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vas_core::bench::{
    format_table, read_measurements, run_parallel, run_scenario, summarize, write_gnuplot, write_measurements,
    BenchError, Scenario, ScenarioKind, DEFAULT_BURSTS,
};
use vas_core::link::{
    load_profiles, model_transfer_time_ms, resolve_profile, LinkProfile, TransportKind, TransportModel,
    DEFAULT_SAMPLES,
};
use vas_core::measure::Measurement;

const EXIT_USAGE: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "vasbench", version, about = "Benchmarks for the charger value-added services")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write one CSV row per sample.
    Run(RunArgs),
    /// Summarize one or more measurement CSV files.
    Report(ReportArgs),
    /// Print the analytical exchange time in milliseconds.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct ProfileSource {
    /// Extra profile definitions (TOML) to resolve names against.
    #[arg(long)]
    profiles: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: String,
    /// Profile name; repeat or comma-separate for several.
    #[arg(long, required = true, value_delimiter = ',')]
    profile: Vec<String>,
    #[arg(long, default_value = "ideal")]
    transport: String,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    samples: u32,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// CSV output; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Burst counts for the micropayment scenario.
    #[arg(long, value_delimiter = ',')]
    bursts: Vec<u32>,
    /// Reconnect before every sample instead of reusing one session.
    #[arg(long)]
    reconnect: bool,
    /// Pad micropayment receipts and authorizations to 1 KB records.
    #[arg(long)]
    pad_bursts: bool,
    /// Run profiles concurrently, each with its own clock and seed.
    #[arg(long)]
    parallel: bool,
    /// Also write gnuplot data to this file.
    #[arg(long)]
    gnuplot: Option<PathBuf>,
    #[command(flatten)]
    source: ProfileSource,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(required = true)]
    files: Vec<PathBuf>,
    /// Also write gnuplot data to this file.
    #[arg(long)]
    gnuplot: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    profile: String,
    #[arg(long, default_value = "ideal")]
    transport: String,
    #[arg(long)]
    req: u64,
    #[arg(long)]
    resp: u64,
    #[command(flatten)]
    source: ProfileSource,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<BenchError> for Failure {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Usage(m) => Failure::Usage(m),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn profile(name: &str, source: &ProfileSource) -> Result<LinkProfile, Failure> {
    let extra = match &source.profiles {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            load_profiles(&text).map_err(|e| Failure::Usage(e.to_string()))?
        }
        None => Vec::new(),
    };
    resolve_profile(name, &extra).ok_or_else(|| Failure::Usage(format!("unknown profile `{name}`")))
}

fn transport(name: &str) -> Result<TransportModel, Failure> {
    name.parse::<TransportKind>()
        .map(TransportModel::from)
        .map_err(|e| Failure::Usage(e.to_string()))
}

fn write_gnuplot_file(path: &Path, rows: &[Measurement]) -> Result<(), Failure> {
    let f = File::create(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    write_gnuplot(BufWriter::new(f), rows)?;
    Ok(())
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let kind: ScenarioKind = args.scenario.parse()?;
    let model = transport(&args.transport)?;
    let bursts = if args.bursts.is_empty() { DEFAULT_BURSTS.to_vec() } else { args.bursts };
    let scenarios = args
        .profile
        .iter()
        .map(|name| {
            let s = Scenario::new(kind, profile(name, &args.source)?, model)
                .samples(args.samples)
                .seed(args.seed)
                .bursts(bursts.clone())
                .reconnect(args.reconnect)
                .pad_bursts(args.pad_bursts);
            s.validate()?;
            Ok(s)
        })
        .collect::<Result<Vec<_>, Failure>>()?;
    let results = if args.parallel {
        run_parallel(&scenarios)
    } else {
        scenarios.iter().map(run_scenario).collect()
    };
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    match &args.out {
        Some(path) => {
            let f = File::create(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
            write_measurements(BufWriter::new(f), &rows)?;
            print!("{}", format_table(&summarize(&rows)));
        }
        None => write_measurements(io::stdout().lock(), &rows)?,
    }
    if let Some(path) = &args.gnuplot {
        write_gnuplot_file(path, &rows)?;
    }
    Ok(())
}

fn report(args: ReportArgs) -> Result<(), Failure> {
    let mut rows = Vec::new();
    for path in &args.files {
        let f = File::open(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        let parsed = read_measurements(f).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        rows.extend(parsed);
    }
    let summary = summarize(&rows);
    if !summary.is_empty() {
        print!("{}", format_table(&summary));
    }
    if let Some(path) = &args.gnuplot {
        write_gnuplot_file(path, &rows)?;
    }
    Ok(())
}

fn oracle(args: OracleArgs) -> Result<(), Failure> {
    let p = profile(&args.profile, &args.source)?;
    let model = transport(&args.transport)?;
    let ms = model_transfer_time_ms(&p, &model, args.req, args.resp).map_err(|e| Failure::Usage(e.to_string()))?;
    println!("{ms:.3}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Report(a) => report(a),
        Command::Oracle(a) => oracle(a),
    };
    let _ = io::stdout().flush();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("vasbench: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("vasbench: {m}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
