use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use cmstein::bounds::{theorem_bounds, Outcome};
use cmstein::combinatorics::DegreeSequence;
use cmstein::experiment::{census_csv, census_table, mc_discrepancy, ExperimentConfig, Verdict};
use cmstein::oracle::exact_law;
use cmstein::verify::{coupling_suite, formulas_suite, stein_suite, Profile, SuiteReport};

const PASS: u8 = 0;
const FAILURE: u8 = 1;
const SKIPPED: u8 = 2;
const USAGE: u8 = 3;

#[derive(Parser)]
#[command(name = "cmstein", version, about = "Configuration-model motif counts, couplings and normal-Poisson bounds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Write the main artifact here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    reps: Option<u64>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long = "dict-size", global = true)]
    dict_size: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form constants and theorem bounds.
    Bounds { degrees: String },
    /// Census of uniform configurations, one row per replication.
    Sample { degrees: String },
    /// Exact law of the four statistics by full enumeration.
    Enumerate { degrees: String },
    /// Exact and probe suites.
    Verify {
        #[arg(value_enum)]
        suite: Suite,
        #[arg(long, value_enum, default_value_t = ProfileArg::Small)]
        profile: ProfileArg,
    },
    /// Monte Carlo discrepancy study from a key = value config file.
    Experiment { config: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Coupling,
    Formulas,
    Stein,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Small,
    Full,
}

/// A failure with its exit status.
struct Failure(u8, String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(FAILURE, e.to_string())
    }
}

/// A file of degrees, or the degrees inline separated by commas or spaces.
fn degrees(arg: &str) -> Result<DegreeSequence, Failure> {
    let path = Path::new(arg);
    let text = if path.is_file() { std::fs::read_to_string(path)? } else { arg.replace(',', " ") };
    text.parse().map_err(|e| Failure(USAGE, format!("degree sequence {arg:?}: {e}")))
}

fn emit(out: &Option<PathBuf>, body: &str) -> Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, body).map_err(|e| Failure(FAILURE, format!("{}: {e}", p.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(body.as_bytes())?;
            Ok(())
        }
    }
}

fn pretty(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json values serialize");
    s.push('\n');
    s
}

fn key_value_csv(v: &serde_json::Value) -> String {
    let mut s = String::from("key,value\n");
    if let Some(map) = v.as_object() {
        for (k, val) in map {
            s.push_str(&format!("{k},{}\n", val.as_str().map(str::to_string).unwrap_or_else(|| val.to_string())));
        }
    }
    s
}

fn code(v: Verdict) -> u8 {
    match v {
        Verdict::Pass => PASS,
        Verdict::Fail => FAILURE,
        Verdict::Skipped => SKIPPED,
    }
}

fn run(cli: Cli) -> Result<u8, Failure> {
    match &cli.command {
        Command::Bounds { degrees: arg } => {
            let ds = degrees(arg)?;
            let report = theorem_bounds(&ds);
            let json = report.to_json();
            emit(&cli.out, &if cli.format == Format::Csv { key_value_csv(&json) } else { pretty(&json) })?;
            let bounds = [&report.bound_a, &report.bound_b, &report.bound_c, &report.bound_c2];
            for b in bounds {
                if let Outcome::PreconditionFailed(why) = b {
                    eprintln!("precondition: {why}");
                }
            }
            Ok(if bounds.iter().all(|b| b.value().is_none()) { SKIPPED } else { PASS })
        }
        Command::Sample { degrees: arg } => {
            let ds = degrees(arg)?;
            let rows = census_table(&ds, cli.reps.unwrap_or(1), cli.seed.unwrap_or(0), cli.threads)?;
            let body = match cli.format {
                Format::Csv => census_csv(&ds, &rows),
                Format::Json => pretty(&serde_json::to_value(&rows)?),
            };
            emit(&cli.out, &body)?;
            Ok(PASS)
        }
        Command::Enumerate { degrees: arg } => {
            let ds = degrees(arg)?;
            let law = exact_law(&ds).map_err(|e| Failure(SKIPPED, e.to_string()))?;
            emit(&cli.out, &pretty(&law.to_json()))?;
            Ok(PASS)
        }
        Command::Verify { suite, profile } => {
            let profile = match profile {
                ProfileArg::Small => Profile::Small,
                ProfileArg::Full => Profile::Full,
            };
            let report: SuiteReport = match suite {
                Suite::Coupling => coupling_suite(profile)?,
                Suite::Formulas => formulas_suite(profile)?,
                Suite::Stein => stein_suite(profile, cli.dict_size.unwrap_or(12))?,
            };
            let body = match cli.format {
                Format::Csv => report.to_csv(),
                Format::Json => pretty(&serde_json::to_value(&report)?),
            };
            emit(&cli.out, &body)?;
            for f in report.failures() {
                eprintln!("FAIL {}: {}", f.name, f.detail);
            }
            Ok(code(report.verdict()))
        }
        Command::Experiment { config } => {
            let text = std::fs::read_to_string(config).map_err(|e| Failure(USAGE, format!("{}: {e}", config.display())))?;
            let mut cfg = ExperimentConfig::parse(&text).map_err(|e| Failure(USAGE, e.to_string()))?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            if let Some(r) = cli.reps {
                cfg.reps = r;
                cfg.conditional_reps = r;
            }
            if cli.threads.is_some() {
                cfg.threads = cli.threads;
            }
            if let Some(d) = cli.dict_size {
                cfg.dict_size = d;
            }
            if cli.out.is_some() {
                cfg.out = cli.out.clone();
            }
            cfg.validate().map_err(|e| Failure(USAGE, e.to_string()))?;
            let report = mc_discrepancy(&cfg)?;
            let json = pretty(&report.to_json());
            match &cfg.out {
                Some(prefix) => {
                    let with = |ext: &str| {
                        let mut p = prefix.clone().into_os_string();
                        p.push(ext);
                        PathBuf::from(p)
                    };
                    emit(&Some(with(".json")), &json)?;
                    emit(&Some(with(".members.csv")), &report.members_csv())?;
                    emit(&Some(with(".trace.csv")), &report.trace_csv())?;
                    emit(&Some(with(".plot.csv")), &report.plot_csv())?;
                }
                None => emit(&None, &if cli.format == Format::Csv { report.members_csv() } else { json })?,
            }
            Ok(code(report.verdict()))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { USAGE } else { PASS });
        }
    };
    match run(cli) {
        Ok(c) => ExitCode::from(c),
        Err(Failure(c, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(c)
        }
    }
}
