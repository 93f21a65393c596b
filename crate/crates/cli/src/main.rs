use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use abyss_core::par::Execution;
use abyss_core::replay::verify_file;
use abyss_core::report::Report;
use abyss_core::scenario::{Scenario, ScenarioRun};
use abyss_core::sensing::{bench_sensing_with, BenchConfig};
use abyss_core::Error;
use abyss_service::{port_from_env, schemas, serve, AppState};
use clap::{Parser, Subcommand, ValueEnum};

const EXIT_FAIL: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "abyss", version, about = "AUV fleet survey simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario headless and write its log, hash and report.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Stop at this simulated time instead of the scenario duration.
        #[arg(long)]
        until: Option<f64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Verify a recorded log and recompute its report.
    Replay {
        #[arg(long)]
        log: PathBuf,
        /// Print the recomputed report as JSON.
        #[arg(long)]
        report: bool,
    },
    /// Cross-validate the classifiers and print the accuracy table.
    BenchSensing {
        /// A bench config, or a scenario with `sensing.bench`.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        json: bool,
        #[arg(long)]
        sequential: bool,
    },
    /// Serve the mission-control API.
    Serve {
        /// Defaults to ABYSS_PORT, then 8080.
        #[arg(long)]
        port: Option<u16>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Write finished missions' logs here.
        #[arg(long)]
        log_dir: Option<PathBuf>,
    },
    /// Print a published JSON schema.
    Schema {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(schemas::NAMES))]
        name: String,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn invalid(e: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_INVALID,
            message: e.to_string(),
        }
    }

    fn runtime(e: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_RUNTIME,
            message: e.to_string(),
        }
    }
}

/// Errors while building the run mean the scenario is unusable.
fn setup_failure(e: Error) -> Failure {
    match e {
        Error::Handler { .. } | Error::Schedule { .. } => Failure::runtime(e),
        _ => Failure::invalid(e),
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::invalid(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    std::fs::write(path, contents).map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display())))
}

fn run(scenario: &Path, seed: Option<u64>, until: Option<f64>, out: &Path, format: Format) -> Result<(), Failure> {
    let s = Scenario::from_json(&read(scenario)?).map_err(Failure::invalid)?;
    if let Some(t) = until {
        if !(t >= 0.0) {
            return Err(Failure::invalid(format!("--until must be >= 0, got {t}")));
        }
    }
    let mut r = ScenarioRun::new(&s, seed).map_err(setup_failure)?;
    r.advance_to(until.unwrap_or(s.duration)).map_err(Failure::runtime)?;
    let log = r.finish();
    let ndjson = log.to_ndjson();
    let report = Report::from_ndjson(&ndjson).map_err(Failure::runtime)?;

    std::fs::create_dir_all(out).map_err(|e| Failure::runtime(format!("cannot create {}: {e}", out.display())))?;
    write(&out.join("events.ndjson"), &ndjson)?;
    write(&out.join("events.sha256"), &format!("{}\n", report.log_hash))?;
    match format {
        Format::Json => {
            let text = serde_json::to_string_pretty(&report).map_err(Failure::runtime)?;
            write(&out.join("report.json"), &(text + "\n"))?;
        }
        Format::Csv => {
            let mut w = csv::Writer::from_path(out.join("report.csv")).map_err(Failure::runtime)?;
            w.write_record(["metric", "value"]).map_err(Failure::runtime)?;
            for (k, v) in report.csv_rows() {
                w.write_record([k, v]).map_err(Failure::runtime)?;
            }
            w.flush().map_err(Failure::runtime)?;
        }
    }
    println!("{} events, sha256 {}", report.event_count, report.log_hash);
    Ok(())
}

fn replay(log: &Path, show_report: bool) -> Result<(), Failure> {
    let v = verify_file(log).map_err(|e| Failure::invalid(format!("cannot read {}: {e}", log.display())))?;
    println!("{}", v.summary());
    for f in v.failures.iter().skip(1) {
        println!("  {f}");
    }
    if show_report {
        if let Some(r) = &v.report {
            println!("{}", serde_json::to_string_pretty(r).map_err(Failure::runtime)?);
        }
    }
    if v.passed() {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_FAIL,
            message: String::new(),
        })
    }
}

fn load_bench(path: &Path) -> Result<BenchConfig, Failure> {
    let text = read(path)?;
    if let Ok(cfg) = serde_json::from_str::<BenchConfig>(&text) {
        return Ok(cfg);
    }
    let s = Scenario::from_json(&text).map_err(|e| Failure::invalid(format!("neither a bench config nor a scenario: {e}")))?;
    s.sensing
        .bench
        .ok_or_else(|| Failure::invalid("scenario has no sensing.bench section"))
}

fn bench(config: &Path, json: bool, sequential: bool) -> Result<(), Failure> {
    let cfg = load_bench(config)?;
    let mode = if sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let table = bench_sensing_with(&cfg, mode).map_err(setup_failure)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&table).map_err(Failure::runtime)?);
    } else {
        print!("{}", table.render());
    }
    Ok(())
}

fn serve_cmd(host: &str, port: Option<u16>, log_dir: Option<PathBuf>) -> Result<(), Failure> {
    let port = port.unwrap_or_else(port_from_env);
    let addr: SocketAddr = format!("{host}:{port}")
        .parse()
        .map_err(|e| Failure::invalid(format!("bad address {host}:{port}: {e}")))?;
    let rt = tokio::runtime::Runtime::new().map_err(Failure::runtime)?;
    eprintln!("listening on http://{addr}/v1");
    rt.block_on(serve(addr, AppState::new(log_dir))).map_err(Failure::runtime)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            scenario,
            seed,
            until,
            out,
            format,
        } => run(&scenario, seed, until, &out, format),
        Command::Replay { log, report } => replay(&log, report),
        Command::BenchSensing {
            config,
            json,
            sequential,
        } => bench(&config, json, sequential),
        Command::Serve { port, host, log_dir } => serve_cmd(&host, port, log_dir),
        Command::Schema { name } => {
            let s = schemas::schema(&name).expect("name checked by clap");
            println!("{}", serde_json::to_string_pretty(&s).expect("schemas serialize"));
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if !f.message.is_empty() {
                eprintln!("abyss: {}", f.message);
            }
            ExitCode::from(f.code)
        }
    }
}
