use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qdlab::acceptance::{acceptance_suite, Tolerances};
use qdlab::harness::{list_experiments, run, Experiment};
use qdlab::Error;

#[derive(Parser)]
#[command(name = "qdlab", version, about = "Experiments on quasiperiodic and skew-shift Schrödinger operators")]
struct Cli {
    /// Worker threads for the parallel kernels (default: all cores).
    #[arg(long, global = true, env = "QDLAB_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a JSON config.
    Run {
        config: PathBuf,
        /// CSV path; overrides `output` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the acceptance suite and print the pass/fail table.
    Accept {
        /// Criteria to run (default: all).
        #[arg(long, value_delimiter = ',')]
        only: Vec<u8>,
        /// JSON file overriding individual tolerances.
        #[arg(long)]
        tolerances: Option<PathBuf>,
        /// Directory for the CSV and JSON artifacts.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List experiment kinds and the metrics they report.
    ListExperiments,
}

const EXIT_FAIL: u8 = 1;
const EXIT_CONFIG: u8 = 2;

fn config_error(e: &Error) -> ExitCode {
    eprintln!("qdlab: {e}");
    ExitCode::from(EXIT_CONFIG)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("qdlab: worker count must be at least 1");
            return ExitCode::from(EXIT_CONFIG);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("qdlab: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    match cli.command {
        Command::ListExperiments => {
            print!("{}", list_experiments());
            ExitCode::SUCCESS
        }
        Command::Run { config, out } => {
            let mut exp = match Experiment::from_path(&config) {
                Ok(e) => e,
                Err(e) => return config_error(&e),
            };
            if out.is_some() {
                exp.output = out;
            }
            let rec = match run(&exp) {
                Ok(r) => r,
                Err(e @ Error::Config { .. }) => return config_error(&e),
                Err(e) => {
                    eprintln!("qdlab: {e}");
                    return ExitCode::from(EXIT_FAIL);
                }
            };
            if exp.output.is_none() {
                print!("{}", rec.to_csv());
            }
            eprintln!(
                "{} {} digest {} in {:.2} s",
                rec.name,
                if rec.passed { "PASS" } else { "FAIL" },
                &rec.digest[..16],
                rec.wall_time_s
            );
            for f in &rec.failures {
                eprintln!("  {f}");
            }
            if rec.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_FAIL)
            }
        }
        Command::Accept { only, tolerances, out } => {
            let tol = match tolerances {
                None => Tolerances::default(),
                Some(p) => match std::fs::read_to_string(&p)
                    .map_err(Error::from)
                    .and_then(|s| serde_json::from_str::<Tolerances>(&s).map_err(|e| Error::Config { path: "tolerances".into(), message: e.to_string() }))
                {
                    Ok(t) => t,
                    Err(e) => return config_error(&e),
                },
            };
            let report = acceptance_suite(&tol, &only, out.as_deref());
            print!("{}", report.table());
            if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_FAIL)
            }
        }
    }
}
