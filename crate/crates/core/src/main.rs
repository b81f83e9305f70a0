use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use varipath::config::{list_catalog, run_config_file};

/// Config-driven numerical experiments on variational problems: solves,
/// multistart uniqueness checks, path-convexity batteries, inequality
/// oracles, and decay fits, each emitting a deterministic report.
#[derive(Parser)]
#[command(name = "varipath", version, disable_version_flag = true)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one experiment config (JSON) and write report.json plus CSVs.
    Run { config: PathBuf },
    /// Print the vocabulary catalog: families, generators, oracles, grids.
    List,
    /// Print the version.
    Version,
}

/// Exit codes: 0 all checks passed, 2 the run finished but a check failed,
/// 1 usage, config, or runtime errors.
fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(msg) = init_threads() {
        eprintln!("varipath: {msg}");
        return ExitCode::from(1);
    }
    match cli.cmd {
        Cmd::Run { config } => match run_config_file(&config) {
            Ok(true) => ExitCode::SUCCESS,
            Ok(false) => ExitCode::from(2),
            Err(e) => {
                eprintln!("varipath: {e}");
                ExitCode::from(1)
            }
        },
        Cmd::List => {
            print!("{}", list_catalog());
            ExitCode::SUCCESS
        }
        Cmd::Version => {
            println!("{}", env!("CARGO_PKG_VERSION"));
            ExitCode::SUCCESS
        }
    }
}

/// VARIPATH_THREADS caps the worker pool; 0 or unset leaves the automatic
/// sizing. Reports are byte-identical either way; this only bounds CPU use.
fn init_threads() -> Result<(), String> {
    let Some(raw) = std::env::var_os("VARIPATH_THREADS") else {
        return Ok(());
    };
    let text = raw.to_string_lossy();
    let n: usize = text
        .trim()
        .parse()
        .map_err(|_| format!("VARIPATH_THREADS must be a non-negative integer, got '{text}'"))?;
    if n == 0 {
        return Ok(());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| format!("thread pool: {e}"))
}
