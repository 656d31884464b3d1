use std::io::{ErrorKind, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dlc_core::scenario::{self, ScenarioConfig, ScenarioError, EXIT_OK, EXIT_VERIFY};

/// Direct load control over a permissioned ledger: simulate, benchmark,
/// audit and verify.
#[derive(Debug, Parser)]
#[command(name = "dlc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario and write its chain, report, trace and keys.
    Run {
        config: PathBuf,
        /// Print the JSON report instead of the summary.
        #[arg(long)]
        json: bool,
    },
    /// Time hash-authenticated reports against signed ones.
    Bench {
        config: PathBuf,
        /// Override the iteration count from the config.
        #[arg(long)]
        iterations: Option<u64>,
        #[arg(long)]
        json: bool,
    },
    /// List every access to a participant's site found on a chain.
    Audit { chain: PathBuf, keys: PathBuf },
    /// Replay a chain file and report the first violation.
    VerifyChain { chain: PathBuf },
}

/// Writes to stdout. A closed pipe is not an error; other failures are.
fn emit(text: &str) -> Result<(), ScenarioError> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != ErrorKind::BrokenPipe => Err(ScenarioError::Write {
            path: "<stdout>".into(),
            source: e,
        }),
        _ => Ok(()),
    }
}

fn json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("reports serialise") + "\n"
}

fn execute(cli: Cli) -> Result<i32, ScenarioError> {
    match cli.command {
        Command::Run { config, json } => {
            let config = ScenarioConfig::load(&config)?;
            let (sim, written) = scenario::run(&config)?;
            if json {
                emit(&sim.report.to_json())?;
            } else {
                let mut text = format!("{}\n", sim.report.summary());
                for path in written
                    .chain
                    .iter()
                    .chain(&written.report)
                    .chain(&written.trace)
                {
                    text += &format!("wrote {}\n", path.display());
                }
                if !written.keys.is_empty() {
                    text += &format!("wrote {} key files\n", written.keys.len());
                }
                emit(&text)?;
            }
            Ok(EXIT_OK)
        }
        Command::Bench {
            config,
            iterations,
            json,
        } => {
            let config = ScenarioConfig::load(&config)?;
            let n = iterations.unwrap_or(config.bench.iterations);
            let report = scenario::bench(n, config.bench.warmup, config.seed);
            emit(&if json {
                self::json(&report)
            } else {
                report.table()
            })?;
            Ok(EXIT_OK)
        }
        Command::Audit { chain, keys } => {
            let report = scenario::audit_files(&chain, &keys)?;
            emit(&json(&report))?;
            Ok(EXIT_OK)
        }
        Command::VerifyChain { chain } => {
            let check = scenario::verify_chain_file(&chain)?;
            emit(&json(&check))?;
            Ok(if check.valid { EXIT_OK } else { EXIT_VERIFY })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
