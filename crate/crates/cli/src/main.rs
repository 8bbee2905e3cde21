//! Batch front end for polar lattice wiretap experiments.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use config::Overrides;

#[derive(Parser, Debug)]
#[command(name = "polar-lattice", version, about = "Polar lattices for the mod-lattice Gaussian wiretap channel")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Differential entropy of the aliased noise on every lattice of the chain.
    Entropy,
    /// Partition channel capacities for both receivers.
    Capacity,
    /// Infinite-length secrecy rate table.
    Rates,
    /// Build a secrecy code and write it as JSON.
    Construct,
    /// Monte-Carlo frame error rates for the legitimate receiver.
    Simulate {
        /// Code to simulate; built from the configuration when absent.
        #[arg(long, value_name = "PATH")]
        spec: Option<PathBuf>,
        /// Noise deviation of the simulated channel (defaults to sigma-b).
        #[arg(long)]
        channel_sigma: Option<f64>,
    },
    /// Compare polarized partition and equivalent channels.
    Equivalence,
    /// Leakage bound scaling and exact leakage of tiny codes.
    Leakage {
        /// Block length exponents of the scaling table.
        #[arg(long, value_delimiter = ',')]
        n_exps: Vec<u32>,
    },
    /// Run the invariant suite.
    Verify,
}

/// Failure reported to the user as a JSON record.
#[derive(Debug)]
pub struct CliError {
    kind: String,
    message: String,
}

impl CliError {
    pub fn new(kind: &str, message: impl Into<String>) -> Self {
        Self { kind: kind.to_owned(), message: message.into() }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::new("io", format!("{}: {e}", path.display()))
    }

    fn record(&self) -> String {
        json!({ "error": { "kind": self.kind, "message": self.message } }).to_string()
    }
}

impl From<polar_lattice::Error> for CliError {
    fn from(e: polar_lattice::Error) -> Self {
        Self::new(e.kind(), e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version.
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", CliError::new("usage", e.render().to_string().trim()).record());
            return ExitCode::from(2);
        }
    };
    match commands::run(&cli.command, &cli.overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.record());
            ExitCode::FAILURE
        }
    }
}
