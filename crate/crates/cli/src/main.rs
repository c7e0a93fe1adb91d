//! `tls13`: drive the loopback harness, print key schedules, decode records.

mod decode;
mod keyschedule;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "tls13", version, about = "Sans-IO TLS 1.3 engine driver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a client and a server against each other in memory.
    Simulate(simulate::Args),
    /// Print every secret of a full handshake for a given transcript.
    Keyschedule(keyschedule::Args),
    /// Decode a stream of records, decrypting with a key log if given.
    Decode(decode::Args),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HashArg {
    Sha256,
    Sha384,
}

impl HashArg {
    pub fn alg(self) -> tls13_core::crypto::HashAlg {
        match self {
            HashArg::Sha256 => tls13_core::crypto::HashAlg::Sha256,
            HashArg::Sha384 => tls13_core::crypto::HashAlg::Sha384,
        }
    }
}

/// Writes to `path`, or stdout when `path` is absent or `-`.
pub fn write_output(path: Option<&PathBuf>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) if p.as_os_str() != "-" => std::fs::write(p, text)
            .map_err(|e| anyhow::anyhow!("writing {}: {e}", p.display())),
        _ => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate::run(a),
        Command::Keyschedule(a) => keyschedule::run(a).map(|()| ExitCode::SUCCESS),
        Command::Decode(a) => decode::run(a).map(|()| ExitCode::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
