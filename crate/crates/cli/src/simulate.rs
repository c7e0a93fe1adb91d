use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::ValueEnum;

use tls13_core::codec::{CipherSuite, NamedGroup, SignatureScheme};
use tls13_core::engine::ClientAuthPolicy;
use tls13_core::harness::{
    run_scenario, KeyUpdateOption, Outcome, PskOption, ScenarioOptions, TicketStoreFile,
};

use crate::write_output;

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PskArg {
    None,
    Ke,
    Dhe,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AuthArg {
    Off,
    Request,
    Require,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KeyUpdateArg {
    #[value(name = "c")]
    Client,
    #[value(name = "s")]
    Server,
    Both,
}

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Cipher suites in preference order (names or hex codes like 1301).
    #[arg(long, value_delimiter = ',', default_value = "TLS_AES_128_GCM_SHA256")]
    suites: Vec<String>,
    /// Key exchange groups in preference order.
    #[arg(long, value_delimiter = ',', default_value = "x25519")]
    groups: Vec<String>,
    /// Signature scheme of both credentials.
    #[arg(long, default_value = "ed25519")]
    signature: String,
    #[arg(long, value_enum, default_value = "none")]
    psk_mode: PskArg,
    #[arg(long, value_enum, default_value = "off")]
    client_auth: AuthArg,
    /// Send no key share so the server must ask for one.
    #[arg(long)]
    force_hrr: bool,
    /// Session tickets the server issues after the handshake.
    #[arg(long, default_value_t = 0)]
    tickets: usize,
    #[arg(long, value_enum)]
    key_update: Option<KeyUpdateArg>,
    /// Open a second connection that resumes with the first ticket.
    #[arg(long)]
    resume: bool,
    #[arg(long)]
    post_hs_auth: bool,
    #[arg(long, default_value_t = 4096)]
    echo_bytes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// NSS key log output.
    #[arg(long)]
    keylog: Option<PathBuf>,
    /// Report output; stdout when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Offer the tickets stored in this file on the first connection.
    #[arg(long)]
    load_tickets: Option<PathBuf>,
    /// Save every ticket received to this file.
    #[arg(long)]
    save_tickets: Option<PathBuf>,
}

fn parse_suite(s: &str) -> anyhow::Result<CipherSuite> {
    if let Some(c) = CipherSuite::from_name(s) {
        return Ok(c);
    }
    let code = u16::from_str_radix(s.trim_start_matches("0x"), 16)
        .map_err(|_| anyhow!("unknown cipher suite {s}"))?;
    Ok(CipherSuite(code))
}

impl Args {
    fn options(&self) -> anyhow::Result<ScenarioOptions> {
        let defaults = ScenarioOptions::default();
        let stored_tickets = match &self.load_tickets {
            Some(p) => TicketStoreFile::load(p, defaults.start_ms)
                .with_context(|| format!("loading {}", p.display()))?
                .tickets,
            None => Vec::new(),
        };
        Ok(ScenarioOptions {
            suites: self.suites.iter().map(|s| parse_suite(s)).collect::<Result<_, _>>()?,
            groups: self
                .groups
                .iter()
                .map(|g| NamedGroup::from_name(g).ok_or_else(|| anyhow!("unknown group {g}")))
                .collect::<Result<_, _>>()?,
            signature_scheme: SignatureScheme::from_name(&self.signature)
                .ok_or_else(|| anyhow!("unknown signature scheme {}", self.signature))?,
            psk_mode: match self.psk_mode {
                PskArg::None => PskOption::None,
                PskArg::Ke => PskOption::Ke,
                PskArg::Dhe => PskOption::Dhe,
            },
            client_auth: match self.client_auth {
                AuthArg::Off => ClientAuthPolicy::Off,
                AuthArg::Request => ClientAuthPolicy::Request,
                AuthArg::Require => ClientAuthPolicy::Require,
            },
            force_hrr: self.force_hrr,
            tickets: self.tickets,
            key_update: self.key_update.map(|k| match k {
                KeyUpdateArg::Client => KeyUpdateOption::Client,
                KeyUpdateArg::Server => KeyUpdateOption::Server,
                KeyUpdateArg::Both => KeyUpdateOption::Both,
            }),
            resume: self.resume,
            post_handshake_auth: self.post_hs_auth,
            echo_bytes: self.echo_bytes,
            seed: self.seed,
            stored_tickets,
            ..defaults
        })
    }
}

pub fn run(args: Args) -> anyhow::Result<ExitCode> {
    let opts = args.options()?;
    if opts.suites.is_empty() || opts.groups.is_empty() {
        bail!("at least one suite and one group are needed");
    }
    let run = run_scenario(&opts)?;
    write_output(args.report.as_ref(), &run.report.render())?;
    if let Some(p) = &args.keylog {
        std::fs::write(p, run.keylog.render()).with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some(p) = &args.save_tickets {
        TicketStoreFile::new(run.tickets.clone()).save(p)?;
    }
    match run.outcome {
        Outcome::Aborted { side, alert, reason } => {
            eprintln!("aborted: {alert} ({side}: {reason})");
            Ok(ExitCode::from(1))
        }
        Outcome::Pending => {
            eprintln!("aborted: handshake did not finish");
            Ok(ExitCode::from(1))
        }
        Outcome::Completed => Ok(ExitCode::SUCCESS),
    }
}
