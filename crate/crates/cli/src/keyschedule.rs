use std::path::PathBuf;

use anyhow::{bail, Context};

use tls13_core::crypto::{default_provider, AeadAlg, HashAlg};
use tls13_core::key_schedule::secret_table;

use crate::HashArg;

/// Messages used when no transcript file is given. They match the ones the
/// reference vectors were generated from.
const STAND_IN: [&[u8]; 7] = [
    b"client hello",
    b"server hello",
    b"encrypted extensions",
    b"certificate",
    b"certificate verify",
    b"server finished",
    b"client finished",
];

#[derive(Debug, clap::Args)]
pub struct Args {
    #[arg(long, value_enum, default_value = "sha256")]
    hash: HashArg,
    /// Pre-shared key, hex. Absent means Hash.length zero bytes.
    #[arg(long)]
    psk: Option<String>,
    /// (EC)DHE shared secret, hex.
    #[arg(long, default_value = "0000000000000000000000000000000000000000000000000000000000000000")]
    ecdhe: String,
    /// Seven hex-encoded messages, one per line (ClientHello .. client Finished).
    #[arg(long)]
    transcript: Option<PathBuf>,
    /// Ticket nonce for the resumption PSK, hex.
    #[arg(long, default_value = "00")]
    nonce: String,
}

fn messages(path: Option<&PathBuf>) -> anyhow::Result<[Vec<u8>; 7]> {
    let Some(path) = path else {
        return Ok(STAND_IN.map(|m| m.to_vec()));
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let lines: Vec<Vec<u8>> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(hex::decode)
        .collect::<Result<_, _>>()
        .context("transcript lines must be hex")?;
    match <[Vec<u8>; 7]>::try_from(lines) {
        Ok(m) => Ok(m),
        Err(l) => bail!("transcript needs 7 messages, found {}", l.len()),
    }
}

pub fn run(args: Args) -> anyhow::Result<()> {
    let hash = args.hash.alg();
    let aead = match hash {
        HashAlg::Sha256 => AeadAlg::Aes128Gcm,
        HashAlg::Sha384 => AeadAlg::Aes256Gcm,
    };
    let psk = args.psk.as_deref().map(hex::decode).transpose().context("--psk")?;
    let ecdhe = hex::decode(&args.ecdhe).context("--ecdhe")?;
    let nonce = hex::decode(&args.nonce).context("--nonce")?;
    let msgs = messages(args.transcript.as_ref())?;
    let table = secret_table(
        default_provider(),
        hash,
        &aead.descriptor(),
        psk.as_deref(),
        Some(ecdhe.as_slice()),
        &msgs,
        &nonce,
    )?;
    let width = table.iter().map(|(n, _)| n.len()).max().unwrap_or(0);
    for (name, value) in table {
        println!("{name:width$} {}", hex::encode(value));
    }
    Ok(())
}
