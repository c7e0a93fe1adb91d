use std::path::PathBuf;

use anyhow::{bail, Context};

use tls13_core::codec::{decode_handshake, Alert};
use tls13_core::crypto::{default_provider, AeadAlg, CryptoProvider, HashAlg};
use tls13_core::hkdf::Secret;
use tls13_core::key_schedule::{traffic_keys, Purpose, TrafficSecret};
use tls13_core::record::{ContentType, DirectionState, Record, RecordReader};

#[derive(Debug, clap::Args)]
#[command(group(clap::ArgGroup::new("input").required(true).args(["hex", "file"])))]
pub struct Args {
    /// Records as one hex string.
    #[arg(long)]
    hex: Option<String>,
    /// File holding raw record bytes, or hex text when it decodes as such.
    #[arg(long)]
    file: Option<PathBuf>,
    /// NSS key log used to try decrypting protected records.
    #[arg(long)]
    keys: Option<PathBuf>,
}

/// A traffic secret from the key log, tried against each protected record.
struct Candidate {
    label: String,
    state: DirectionState,
}

fn candidates(keylog: &str) -> anyhow::Result<Vec<Candidate>> {
    let mut out = Vec::new();
    for (n, line) in keylog.lines().enumerate() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() || f[0].starts_with('#') {
            continue;
        }
        if f.len() != 3 {
            bail!("key log line {}: expected 3 fields", n + 1);
        }
        if !f[0].contains("TRAFFIC_SECRET") {
            continue;
        }
        let secret = hex::decode(f[2]).with_context(|| format!("key log line {}", n + 1))?;
        let (hash, aeads): (HashAlg, &[AeadAlg]) = match secret.len() {
            32 => (HashAlg::Sha256, &[AeadAlg::Aes128Gcm, AeadAlg::ChaCha20Poly1305]),
            48 => (HashAlg::Sha384, &[AeadAlg::Aes256Gcm]),
            _ => continue,
        };
        let ts = TrafficSecret {
            sender: None,
            purpose: Purpose::Application,
            generation: 0,
            hash,
            secret: Secret::new(secret),
        };
        for alg in aeads {
            let aead = alg.descriptor();
            let keys = traffic_keys(default_provider().as_ref(), &ts, &aead)?;
            out.push(Candidate {
                label: format!("{} {alg:?}", f[0]),
                state: DirectionState::new(aead, keys),
            });
        }
    }
    Ok(out)
}

fn describe(content_type: ContentType, body: &[u8]) -> Vec<String> {
    match content_type {
        ContentType::HANDSHAKE => {
            let mut lines = Vec::new();
            let mut rest = body;
            while !rest.is_empty() {
                match decode_handshake(rest) {
                    Ok((msg, used)) => {
                        lines.push(format!("{} ({} bytes)", msg.label(), used));
                        rest = &rest[used..];
                    }
                    Err(e) => {
                        lines.push(format!("undecodable handshake data: {e}"));
                        break;
                    }
                }
            }
            lines
        }
        ContentType::ALERT => vec![match Alert::decode(body) {
            Ok(a) => format!("alert {a} (level {})", a.level.to_u8()),
            Err(e) => format!("malformed alert: {e}"),
        }],
        ContentType::CHANGE_CIPHER_SPEC => vec!["change_cipher_spec".into()],
        ContentType::APPLICATION_DATA => vec![format!("{} bytes of application data", body.len())],
        t => vec![format!("unknown content type {}", t.0)],
    }
}

fn input(args: &Args) -> anyhow::Result<Vec<u8>> {
    if let Some(h) = &args.hex {
        let clean: String = h.split_whitespace().collect();
        return hex::decode(clean).context("--hex");
    }
    let path = args.file.as_ref().expect("clap enforces one input");
    let raw = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let text: String = String::from_utf8_lossy(&raw).split_whitespace().collect();
    Ok(hex::decode(&text).unwrap_or(raw))
}

pub fn run(args: Args) -> anyhow::Result<()> {
    let bytes = input(&args)?;
    let mut keys = match &args.keys {
        Some(p) => candidates(
            &std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        )?,
        None => Vec::new(),
    };
    let provider = default_provider();
    let mut reader = RecordReader::new();
    reader.push(&bytes);
    let mut n = 0;
    while let Some(record) = reader.next_record()? {
        println!(
            "record {n}: {} version 0x{:04x} length {}",
            record.content_type,
            record.version,
            record.payload.len()
        );
        let lines = if record.content_type == ContentType::APPLICATION_DATA && !keys.is_empty() {
            open(provider.as_ref(), &mut keys, &record)
        } else {
            describe(record.content_type, &record.payload)
        };
        for l in lines {
            println!("  {l}");
        }
        n += 1;
    }
    if reader.buffered() > 0 {
        println!("{} trailing bytes do not form a complete record", reader.buffered());
    }
    Ok(())
}

/// Trial decryption: the first key that authenticates the record wins and
/// advances its sequence number.
fn open(provider: &dyn CryptoProvider, keys: &mut [Candidate], record: &Record) -> Vec<String> {
    for k in keys.iter_mut() {
        let mut trial = k.state.clone();
        if let Ok((body, inner)) = trial.unprotect(provider, record) {
            let seq = k.state.sequence();
            k.state = trial;
            let mut lines = vec![format!("decrypted with {} seq {seq}: {inner}", k.label)];
            lines.extend(describe(inner, &body));
            return lines;
        }
    }
    vec!["protected; no key in the log opens it".into()]
}
