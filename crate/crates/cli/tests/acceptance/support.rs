use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use tls13_core::codec::{HandshakeMessage, HandshakeType};
use tls13_core::crypto::{default_provider, CryptoProvider, HashAlg};
use tls13_core::engine::{ClientConfig, MessageInterceptor, ServerConfig};
use tls13_core::harness::{scenario_configs, FnInterceptor, Loopback, ScenarioOptions, SideLog};
use tls13_core::hkdf::Hkdf;

pub type Verdict = Result<String, String>;

/// `ensure!(cond, "fmt", args)` returns `Err` from the enclosing criterion.
macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}
pub(crate) use ensure;

/// Converts any displayable error into a criterion failure.
pub trait Context<T> {
    fn ctx(self, what: &str) -> Result<T, String>;
}

impl<T, E: std::fmt::Display> Context<T> for Result<T, E> {
    fn ctx(self, what: &str) -> Result<T, String> {
        self.map_err(|e| format!("{what}: {e}"))
    }
}

impl<T> Context<T> for Option<T> {
    fn ctx(self, what: &str) -> Result<T, String> {
        self.ok_or_else(|| format!("{what}: missing"))
    }
}

pub fn provider() -> Arc<dyn CryptoProvider> {
    default_provider()
}

/// Oracle vector files shared with the core crate.
pub fn vector_lines(name: &str) -> Vec<Vec<String>> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/data")
        .join(name);
    std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| l.split_whitespace().map(str::to_owned).collect())
        .collect()
}

pub fn unhex(s: &str) -> Vec<u8> {
    if s == "-" {
        Vec::new()
    } else {
        hex::decode(s).unwrap_or_else(|e| panic!("bad hex {s}: {e}"))
    }
}

pub fn hash_alg(name: &str) -> HashAlg {
    HashAlg::from_name(name).unwrap_or_else(|| panic!("unknown hash {name}"))
}

pub fn chain_vectors(alg: HashAlg) -> Vec<(String, Vec<u8>)> {
    vector_lines(&format!("key_schedule_{}.txt", alg.name()))
        .into_iter()
        .map(|f| (f[0].clone(), unhex(&f[1])))
        .collect()
}

/// Default scenario configs: AES-128-GCM-SHA256, x25519, Ed25519.
pub fn pair() -> (ClientConfig, ServerConfig) {
    pair_with(|_| {})
}

pub fn pair_with(f: impl FnOnce(&mut ScenarioOptions)) -> (ClientConfig, ServerConfig) {
    let mut opts = ScenarioOptions::default();
    f(&mut opts);
    scenario_configs(&opts, 1, Vec::new()).expect("scenario configs")
}

/// Replaces the `n`th outbound handshake message (counting from zero)
/// with whatever `f` returns.
pub fn replace_nth(
    n: usize,
    f: impl Fn(HandshakeMessage) -> Vec<HandshakeMessage> + Send + Sync + 'static,
) -> Arc<dyn MessageInterceptor> {
    let seen = AtomicUsize::new(0);
    FnInterceptor::new(move |msg| {
        if seen.fetch_add(1, Ordering::SeqCst) == n {
            f(msg)
        } else {
            vec![msg]
        }
    })
}

/// Rewrites every outbound message of one type.
pub fn rewrite_type(
    t: HandshakeType,
    f: impl Fn(HandshakeMessage) -> HandshakeMessage + Send + Sync + 'static,
) -> Arc<dyn MessageInterceptor> {
    FnInterceptor::new(move |msg| {
        if msg.handshake_type() == t {
            vec![f(msg)]
        } else {
            vec![msg]
        }
    })
}

/// Secrets both engines logged, keyed by NSS label.
pub fn secrets(lb: &Loopback) -> BTreeMap<String, Vec<u8>> {
    lb.client_log
        .secrets
        .iter()
        .chain(&lb.server_log.secrets)
        .map(|e| (e.label.clone(), e.secret.clone()))
        .collect()
}

/// Encodings of the handshake messages one side saw, in order.
pub fn encodings(log: &SideLog) -> Vec<Vec<u8>> {
    log.messages.iter().map(|m| m.encoding.clone()).collect()
}

pub fn hash(alg: HashAlg, parts: &[Vec<u8>]) -> Vec<u8> {
    provider().hash(alg, &parts.concat())
}

pub fn finished_mac(alg: HashAlg, base_secret: &[u8], transcript_hash: &[u8]) -> Vec<u8> {
    let p = provider();
    let key = Hkdf::new(p.as_ref(), alg)
        .expand_label(base_secret, "finished", &[], alg.output_len())
        .expect("finished key");
    p.hmac(alg, key.as_bytes(), transcript_hash)
}

pub fn echo_payload(len: usize) -> Vec<u8> {
    (0..len).map(|i| (i * 7 + i / 251) as u8).collect()
}
