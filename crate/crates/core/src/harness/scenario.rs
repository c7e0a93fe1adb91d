use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::keylog::KeyLog;
use super::loopback::{Loopback, Outcome};
use super::pipe::Fault;
use super::HarnessError;
use crate::codec::{
    CipherSuite, HandshakeType, NamedGroup, PskKeyExchangeMode, SignatureScheme,
};
use crate::crypto::{default_provider, suite_params, CryptoProvider, SigningKey};
use crate::engine::{
    checkpoint, ClientAuthPolicy, ClientConfig, Clock, MockClock, PreSharedKey,
    RawPublicKeyVerifier, ServerConfig,
};
use crate::hkdf::Secret;
use crate::transcript::synthetic_message;

/// Post-handshake step run by [`run_loopback`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    /// Client sends this many bytes and the server echoes them back.
    Echo(usize),
    ClientKeyUpdate { request_peer: bool },
    ServerKeyUpdate { request_peer: bool },
    IssueTickets(usize),
    PostHandshakeAuth,
    CloseClient,
    CloseServer,
}

/// Ordered `key: value` lines describing one run.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct ScenarioReport {
    lines: Vec<(String, String)>,
}

impl ScenarioReport {
    pub fn push(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.lines.push((key.into(), value.into()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.lines
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn lines(&self) -> &[(String, String)] {
        &self.lines
    }

    pub fn append_prefixed(&mut self, prefix: &str, other: &ScenarioReport) {
        for (k, v) in &other.lines {
            self.push(format!("{prefix}{k}"), v.clone());
        }
    }

    pub fn render(&self) -> String {
        self.lines
            .iter()
            .map(|(k, v)| format!("{k}: {v}\n"))
            .collect()
    }
}

/// A finished loopback run: the report plus the engines for inspection.
#[derive(Debug)]
pub struct LoopbackRun {
    pub report: ScenarioReport,
    pub loopback: Loopback,
    pub outcome: Outcome,
}

impl LoopbackRun {
    pub fn keylog(&self) -> KeyLog {
        let mut log = KeyLog::new();
        log.extend(&self.loopback.client_log.secrets);
        log.extend(&self.loopback.server_log.secrets);
        log
    }
}

/// Drives a handshake to completion or failure, then runs `actions` for as
/// long as the connection stays up.
pub fn run_loopback(
    client: ClientConfig,
    server: ServerConfig,
    faults: Vec<Fault>,
    actions: &[Action],
) -> Result<LoopbackRun, HarnessError> {
    let provider = client.provider.clone();
    let mut lb = Loopback::new(client, server, faults)?;
    let mut outcome = lb.handshake()?;
    let mut notes = Vec::new();
    if outcome == Outcome::Completed {
        for (i, a) in actions.iter().enumerate() {
            let note = run_action(&mut lb, a)?;
            notes.push((format!("action.{i}"), note));
            outcome = lb.outcome();
            if !matches!(outcome, Outcome::Completed) {
                break;
            }
        }
    }
    let report = build_report(provider.as_ref(), &lb, &outcome, notes);
    Ok(LoopbackRun {
        report,
        loopback: lb,
        outcome,
    })
}

fn echo_payload(len: usize) -> Vec<u8> {
    (0..len).map(|i| (i.wrapping_mul(31) + 7) as u8).collect()
}

fn run_action(lb: &mut Loopback, action: &Action) -> Result<String, HarnessError> {
    let note = match action {
        Action::Echo(n) => {
            let data = echo_payload(*n);
            let back = lb.echo(&data)?;
            format!("echo {n} {}", if back == data { "ok" } else { "mismatch" })
        }
        Action::ClientKeyUpdate { request_peer } => {
            lb.client_call(|c| c.key_update(*request_peer))?;
            lb.pump();
            format!("client_key_update request={}", u8::from(*request_peer))
        }
        Action::ServerKeyUpdate { request_peer } => {
            lb.server_call(|s| s.key_update(*request_peer))?;
            lb.pump();
            format!("server_key_update request={}", u8::from(*request_peer))
        }
        Action::IssueTickets(n) => {
            lb.server_call(|s| s.issue_tickets(*n))?;
            lb.pump();
            format!("issue_tickets {n}")
        }
        Action::PostHandshakeAuth => {
            lb.server_call(|s| s.request_post_handshake_auth())?;
            lb.pump();
            let ok = lb
                .server_log
                .post_handshake_auth
                .last()
                .is_some_and(|(_, a)| *a);
            format!("post_handshake_auth {}", if ok { "ok" } else { "failed" })
        }
        Action::CloseClient => {
            lb.client_call(|c| c.close())?;
            lb.pump();
            "close client".to_string()
        }
        Action::CloseServer => {
            lb.server_call(|s| s.close())?;
            lb.pump();
            "close server".to_string()
        }
    };
    Ok(note)
}

fn build_report(
    provider: &dyn CryptoProvider,
    lb: &Loopback,
    outcome: &Outcome,
    notes: Vec<(String, String)>,
) -> ScenarioReport {
    let mut r = ScenarioReport::default();
    match outcome {
        Outcome::Completed => r.push("outcome", "completed"),
        Outcome::Pending => r.push("outcome", "pending"),
        Outcome::Aborted {
            side,
            alert,
            reason,
        } => {
            r.push("outcome", "aborted");
            r.push("abort.alert", alert.to_string());
            r.push("abort.side", side.to_string());
            r.push("abort.reason", reason.clone());
        }
    }
    r.push("client.state", format!("{:?}", lb.client.state()));
    r.push("server.state", format!("{:?}", lb.server.state()));
    r.push("client_random", hex::encode(lb.client.client_random()));

    if let Some(n) = &lb.client_log.completed {
        r.push("negotiated.version", format!("{:04x}", n.version.0));
        r.push(
            "negotiated.suite",
            format!("{:04x} {}", n.suite.0, n.suite),
        );
        r.push(
            "negotiated.group",
            n.group.map_or("none".into(), |g| format!("{:04x} {g}", g.0)),
        );
        r.push(
            "negotiated.psk_mode",
            n.psk_mode.map_or("none".into(), |m| m.to_string()),
        );
        r.push(
            "negotiated.signature_scheme",
            n.signature_scheme
                .map_or("none".into(), |s| format!("{:04x} {s}", s.0)),
        );
        r.push(
            "negotiated.client_authenticated",
            n.client_authenticated.to_string(),
        );
        r.push("negotiated.resumed", n.resumed.to_string());
        r.push("negotiated.hello_retry", n.hello_retry.to_string());
        r.push(
            "negotiated.sides_agree",
            (lb.server_log.completed.as_ref() == Some(n)).to_string(),
        );
    }

    let hrr = lb
        .client_log
        .messages
        .iter()
        .filter(|m| !m.outbound && m.label == "hello_retry_request")
        .count();
    r.push("hello_retry_requests", hrr.to_string());
    if hrr > 0 {
        if let (Some(ch1), Some(n)) = (
            lb.client_log
                .messages
                .iter()
                .find(|m| m.outbound && m.handshake_type == HandshakeType::CLIENT_HELLO),
            &lb.client_log.completed,
        ) {
            if let Some(p) = suite_params(n.suite) {
                r.push(
                    "transcript.first_message",
                    format!(
                        "synthetic {}",
                        hex::encode(synthetic_message(provider, p.hash, &ch1.encoding))
                    ),
                );
            }
        }
    }

    for (side, log) in [("client", &lb.client_log), ("server", &lb.server_log)] {
        for (name, hash) in &log.checkpoints {
            r.push(format!("checkpoint.{side}.{name}"), hex::encode(hash));
        }
    }
    let all_match = [
        checkpoint::SERVER_HELLO,
        checkpoint::PRE_SERVER_FINISHED,
        checkpoint::SERVER_FINISHED,
        checkpoint::CLIENT_FINISHED,
    ]
    .iter()
    .all(|c| lb.client_log.checkpoint(c) == lb.server_log.checkpoint(c));
    r.push("checkpoints_match", all_match.to_string());

    let mut keylog = KeyLog::new();
    keylog.extend(&lb.client_log.secrets);
    keylog.extend(&lb.server_log.secrets);
    for e in keylog.entries() {
        r.push(format!("secret.{}", e.label), hex::encode(&e.secret));
    }
    r.push("secrets_agree", keylog.conflicts().is_empty().to_string());

    for (i, m) in lb.client_log.messages.iter().enumerate() {
        let dir = if m.outbound { "c2s" } else { "s2c" };
        r.push(
            format!("message.{i}"),
            format!("{dir} {} {}", m.label, m.encoding.len()),
        );
    }
    for (i, t) in lb.pipe.trace().iter().enumerate() {
        r.push(
            format!("record.{i}"),
            format!("{} {} {}", t.direction.short(), t.content_type, t.length),
        );
    }
    for (k, v) in notes {
        r.push(k, v);
    }
    r.push(
        "tickets.issued",
        lb.server_log.tickets_issued.len().to_string(),
    );
    r.push(
        "tickets.received",
        lb.client_log.tickets_received.len().to_string(),
    );
    for (side, st) in [
        ("client", lb.client.record_status()),
        ("server", lb.server.record_status()),
    ] {
        let opt = |v: Option<u64>| v.map_or("none".into(), |v| v.to_string());
        let gen = |v: Option<u32>| v.map_or("none".into(), |v| v.to_string());
        r.push(
            format!("records.{side}"),
            format!(
                "read_seq={} write_seq={} read_gen={} write_gen={}",
                opt(st.read_sequence),
                opt(st.write_sequence),
                gen(st.read_generation),
                gen(st.write_generation)
            ),
        );
    }
    r.push("app.client_received", lb.client_log.received.len().to_string());
    r.push("app.server_received", lb.server_log.received.len().to_string());
    r.push("closed.client_saw_close", lb.client_log.peer_closed.to_string());
    r.push("closed.server_saw_close", lb.server_log.peer_closed.to_string());
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PskOption {
    None,
    Ke,
    Dhe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyUpdateOption {
    Client,
    Server,
    Both,
}

/// Knobs of the `simulate` command.
#[derive(Debug, Clone)]
pub struct ScenarioOptions {
    pub suites: Vec<CipherSuite>,
    pub groups: Vec<NamedGroup>,
    pub signature_scheme: SignatureScheme,
    pub psk_mode: PskOption,
    pub client_auth: ClientAuthPolicy,
    pub force_hrr: bool,
    pub tickets: usize,
    pub key_update: Option<KeyUpdateOption>,
    pub resume: bool,
    pub post_handshake_auth: bool,
    pub echo_bytes: usize,
    pub seed: u64,
    /// Tickets the first connection's client offers, e.g. loaded from a store.
    pub stored_tickets: Vec<PreSharedKey>,
    pub start_ms: u64,
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        ScenarioOptions {
            suites: vec![CipherSuite::TLS_AES_128_GCM_SHA256],
            groups: vec![NamedGroup::X25519],
            signature_scheme: SignatureScheme::ED25519,
            psk_mode: PskOption::None,
            client_auth: ClientAuthPolicy::Off,
            force_hrr: false,
            tickets: 0,
            key_update: None,
            resume: false,
            post_handshake_auth: false,
            echo_bytes: 4096,
            seed: 0,
            stored_tickets: Vec::new(),
            start_ms: 1_700_000_000_000,
        }
    }
}

/// Result of [`run_scenario`]: one report covering every connection.
#[derive(Debug)]
pub struct ScenarioRun {
    pub report: ScenarioReport,
    pub keylog: KeyLog,
    pub outcome: Outcome,
    /// Tickets the client holds at the end.
    pub tickets: Vec<PreSharedKey>,
    pub runs: Vec<LoopbackRun>,
}

struct Material {
    server_key: SigningKey,
    client_key: SigningKey,
    external: PreSharedKey,
    ticket_key: Secret,
}

fn material(provider: &dyn CryptoProvider, opts: &ScenarioOptions) -> Result<Material, HarnessError> {
    let mut rng = ChaCha20Rng::seed_from_u64(opts.seed ^ 0x0068_6172_6e65_7373);
    let server_key = provider.generate_signing_key(opts.signature_scheme, &mut rng)?;
    let client_key = provider.generate_signing_key(opts.signature_scheme, &mut rng)?;
    let mut psk = [0u8; 32];
    rng.fill_bytes(&mut psk);
    let mut ticket_key = vec![0u8; 16];
    rng.fill_bytes(&mut ticket_key);
    Ok(Material {
        server_key,
        client_key,
        external: PreSharedKey::external(
            b"harness external psk",
            &psk,
            opts.suites.first().and_then(|s| suite_params(*s)).map(|p| p.hash),
        ),
        ticket_key: Secret::new(ticket_key),
    })
}

fn configs(
    opts: &ScenarioOptions,
    m: &Material,
    clock: Arc<dyn Clock>,
    conn: u64,
    tickets: Vec<PreSharedKey>,
) -> (ClientConfig, ServerConfig) {
    let provider = default_provider();
    let modes = match opts.psk_mode {
        PskOption::Ke => vec![PskKeyExchangeMode::PSK_KE],
        _ => vec![PskKeyExchangeMode::PSK_DHE_KE],
    };
    let mut psks = tickets;
    if opts.psk_mode != PskOption::None {
        psks.push(m.external.clone());
    }
    let client_credential =
        (opts.client_auth != ClientAuthPolicy::Off || opts.post_handshake_auth)
            .then(|| m.client_key.clone());
    let client = ClientConfig {
        provider: provider.clone(),
        cipher_suites: opts.suites.clone(),
        groups: opts.groups.clone(),
        key_share_groups: opts.force_hrr.then(Vec::new),
        signature_schemes: vec![opts.signature_scheme],
        offer_dhe: opts.psk_mode != PskOption::Ke || psks.is_empty(),
        psks,
        psk_modes: modes.clone(),
        credential: client_credential,
        offer_post_handshake_auth: opts.post_handshake_auth,
        server_name: Some("loopback.test".into()),
        verifier: RawPublicKeyVerifier::pinned(&m.server_key.public),
        clock: clock.clone(),
        seed: opts.seed.wrapping_mul(2).wrapping_add(conn * 1000),
        ..ClientConfig::default()
    };
    let server = ServerConfig {
        provider,
        cipher_suites: opts.suites.clone(),
        groups: opts.groups.clone(),
        signature_schemes: vec![opts.signature_scheme],
        credentials: vec![m.server_key.clone()],
        client_auth: opts.client_auth,
        client_verifier: RawPublicKeyVerifier::pinned(&m.client_key.public),
        external_psks: if opts.psk_mode == PskOption::None {
            Vec::new()
        } else {
            vec![m.external.clone()]
        },
        psk_modes: modes,
        ticket_count: 0,
        ticket_key: Some(m.ticket_key.clone()),
        clock,
        seed: opts.seed.wrapping_mul(2).wrapping_add(conn * 1000 + 1),
        ..ServerConfig::default()
    };
    (client, server)
}

/// Matching client and server configs for connection number `connection`
/// of a scenario, the client offering `tickets`. Credentials, the external
/// PSK and the ticket key depend only on the seed, so servers built for
/// different connections resume each other's tickets.
pub fn scenario_configs(
    opts: &ScenarioOptions,
    connection: u64,
    tickets: Vec<PreSharedKey>,
) -> Result<(ClientConfig, ServerConfig), HarnessError> {
    let m = material(default_provider().as_ref(), opts)?;
    Ok(configs(
        opts,
        &m,
        MockClock::new(opts.start_ms),
        connection,
        tickets,
    ))
}

fn actions(opts: &ScenarioOptions, first: bool) -> Vec<Action> {
    let mut a = Vec::new();
    let tickets = if first && opts.resume {
        opts.tickets.max(1)
    } else {
        opts.tickets
    };
    if tickets > 0 {
        a.push(Action::IssueTickets(tickets));
    }
    a.push(Action::Echo(opts.echo_bytes));
    if let Some(k) = opts.key_update {
        if matches!(k, KeyUpdateOption::Client | KeyUpdateOption::Both) {
            a.push(Action::ClientKeyUpdate { request_peer: true });
        }
        if matches!(k, KeyUpdateOption::Server | KeyUpdateOption::Both) {
            a.push(Action::ServerKeyUpdate { request_peer: true });
        }
        a.push(Action::Echo(opts.echo_bytes));
    }
    if opts.post_handshake_auth {
        a.push(Action::PostHandshakeAuth);
        a.push(Action::Echo(opts.echo_bytes));
    }
    a.push(Action::CloseClient);
    a.push(Action::CloseServer);
    a
}

/// Runs the scripted scenario: one connection, plus a resumed second one
/// when `resume` is set. Everything is derived from `seed` and a mock clock.
pub fn run_scenario(opts: &ScenarioOptions) -> Result<ScenarioRun, HarnessError> {
    let provider = default_provider();
    let m = material(provider.as_ref(), opts)?;
    let clock = MockClock::new(opts.start_ms);
    let mut report = ScenarioReport::default();
    report.push("seed", opts.seed.to_string());
    let mut keylog = KeyLog::new();
    let mut runs = Vec::new();

    let (c, s) = configs(opts, &m, clock.clone(), 1, opts.stored_tickets.clone());
    let first = run_loopback(c, s, Vec::new(), &actions(opts, true))?;
    report.append_prefixed("conn1.", &first.report);
    keylog.extend(first.keylog().entries());
    let mut outcome = first.outcome.clone();
    let mut tickets = first.loopback.client_log.tickets_received.clone();
    runs.push(first);

    if opts.resume && outcome == Outcome::Completed {
        clock.advance(1_000);
        let offered = tickets.iter().take(1).cloned().collect();
        let (c, s) = configs(opts, &m, clock.clone(), 2, offered);
        let second = run_loopback(c, s, Vec::new(), &actions(opts, false))?;
        report.append_prefixed("conn2.", &second.report);
        keylog.extend(second.keylog().entries());
        outcome = second.outcome.clone();
        tickets.extend(second.loopback.client_log.tickets_received.iter().cloned());
        runs.push(second);
    }
    report.push(
        "outcome",
        match &outcome {
            Outcome::Aborted { alert, .. } => format!("aborted {alert}"),
            Outcome::Completed => "completed".into(),
            Outcome::Pending => "pending".into(),
        },
    );
    Ok(ScenarioRun {
        report,
        keylog,
        outcome,
        tickets,
        runs,
    })
}
