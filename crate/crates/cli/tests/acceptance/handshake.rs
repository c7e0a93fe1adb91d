use std::time::{Duration, Instant};

use tls13_core::codec::{
    AlertDescription, ExtensionType, HandshakeMessage, HandshakeType, NamedGroup,
    PskKeyExchangeMode,
};
use tls13_core::crypto::HashAlg;
use tls13_core::engine::checkpoint;
use tls13_core::harness::{
    run_scenario, scenario_configs, Loopback, Outcome, ScenarioOptions, Side,
};

use crate::support::*;

const CHECKPOINTS: [&str; 4] = [
    checkpoint::SERVER_HELLO,
    checkpoint::PRE_SERVER_FINISHED,
    checkpoint::SERVER_FINISHED,
    checkpoint::CLIENT_FINISHED,
];

fn completed(lb: &mut Loopback) -> Result<(), String> {
    match lb.handshake().ctx("handshake")? {
        Outcome::Completed => Ok(()),
        o => Err(format!("handshake did not complete: {o:?}")),
    }
}

/// Both sides must report identical checkpoint hashes under the same names.
fn checkpoints_agree(lb: &Loopback) -> Result<(), String> {
    let names = |l: &tls13_core::harness::SideLog| {
        l.checkpoints.iter().map(|(n, _)| *n).collect::<Vec<_>>()
    };
    ensure!(
        names(&lb.client_log) == names(&lb.server_log),
        "checkpoint names differ: {:?} / {:?}",
        names(&lb.client_log),
        names(&lb.server_log)
    );
    for (name, h) in &lb.client_log.checkpoints {
        ensure!(
            lb.server_log.checkpoint(name) == Some(h.as_slice()),
            "checkpoint {name} differs between client and server"
        );
    }
    Ok(())
}

/// Recomputes both Finished values from logged secrets and message encodings.
/// `msgs` is the client's view; the last two entries are the Finished messages.
fn check_finished(secrets: &std::collections::BTreeMap<String, Vec<u8>>, msgs: &[Vec<u8>]) -> Result<(), String> {
    let alg = HashAlg::Sha256;
    let n = msgs.len();
    let server_fin = &msgs[n - 2];
    let client_fin = &msgs[n - 1];
    let shts = secrets.get("SERVER_HANDSHAKE_TRAFFIC_SECRET").ctx("server hs secret")?;
    let chts = secrets.get("CLIENT_HANDSHAKE_TRAFFIC_SECRET").ctx("client hs secret")?;
    let want_sf = finished_mac(alg, shts, &hash(alg, &msgs[..n - 2]));
    ensure!(server_fin[4..] == want_sf[..], "server verify_data does not recompute");
    let want_cf = finished_mac(alg, chts, &hash(alg, &msgs[..n - 1]));
    ensure!(client_fin[4..] == want_cf[..], "client verify_data does not recompute");
    Ok(())
}

pub fn full_handshake() -> Verdict {
    let started = Instant::now();
    let (c, s) = pair();
    let mut lb = Loopback::new(c, s, Vec::new()).ctx("loopback")?;
    completed(&mut lb)?;
    checkpoints_agree(&lb)?;
    for name in CHECKPOINTS {
        ensure!(lb.client_log.checkpoint(name).is_some(), "no {name} checkpoint");
    }
    let msgs = encodings(&lb.client_log);
    ensure!(
        msgs == encodings(&lb.server_log),
        "client and server logged different handshake bytes"
    );
    ensure!(msgs.len() == 7, "expected 7 handshake messages, saw {}", msgs.len());
    // Each checkpoint is the hash of the messages preceding it.
    for (name, upto) in [
        (checkpoint::SERVER_HELLO, 2),
        (checkpoint::PRE_SERVER_FINISHED, 5),
        (checkpoint::SERVER_FINISHED, 6),
        (checkpoint::CLIENT_FINISHED, 7),
    ] {
        ensure!(
            lb.client_log.checkpoint(name) == Some(&hash(HashAlg::Sha256, &msgs[..upto])[..]),
            "{name} is not the hash of the first {upto} messages"
        );
    }
    check_finished(&secrets(&lb), &msgs)?;

    let payload = echo_payload(1 << 20);
    let back = lb.echo(&payload).ctx("echo")?;
    ensure!(back == payload, "1 MiB echo corrupted ({} bytes back)", back.len());
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(2), "took {elapsed:?}, limit 2 s");
    Ok(format!(
        "4 checkpoints agree, both Finished recompute, 1 MiB echo in {} ms",
        elapsed.as_millis()
    ))
}

pub fn hello_retry() -> Verdict {
    let (mut c, mut s) = pair();
    c.groups = vec![NamedGroup::X25519, NamedGroup::SECP256R1];
    c.key_share_groups = Some(vec![NamedGroup::X25519]);
    s.groups = vec![NamedGroup::SECP256R1];
    let mut lb = Loopback::new(c, s, Vec::new()).ctx("loopback")?;
    completed(&mut lb)?;
    checkpoints_agree(&lb)?;
    let hrrs = lb
        .client_log
        .messages
        .iter()
        .filter(|m| m.label == "hello_retry_request")
        .count();
    ensure!(hrrs == 1, "expected exactly one HelloRetryRequest, saw {hrrs}");
    let n = lb.client.negotiated().ctx("negotiated")?;
    ensure!(n.hello_retry, "result does not record the retry");
    ensure!(n.group == Some(NamedGroup::SECP256R1), "negotiated {:?}", n.group);

    let msgs = encodings(&lb.client_log);
    ensure!(msgs.len() == 9, "expected 9 handshake messages, saw {}", msgs.len());
    let alg = HashAlg::Sha256;
    let digest = hash(alg, &msgs[..1]);
    let mut synthetic = vec![0xfe, 0x00, 0x00, digest.len() as u8];
    synthetic.extend_from_slice(&digest);
    let rewritten: Vec<Vec<u8>> = std::iter::once(synthetic).chain(msgs[1..].iter().cloned()).collect();
    for (name, upto) in [
        (checkpoint::HELLO_RETRY, 2),
        (checkpoint::SERVER_HELLO, 4),
        (checkpoint::PRE_SERVER_FINISHED, 7),
        (checkpoint::SERVER_FINISHED, 8),
        (checkpoint::CLIENT_FINISHED, 9),
    ] {
        let got = lb.client_log.checkpoint(name).ctx(name)?;
        ensure!(
            got == hash(alg, &rewritten[..upto]),
            "{name} is not the hash of the substituted transcript"
        );
        ensure!(
            got != hash(alg, &msgs[..upto]),
            "{name} equals the naive concatenation"
        );
    }
    check_finished(&secrets(&lb), &rewritten)?;

    let run = run_scenario(&ScenarioOptions {
        force_hrr: true,
        ..ScenarioOptions::default()
    })
    .ctx("scenario")?;
    let note = run.report.get("conn1.transcript.first_message").ctx("report annotation")?;
    ensure!(note.starts_with("synthetic fe000020"), "annotation reads {note}");
    Ok("one HRR; 5 checkpoints match message_hash(CH1) substitution, naive hashes differ".into())
}

pub fn resumption() -> Verdict {
    let opts = ScenarioOptions::default();
    let (c, s) = scenario_configs(&opts, 1, Vec::new()).ctx("configs")?;
    let mut first = Loopback::new(c, s, Vec::new()).ctx("loopback")?;
    completed(&mut first)?;
    first.server_call(|s| s.issue_tickets(1)).ctx("issue ticket")?;
    first.pump();
    let ticket = first.client_log.tickets_received.first().cloned().ctx("ticket")?;

    let (c, s) = scenario_configs(&opts, 2, vec![ticket.clone()]).ctx("configs")?;
    let mut second = Loopback::new(c, s, Vec::new()).ctx("loopback")?;
    completed(&mut second)?;
    checkpoints_agree(&second)?;
    for side in [second.client.negotiated(), second.server.negotiated()] {
        let n = side.ctx("negotiated")?;
        ensure!(n.resumed, "connection was not resumed");
        ensure!(
            n.psk_mode == Some(PskKeyExchangeMode::PSK_DHE_KE),
            "psk mode {:?}",
            n.psk_mode
        );
    }
    for t in [HandshakeType::CERTIFICATE, HandshakeType::CERTIFICATE_VERIFY] {
        ensure!(
            second.client_log.count(false, t) == 0,
            "resumed handshake carried {t}"
        );
    }
    let echoed = second.echo(b"resumed").ctx("echo")?;
    ensure!(echoed == b"resumed", "echo after resumption failed");

    // Flip the last binder byte: the server must refuse the PSK.
    let (mut c, s) = scenario_configs(&opts, 3, vec![ticket]).ctx("configs")?;
    c.interceptor = Some(rewrite_type(HandshakeType::CLIENT_HELLO, |msg| match msg {
        HandshakeMessage::ClientHello(mut ch) => {
            if let Some(e) = ch
                .extensions
                .iter_mut()
                .find(|e| e.extension_type == ExtensionType::PRE_SHARED_KEY)
            {
                if let Some(b) = e.body.last_mut() {
                    *b ^= 0x01;
                }
            }
            HandshakeMessage::ClientHello(ch)
        }
        m => m,
    }));
    let mut tampered = Loopback::new(c, s, Vec::new()).ctx("loopback")?;
    let outcome = tampered.handshake().ctx("tampered handshake")?;
    ensure!(
        outcome
            == Outcome::Aborted {
                side: Side::Server,
                alert: AlertDescription::DECRYPT_ERROR,
                reason: "PSK binder does not verify".into(),
            },
        "tampered binder gave {outcome:?}"
    );
    ensure!(
        tampered.client_log.aborted.as_ref().is_some_and(|a| a.by_peer),
        "client did not learn of the rejection"
    );
    Ok("resumed with psk_dhe_ke and no Certificate/CertificateVerify; bad binder -> decrypt_error".into())
}
