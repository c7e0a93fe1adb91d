use tls13_core::codec::{AlertDescription, HandshakeMessage, HandshakeType};
use tls13_core::crypto::HashAlg;
use tls13_core::engine::EngineError;
use tls13_core::harness::{Direction, Loopback, Outcome};

use crate::support::*;

fn connected(lb: &mut Loopback) -> Result<(), String> {
    match lb.handshake().ctx("handshake")? {
        Outcome::Completed => Ok(()),
        o => Err(format!("handshake did not complete: {o:?}")),
    }
}

pub fn half_close() -> Verdict {
    let (c, s) = pair();
    let mut lb = Loopback::new(c, s, Vec::new()).ctx("loopback")?;
    connected(&mut lb)?;
    lb.client_call(|c| c.close()).ctx("client close")?;
    lb.pump();
    ensure!(lb.server_log.peer_closed, "server did not see close_notify");
    ensure!(!lb.client_log.peer_closed, "client read side closed early");
    lb.server_call(|s| s.send_app_data(b"still talking")).ctx("server write after peer close")?;
    lb.pump();
    ensure!(
        lb.client_log.received == b"still talking",
        "client received {:?} after half-close",
        String::from_utf8_lossy(&lb.client_log.received)
    );
    ensure!(
        lb.client.send_app_data(b"x") == Err(EngineError::WriteClosed),
        "client write after close did not fail with WriteClosed"
    );
    lb.server_call(|s| s.close()).ctx("server close")?;
    lb.pump();
    ensure!(lb.client_log.peer_closed, "client did not see the server close");
    ensure!(
        lb.client_log.alerts_sent.len() == 1 && lb.server_log.alerts_sent.len() == 1,
        "close_notify counts {:?} / {:?}",
        lb.client_log.alerts_sent,
        lb.server_log.alerts_sent
    );

    // A fatal error ends both directions on both sides with a single alert.
    let (c, s) = pair();
    let mut lb = Loopback::new(c, s, Vec::new()).ctx("loopback")?;
    connected(&mut lb)?;
    let mut garbage = vec![23, 3, 3, 0, 40];
    garbage.resize(45, 0xaa);
    lb.pipe.send(Direction::ClientToServer, garbage);
    lb.pump();
    ensure!(
        lb.outcome().alert() == Some(AlertDescription::BAD_RECORD_MAC),
        "garbage record gave {:?}",
        lb.outcome()
    );
    ensure!(
        lb.server_log.alerts_sent == [AlertDescription::BAD_RECORD_MAC],
        "server sent alerts {:?}",
        lb.server_log.alerts_sent
    );
    ensure!(lb.client_log.alerts_sent.is_empty(), "client answered a fatal alert");
    ensure!(
        lb.client_log.aborted.as_ref().is_some_and(|a| a.by_peer),
        "client did not take the alert as fatal"
    );
    for (side, write, read) in [
        (
            "server",
            lb.server.send_app_data(b"x"),
            lb.server.handle_input(&[23, 3, 3, 0, 0]),
        ),
        (
            "client",
            lb.client.send_app_data(b"x"),
            lb.client.handle_input(&[23, 3, 3, 0, 0]),
        ),
    ] {
        ensure!(write == Err(EngineError::Dead), "{side} write after fatal: {write:?}");
        ensure!(
            read.as_ref().err() == Some(&EngineError::Dead),
            "{side} read after fatal was accepted"
        );
    }
    Ok("client close leaves server->client open, client write -> WriteClosed; fatal -> one alert, both sides Dead".into())
}

pub fn post_handshake_auth() -> Verdict {
    let (c, s) = pair_with(|o| o.post_handshake_auth = true);
    let mut lb = Loopback::new(c, s, Vec::new()).ctx("loopback")?;
    connected(&mut lb)?;
    let handshake = encodings(&lb.client_log);
    lb.server_call(|s| s.request_post_handshake_auth()).ctx("request")?;
    lb.pump();
    ensure!(lb.outcome() == Outcome::Completed, "PHA aborted: {:?}", lb.outcome());
    let (context, ok) = lb.server_log.post_handshake_auth.first().cloned().ctx("server PHA event")?;
    ensure!(ok, "server did not authenticate the client");
    ensure!(!context.is_empty(), "empty CertificateRequest context");
    ensure!(
        lb.server.negotiated().is_some_and(|n| n.client_authenticated)
            || lb.server.client_identity().is_some(),
        "server holds no client identity"
    );

    let after: Vec<Vec<u8>> = lb.client_log.messages[handshake.len()..]
        .iter()
        .map(|m| m.encoding.clone())
        .collect();
    let types: Vec<HandshakeType> = lb.client_log.messages[handshake.len()..]
        .iter()
        .map(|m| m.handshake_type)
        .collect();
    ensure!(
        types
            == [
                HandshakeType::CERTIFICATE_REQUEST,
                HandshakeType::CERTIFICATE,
                HandshakeType::CERTIFICATE_VERIFY,
                HandshakeType::FINISHED
            ],
        "post-handshake flight was {types:?}"
    );
    // CertificateRequest body starts with the context vector.
    ensure!(
        after[0][5..5 + context.len()] == context[..],
        "CertificateRequest context differs from the reported one"
    );
    let cats = secrets(&lb).remove("CLIENT_TRAFFIC_SECRET_0").ctx("client app secret")?;
    let transcript: Vec<Vec<u8>> = handshake.iter().chain(&after[..3]).cloned().collect();
    let alg = HashAlg::Sha256;
    let want = finished_mac(alg, &cats, &hash(alg, &transcript));
    ensure!(after[3][4..] == want[..], "PHA Finished does not recompute");
    let back = lb.echo(b"after pha").ctx("echo")?;
    ensure!(back == b"after pha", "echo after PHA failed");

    // A CertificateRequest the client never asked for.
    let (c, mut s) = pair();
    s.interceptor = Some(replace_nth(5, |_| {
        vec![HandshakeMessage::CertificateRequest(
            tls13_core::codec::CertificateRequestMsg {
                context: vec![1; 16],
                extensions: vec![tls13_core::codec::Extension::signature_algorithms(&[
                    tls13_core::codec::SignatureScheme::ED25519,
                ])
                .unwrap()],
            },
        )]
    }));
    let mut lb = Loopback::new(c, s, Vec::new()).ctx("loopback")?;
    connected(&mut lb)?;
    lb.server_call(|s| s.issue_tickets(1)).ctx("issue")?;
    lb.pump();
    ensure!(
        lb.client_log.aborted.as_ref().map(|a| (a.alert, a.by_peer))
            == Some((AlertDescription::UNEXPECTED_MESSAGE, false)),
        "unsolicited CertificateRequest gave {:?}",
        lb.client_log.aborted
    );
    Ok("CR/Cert/CV/Finished verified under the application secret; unsolicited CR -> unexpected_message".into())
}
