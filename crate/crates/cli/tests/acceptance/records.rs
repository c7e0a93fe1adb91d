use tls13_core::codec::{AlertDescription, HandshakeType};
use tls13_core::crypto::{AeadAlg, HashAlg};
use tls13_core::engine::{EngineEvent, RecordStatus, ServerEngine};
use tls13_core::harness::{Direction, Fault, Loopback, Outcome, Side};
use tls13_core::key_schedule::{
    traffic_keys, update_traffic_secret, Purpose, Sender, TrafficSecret,
};
use tls13_core::record::{
    validate_plaintext_length, ContentType, DirectionState, Record, RecordError, RecordReader,
    MAX_CIPHERTEXT, MAX_PLAINTEXT,
};
use tls13_core::hkdf::Secret;

use crate::support::*;

fn connected() -> Result<Loopback, String> {
    let (c, s) = pair();
    let mut lb = Loopback::new(c, s, Vec::new()).ctx("loopback")?;
    match lb.handshake().ctx("handshake")? {
        Outcome::Completed => Ok(lb),
        o => Err(format!("handshake did not complete: {o:?}")),
    }
}

fn client_app_secret(lb: &Loopback) -> Result<TrafficSecret, String> {
    let bytes = secrets(lb).remove("CLIENT_TRAFFIC_SECRET_0").ctx("CLIENT_TRAFFIC_SECRET_0")?;
    Ok(TrafficSecret {
        sender: Some(Sender::Client),
        purpose: Purpose::Application,
        generation: 0,
        hash: HashAlg::Sha256,
        secret: Secret::new(bytes),
    })
}

fn direction(secret: &TrafficSecret) -> Result<DirectionState, String> {
    let aead = AeadAlg::Aes128Gcm.descriptor();
    let keys = traffic_keys(provider().as_ref(), secret, &aead).ctx("traffic keys")?;
    Ok(DirectionState::new(aead, keys))
}

/// A direction state whose next record uses sequence number `seq`.
fn at_sequence(secret: &TrafficSecret, seq: u64) -> Result<DirectionState, String> {
    let mut d = direction(secret)?;
    for _ in 0..seq {
        d.protect(provider().as_ref(), b"", ContentType::APPLICATION_DATA, 0)
            .ctx("advance")?;
    }
    Ok(d)
}

fn server_abort(lb: &Loopback) -> Option<AlertDescription> {
    lb.server_log.aborted.as_ref().filter(|a| !a.by_peer).map(|a| a.alert)
}

pub fn key_update() -> Verdict {
    let mut lb = connected()?;
    lb.client_call(|c| c.key_update(true)).ctx("key update")?;
    lb.pump();
    ensure!(lb.outcome() == Outcome::Completed, "key update aborted: {:?}", lb.outcome());
    let sent: Vec<_> = lb
        .server_log
        .messages
        .iter()
        .filter(|m| m.outbound && m.handshake_type == HandshakeType::KEY_UPDATE)
        .collect();
    ensure!(sent.len() == 1, "server sent {} KeyUpdates", sent.len());
    ensure!(
        sent[0].encoding[4..] == [0],
        "server response requests another update"
    );
    ensure!(
        lb.client_log.key_updates == [(true, 1), (false, 1)],
        "client updates {:?}",
        lb.client_log.key_updates
    );
    ensure!(
        lb.server_log.key_updates == [(false, 1), (true, 1)],
        "server updates {:?}",
        lb.server_log.key_updates
    );
    let fresh = RecordStatus {
        read_sequence: Some(0),
        write_sequence: Some(0),
        read_generation: Some(1),
        write_generation: Some(1),
    };
    ensure!(lb.client.record_status() == fresh, "client {:?}", lb.client.record_status());
    ensure!(lb.server.record_status() == fresh, "server {:?}", lb.server.record_status());
    let back = lb.echo(b"after update").ctx("echo")?;
    ensure!(back == b"after update", "echo after update failed");

    // Capture one generation-1 record and try it under both generations.
    let gen0 = client_app_secret(&lb)?;
    let gen1 = update_traffic_secret(provider().as_ref(), &gen0).ctx("update")?;
    lb.client_call(|c| c.send_app_data(b"probe")).ctx("send")?;
    let wire = lb.pipe.recv(Direction::ClientToServer).ctx("captured record")?;
    let record = Record::decode(&wire).ctx("decode")?;
    // The echo above consumed sequence 0; this record is sequence 1.
    let p = provider();
    ensure!(
        at_sequence(&gen0, 1)?.unprotect(p.as_ref(), &record) == Err(RecordError::BadRecordMac),
        "generation-0 keys opened a generation-1 record"
    );
    let opened = at_sequence(&gen1, 1)?
        .unprotect(p.as_ref(), &record)
        .ctx("generation-1 open")?;
    ensure!(opened.0 == b"probe", "generation-1 keys gave {:?}", opened.0);

    // Deliver the probe, then inject a record sealed under generation 0 at
    // the server's next read sequence.
    lb.pipe.send(Direction::ClientToServer, wire);
    lb.pump();
    ensure!(lb.server.record_status().read_sequence == Some(2), "probe not accepted");
    let stale = at_sequence(&gen0, 2)?
        .protect(p.as_ref(), b"stale", ContentType::APPLICATION_DATA, 0)
        .ctx("seal")?;
    lb.pipe.send(Direction::ClientToServer, stale.encode());
    lb.pump();
    ensure!(
        server_abort(&lb) == Some(AlertDescription::BAD_RECORD_MAC),
        "stale generation record gave {:?}",
        lb.server_log.aborted
    );
    Ok("KeyUpdate(1) answered by KeyUpdate(0), gen 1 / seq 0 both ways; gen-0 keys rejected".into())
}

fn overflowing_plaintext() -> Vec<u8> {
    let mut wire = vec![22, 0x03, 0x03];
    wire.extend_from_slice(&((MAX_PLAINTEXT + 1) as u16).to_be_bytes());
    wire.resize(5 + MAX_PLAINTEXT + 1, 0);
    wire
}

fn engine_abort(events: &[EngineEvent]) -> Option<AlertDescription> {
    events.iter().find_map(|e| match e {
        EngineEvent::Aborted {
            alert,
            by_peer: false,
            ..
        } => Some(alert.description),
        _ => None,
    })
}

pub fn record_bounds() -> Verdict {
    let p = provider();

    // Plaintext limit.
    let big = Record::new(ContentType::HANDSHAKE, vec![0; MAX_PLAINTEXT + 1]);
    ensure!(
        validate_plaintext_length(&big).map_err(|e| e.alert())
            == Err(AlertDescription::RECORD_OVERFLOW),
        "2^14+1 plaintext accepted by the layer"
    );
    let at_limit = Record::new(ContentType::HANDSHAKE, vec![0; MAX_PLAINTEXT]);
    ensure!(validate_plaintext_length(&at_limit).is_ok(), "2^14 plaintext rejected");
    let mut server = ServerEngine::new(pair().1).ctx("server")?;
    let events = server.handle_input(&overflowing_plaintext()).ctx("input")?;
    ensure!(
        engine_abort(&events) == Some(AlertDescription::RECORD_OVERFLOW),
        "engine gave {:?} for a 2^14+1 plaintext record",
        engine_abort(&events)
    );

    // Inner plaintext over 2^14 inside a valid ciphertext.
    let mut tx = direction(&TrafficSecret {
        sender: Some(Sender::Client),
        purpose: Purpose::Application,
        generation: 0,
        hash: HashAlg::Sha256,
        secret: Secret::new(vec![7; 32]),
    })?;
    let mut rx = tx.clone();
    let sealed = tx
        .protect(p.as_ref(), &vec![1; MAX_PLAINTEXT + 1], ContentType::APPLICATION_DATA, 0)
        .ctx("seal oversized inner")?;
    ensure!(
        matches!(rx.unprotect(p.as_ref(), &sealed), Err(RecordError::Overflow(_))),
        "oversized inner plaintext accepted"
    );

    // Ciphertext limit, from the header alone.
    let mut reader = RecordReader::new();
    reader.push(&[23, 3, 3]);
    reader.push(&((MAX_CIPHERTEXT + 1) as u16).to_be_bytes());
    ensure!(
        reader.next_record().map_err(|e| e.alert()) == Err(AlertDescription::RECORD_OVERFLOW),
        "2^14+257 ciphertext accepted by the reader"
    );
    let mut lb = connected()?;
    let mut huge = vec![23, 3, 3];
    huge.extend_from_slice(&((MAX_CIPHERTEXT + 1) as u16).to_be_bytes());
    huge.resize(5 + MAX_CIPHERTEXT + 1, 0);
    lb.pipe.send(Direction::ClientToServer, huge);
    lb.pump();
    ensure!(
        server_abort(&lb) == Some(AlertDescription::RECORD_OVERFLOW),
        "engine gave {:?} for a 2^14+257 ciphertext",
        lb.server_log.aborted
    );

    // Every single-bit flip of a protected record fails authentication.
    // Length bytes are excluded: changing them breaks framing, not the MAC.
    let key = TrafficSecret {
        sender: Some(Sender::Server),
        purpose: Purpose::Handshake,
        generation: 0,
        hash: HashAlg::Sha256,
        secret: Secret::new(vec![9; 32]),
    };
    let wire = direction(&key)?
        .protect(p.as_ref(), b"thirty-two bytes of record body", ContentType::HANDSHAKE, 0)
        .ctx("seal")?
        .encode();
    let mut layer_flips = 0;
    for byte in (0..wire.len()).filter(|b| !(3..5).contains(b)) {
        for bit in 0..8 {
            let mut w = wire.clone();
            w[byte] ^= 1 << bit;
            let r = Record::decode(&w).ctx("decode flipped")?;
            ensure!(
                direction(&key)?.unprotect(p.as_ref(), &r) == Err(RecordError::BadRecordMac),
                "flip of byte {byte} bit {bit} was not caught"
            );
            layer_flips += 1;
        }
    }

    // Engine level: flip every bit of the server's first protected record
    // (EncryptedExtensions), except the framing length.
    let (c, s) = pair();
    let ee_len = {
        let mut probe = Loopback::new(c, s, Vec::new()).ctx("loopback")?;
        probe.handshake().ctx("probe")?;
        probe
            .pipe
            .trace()
            .iter()
            .filter(|t| t.direction == Direction::ServerToClient)
            .nth(1)
            .map(|t| t.length + 5)
            .ctx("EE record")?
    };
    let mut engine_flips = 0;
    let mut type_flips = Vec::new();
    for byte in (0..ee_len).filter(|b| !(3..5).contains(b)) {
        for bit in 0..8u8 {
            let (c, s) = pair();
            let fault = Fault::FlipBit {
                direction: Direction::ServerToClient,
                record: 1,
                byte,
                bit,
            };
            let mut lb = Loopback::new(c, s, vec![fault]).ctx("loopback")?;
            let outcome = lb.handshake().ctx("flipped handshake")?;
            if byte == 0 {
                // The outer type is authenticated too, but a flipped type
                // can make the record look like plaintext of another kind.
                ensure!(outcome != Outcome::Completed, "type flip bit {bit} completed");
                type_flips.push(outcome.alert().map(|a| a.to_string()).unwrap_or_default());
                continue;
            }
            ensure!(
                matches!(
                    outcome,
                    Outcome::Aborted {
                        side: Side::Client,
                        alert: AlertDescription::BAD_RECORD_MAC,
                        ..
                    }
                ),
                "flip of EE byte {byte} bit {bit} gave {outcome:?}"
            );
            engine_flips += 1;
        }
    }
    type_flips.sort();
    type_flips.dedup();
    Ok(format!(
        "2^14+1 plaintext and 2^14+257 ciphertext -> record_overflow; {layer_flips} layer and \
         {engine_flips} engine bit flips (version bytes included) -> bad_record_mac; \
         content-type flips abort with {}",
        type_flips.join("/")
    ))
}
