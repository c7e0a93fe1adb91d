use std::sync::Arc;

use super::{EngineError, EngineEvent, KeyLogEntry, MessageInterceptor, RecordStatus};
use crate::codec::{
    decode_handshake, encode_handshake, Alert, AlertDescription, CodecError, HandshakeMessage,
    KeyUpdateMsg,
};
use crate::crypto::{AeadDescriptor, CryptoProvider};
use crate::key_schedule::{traffic_keys, update_traffic_secret, Purpose, Sender, TrafficSecret};
use crate::record::{
    fragment, validate_plaintext_length, ContentType, DirectionState, Record, RecordError,
    RecordReader,
    INITIAL_RECORD_VERSION, LEGACY_RECORD_VERSION, MAX_PLAINTEXT,
};
use crate::transcript::Transcript;

/// Largest handshake message body accepted from a peer.
const MAX_HANDSHAKE_BODY: usize = 1 << 18;

/// Why a connection is being torn down.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Abort {
    pub alert: AlertDescription,
    pub reason: String,
    pub by_peer: bool,
}

impl Abort {
    pub fn new(alert: AlertDescription, reason: impl Into<String>) -> Self {
        Abort {
            alert,
            reason: reason.into(),
            by_peer: false,
        }
    }

    pub fn unexpected(what: impl Into<String>) -> Self {
        Abort::new(AlertDescription::UNEXPECTED_MESSAGE, what)
    }

    pub fn illegal(what: impl Into<String>) -> Self {
        Abort::new(AlertDescription::ILLEGAL_PARAMETER, what)
    }

    pub fn internal(what: impl std::fmt::Display) -> Self {
        Abort::new(AlertDescription::INTERNAL_ERROR, what.to_string())
    }

    pub fn codec(e: CodecError) -> Self {
        Abort::new(e.alert(), e.to_string())
    }

    fn record(e: RecordError) -> Self {
        Abort::new(e.alert(), e.to_string())
    }
}

pub(crate) type Flow<T = ()> = Result<T, Abort>;

pub(crate) enum Inbound {
    Handshake { msg: HandshakeMessage, raw: Vec<u8> },
    AppData(Vec<u8>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum SkipMode {
    /// Before the second ClientHello: unprotected application_data records are dropped.
    Discard,
    /// After ServerHello: records that fail to decrypt are dropped until one succeeds.
    TrialDecrypt,
}

/// Record plumbing shared by both engines.
#[derive(Debug)]
pub(crate) struct Connection {
    pub provider: Arc<dyn CryptoProvider>,
    interceptor: Option<Arc<dyn MessageInterceptor>>,
    reader: RecordReader,
    read: Option<DirectionState>,
    write: Option<DirectionState>,
    pub read_secret: Option<TrafficSecret>,
    pub write_secret: Option<TrafficSecret>,
    hs_buf: Vec<u8>,
    events: Vec<EngineEvent>,
    pad: usize,
    pub record_version: u16,
    pub client_random: [u8; 32],
    pub write_closed: bool,
    pub read_closed: bool,
    pub dead: bool,
    pub handshake_done: bool,
    pub aead: Option<AeadDescriptor>,
    skip: Option<SkipMode>,
    skip_budget: usize,
}

impl Connection {
    pub fn new(
        provider: Arc<dyn CryptoProvider>,
        interceptor: Option<Arc<dyn MessageInterceptor>>,
        pad: usize,
    ) -> Self {
        Connection {
            provider,
            interceptor,
            reader: RecordReader::new(),
            read: None,
            write: None,
            read_secret: None,
            write_secret: None,
            hs_buf: Vec::new(),
            events: Vec::new(),
            pad,
            record_version: INITIAL_RECORD_VERSION,
            client_random: [0; 32],
            write_closed: false,
            read_closed: false,
            dead: false,
            handshake_done: false,
            aead: None,
            skip: None,
            skip_budget: 0,
        }
    }

    pub fn emit(&mut self, event: EngineEvent) {
        self.events.push(event);
    }

    pub fn take_events(&mut self) -> Vec<EngineEvent> {
        std::mem::take(&mut self.events)
    }

    pub fn push_input(&mut self, bytes: &[u8]) {
        self.reader.push(bytes);
    }

    pub fn status(&self) -> RecordStatus {
        RecordStatus {
            read_sequence: self.read.as_ref().map(DirectionState::sequence),
            write_sequence: self.write.as_ref().map(DirectionState::sequence),
            read_generation: self.read_secret.as_ref().map(|s| s.generation),
            write_generation: self.write_secret.as_ref().map(|s| s.generation),
        }
    }

    fn ready_to_write(&self, connected: bool) -> Result<(), EngineError> {
        if self.dead {
            Err(EngineError::Dead)
        } else if self.write_closed {
            Err(EngineError::WriteClosed)
        } else if !connected {
            Err(EngineError::NotConnected)
        } else {
            Ok(())
        }
    }

    /// Runs an outbound operation on behalf of the public API.
    pub fn api(
        &mut self,
        connected: bool,
        op: impl FnOnce(&mut Self) -> Flow,
    ) -> Result<Vec<EngineEvent>, EngineError> {
        self.ready_to_write(connected)?;
        if let Err(a) = op(self) {
            self.fatal(a);
        }
        Ok(self.take_events())
    }

    pub fn checkpoint(&mut self, name: &'static str, transcript: &Transcript) -> Flow<Vec<u8>> {
        let hash = transcript
            .hash(self.provider.as_ref())
            .map_err(Abort::internal)?;
        self.emit(EngineEvent::Checkpoint {
            name,
            hash: hash.clone(),
        });
        Ok(hash)
    }

    pub fn start_skipping(&mut self, mode: SkipMode, budget: usize) {
        self.skip = Some(mode);
        self.skip_budget = budget;
    }

    pub fn stop_skipping(&mut self) {
        self.skip = None;
    }

    fn charge_skip(&mut self, len: usize) -> Flow {
        self.skip_budget = self
            .skip_budget
            .checked_sub(len)
            .ok_or_else(|| Abort::unexpected("early data skip limit exceeded"))?;
        Ok(())
    }

    fn keylog(&mut self, secret: &TrafficSecret) {
        let label = match (secret.purpose, secret.sender) {
            (Purpose::Handshake, Some(Sender::Client)) => {
                "CLIENT_HANDSHAKE_TRAFFIC_SECRET".to_string()
            }
            (Purpose::Handshake, Some(Sender::Server)) => {
                "SERVER_HANDSHAKE_TRAFFIC_SECRET".to_string()
            }
            (Purpose::Application, Some(Sender::Client)) => {
                format!("CLIENT_TRAFFIC_SECRET_{}", secret.generation)
            }
            (Purpose::Application, Some(Sender::Server)) => {
                format!("SERVER_TRAFFIC_SECRET_{}", secret.generation)
            }
            (Purpose::Early, _) => "CLIENT_EARLY_TRAFFIC_SECRET".to_string(),
            (Purpose::ExporterMaster, _) => "EXPORTER_SECRET".to_string(),
            (Purpose::EarlyExporter, _) => "EARLY_EXPORTER_SECRET".to_string(),
            _ => return,
        };
        self.emit(EngineEvent::SecretInstalled(KeyLogEntry {
            label,
            client_random: self.client_random,
            secret: secret.as_bytes().to_vec(),
        }));
    }

    pub fn log_secret(&mut self, secret: &TrafficSecret) {
        self.keylog(secret);
    }

    fn direction(&mut self, secret: &TrafficSecret, aead: &AeadDescriptor) -> Flow<DirectionState> {
        self.aead = Some(*aead);
        let keys = traffic_keys(self.provider.as_ref(), secret, aead).map_err(Abort::internal)?;
        Ok(DirectionState::new(*aead, keys))
    }

    /// Switches the inbound direction to new keys. A handshake message may
    /// not straddle the change.
    pub fn install_read(&mut self, secret: TrafficSecret, aead: &AeadDescriptor) -> Flow {
        if !self.hs_buf.is_empty() {
            return Err(Abort::unexpected("handshake message spans a key change"));
        }
        self.read = Some(self.direction(&secret, aead)?);
        self.keylog(&secret);
        self.read_secret = Some(secret);
        Ok(())
    }

    pub fn install_write(&mut self, secret: TrafficSecret, aead: &AeadDescriptor) -> Flow {
        self.write = Some(self.direction(&secret, aead)?);
        self.record_version = LEGACY_RECORD_VERSION;
        self.keylog(&secret);
        self.write_secret = Some(secret);
        Ok(())
    }

    fn current_aead(&self) -> Flow<AeadDescriptor> {
        self.aead.ok_or_else(|| Abort::internal("no traffic keys installed"))
    }

    /// Sends KeyUpdate under the current keys, then moves to the next write generation.
    pub fn send_key_update(&mut self, update_requested: bool) -> Flow {
        let current = self
            .write_secret
            .clone()
            .ok_or_else(|| Abort::internal("no write secret"))?;
        let next = update_traffic_secret(self.provider.as_ref(), &current)
            .map_err(Abort::internal)?;
        self.send_handshake(HandshakeMessage::KeyUpdate(KeyUpdateMsg { update_requested }))?;
        let aead = self.current_aead()?;
        let generation = next.generation;
        self.install_write(next, &aead)?;
        self.emit(EngineEvent::KeyUpdated {
            outbound: true,
            generation,
        });
        Ok(())
    }

    /// Peer moved to its next write generation; answer if it asked us to as well.
    pub fn on_key_update(&mut self, msg: &KeyUpdateMsg) -> Flow {
        let current = self
            .read_secret
            .clone()
            .ok_or_else(|| Abort::internal("no read secret"))?;
        let next = update_traffic_secret(self.provider.as_ref(), &current)
            .map_err(Abort::internal)?;
        let aead = self.current_aead()?;
        let generation = next.generation;
        self.install_read(next, &aead)?;
        self.emit(EngineEvent::KeyUpdated {
            outbound: false,
            generation,
        });
        if msg.update_requested && !self.write_closed {
            self.send_key_update(false)?;
        }
        Ok(())
    }

    fn write_payload(&mut self, payload: &[u8], content_type: ContentType) -> Flow {
        match &mut self.write {
            None => {
                for rec in fragment(payload, content_type, self.record_version) {
                    self.events.push(EngineEvent::EmitRecord(rec.encode()));
                }
            }
            Some(state) => {
                let chunks: Vec<&[u8]> = if payload.is_empty() {
                    vec![payload]
                } else {
                    payload.chunks(MAX_PLAINTEXT).collect()
                };
                for chunk in chunks {
                    let pad = self.pad.min(MAX_PLAINTEXT - chunk.len());
                    let rec = state
                        .protect(self.provider.as_ref(), chunk, content_type, pad)
                        .map_err(Abort::record)?;
                    self.events.push(EngineEvent::EmitRecord(rec.encode()));
                }
            }
        }
        Ok(())
    }

    /// Encodes and sends `msg` (after interception), returning the encodings
    /// actually sent so the caller can extend its transcript.
    pub fn send_handshake(&mut self, msg: HandshakeMessage) -> Flow<Vec<Vec<u8>>> {
        let msgs = match &self.interceptor {
            Some(i) => i.outbound(msg),
            None => vec![msg],
        };
        let mut sent = Vec::with_capacity(msgs.len());
        for m in msgs {
            let raw = encode_handshake(&m).map_err(Abort::internal)?;
            self.emit(EngineEvent::HandshakeMessage {
                outbound: true,
                label: m.label(),
                handshake_type: m.handshake_type(),
                encoding: raw.clone(),
            });
            self.write_payload(&raw, ContentType::HANDSHAKE)?;
            sent.push(raw);
        }
        Ok(sent)
    }

    /// Sends `msg` and appends what went out to `transcript`.
    pub fn send_and_record(
        &mut self,
        msg: HandshakeMessage,
        transcript: &mut Transcript,
    ) -> Flow {
        for raw in self.send_handshake(msg)? {
            transcript.append(&raw);
        }
        Ok(())
    }

    pub fn send_app_data(&mut self, data: &[u8]) -> Flow {
        if data.is_empty() {
            return Ok(());
        }
        self.write_payload(data, ContentType::APPLICATION_DATA)
    }

    pub fn send_close_notify(&mut self) -> Flow {
        let alert = Alert::new(AlertDescription::CLOSE_NOTIFY);
        self.write_payload(&alert.encode(), ContentType::ALERT)?;
        self.emit(EngineEvent::AlertSent(alert));
        self.write_closed = true;
        Ok(())
    }

    /// Tears the connection down. A locally detected error sends exactly one
    /// alert first; a peer's error alert is not answered.
    pub fn fatal(&mut self, abort: Abort) {
        if self.dead {
            return;
        }
        let alert = Alert::new(abort.alert);
        if !abort.by_peer && !self.write_closed {
            // Best effort: protection failures here leave nothing else to do.
            if self.write_payload(&alert.encode(), ContentType::ALERT).is_ok() {
                self.emit(EngineEvent::AlertSent(alert));
            }
        }
        self.dead = true;
        self.write_closed = true;
        self.read_closed = true;
        self.hs_buf.clear();
        self.emit(EngineEvent::Aborted {
            alert,
            reason: abort.reason,
            by_peer: abort.by_peer,
        });
    }

    fn take_handshake_message(&mut self) -> Flow<Option<Inbound>> {
        if self.hs_buf.len() < 4 {
            return Ok(None);
        }
        let len = u32::from_be_bytes([0, self.hs_buf[1], self.hs_buf[2], self.hs_buf[3]]) as usize;
        if len > MAX_HANDSHAKE_BODY {
            return Err(Abort::new(
                AlertDescription::DECODE_ERROR,
                format!("handshake message of {len} bytes"),
            ));
        }
        if self.hs_buf.len() < 4 + len {
            return Ok(None);
        }
        let raw: Vec<u8> = self.hs_buf.drain(..4 + len).collect();
        let (msg, _) = decode_handshake(&raw).map_err(|e| match e {
            CodecError::UnknownHandshakeType(t) => {
                Abort::unexpected(format!("unknown handshake type {t}"))
            }
            e => Abort::codec(e),
        })?;
        self.emit(EngineEvent::HandshakeMessage {
            outbound: false,
            label: msg.label(),
            handshake_type: msg.handshake_type(),
            encoding: raw.clone(),
        });
        Ok(Some(Inbound::Handshake { msg, raw }))
    }

    /// Next handshake message or application data, `None` when more input is needed.
    pub fn next_inbound(&mut self) -> Flow<Option<Inbound>> {
        loop {
            if let Some(m) = self.take_handshake_message()? {
                return Ok(Some(m));
            }
            if self.read_closed {
                // Everything after close_notify is ignored.
                while let Ok(Some(_)) = self.reader.next_record() {}
                return Ok(None);
            }
            let Some(rec) = self.reader.next_record().map_err(Abort::record)? else {
                return Ok(None);
            };
            if let Some(data) = self.process_record(rec)? {
                return Ok(Some(Inbound::AppData(data)));
            }
        }
    }

    fn process_record(&mut self, rec: Record) -> Flow<Option<Vec<u8>>> {
        if rec.content_type == ContentType::CHANGE_CIPHER_SPEC {
            // Compatibility records are tolerated until the handshake completes.
            if rec.payload == [1] && !self.handshake_done {
                return Ok(None);
            }
            return Err(Abort::unexpected("change_cipher_spec record"));
        }
        let unprotected_alert = rec.content_type == ContentType::ALERT && rec.payload.len() == 2;
        let Some(state) = self.read.as_mut().filter(|_| !unprotected_alert) else {
            validate_plaintext_length(&rec).map_err(Abort::record)?;
            return match rec.content_type {
                ContentType::HANDSHAKE => self.buffer_handshake(&rec.payload).map(|_| None),
                ContentType::ALERT => self.on_alert(&rec.payload).map(|_| None),
                ContentType::APPLICATION_DATA if self.skip == Some(SkipMode::Discard) => {
                    self.charge_skip(rec.payload.len()).map(|_| None)
                }
                t => Err(Abort::unexpected(format!("unprotected {t} record"))),
            };
        };
        if rec.content_type != ContentType::APPLICATION_DATA {
            return Err(Abort::unexpected(format!(
                "{} record after keys were installed",
                rec.content_type
            )));
        }
        let (content, content_type) = match state.unprotect(self.provider.as_ref(), &rec) {
            Ok(v) => v,
            Err(RecordError::BadRecordMac) if self.skip == Some(SkipMode::TrialDecrypt) => {
                return self.charge_skip(rec.payload.len()).map(|_| None);
            }
            Err(e) => return Err(Abort::record(e)),
        };
        if self.skip == Some(SkipMode::TrialDecrypt) {
            self.skip = None;
        }
        match content_type {
            ContentType::HANDSHAKE => self.buffer_handshake(&content).map(|_| None),
            ContentType::ALERT => self.on_alert(&content).map(|_| None),
            ContentType::APPLICATION_DATA => {
                if self.read_secret.as_ref().map(|s| s.purpose) != Some(Purpose::Application) {
                    return Err(Abort::unexpected("application data before handshake completion"));
                }
                if !self.hs_buf.is_empty() {
                    return Err(Abort::unexpected("application data inside a handshake message"));
                }
                Ok(Some(content))
            }
            t => Err(Abort::unexpected(format!("protected {t} content"))),
        }
    }

    fn buffer_handshake(&mut self, payload: &[u8]) -> Flow {
        if payload.is_empty() {
            return Err(Abort::unexpected("empty handshake fragment"));
        }
        self.hs_buf.extend_from_slice(payload);
        Ok(())
    }

    fn on_alert(&mut self, payload: &[u8]) -> Flow {
        if !self.hs_buf.is_empty() {
            return Err(Abort::unexpected("alert inside a handshake message"));
        }
        let alert = Alert::decode(payload).map_err(Abort::codec)?;
        match alert.description {
            AlertDescription::CLOSE_NOTIFY => {
                self.read_closed = true;
                self.emit(EngineEvent::PeerClosed);
                Ok(())
            }
            AlertDescription::USER_CANCELED => Ok(()),
            d => Err(Abort {
                alert: d,
                reason: format!("peer sent {d}"),
                by_peer: true,
            }),
        }
    }
}
