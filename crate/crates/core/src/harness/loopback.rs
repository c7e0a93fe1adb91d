use std::fmt;

use super::pipe::{Direction, Fault, LoopbackPipe};
use super::HarnessError;
use crate::codec::{AlertDescription, HandshakeType};
use crate::engine::{
    ClientConfig, ClientEngine, ClientState, EngineError, EngineEvent, KeyLogEntry,
    NegotiationResult, PreSharedKey, ServerConfig, ServerEngine, ServerState,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Client,
    Server,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Client => "client",
            Side::Server => "server",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoggedMessage {
    pub outbound: bool,
    pub label: &'static str,
    pub handshake_type: HandshakeType,
    pub encoding: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbortInfo {
    pub alert: AlertDescription,
    pub reason: String,
    pub by_peer: bool,
}

/// Everything one engine reported, in order.
#[derive(Debug, Default, Clone)]
pub struct SideLog {
    pub checkpoints: Vec<(&'static str, Vec<u8>)>,
    pub messages: Vec<LoggedMessage>,
    pub secrets: Vec<KeyLogEntry>,
    pub completed: Option<NegotiationResult>,
    pub tickets_issued: Vec<PreSharedKey>,
    pub tickets_received: Vec<PreSharedKey>,
    /// (outbound, generation) per installed update.
    pub key_updates: Vec<(bool, u32)>,
    pub post_handshake_auth: Vec<(Vec<u8>, bool)>,
    pub received: Vec<u8>,
    pub app_records: usize,
    pub peer_closed: bool,
    pub alerts_sent: Vec<AlertDescription>,
    pub aborted: Option<AbortInfo>,
    /// Records that arrived after this side had already aborted.
    pub ignored_records: usize,
}

impl SideLog {
    fn absorb(&mut self, events: Vec<EngineEvent>) -> Vec<Vec<u8>> {
        let mut out = Vec::new();
        for e in events {
            match e {
                EngineEvent::EmitRecord(r) => out.push(r),
                EngineEvent::HandshakeMessage {
                    outbound,
                    label,
                    handshake_type,
                    encoding,
                } => self.messages.push(LoggedMessage {
                    outbound,
                    label,
                    handshake_type,
                    encoding,
                }),
                EngineEvent::Checkpoint { name, hash } => self.checkpoints.push((name, hash)),
                EngineEvent::SecretInstalled(k) => self.secrets.push(k),
                EngineEvent::HandshakeComplete(r) => self.completed = Some(r),
                EngineEvent::TicketIssued(t) => self.tickets_issued.push(t),
                EngineEvent::TicketReceived(t) => self.tickets_received.push(t),
                EngineEvent::KeyUpdated {
                    outbound,
                    generation,
                } => self.key_updates.push((outbound, generation)),
                EngineEvent::PostHandshakeAuth {
                    context,
                    authenticated,
                } => self.post_handshake_auth.push((context, authenticated)),
                EngineEvent::AppData(d) => {
                    self.app_records += 1;
                    self.received.extend_from_slice(&d);
                }
                EngineEvent::PeerClosed => self.peer_closed = true,
                EngineEvent::AlertSent(a) => self.alerts_sent.push(a.description),
                EngineEvent::Aborted {
                    alert,
                    reason,
                    by_peer,
                } => {
                    self.aborted = Some(AbortInfo {
                        alert: alert.description,
                        reason,
                        by_peer,
                    })
                }
            }
        }
        out
    }

    pub fn checkpoint(&self, name: &str) -> Option<&[u8]> {
        self.checkpoints
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, h)| h.as_slice())
    }

    pub fn count(&self, outbound: bool, t: HandshakeType) -> usize {
        self.messages
            .iter()
            .filter(|m| m.outbound == outbound && m.handshake_type == t)
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Completed,
    Aborted {
        side: Side,
        alert: AlertDescription,
        reason: String,
    },
    /// Neither finished nor failed; only seen mid-handshake.
    Pending,
}

impl Outcome {
    pub fn alert(&self) -> Option<AlertDescription> {
        match self {
            Outcome::Aborted { alert, .. } => Some(*alert),
            _ => None,
        }
    }
}

/// A client and a server engine joined by a [`LoopbackPipe`] and pumped in
/// lock step on the calling thread.
#[derive(Debug)]
pub struct Loopback {
    pub client: ClientEngine,
    pub server: ServerEngine,
    pub pipe: LoopbackPipe,
    pub client_log: SideLog,
    pub server_log: SideLog,
}

impl Loopback {
    pub fn new(
        client: ClientConfig,
        server: ServerConfig,
        faults: Vec<Fault>,
    ) -> Result<Self, HarnessError> {
        let server = ServerEngine::new(server)?;
        let (client, events) = ClientEngine::start(client)?;
        let mut lb = Loopback {
            client,
            server,
            pipe: LoopbackPipe::new(faults),
            client_log: SideLog::default(),
            server_log: SideLog::default(),
        };
        lb.route(Side::Client, events);
        Ok(lb)
    }

    fn route(&mut self, from: Side, events: Vec<EngineEvent>) {
        let (log, dir) = match from {
            Side::Client => (&mut self.client_log, Direction::ClientToServer),
            Side::Server => (&mut self.server_log, Direction::ServerToClient),
        };
        for r in log.absorb(events) {
            self.pipe.send(dir, r);
        }
    }

    /// Delivers one queued record, if any, in the given direction.
    pub fn step(&mut self, dir: Direction) -> bool {
        let Some(r) = self.pipe.recv(dir) else {
            return false;
        };
        let (to, result) = match dir {
            Direction::ClientToServer => (Side::Server, self.server.handle_input(&r)),
            Direction::ServerToClient => (Side::Client, self.client.handle_input(&r)),
        };
        match result {
            Ok(events) => self.route(to, events),
            Err(_) => match to {
                Side::Client => self.client_log.ignored_records += 1,
                Side::Server => self.server_log.ignored_records += 1,
            },
        }
        true
    }

    /// Moves records until both queues stay empty; returns how many moved.
    pub fn pump(&mut self) -> usize {
        let mut moved = 0;
        loop {
            let before = moved;
            while self.step(Direction::ClientToServer) {
                moved += 1;
            }
            while self.step(Direction::ServerToClient) {
                moved += 1;
            }
            if moved == before && !self.pipe.release_held() {
                return moved;
            }
        }
    }

    pub fn outcome(&self) -> Outcome {
        let abort = |side: Side, log: &SideLog| {
            log.aborted.as_ref().map(|a| Outcome::Aborted {
                side,
                alert: a.alert,
                reason: a.reason.clone(),
            })
        };
        let detector = [
            (Side::Client, &self.client_log),
            (Side::Server, &self.server_log),
        ]
        .into_iter()
        .find(|(_, l)| l.aborted.as_ref().is_some_and(|a| !a.by_peer));
        if let Some(o) = detector.and_then(|(s, l)| abort(s, l)) {
            return o;
        }
        if let Some(o) = abort(Side::Client, &self.client_log) {
            return o;
        }
        if let Some(o) = abort(Side::Server, &self.server_log) {
            return o;
        }
        if self.client_log.completed.is_some() && self.server_log.completed.is_some() {
            Outcome::Completed
        } else {
            Outcome::Pending
        }
    }

    /// Pumps until the handshake settles. A handshake that neither completes
    /// nor aborts once the pipe is drained is a deadlock.
    pub fn handshake(&mut self) -> Result<Outcome, HarnessError> {
        self.pump();
        match self.outcome() {
            Outcome::Pending => Err(self.deadlock()),
            o => Ok(o),
        }
    }

    pub fn deadlock(&self) -> HarnessError {
        HarnessError::Deadlock {
            client: self.client.state(),
            server: self.server.state(),
            client_messages: self.client_log.messages.len(),
            server_messages: self.server_log.messages.len(),
        }
    }

    /// Runs an engine call and queues whatever it emits.
    pub fn client_call(
        &mut self,
        f: impl FnOnce(&mut ClientEngine) -> Result<Vec<EngineEvent>, EngineError>,
    ) -> Result<(), EngineError> {
        let events = f(&mut self.client)?;
        self.route(Side::Client, events);
        Ok(())
    }

    pub fn server_call(
        &mut self,
        f: impl FnOnce(&mut ServerEngine) -> Result<Vec<EngineEvent>, EngineError>,
    ) -> Result<(), EngineError> {
        let events = f(&mut self.server)?;
        self.route(Side::Server, events);
        Ok(())
    }

    /// Client sends `data`, the server echoes everything it received, and
    /// the returned bytes are what reached the client.
    pub fn echo(&mut self, data: &[u8]) -> Result<Vec<u8>, HarnessError> {
        let s0 = self.server_log.received.len();
        let c0 = self.client_log.received.len();
        self.client_call(|c| c.send_app_data(data))?;
        self.pump();
        let got = self.server_log.received[s0..].to_vec();
        if !got.is_empty() {
            self.server_call(|s| s.send_app_data(&got))?;
            self.pump();
        }
        Ok(self.client_log.received[c0..].to_vec())
    }

    pub fn client_state(&self) -> ClientState {
        self.client.state()
    }

    pub fn server_state(&self) -> ServerState {
        self.server.state()
    }
}
