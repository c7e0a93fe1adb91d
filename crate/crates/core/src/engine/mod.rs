//! Sans-IO client and server handshake engines.
//!
//! Engines take raw inbound bytes and return [`EngineEvent`]s; outbound bytes
//! appear as [`EngineEvent::EmitRecord`]. Nothing here blocks or touches I/O.

mod checks;
mod client;
mod config;
mod connection;
mod server;
mod ticket;

use std::fmt;

use thiserror::Error;

pub use client::{ClientEngine, ClientState};
pub use config::{
    CertificateVerifier, ClientAuthPolicy, ClientConfig, Clock, ConfigError, MockClock,
    PeerIdentity, PreSharedKey, RawPublicKeyVerifier, ServerConfig, SystemClock,
};
pub use server::{ServerEngine, ServerState};

use crate::codec::{
    Alert, CipherSuite, HandshakeMessage, HandshakeType, NamedGroup, ProtocolVersion,
    PskKeyExchangeMode, SignatureScheme,
};

/// Rewrites outbound handshake messages before they are encoded. The engine
/// sends, and records in its transcript, whatever this returns in place of
/// `msg`. Meant for fault injection in tests.
pub trait MessageInterceptor: Send + Sync + fmt::Debug {
    fn outbound(&self, msg: HandshakeMessage) -> Vec<HandshakeMessage>;
}

/// One line of an NSS key log.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KeyLogEntry {
    pub label: String,
    pub client_random: [u8; 32],
    pub secret: Vec<u8>,
}

impl KeyLogEntry {
    pub fn line(&self) -> String {
        format!(
            "{} {} {}",
            self.label,
            hex::encode(self.client_random),
            hex::encode(&self.secret)
        )
    }
}

impl fmt::Debug for KeyLogEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyLogEntry({})", self.label)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegotiationResult {
    pub version: ProtocolVersion,
    pub suite: CipherSuite,
    pub group: Option<NamedGroup>,
    pub psk_mode: Option<PskKeyExchangeMode>,
    pub signature_scheme: Option<SignatureScheme>,
    pub client_authenticated: bool,
    pub resumed: bool,
    pub hello_retry: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EngineEvent {
    /// A complete encoded record for the peer.
    EmitRecord(Vec<u8>),
    /// A handshake message sent or accepted, with its exact encoding.
    HandshakeMessage {
        outbound: bool,
        label: &'static str,
        handshake_type: HandshakeType,
        encoding: Vec<u8>,
    },
    /// Transcript hash at a point where keys or MACs are derived.
    Checkpoint { name: &'static str, hash: Vec<u8> },
    SecretInstalled(KeyLogEntry),
    HandshakeComplete(NegotiationResult),
    TicketIssued(PreSharedKey),
    TicketReceived(PreSharedKey),
    KeyUpdated { outbound: bool, generation: u32 },
    PostHandshakeAuth { context: Vec<u8>, authenticated: bool },
    AppData(Vec<u8>),
    PeerClosed,
    AlertSent(Alert),
    Aborted {
        alert: Alert,
        reason: String,
        by_peer: bool,
    },
}

/// Sequence numbers and secret generations of both directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RecordStatus {
    pub read_sequence: Option<u64>,
    pub write_sequence: Option<u64>,
    pub read_generation: Option<u32>,
    pub write_generation: Option<u32>,
}

/// Misuse of the engine API, as opposed to protocol failures, which surface as
/// [`EngineEvent::Aborted`].
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("connection was aborted and accepts no further input")]
    Dead,
    #[error("write direction already closed")]
    WriteClosed,
    #[error("operation needs a completed handshake")]
    NotConnected,
    #[error("peer did not offer post-handshake authentication")]
    NotOffered,
    #[error("a post-handshake authentication request is already pending")]
    Busy,
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// Names used in [`EngineEvent::Checkpoint`].
pub mod checkpoint {
    pub const HELLO_RETRY: &str = "hello_retry_request";
    pub const SERVER_HELLO: &str = "server_hello";
    pub const PRE_SERVER_FINISHED: &str = "pre_server_finished";
    pub const SERVER_FINISHED: &str = "server_finished";
    pub const CLIENT_FINISHED: &str = "client_finished";
}

pub(crate) const SERVER_CV_CONTEXT: &[u8] = b"TLS 1.3, server CertificateVerify";
pub(crate) const CLIENT_CV_CONTEXT: &[u8] = b"TLS 1.3, client CertificateVerify";

/// Input to a CertificateVerify signature: 64 spaces, context string, a zero byte, the transcript hash.
pub fn signed_content(context: &[u8], transcript_hash: &[u8]) -> Vec<u8> {
    let mut out = vec![0x20; 64];
    out.extend_from_slice(context);
    out.push(0);
    out.extend_from_slice(transcript_hash);
    out
}
