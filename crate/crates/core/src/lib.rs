//! Sans-IO TLS 1.3: wire codecs, key schedule, record protection and the
//! client/server handshake state machines, plus an in-memory loopback harness.

pub mod codec;
pub mod crypto;
pub mod engine;
pub mod harness;
pub mod hkdf;
pub mod key_schedule;
pub mod record;
pub mod transcript;
