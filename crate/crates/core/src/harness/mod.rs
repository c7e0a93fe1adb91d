//! In-memory loopback harness: joins a client and a server engine through a
//! scriptable pipe, runs post-handshake actions, and renders reports.

mod keylog;
mod loopback;
mod pipe;
mod scenario;
mod tickets;

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

pub use keylog::KeyLog;
pub use loopback::{AbortInfo, LoggedMessage, Loopback, Outcome, Side, SideLog};
pub use pipe::{Direction, Fault, LoopbackPipe, TraceEntry};
pub use scenario::{
    run_loopback, run_scenario, scenario_configs, Action, KeyUpdateOption, LoopbackRun, PskOption,
    ScenarioOptions, ScenarioReport, ScenarioRun,
};
pub use tickets::TicketStoreFile;

use crate::codec::HandshakeMessage;
use crate::crypto::CryptoError;
use crate::engine::{ClientState, EngineError, MessageInterceptor, ServerState};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(
        "deadlock: both engines waiting (client {client:?} after {client_messages} messages, \
         server {server:?} after {server_messages} messages)"
    )]
    Deadlock {
        client: ClientState,
        server: ServerState,
        client_messages: usize,
        server_messages: usize,
    },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed ticket store line {0}")]
    TicketStore(usize),
}

type RewriteFn = dyn Fn(HandshakeMessage) -> Vec<HandshakeMessage> + Send + Sync;

/// Interceptor backed by a closure.
#[derive(Clone)]
pub struct FnInterceptor(Arc<RewriteFn>);

impl FnInterceptor {
    pub fn new(
        f: impl Fn(HandshakeMessage) -> Vec<HandshakeMessage> + Send + Sync + 'static,
    ) -> Arc<Self> {
        Arc::new(FnInterceptor(Arc::new(f)))
    }
}

impl fmt::Debug for FnInterceptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("FnInterceptor")
    }
}

impl MessageInterceptor for FnInterceptor {
    fn outbound(&self, msg: HandshakeMessage) -> Vec<HandshakeMessage> {
        (self.0)(msg)
    }
}
