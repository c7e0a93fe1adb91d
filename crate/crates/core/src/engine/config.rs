use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use thiserror::Error;

use crate::codec::{
    AlertDescription, CertificateEntry, CipherSuite, Extension, NamedGroup, ProtocolVersion,
    PskKeyExchangeMode, SignatureScheme,
};
use crate::crypto::{default_provider, suite_params, CryptoProvider, HashAlg, SigningKey};
use crate::hkdf::Secret;
use crate::key_schedule::PskKind;

use super::MessageInterceptor;

/// Milliseconds since the Unix epoch, injectable for tests.
pub trait Clock: Send + Sync + fmt::Debug {
    fn now_ms(&self) -> u64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

/// Clock that only moves when told to.
#[derive(Debug, Default)]
pub struct MockClock(AtomicU64);

impl MockClock {
    pub fn new(start_ms: u64) -> Arc<Self> {
        Arc::new(MockClock(AtomicU64::new(start_ms)))
    }

    pub fn advance(&self, ms: u64) {
        self.0.fetch_add(ms, Ordering::SeqCst);
    }

    pub fn set(&self, ms: u64) {
        self.0.store(ms, Ordering::SeqCst);
    }
}

impl Clock for MockClock {
    fn now_ms(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

/// A pre-shared key as either side stores it.
#[derive(Clone, PartialEq, Eq)]
pub struct PreSharedKey {
    pub identity: Vec<u8>,
    pub secret: Secret,
    pub kind: PskKind,
    pub hash: HashAlg,
    pub ticket_age_add: u32,
    /// Seconds; zero for external keys, which never expire.
    pub lifetime: u32,
    /// When the ticket was received (client) or issued (server).
    pub issued_at_ms: u64,
    pub max_early_data: Option<u32>,
}

impl fmt::Debug for PreSharedKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PreSharedKey")
            .field("identity", &hex::encode(&self.identity))
            .field("kind", &self.kind)
            .field("hash", &self.hash)
            .field("lifetime", &self.lifetime)
            .finish_non_exhaustive()
    }
}

impl PreSharedKey {
    /// External key. `hash` defaults to SHA-256 when the provisioning
    /// context does not say otherwise.
    pub fn external(identity: &[u8], secret: &[u8], hash: Option<HashAlg>) -> Self {
        PreSharedKey {
            identity: identity.to_vec(),
            secret: Secret::from(secret),
            kind: PskKind::External,
            hash: hash.unwrap_or(HashAlg::Sha256),
            ticket_age_add: 0,
            lifetime: 0,
            issued_at_ms: 0,
            max_early_data: None,
        }
    }

    pub fn is_expired(&self, now_ms: u64) -> bool {
        self.kind == PskKind::Resumption
            && now_ms.saturating_sub(self.issued_at_ms) > u64::from(self.lifetime) * 1000
    }
}

/// What a certificate verifier learned about the peer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeerIdentity {
    pub public_key: Vec<u8>,
    /// Signature algorithms used inside the certificate chain itself.
    pub chain_signature_schemes: Vec<SignatureScheme>,
}

/// Decides whether a certificate list authenticates the peer. Chain
/// validation is deliberately left to implementations of this trait.
pub trait CertificateVerifier: Send + Sync + fmt::Debug {
    fn verify(&self, entries: &[CertificateEntry]) -> Result<PeerIdentity, AlertDescription>;
}

/// Raw public key certificates: exactly one entry whose data is the key,
/// optionally pinned to a known value.
#[derive(Debug, Clone, Default)]
pub struct RawPublicKeyVerifier {
    pub pinned: Option<Vec<u8>>,
}

impl RawPublicKeyVerifier {
    pub fn pinned(key: &[u8]) -> Arc<Self> {
        Arc::new(RawPublicKeyVerifier {
            pinned: Some(key.to_vec()),
        })
    }
}

impl CertificateVerifier for RawPublicKeyVerifier {
    fn verify(&self, entries: &[CertificateEntry]) -> Result<PeerIdentity, AlertDescription> {
        let [entry] = entries else {
            return Err(AlertDescription::BAD_CERTIFICATE);
        };
        if let Some(pin) = &self.pinned {
            if *pin != entry.data {
                return Err(AlertDescription::BAD_CERTIFICATE);
            }
        }
        Ok(PeerIdentity {
            public_key: entry.data.clone(),
            chain_signature_schemes: Vec::new(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClientAuthPolicy {
    Off,
    Request,
    Require,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("no cipher suites configured")]
    NoSuites,
    #[error("no key exchange groups configured")]
    NoGroups,
    #[error("cipher suite {0} not supported by the crypto provider")]
    UnsupportedSuite(CipherSuite),
    #[error("group {0} not supported by the crypto provider")]
    UnsupportedGroup(NamedGroup),
    #[error("no offered cipher suite uses the hash of any offered PSK")]
    PskHashMismatch,
    #[error("PSK-only offer needs at least one PSK")]
    NothingToOffer,
    #[error("server needs a signing credential or a PSK")]
    NoCredential,
    #[error("ticket lifetime exceeds seven days")]
    TicketLifetime,
    #[error("ticket key must be 16 bytes")]
    TicketKey,
}

#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub provider: Arc<dyn CryptoProvider>,
    pub versions: Vec<ProtocolVersion>,
    pub cipher_suites: Vec<CipherSuite>,
    pub groups: Vec<NamedGroup>,
    /// Groups to send key shares for; `None` means the first of `groups`,
    /// an empty list asks the server to pick.
    pub key_share_groups: Option<Vec<NamedGroup>>,
    pub signature_schemes: Vec<SignatureScheme>,
    pub signature_schemes_cert: Option<Vec<SignatureScheme>>,
    /// Offer (EC)DHE; when false only PSKs are offered.
    pub offer_dhe: bool,
    pub psks: Vec<PreSharedKey>,
    pub psk_modes: Vec<PskKeyExchangeMode>,
    pub credential: Option<SigningKey>,
    pub offer_post_handshake_auth: bool,
    pub offer_early_data: bool,
    pub server_name: Option<String>,
    pub verifier: Arc<dyn CertificateVerifier>,
    pub reject_sha1_certificates: bool,
    /// Appended to the ClientHello, before any pre_shared_key.
    pub extra_extensions: Vec<Extension>,
    pub interceptor: Option<Arc<dyn MessageInterceptor>>,
    pub clock: Arc<dyn Clock>,
    pub seed: u64,
    pub padding: usize,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            provider: default_provider(),
            versions: vec![ProtocolVersion::TLS13],
            cipher_suites: vec![
                CipherSuite::TLS_AES_128_GCM_SHA256,
                CipherSuite::TLS_AES_256_GCM_SHA384,
                CipherSuite::TLS_CHACHA20_POLY1305_SHA256,
            ],
            groups: vec![NamedGroup::X25519, NamedGroup::SECP256R1],
            key_share_groups: None,
            signature_schemes: vec![
                SignatureScheme::ED25519,
                SignatureScheme::ECDSA_SECP256R1_SHA256,
            ],
            signature_schemes_cert: None,
            offer_dhe: true,
            psks: Vec::new(),
            psk_modes: vec![PskKeyExchangeMode::PSK_DHE_KE],
            credential: None,
            offer_post_handshake_auth: false,
            offer_early_data: false,
            server_name: None,
            verifier: Arc::new(RawPublicKeyVerifier::default()),
            reject_sha1_certificates: true,
            extra_extensions: Vec::new(),
            interceptor: None,
            clock: Arc::new(SystemClock),
            seed: 0,
            padding: 0,
        }
    }
}

impl ClientConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.cipher_suites.is_empty() {
            return Err(ConfigError::NoSuites);
        }
        if let Some(s) = self
            .cipher_suites
            .iter()
            .find(|s| !self.provider.supports_suite(**s))
        {
            return Err(ConfigError::UnsupportedSuite(*s));
        }
        if self.offer_dhe {
            if self.groups.is_empty() {
                return Err(ConfigError::NoGroups);
            }
            for g in self.share_groups() {
                if !self.provider.supports_group(g) {
                    return Err(ConfigError::UnsupportedGroup(g));
                }
            }
        } else if self.psks.is_empty() {
            return Err(ConfigError::NothingToOffer);
        }
        if !self.psks.is_empty()
            && !self.cipher_suites.iter().any(|s| {
                suite_params(*s).is_some_and(|p| self.psks.iter().any(|k| k.hash == p.hash))
            })
        {
            return Err(ConfigError::PskHashMismatch);
        }
        Ok(())
    }

    pub fn share_groups(&self) -> Vec<NamedGroup> {
        match &self.key_share_groups {
            Some(g) => g.clone(),
            None => self.groups.iter().take(1).copied().collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub provider: Arc<dyn CryptoProvider>,
    pub cipher_suites: Vec<CipherSuite>,
    pub groups: Vec<NamedGroup>,
    /// Schemes accepted in a client CertificateVerify.
    pub signature_schemes: Vec<SignatureScheme>,
    pub credentials: Vec<SigningKey>,
    pub client_auth: ClientAuthPolicy,
    pub client_verifier: Arc<dyn CertificateVerifier>,
    pub external_psks: Vec<PreSharedKey>,
    pub psk_modes: Vec<PskKeyExchangeMode>,
    pub ticket_count: usize,
    pub ticket_lifetime: u32,
    /// 16-byte key sealing session tickets. Servers sharing it can resume
    /// each other's tickets; `None` draws a fresh key from the seed.
    pub ticket_key: Option<Secret>,
    pub use_cookie: bool,
    pub require_server_name: bool,
    pub check_legacy_fields: bool,
    pub reject_sha1_certificates: bool,
    /// Bytes of undecryptable or discarded early data tolerated before aborting.
    pub max_early_data_skip: usize,
    pub interceptor: Option<Arc<dyn MessageInterceptor>>,
    pub clock: Arc<dyn Clock>,
    pub seed: u64,
    pub padding: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            provider: default_provider(),
            cipher_suites: vec![
                CipherSuite::TLS_AES_128_GCM_SHA256,
                CipherSuite::TLS_AES_256_GCM_SHA384,
                CipherSuite::TLS_CHACHA20_POLY1305_SHA256,
            ],
            groups: vec![NamedGroup::X25519, NamedGroup::SECP256R1],
            signature_schemes: vec![
                SignatureScheme::ED25519,
                SignatureScheme::ECDSA_SECP256R1_SHA256,
            ],
            credentials: Vec::new(),
            client_auth: ClientAuthPolicy::Off,
            client_verifier: Arc::new(RawPublicKeyVerifier::default()),
            external_psks: Vec::new(),
            psk_modes: vec![PskKeyExchangeMode::PSK_DHE_KE, PskKeyExchangeMode::PSK_KE],
            ticket_count: 0,
            ticket_lifetime: 7200,
            ticket_key: None,
            use_cookie: false,
            require_server_name: false,
            check_legacy_fields: true,
            reject_sha1_certificates: true,
            max_early_data_skip: 1 << 14,
            interceptor: None,
            clock: Arc::new(SystemClock),
            seed: 1,
            padding: 0,
        }
    }
}

impl ServerConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.cipher_suites.is_empty() {
            return Err(ConfigError::NoSuites);
        }
        if let Some(s) = self
            .cipher_suites
            .iter()
            .find(|s| !self.provider.supports_suite(**s))
        {
            return Err(ConfigError::UnsupportedSuite(*s));
        }
        if let Some(g) = self.groups.iter().find(|g| !self.provider.supports_group(**g)) {
            return Err(ConfigError::UnsupportedGroup(*g));
        }
        if self.credentials.is_empty() && self.external_psks.is_empty() {
            return Err(ConfigError::NoCredential);
        }
        if self.ticket_lifetime > crate::codec::MAX_TICKET_LIFETIME {
            return Err(ConfigError::TicketLifetime);
        }
        if self.ticket_key.as_ref().is_some_and(|k| k.len() != 16) {
            return Err(ConfigError::TicketKey);
        }
        Ok(())
    }
}
