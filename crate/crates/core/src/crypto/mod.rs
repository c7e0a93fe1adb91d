//! Boundary between the protocol and the cryptographic primitives it consumes.
//!
//! The engine only ever talks to [`CryptoProvider`]; [`RustCryptoProvider`] is the
//! default backing built on the RustCrypto crates.

mod rust_crypto;

use std::fmt;
use std::sync::Arc;

use rand::RngCore;
use thiserror::Error;
use zeroize::Zeroizing;

use crate::codec::{CipherSuite, NamedGroup, SignatureScheme};

pub use rust_crypto::RustCryptoProvider;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HashAlg {
    Sha256,
    Sha384,
}

impl HashAlg {
    pub fn output_len(self) -> usize {
        match self {
            HashAlg::Sha256 => 32,
            HashAlg::Sha384 => 48,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HashAlg::Sha256 => "sha256",
            HashAlg::Sha384 => "sha384",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "sha256" | "sha-256" => Some(HashAlg::Sha256),
            "sha384" | "sha-384" => Some(HashAlg::Sha384),
            _ => None,
        }
    }
}

impl fmt::Display for HashAlg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AeadAlg {
    Aes128Gcm,
    Aes256Gcm,
    ChaCha20Poly1305,
    Aes128Ccm,
    Aes128Ccm8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AeadDescriptor {
    pub alg: AeadAlg,
    pub key_len: usize,
    pub iv_len: usize,
    pub tag_len: usize,
}

impl AeadAlg {
    pub fn descriptor(self) -> AeadDescriptor {
        let (key_len, tag_len) = match self {
            AeadAlg::Aes128Gcm | AeadAlg::Aes128Ccm => (16, 16),
            AeadAlg::Aes128Ccm8 => (16, 8),
            AeadAlg::Aes256Gcm | AeadAlg::ChaCha20Poly1305 => (32, 16),
        };
        AeadDescriptor {
            alg: self,
            key_len,
            iv_len: 12,
            tag_len,
        }
    }
}

/// The hash and AEAD a cipher suite names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SuiteParams {
    pub suite: CipherSuite,
    pub hash: HashAlg,
    pub aead: AeadDescriptor,
}

pub fn suite_params(suite: CipherSuite) -> Option<SuiteParams> {
    let (hash, aead) = match suite {
        CipherSuite::TLS_AES_128_GCM_SHA256 => (HashAlg::Sha256, AeadAlg::Aes128Gcm),
        CipherSuite::TLS_AES_256_GCM_SHA384 => (HashAlg::Sha384, AeadAlg::Aes256Gcm),
        CipherSuite::TLS_CHACHA20_POLY1305_SHA256 => (HashAlg::Sha256, AeadAlg::ChaCha20Poly1305),
        CipherSuite::TLS_AES_128_CCM_SHA256 => (HashAlg::Sha256, AeadAlg::Aes128Ccm),
        CipherSuite::TLS_AES_128_CCM_8_SHA256 => (HashAlg::Sha256, AeadAlg::Aes128Ccm8),
        _ => return None,
    };
    Some(SuiteParams {
        suite,
        hash,
        aead: aead.descriptor(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("AEAD authentication failed")]
    AeadFailure,
    #[error("invalid key or nonce length")]
    BadLength,
    #[error("invalid peer key share")]
    InvalidShare,
    #[error("invalid key material")]
    InvalidKey,
}

/// Private half of an ephemeral key share.
pub struct KeyExchangeSecret {
    pub group: NamedGroup,
    bytes: Zeroizing<Vec<u8>>,
}

impl KeyExchangeSecret {
    pub fn new(group: NamedGroup, bytes: Vec<u8>) -> Self {
        KeyExchangeSecret {
            group,
            bytes: Zeroizing::new(bytes),
        }
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }
}

impl fmt::Debug for KeyExchangeSecret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyExchangeSecret({}, ..)", self.group)
    }
}

/// Long-term signing credential. `public` is the raw public key carried in
/// the Certificate message.
#[derive(Clone)]
pub struct SigningKey {
    pub scheme: SignatureScheme,
    secret: Zeroizing<Vec<u8>>,
    pub public: Vec<u8>,
}

impl SigningKey {
    pub fn new(scheme: SignatureScheme, secret: Vec<u8>, public: Vec<u8>) -> Self {
        SigningKey {
            scheme,
            secret: Zeroizing::new(secret),
            public,
        }
    }

    pub fn secret_bytes(&self) -> &[u8] {
        &self.secret
    }
}

impl fmt::Debug for SigningKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SigningKey")
            .field("scheme", &self.scheme)
            .field("public", &hex::encode(&self.public))
            .finish_non_exhaustive()
    }
}

pub trait CryptoProvider: Send + Sync + fmt::Debug {
    fn hash(&self, alg: HashAlg, data: &[u8]) -> Vec<u8>;

    fn hmac(&self, alg: HashAlg, key: &[u8], msg: &[u8]) -> Vec<u8>;

    fn supports_aead(&self, alg: AeadAlg) -> bool;

    /// Returns ciphertext ‖ tag.
    fn seal(
        &self,
        alg: AeadAlg,
        key: &[u8],
        nonce: &[u8],
        aad: &[u8],
        plaintext: &[u8],
    ) -> Result<Vec<u8>, CryptoError>;

    fn open(
        &self,
        alg: AeadAlg,
        key: &[u8],
        nonce: &[u8],
        aad: &[u8],
        ciphertext: &[u8],
    ) -> Result<Vec<u8>, CryptoError>;

    fn supports_group(&self, group: NamedGroup) -> bool;

    fn generate_share(
        &self,
        group: NamedGroup,
        rng: &mut dyn RngCore,
    ) -> Result<(Vec<u8>, KeyExchangeSecret), CryptoError>;

    fn agree(
        &self,
        secret: &KeyExchangeSecret,
        peer_share: &[u8],
    ) -> Result<Zeroizing<Vec<u8>>, CryptoError>;

    fn supports_signature(&self, scheme: SignatureScheme) -> bool;

    fn generate_signing_key(
        &self,
        scheme: SignatureScheme,
        rng: &mut dyn RngCore,
    ) -> Result<SigningKey, CryptoError>;

    fn sign(&self, key: &SigningKey, msg: &[u8]) -> Result<Vec<u8>, CryptoError>;

    fn verify(&self, scheme: SignatureScheme, public: &[u8], msg: &[u8], signature: &[u8]) -> bool;

    fn supports_suite(&self, suite: CipherSuite) -> bool {
        suite_params(suite).is_some_and(|p| self.supports_aead(p.aead.alg))
    }
}

pub fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    use subtle::ConstantTimeEq;
    a.len() == b.len() && bool::from(a.ct_eq(b))
}

pub fn default_provider() -> Arc<dyn CryptoProvider> {
    Arc::new(RustCryptoProvider)
}
