//! HKDF extract/expand and the TLS 1.3 label conventions layered on top.

use std::fmt;

use thiserror::Error;
use zeroize::Zeroizing;

use crate::codec::put_vector;
use crate::crypto::{CryptoProvider, HashAlg};

/// Secret key material, wiped on drop. `Debug` never prints the bytes.
#[derive(Clone, PartialEq, Eq)]
pub struct Secret(Zeroizing<Vec<u8>>);

impl Secret {
    pub fn new(bytes: Vec<u8>) -> Self {
        Secret(Zeroizing::new(bytes))
    }

    pub fn zeros(len: usize) -> Self {
        Secret::new(vec![0; len])
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.as_bytes())
    }
}

impl From<&[u8]> for Secret {
    fn from(b: &[u8]) -> Self {
        Secret::new(b.to_vec())
    }
}

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Secret({} bytes)", self.0.len())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HkdfError {
    #[error("requested {requested} bytes, limit is {limit}")]
    OutputTooLong { requested: usize, limit: usize },
    #[error("label or context too long for HkdfLabel")]
    LabelTooLong,
}

/// Encodes HkdfLabel: u16 length ‖ vec<7..255>("tls13 " ‖ label) ‖ vec<0..255>(context).
pub fn hkdf_label(out_len: u16, label: &str, context: &[u8]) -> Result<Vec<u8>, HkdfError> {
    let mut full = Vec::with_capacity(6 + label.len());
    full.extend_from_slice(b"tls13 ");
    full.extend_from_slice(label.as_bytes());
    let mut out = Vec::with_capacity(4 + full.len() + context.len());
    out.extend_from_slice(&out_len.to_be_bytes());
    put_vector(&mut out, &full, 7, 255).map_err(|_| HkdfError::LabelTooLong)?;
    put_vector(&mut out, context, 0, 255).map_err(|_| HkdfError::LabelTooLong)?;
    Ok(out)
}

/// HKDF bound to one hash function and provider.
#[derive(Clone, Copy)]
pub struct Hkdf<'a> {
    provider: &'a dyn CryptoProvider,
    hash: HashAlg,
}

impl<'a> Hkdf<'a> {
    pub fn new(provider: &'a dyn CryptoProvider, hash: HashAlg) -> Self {
        Hkdf { provider, hash }
    }

    pub fn hash_alg(&self) -> HashAlg {
        self.hash
    }

    pub fn hash_len(&self) -> usize {
        self.hash.output_len()
    }

    /// HMAC(salt, ikm); a missing salt is Hash.length zero bytes.
    pub fn extract(&self, salt: Option<&[u8]>, ikm: &[u8]) -> Secret {
        let zeros;
        let salt = match salt {
            Some(s) => s,
            None => {
                zeros = vec![0u8; self.hash_len()];
                &zeros
            }
        };
        Secret::new(self.provider.hmac(self.hash, salt, ikm))
    }

    pub fn expand(&self, prk: &[u8], info: &[u8], out_len: usize) -> Result<Secret, HkdfError> {
        let limit = 255 * self.hash_len();
        if out_len > limit {
            return Err(HkdfError::OutputTooLong {
                requested: out_len,
                limit,
            });
        }
        let mut okm = Zeroizing::new(Vec::with_capacity(out_len + self.hash_len()));
        let mut block: Zeroizing<Vec<u8>> = Zeroizing::new(Vec::new());
        let mut counter = 1u8;
        while okm.len() < out_len {
            let mut msg = Zeroizing::new(Vec::with_capacity(block.len() + info.len() + 1));
            msg.extend_from_slice(&block);
            msg.extend_from_slice(info);
            msg.push(counter);
            block = Zeroizing::new(self.provider.hmac(self.hash, prk, &msg));
            okm.extend_from_slice(&block);
            counter = counter.wrapping_add(1);
        }
        okm.truncate(out_len);
        Ok(Secret::new(okm.to_vec()))
    }

    pub fn expand_label(
        &self,
        secret: &[u8],
        label: &str,
        context: &[u8],
        out_len: usize,
    ) -> Result<Secret, HkdfError> {
        let len16 = u16::try_from(out_len).map_err(|_| HkdfError::OutputTooLong {
            requested: out_len,
            limit: 255 * self.hash_len(),
        })?;
        self.expand(secret, &hkdf_label(len16, label, context)?, out_len)
    }

    /// Derive-Secret with an already computed transcript hash as context.
    pub fn derive_secret(&self, secret: &[u8], label: &str, transcript_hash: &[u8]) -> Secret {
        self.expand_label(secret, label, transcript_hash, self.hash_len())
            .expect("labels used by the key schedule fit HkdfLabel")
    }

    pub fn empty_hash(&self) -> Vec<u8> {
        self.provider.hash(self.hash, b"")
    }
}
