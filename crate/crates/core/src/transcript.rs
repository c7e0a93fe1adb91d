//! Running transcript of framed handshake messages.

use thiserror::Error;

use crate::crypto::{CryptoProvider, HashAlg};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TranscriptError {
    #[error("hash algorithm not yet negotiated")]
    NoHash,
    #[error("retry substitution already applied")]
    AlreadySubstituted,
    #[error("transcript holds no first ClientHello to substitute")]
    NothingToSubstitute,
    #[error("binders length {binders} not smaller than message length {message}")]
    BindersTooLong { binders: usize, message: usize },
}

/// Synthetic `message_hash` handshake message that stands in for the first
/// ClientHello once a HelloRetryRequest has been exchanged.
pub fn synthetic_message(provider: &dyn CryptoProvider, hash: HashAlg, first_client_hello: &[u8]) -> Vec<u8> {
    let digest = provider.hash(hash, first_client_hello);
    let mut out = Vec::with_capacity(4 + digest.len());
    out.extend_from_slice(&[0xfe, 0x00, 0x00, digest.len() as u8]);
    out.extend_from_slice(&digest);
    out
}

/// Ordered list of framed messages. The hash may be fixed after messages
/// have been appended, since the suite is only known after ServerHello.
#[derive(Debug, Clone, Default)]
pub struct Transcript {
    hash: Option<HashAlg>,
    messages: Vec<Vec<u8>>,
    substituted: bool,
}

impl Transcript {
    pub fn new() -> Self {
        Transcript::default()
    }

    pub fn with_hash(hash: HashAlg) -> Self {
        Transcript {
            hash: Some(hash),
            ..Transcript::default()
        }
    }

    pub fn set_hash(&mut self, hash: HashAlg) {
        self.hash = Some(hash);
    }

    pub fn hash_alg(&self) -> Option<HashAlg> {
        self.hash
    }

    pub fn append(&mut self, framed: &[u8]) {
        self.messages.push(framed.to_vec());
    }

    pub fn messages(&self) -> &[Vec<u8>] {
        &self.messages
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn concatenation(&self) -> Vec<u8> {
        self.messages.concat()
    }

    pub fn hash(&self, provider: &dyn CryptoProvider) -> Result<Vec<u8>, TranscriptError> {
        let alg = self.hash.ok_or(TranscriptError::NoHash)?;
        Ok(provider.hash(alg, &self.concatenation()))
    }

    /// Replaces the first message with its `message_hash` stand-in. When
    /// `first_client_hello` is given it is used instead of the buffered one.
    pub fn substitute_hrr(
        &mut self,
        provider: &dyn CryptoProvider,
        first_client_hello: Option<&[u8]>,
    ) -> Result<(), TranscriptError> {
        if self.substituted {
            return Err(TranscriptError::AlreadySubstituted);
        }
        let alg = self.hash.ok_or(TranscriptError::NoHash)?;
        let synthetic = match first_client_hello {
            Some(ch) => synthetic_message(provider, alg, ch),
            None => synthetic_message(
                provider,
                alg,
                self.messages.first().ok_or(TranscriptError::NothingToSubstitute)?,
            ),
        };
        match self.messages.first_mut() {
            Some(first) => *first = synthetic,
            None => self.messages.push(synthetic),
        }
        self.substituted = true;
        Ok(())
    }

    pub fn is_substituted(&self) -> bool {
        self.substituted
    }
}

/// Hash over a ClientHello with its trailing binders list removed, optionally
/// preceded by the first ClientHello and the HelloRetryRequest exactly as sent.
pub fn truncated_hash(
    provider: &dyn CryptoProvider,
    hash: HashAlg,
    client_hello: &[u8],
    binders_len: usize,
    prior: Option<(&[u8], &[u8])>,
) -> Result<Vec<u8>, TranscriptError> {
    if binders_len > 0 && binders_len >= client_hello.len() {
        return Err(TranscriptError::BindersTooLong {
            binders: binders_len,
            message: client_hello.len(),
        });
    }
    let mut input = Vec::new();
    if let Some((ch1, hrr)) = prior {
        input.extend_from_slice(ch1);
        input.extend_from_slice(hrr);
    }
    input.extend_from_slice(&client_hello[..client_hello.len() - binders_len]);
    Ok(provider.hash(hash, &input))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::RustCryptoProvider;

    const P: RustCryptoProvider = RustCryptoProvider;

    #[test]
    fn empty_hash() {
        let t = Transcript::with_hash(HashAlg::Sha256);
        assert_eq!(
            hex::encode(t.hash(&P).unwrap()),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn order_matters() {
        let mut a = Transcript::with_hash(HashAlg::Sha256);
        a.append(b"\x01\x00\x00\x01x");
        a.append(b"\x02\x00\x00\x01y");
        let mut b = Transcript::with_hash(HashAlg::Sha256);
        b.append(b"\x02\x00\x00\x01y");
        b.append(b"\x01\x00\x00\x01x");
        assert_ne!(a.hash(&P).unwrap(), b.hash(&P).unwrap());
        assert_eq!(a.hash(&P).unwrap(), a.hash(&P).unwrap());
    }

    #[test]
    fn substitution_header_and_once_only() {
        let ch1 = b"\x01\x00\x00\x03abc";
        let mut t = Transcript::new();
        t.append(ch1);
        assert_eq!(t.substitute_hrr(&P, None), Err(TranscriptError::NoHash));
        t.set_hash(HashAlg::Sha256);
        t.substitute_hrr(&P, None).unwrap();
        let m = &t.messages()[0];
        assert_eq!(&m[..4], &[0xfe, 0, 0, 0x20]);
        assert_eq!(&m[4..], &P.hash(HashAlg::Sha256, ch1)[..]);
        assert_eq!(t.hash(&P).unwrap(), P.hash(HashAlg::Sha256, m));
        assert_eq!(
            t.substitute_hrr(&P, None),
            Err(TranscriptError::AlreadySubstituted)
        );
    }

    #[test]
    fn truncation() {
        let ch = b"\x01\x00\x00\x06abcdef";
        let h = truncated_hash(&P, HashAlg::Sha256, ch, 3, None).unwrap();
        assert_eq!(h, P.hash(HashAlg::Sha256, b"\x01\x00\x00\x06abc"));
        let full = truncated_hash(&P, HashAlg::Sha256, ch, 0, None).unwrap();
        assert_eq!(full, P.hash(HashAlg::Sha256, ch));
        assert!(truncated_hash(&P, HashAlg::Sha256, ch, 10, None).is_err());
        let with_prior = truncated_hash(&P, HashAlg::Sha256, ch, 3, Some((b"A", b"B"))).unwrap();
        assert_eq!(with_prior, P.hash(HashAlg::Sha256, b"AB\x01\x00\x00\x06abc"));
    }
}
