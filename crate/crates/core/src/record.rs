//! Record framing, fragmentation and AEAD protection.

use thiserror::Error;

use crate::codec::registry;
use crate::codec::AlertDescription;
use crate::crypto::{AeadDescriptor, CryptoProvider};
use crate::key_schedule::TrafficKeys;
use std::fmt;

pub const MAX_PLAINTEXT: usize = 1 << 14;
pub const MAX_CIPHERTEXT: usize = (1 << 14) + 256;
pub const HEADER_LEN: usize = 5;
pub const LEGACY_RECORD_VERSION: u16 = 0x0303;
/// Version a client may put on the record carrying its first ClientHello.
pub const INITIAL_RECORD_VERSION: u16 = 0x0301;

registry! {
    pub struct ContentType(u8) {
        CHANGE_CIPHER_SPEC = 20 => "change_cipher_spec",
        ALERT = 21 => "alert",
        HANDSHAKE = 22 => "handshake",
        APPLICATION_DATA = 23 => "application_data",
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RecordError {
    #[error("record length {0} exceeds limit")]
    Overflow(usize),
    #[error("record failed authentication")]
    BadRecordMac,
    #[error("protected record carries no content type")]
    NoContentType,
    #[error("sequence number exhausted")]
    SequenceExhausted,
    #[error("record protection failed: {0}")]
    Internal(String),
}

impl RecordError {
    pub fn alert(&self) -> AlertDescription {
        match self {
            RecordError::Overflow(_) => AlertDescription::RECORD_OVERFLOW,
            RecordError::BadRecordMac => AlertDescription::BAD_RECORD_MAC,
            RecordError::NoContentType => AlertDescription::UNEXPECTED_MESSAGE,
            RecordError::SequenceExhausted | RecordError::Internal(_) => {
                AlertDescription::INTERNAL_ERROR
            }
        }
    }
}

/// One record as it appears on the wire: 5-byte header and payload. For
/// protected records the payload is the AEAD output and the type is
/// application_data.
#[derive(Clone, PartialEq, Eq)]
pub struct Record {
    pub content_type: ContentType,
    pub version: u16,
    pub payload: Vec<u8>,
}

impl fmt::Debug for Record {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Record({}, 0x{:04x}, {} bytes)",
            self.content_type,
            self.version,
            self.payload.len()
        )
    }
}

impl Record {
    pub fn new(content_type: ContentType, payload: Vec<u8>) -> Self {
        Record {
            content_type,
            version: LEGACY_RECORD_VERSION,
            payload,
        }
    }

    pub fn header(&self) -> [u8; HEADER_LEN] {
        let len = (self.payload.len() as u16).to_be_bytes();
        let v = self.version.to_be_bytes();
        [self.content_type.0, v[0], v[1], len[0], len[1]]
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(&self.header());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Decodes exactly one record occupying all of `bytes`.
    pub fn decode(bytes: &[u8]) -> Result<Self, RecordError> {
        let mut r = RecordReader::new();
        r.push(bytes);
        match r.next_record()? {
            Some(rec) if r.buffered() == 0 => Ok(rec),
            _ => Err(RecordError::Internal("not exactly one record".into())),
        }
    }
}

/// Splits `payload` into plaintext records of at most 2^14 bytes each. An
/// empty payload yields no records.
pub fn fragment(payload: &[u8], content_type: ContentType, version: u16) -> Vec<Record> {
    payload
        .chunks(MAX_PLAINTEXT)
        .map(|chunk| Record {
            content_type,
            version,
            payload: chunk.to_vec(),
        })
        .collect()
}

pub fn validate_plaintext_length(record: &Record) -> Result<(), RecordError> {
    if record.payload.len() > MAX_PLAINTEXT {
        Err(RecordError::Overflow(record.payload.len()))
    } else {
        Ok(())
    }
}

/// Sequence number, left-padded to the IV length, XORed with the IV.
pub fn per_record_nonce(sequence: u64, iv: &[u8]) -> Vec<u8> {
    let mut nonce = iv.to_vec();
    let seq = sequence.to_be_bytes();
    let offset = nonce.len() - seq.len();
    for (n, s) in nonce[offset..].iter_mut().zip(seq) {
        *n ^= s;
    }
    nonce
}

/// Keys and sequence number for one direction of the connection.
#[derive(Debug, Clone)]
pub struct DirectionState {
    aead: AeadDescriptor,
    keys: TrafficKeys,
    sequence: u64,
}

impl DirectionState {
    pub fn new(aead: AeadDescriptor, keys: TrafficKeys) -> Self {
        DirectionState {
            aead,
            keys,
            sequence: 0,
        }
    }

    pub fn sequence(&self) -> u64 {
        self.sequence
    }

    pub fn aead(&self) -> &AeadDescriptor {
        &self.aead
    }

    pub fn keys(&self) -> &TrafficKeys {
        &self.keys
    }

    fn next_nonce(&mut self) -> Result<Vec<u8>, RecordError> {
        if self.sequence == u64::MAX {
            return Err(RecordError::SequenceExhausted);
        }
        Ok(per_record_nonce(self.sequence, self.keys.iv.as_bytes()))
    }

    /// Seals content ‖ type ‖ zeros(pad) into an application_data record.
    pub fn protect(
        &mut self,
        provider: &dyn CryptoProvider,
        content: &[u8],
        content_type: ContentType,
        pad: usize,
    ) -> Result<Record, RecordError> {
        let len = content.len() + 1 + pad + self.aead.tag_len;
        if len > MAX_CIPHERTEXT {
            return Err(RecordError::Overflow(len));
        }
        let mut inner = Vec::with_capacity(content.len() + 1 + pad);
        inner.extend_from_slice(content);
        inner.push(content_type.0);
        inner.resize(inner.len() + pad, 0);
        let mut record = Record::new(ContentType::APPLICATION_DATA, vec![0; len]);
        let aad = record.header();
        let nonce = self.next_nonce()?;
        record.payload = provider
            .seal(self.aead.alg, self.keys.key.as_bytes(), &nonce, &aad, &inner)
            .map_err(|e| RecordError::Internal(e.to_string()))?;
        debug_assert_eq!(record.payload.len(), len);
        self.sequence += 1;
        Ok(record)
    }

    pub fn unprotect(
        &mut self,
        provider: &dyn CryptoProvider,
        record: &Record,
    ) -> Result<(Vec<u8>, ContentType), RecordError> {
        if record.payload.len() > MAX_CIPHERTEXT {
            return Err(RecordError::Overflow(record.payload.len()));
        }
        let nonce = self.next_nonce()?;
        let mut inner = provider
            .open(
                self.aead.alg,
                self.keys.key.as_bytes(),
                &nonce,
                &record.header(),
                &record.payload,
            )
            .map_err(|_| RecordError::BadRecordMac)?;
        self.sequence += 1;
        let end = inner
            .iter()
            .rposition(|b| *b != 0)
            .ok_or(RecordError::NoContentType)?;
        let content_type = ContentType(inner[end]);
        inner.truncate(end);
        if inner.len() > MAX_PLAINTEXT {
            return Err(RecordError::Overflow(inner.len()));
        }
        Ok((inner, content_type))
    }
}

/// Reassembles records from an arbitrary byte stream.
#[derive(Debug, Default, Clone)]
pub struct RecordReader {
    buf: Vec<u8>,
}

impl RecordReader {
    pub fn new() -> Self {
        RecordReader::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    /// Next complete record, `None` if more bytes are needed. Oversized
    /// lengths are rejected from the header alone.
    pub fn next_record(&mut self) -> Result<Option<Record>, RecordError> {
        if self.buf.len() < HEADER_LEN {
            return Ok(None);
        }
        let len = u16::from_be_bytes([self.buf[3], self.buf[4]]) as usize;
        if len > MAX_CIPHERTEXT {
            return Err(RecordError::Overflow(len));
        }
        if self.buf.len() < HEADER_LEN + len {
            return Ok(None);
        }
        let record = Record {
            content_type: ContentType(self.buf[0]),
            version: u16::from_be_bytes([self.buf[1], self.buf[2]]),
            payload: self.buf[HEADER_LEN..HEADER_LEN + len].to_vec(),
        };
        self.buf.drain(..HEADER_LEN + len);
        Ok(Some(record))
    }
}
