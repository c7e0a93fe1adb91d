//! Presentation-language codecs for TLS 1.3 handshake structures.
//!
//! Everything here is a pure function of its inputs: no negotiation state and
//! no policy beyond the structural constants the protocol pins down.

mod alert;
mod extensions;
mod messages;
mod types;

pub use alert::{Alert, AlertDescription, AlertLevel};
pub use extensions::{
    check_extension_placement, find_extension, permitted_contexts, Extension,
    KeyShareEntry, MessageContext, OfferedPsks, PlacementViolation, PskIdentity,
    PskKeyExchangeMode,
};
pub use messages::{
    decode_handshake, encode_handshake, is_hello_retry_request, CertificateEntry, CertificateMsg,
    CertificateRequestMsg, CertificateVerifyMsg, ClientHello, EncryptedExtensionsMsg, FinishedMsg,
    HandshakeMessage, HandshakeType, KeyUpdateMsg, NewSessionTicketMsg, ServerHello,
    HRR_RANDOM, MAX_TICKET_LIFETIME,
};
pub use types::{CipherSuite, ExtensionType, GroupKind, NamedGroup, ProtocolVersion, SignatureScheme};
pub(crate) use types::registry;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("truncated input: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },
    #[error("vector length {len} outside [{floor}, {ceiling}]")]
    LengthOutOfBounds {
        len: usize,
        floor: usize,
        ceiling: usize,
    },
    #[error("{0} trailing bytes after structure")]
    TrailingBytes(usize),
    #[error("unknown handshake type {0}")]
    UnknownHandshakeType(u8),
    #[error("handshake body of {0} bytes exceeds 24-bit length")]
    MessageTooLarge(usize),
    #[error("illegal parameter: {0}")]
    IllegalParameter(&'static str),
    #[error("malformed: {0}")]
    Malformed(&'static str),
}

impl CodecError {
    /// Alert an endpoint sends when this error surfaces while consuming a peer message.
    pub fn alert(&self) -> AlertDescription {
        match self {
            CodecError::IllegalParameter(_) => AlertDescription::ILLEGAL_PARAMETER,
            _ => AlertDescription::DECODE_ERROR,
        }
    }
}

/// Width in bytes of the length prefix for a vector whose upper bound is `ceiling`.
pub fn prefix_width(ceiling: usize) -> usize {
    if ceiling < 1 << 8 {
        1
    } else if ceiling < 1 << 16 {
        2
    } else if ceiling < 1 << 24 {
        3
    } else {
        4
    }
}

/// Encodes `items` as a variable-length vector `<floor..ceiling>`.
pub fn encode_vector(items: &[u8], floor: usize, ceiling: usize) -> Result<Vec<u8>, CodecError> {
    let mut out = Vec::with_capacity(items.len() + 4);
    put_vector(&mut out, items, floor, ceiling)?;
    Ok(out)
}

/// Appends the vector encoding of `items` to `out`.
pub fn put_vector(
    out: &mut Vec<u8>,
    items: &[u8],
    floor: usize,
    ceiling: usize,
) -> Result<(), CodecError> {
    let len = items.len();
    if len < floor || len > ceiling {
        return Err(CodecError::LengthOutOfBounds {
            len,
            floor,
            ceiling,
        });
    }
    let width = prefix_width(ceiling);
    out.extend_from_slice(&(len as u32).to_be_bytes()[4 - width..]);
    out.extend_from_slice(items);
    Ok(())
}

/// Decodes a vector `<floor..ceiling>` from the front of `input`, returning
/// the items and the number of bytes consumed (prefix included).
pub fn decode_vector(
    input: &[u8],
    floor: usize,
    ceiling: usize,
) -> Result<(&[u8], usize), CodecError> {
    let mut r = Reader::new(input);
    let items = r.vector(floor, ceiling)?;
    Ok((items, r.position()))
}

pub(crate) fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_be_bytes());
}

pub(crate) fn put_u24(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_be_bytes()[1..]);
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_be_bytes());
}

/// Cursor over a byte slice with bounds-checked primitive reads.
#[derive(Debug, Clone)]
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn is_empty(&self) -> bool {
        self.remaining() == 0
    }

    pub fn rest(&mut self) -> &'a [u8] {
        let out = &self.buf[self.pos..];
        self.pos = self.buf.len();
        out
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.remaining() < n {
            return Err(CodecError::Truncated {
                needed: n,
                available: self.remaining(),
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, CodecError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    pub fn u24(&mut self) -> Result<u32, CodecError> {
        let b = self.take(3)?;
        Ok(u32::from_be_bytes([0, b[0], b[1], b[2]]))
    }

    pub fn u32(&mut self) -> Result<u32, CodecError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N], CodecError> {
        let mut out = [0u8; N];
        out.copy_from_slice(self.take(N)?);
        Ok(out)
    }

    pub fn vector(&mut self, floor: usize, ceiling: usize) -> Result<&'a [u8], CodecError> {
        let width = prefix_width(ceiling);
        let prefix = self.take(width)?;
        let len = prefix.iter().fold(0usize, |acc, b| (acc << 8) | *b as usize);
        if len > self.remaining() {
            return Err(CodecError::Truncated {
                needed: len,
                available: self.remaining(),
            });
        }
        if len < floor || len > ceiling {
            return Err(CodecError::LengthOutOfBounds {
                len,
                floor,
                ceiling,
            });
        }
        self.take(len)
    }

    pub fn expect_end(&self) -> Result<(), CodecError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(CodecError::TrailingBytes(n)),
        }
    }
}

/// Splits a vector body into fixed-width `u16` elements.
pub(crate) fn u16_list(body: &[u8]) -> Result<Vec<u16>, CodecError> {
    if !body.len().is_multiple_of(2) {
        return Err(CodecError::Malformed("odd-length list of 16-bit values"));
    }
    Ok(body
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]))
        .collect())
}

pub(crate) fn u16_bytes(values: impl IntoIterator<Item = u16>) -> Vec<u8> {
    values.into_iter().flat_map(u16::to_be_bytes).collect()
}
