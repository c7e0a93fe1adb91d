use std::collections::HashSet;
use std::fmt;

use super::types::registry;
use super::{
    put_u16, put_u32, put_vector, u16_bytes, u16_list, CodecError, ExtensionType, NamedGroup,
    ProtocolVersion, Reader, SignatureScheme,
};

/// A single extension: type code plus opaque body, decoded on demand.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Extension {
    pub extension_type: ExtensionType,
    pub body: Vec<u8>,
}

registry! {
    pub struct PskKeyExchangeMode(u8) {
        PSK_KE = 0 => "psk_ke",
        PSK_DHE_KE = 1 => "psk_dhe_ke",
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct KeyShareEntry {
    pub group: NamedGroup,
    pub key_exchange: Vec<u8>,
}

impl KeyShareEntry {
    fn encode_into(&self, out: &mut Vec<u8>) -> Result<(), CodecError> {
        put_u16(out, self.group.0);
        put_vector(out, &self.key_exchange, 1, 0xffff)
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let group = NamedGroup(r.u16()?);
        let key_exchange = r.vector(1, 0xffff)?.to_vec();
        Ok(KeyShareEntry {
            group,
            key_exchange,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PskIdentity {
    pub identity: Vec<u8>,
    pub obfuscated_ticket_age: u32,
}

/// Client `pre_shared_key` body: identities with their binders.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct OfferedPsks {
    pub identities: Vec<PskIdentity>,
    pub binders: Vec<Vec<u8>>,
}

impl OfferedPsks {
    pub fn encode(&self) -> Result<Vec<u8>, CodecError> {
        let mut ids = Vec::new();
        for id in &self.identities {
            put_vector(&mut ids, &id.identity, 1, 0xffff)?;
            put_u32(&mut ids, id.obfuscated_ticket_age);
        }
        let mut out = Vec::new();
        put_vector(&mut out, &ids, 7, 0xffff)?;
        out.extend_from_slice(&self.encode_binders()?);
        Ok(out)
    }

    fn encode_binders(&self) -> Result<Vec<u8>, CodecError> {
        let mut binders = Vec::new();
        for b in &self.binders {
            put_vector(&mut binders, b, 32, 255)?;
        }
        encode_vector_owned(binders, 33, 0xffff)
    }

    /// Encoded size of the binders list, length prefix included. These are
    /// the trailing bytes a truncated ClientHello omits.
    pub fn binders_len(&self) -> usize {
        2 + self.binders.iter().map(|b| 1 + b.len()).sum::<usize>()
    }

    pub fn decode(body: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(body);
        let mut ids = Reader::new(r.vector(7, 0xffff)?);
        let mut identities = Vec::new();
        while !ids.is_empty() {
            let identity = ids.vector(1, 0xffff)?.to_vec();
            let obfuscated_ticket_age = ids.u32()?;
            identities.push(PskIdentity {
                identity,
                obfuscated_ticket_age,
            });
        }
        let mut bs = Reader::new(r.vector(33, 0xffff)?);
        let mut binders = Vec::new();
        while !bs.is_empty() {
            binders.push(bs.vector(32, 255)?.to_vec());
        }
        r.expect_end()?;
        if binders.len() != identities.len() {
            return Err(CodecError::IllegalParameter(
                "pre_shared_key binder count differs from identity count",
            ));
        }
        Ok(OfferedPsks {
            identities,
            binders,
        })
    }
}

fn encode_vector_owned(items: Vec<u8>, floor: usize, ceiling: usize) -> Result<Vec<u8>, CodecError> {
    let mut out = Vec::with_capacity(items.len() + 3);
    put_vector(&mut out, &items, floor, ceiling)?;
    Ok(out)
}

fn ext(extension_type: ExtensionType, body: Vec<u8>) -> Extension {
    Extension {
        extension_type,
        body,
    }
}

impl Extension {
    pub fn new(extension_type: ExtensionType, body: Vec<u8>) -> Self {
        ext(extension_type, body)
    }

    pub(crate) fn encode_list(
        out: &mut Vec<u8>,
        exts: &[Extension],
        floor: usize,
        ceiling: usize,
    ) -> Result<(), CodecError> {
        let mut body = Vec::new();
        for e in exts {
            put_u16(&mut body, e.extension_type.0);
            put_vector(&mut body, &e.body, 0, 0xffff)?;
        }
        put_vector(out, &body, floor, ceiling)
    }

    /// Decodes an extension list, rejecting duplicate types.
    pub(crate) fn decode_list(
        r: &mut Reader<'_>,
        floor: usize,
        ceiling: usize,
    ) -> Result<Vec<Extension>, CodecError> {
        let mut inner = Reader::new(r.vector(floor, ceiling)?);
        let mut out = Vec::new();
        let mut seen = HashSet::new();
        while !inner.is_empty() {
            let extension_type = ExtensionType(inner.u16()?);
            let body = inner.vector(0, 0xffff)?.to_vec();
            if !seen.insert(extension_type) {
                return Err(CodecError::IllegalParameter("duplicate extension"));
            }
            out.push(ext(extension_type, body));
        }
        Ok(out)
    }

    // -- constructors ---------------------------------------------------

    pub fn supported_versions_offer(versions: &[ProtocolVersion]) -> Result<Self, CodecError> {
        let body = encode_vector_owned(u16_bytes(versions.iter().map(|v| v.0)), 2, 254)?;
        Ok(ext(ExtensionType::SUPPORTED_VERSIONS, body))
    }

    pub fn supported_versions_selected(version: ProtocolVersion) -> Self {
        ext(ExtensionType::SUPPORTED_VERSIONS, version.0.to_be_bytes().to_vec())
    }

    pub fn supported_groups(groups: &[NamedGroup]) -> Result<Self, CodecError> {
        let body = encode_vector_owned(u16_bytes(groups.iter().map(|g| g.0)), 2, 0xffff)?;
        Ok(ext(ExtensionType::SUPPORTED_GROUPS, body))
    }

    pub fn signature_algorithms(schemes: &[SignatureScheme]) -> Result<Self, CodecError> {
        let body = encode_vector_owned(u16_bytes(schemes.iter().map(|s| s.0)), 2, 0xfffe)?;
        Ok(ext(ExtensionType::SIGNATURE_ALGORITHMS, body))
    }

    pub fn signature_algorithms_cert(schemes: &[SignatureScheme]) -> Result<Self, CodecError> {
        let mut e = Self::signature_algorithms(schemes)?;
        e.extension_type = ExtensionType::SIGNATURE_ALGORITHMS_CERT;
        Ok(e)
    }

    pub fn key_share_offer(entries: &[KeyShareEntry]) -> Result<Self, CodecError> {
        let mut list = Vec::new();
        for e in entries {
            e.encode_into(&mut list)?;
        }
        Ok(ext(ExtensionType::KEY_SHARE, encode_vector_owned(list, 0, 0xffff)?))
    }

    pub fn key_share_selected(entry: &KeyShareEntry) -> Result<Self, CodecError> {
        let mut body = Vec::new();
        entry.encode_into(&mut body)?;
        Ok(ext(ExtensionType::KEY_SHARE, body))
    }

    pub fn key_share_hrr(group: NamedGroup) -> Self {
        ext(ExtensionType::KEY_SHARE, group.0.to_be_bytes().to_vec())
    }

    pub fn pre_shared_key_offer(offer: &OfferedPsks) -> Result<Self, CodecError> {
        Ok(ext(ExtensionType::PRE_SHARED_KEY, offer.encode()?))
    }

    pub fn pre_shared_key_selected(index: u16) -> Self {
        ext(ExtensionType::PRE_SHARED_KEY, index.to_be_bytes().to_vec())
    }

    pub fn psk_key_exchange_modes(modes: &[PskKeyExchangeMode]) -> Result<Self, CodecError> {
        let raw: Vec<u8> = modes.iter().map(|m| m.0).collect();
        Ok(ext(
            ExtensionType::PSK_KEY_EXCHANGE_MODES,
            encode_vector_owned(raw, 1, 255)?,
        ))
    }

    pub fn early_data() -> Self {
        ext(ExtensionType::EARLY_DATA, Vec::new())
    }

    pub fn early_data_max(max_early_data_size: u32) -> Self {
        ext(ExtensionType::EARLY_DATA, max_early_data_size.to_be_bytes().to_vec())
    }

    pub fn cookie(cookie: &[u8]) -> Result<Self, CodecError> {
        Ok(ext(
            ExtensionType::COOKIE,
            encode_vector_owned(cookie.to_vec(), 1, 0xffff)?,
        ))
    }

    pub fn post_handshake_auth() -> Self {
        ext(ExtensionType::POST_HANDSHAKE_AUTH, Vec::new())
    }

    pub fn server_name(host: &str) -> Result<Self, CodecError> {
        let mut entry = vec![0u8];
        put_vector(&mut entry, host.as_bytes(), 1, 0xffff)?;
        Ok(ext(ExtensionType::SERVER_NAME, encode_vector_owned(entry, 1, 0xffff)?))
    }

    /// Empty `server_name` acknowledgement carried in EncryptedExtensions.
    pub fn server_name_ack() -> Self {
        ext(ExtensionType::SERVER_NAME, Vec::new())
    }

    // -- parsers --------------------------------------------------------

    fn whole<T>(
        &self,
        f: impl FnOnce(&mut Reader<'_>) -> Result<T, CodecError>,
    ) -> Result<T, CodecError> {
        let mut r = Reader::new(&self.body);
        let out = f(&mut r)?;
        r.expect_end()?;
        Ok(out)
    }

    pub fn expect_empty(&self) -> Result<(), CodecError> {
        self.whole(|_| Ok(()))
    }

    pub fn parse_supported_versions_offer(&self) -> Result<Vec<ProtocolVersion>, CodecError> {
        self.whole(|r| Ok(u16_list(r.vector(2, 254)?)?.into_iter().map(ProtocolVersion).collect()))
    }

    pub fn parse_supported_versions_selected(&self) -> Result<ProtocolVersion, CodecError> {
        self.whole(|r| Ok(ProtocolVersion(r.u16()?)))
    }

    pub fn parse_supported_groups(&self) -> Result<Vec<NamedGroup>, CodecError> {
        self.whole(|r| Ok(u16_list(r.vector(2, 0xffff)?)?.into_iter().map(NamedGroup).collect()))
    }

    /// Parses `signature_algorithms` or `signature_algorithms_cert`.
    pub fn parse_signature_algorithms(&self) -> Result<Vec<SignatureScheme>, CodecError> {
        self.whole(|r| {
            Ok(u16_list(r.vector(2, 0xfffe)?)?
                .into_iter()
                .map(SignatureScheme)
                .collect())
        })
    }

    pub fn parse_key_share_offer(&self) -> Result<Vec<KeyShareEntry>, CodecError> {
        self.whole(|r| {
            let mut inner = Reader::new(r.vector(0, 0xffff)?);
            let mut out = Vec::new();
            while !inner.is_empty() {
                out.push(KeyShareEntry::decode_from(&mut inner)?);
            }
            Ok(out)
        })
    }

    pub fn parse_key_share_selected(&self) -> Result<KeyShareEntry, CodecError> {
        self.whole(KeyShareEntry::decode_from)
    }

    pub fn parse_key_share_hrr(&self) -> Result<NamedGroup, CodecError> {
        self.whole(|r| Ok(NamedGroup(r.u16()?)))
    }

    pub fn parse_pre_shared_key_offer(&self) -> Result<OfferedPsks, CodecError> {
        OfferedPsks::decode(&self.body)
    }

    pub fn parse_pre_shared_key_selected(&self) -> Result<u16, CodecError> {
        self.whole(|r| r.u16())
    }

    pub fn parse_psk_key_exchange_modes(&self) -> Result<Vec<PskKeyExchangeMode>, CodecError> {
        self.whole(|r| Ok(r.vector(1, 255)?.iter().map(|m| PskKeyExchangeMode(*m)).collect()))
    }

    pub fn parse_early_data_max(&self) -> Result<u32, CodecError> {
        self.whole(|r| r.u32())
    }

    pub fn parse_cookie(&self) -> Result<Vec<u8>, CodecError> {
        self.whole(|r| Ok(r.vector(1, 0xffff)?.to_vec()))
    }

    /// Host names listed by a client `server_name` extension.
    pub fn parse_server_name(&self) -> Result<Vec<Vec<u8>>, CodecError> {
        self.whole(|r| {
            let mut inner = Reader::new(r.vector(1, 0xffff)?);
            let mut names = Vec::new();
            while !inner.is_empty() {
                let name_type = inner.u8()?;
                let name = inner.vector(1, 0xffff)?;
                if name_type == 0 {
                    names.push(name.to_vec());
                }
            }
            Ok(names)
        })
    }
}

pub fn find_extension(exts: &[Extension], t: ExtensionType) -> Option<&Extension> {
    exts.iter().find(|e| e.extension_type == t)
}

/// Handshake messages that carry an extensions field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MessageContext {
    ClientHello,
    ServerHello,
    EncryptedExtensions,
    Certificate,
    CertificateRequest,
    NewSessionTicket,
    HelloRetryRequest,
}

impl MessageContext {
    pub const ALL: [MessageContext; 7] = [
        MessageContext::ClientHello,
        MessageContext::ServerHello,
        MessageContext::EncryptedExtensions,
        MessageContext::Certificate,
        MessageContext::CertificateRequest,
        MessageContext::NewSessionTicket,
        MessageContext::HelloRetryRequest,
    ];

    pub fn abbreviation(self) -> &'static str {
        match self {
            MessageContext::ClientHello => "CH",
            MessageContext::ServerHello => "SH",
            MessageContext::EncryptedExtensions => "EE",
            MessageContext::Certificate => "CT",
            MessageContext::CertificateRequest => "CR",
            MessageContext::NewSessionTicket => "NST",
            MessageContext::HelloRetryRequest => "HRR",
        }
    }
}

/// Messages in which an extension type may appear. Unregistered types appear nowhere.
pub fn permitted_contexts(t: ExtensionType) -> &'static [MessageContext] {
    use MessageContext::*;
    match t {
        ExtensionType::APPLICATION_LAYER_PROTOCOL_NEGOTIATION => &[ClientHello, EncryptedExtensions],
        ExtensionType::CERTIFICATE_AUTHORITIES => &[ClientHello, CertificateRequest],
        ExtensionType::CLIENT_CERTIFICATE_TYPE => &[ClientHello, EncryptedExtensions],
        ExtensionType::COOKIE => &[ClientHello, HelloRetryRequest],
        ExtensionType::EARLY_DATA => &[ClientHello, EncryptedExtensions, NewSessionTicket],
        ExtensionType::HEARTBEAT => &[ClientHello, EncryptedExtensions],
        ExtensionType::KEY_SHARE => &[ClientHello, ServerHello, HelloRetryRequest],
        ExtensionType::MAX_FRAGMENT_LENGTH => &[ClientHello, EncryptedExtensions],
        ExtensionType::OID_FILTERS => &[CertificateRequest],
        ExtensionType::PADDING => &[ClientHello],
        ExtensionType::POST_HANDSHAKE_AUTH => &[ClientHello],
        ExtensionType::PRE_SHARED_KEY => &[ClientHello, ServerHello],
        ExtensionType::PSK_KEY_EXCHANGE_MODES => &[ClientHello],
        ExtensionType::SERVER_CERTIFICATE_TYPE => &[ClientHello, EncryptedExtensions],
        ExtensionType::SERVER_NAME => &[ClientHello, EncryptedExtensions],
        ExtensionType::SIGNATURE_ALGORITHMS => &[ClientHello, CertificateRequest],
        ExtensionType::SIGNATURE_ALGORITHMS_CERT => &[ClientHello, CertificateRequest],
        ExtensionType::SIGNED_CERTIFICATE_TIMESTAMP => &[ClientHello, CertificateRequest, Certificate],
        ExtensionType::STATUS_REQUEST => &[ClientHello, CertificateRequest, Certificate],
        ExtensionType::SUPPORTED_GROUPS => &[ClientHello, EncryptedExtensions],
        ExtensionType::SUPPORTED_VERSIONS => &[ClientHello, ServerHello, HelloRetryRequest],
        ExtensionType::USE_SRTP => &[ClientHello, EncryptedExtensions],
        _ => &[],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlacementViolation(pub ExtensionType);

impl fmt::Display for PlacementViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "extension {} not permitted here", self.0)
    }
}

/// Checks every extension against the placement table; reports the first offender.
pub fn check_extension_placement(
    context: MessageContext,
    exts: &[Extension],
) -> Result<(), PlacementViolation> {
    match exts
        .iter()
        .find(|e| !permitted_contexts(e.extension_type).contains(&context))
    {
        Some(e) => Err(PlacementViolation(e.extension_type)),
        None => Ok(()),
    }
}
