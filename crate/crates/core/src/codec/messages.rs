use super::extensions::Extension;
use super::types::registry;
use super::{
    put_u16, put_u24, put_u32, put_vector, u16_bytes, u16_list, CipherSuite, CodecError,
    ExtensionType, ProtocolVersion, Reader, SignatureScheme,
};
use std::fmt;

/// ServerHello.random value that marks a HelloRetryRequest.
pub const HRR_RANDOM: [u8; 32] = [
    0xcf, 0x21, 0xad, 0x74, 0xe5, 0x9a, 0x61, 0x11, 0xbe, 0x1d, 0x8c, 0x02, 0x1e, 0x65, 0xb8, 0x91,
    0xc2, 0xa2, 0x11, 0x16, 0x7a, 0xbb, 0x8c, 0x5e, 0x07, 0x9e, 0x09, 0xe2, 0xc8, 0xa8, 0x33, 0x9c,
];

/// Upper bound on NewSessionTicket.ticket_lifetime: seven days in seconds.
pub const MAX_TICKET_LIFETIME: u32 = 604_800;

const MAX_BODY: usize = (1 << 24) - 1;

registry! {
    pub struct HandshakeType(u8) {
        CLIENT_HELLO = 1 => "client_hello",
        SERVER_HELLO = 2 => "server_hello",
        NEW_SESSION_TICKET = 4 => "new_session_ticket",
        END_OF_EARLY_DATA = 5 => "end_of_early_data",
        ENCRYPTED_EXTENSIONS = 8 => "encrypted_extensions",
        CERTIFICATE = 11 => "certificate",
        CERTIFICATE_REQUEST = 13 => "certificate_request",
        CERTIFICATE_VERIFY = 15 => "certificate_verify",
        FINISHED = 20 => "finished",
        KEY_UPDATE = 24 => "key_update",
        MESSAGE_HASH = 254 => "message_hash",
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientHello {
    pub legacy_version: ProtocolVersion,
    pub random: [u8; 32],
    pub legacy_session_id: Vec<u8>,
    pub cipher_suites: Vec<CipherSuite>,
    pub legacy_compression_methods: Vec<u8>,
    pub extensions: Vec<Extension>,
}

impl ClientHello {
    fn encode_body(&self, out: &mut Vec<u8>) -> Result<(), CodecError> {
        put_u16(out, self.legacy_version.0);
        out.extend_from_slice(&self.random);
        put_vector(out, &self.legacy_session_id, 0, 32)?;
        let suites = u16_bytes(self.cipher_suites.iter().map(|s| s.0));
        put_vector(out, &suites, 2, 0xfffe)?;
        put_vector(out, &self.legacy_compression_methods, 1, 0xff)?;
        Extension::encode_list(out, &self.extensions, 8, 0xffff)
    }

    fn decode_body(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let legacy_version = ProtocolVersion(r.u16()?);
        let random = r.array()?;
        let legacy_session_id = r.vector(0, 32)?.to_vec();
        let cipher_suites = u16_list(r.vector(2, 0xfffe)?)?
            .into_iter()
            .map(CipherSuite)
            .collect();
        let legacy_compression_methods = r.vector(1, 0xff)?.to_vec();
        let extensions = Extension::decode_list(r, 8, 0xffff)?;
        if legacy_compression_methods != [0] {
            return Err(CodecError::IllegalParameter(
                "legacy_compression_methods must be the single byte 0x00",
            ));
        }
        if let Some(pos) = extensions
            .iter()
            .position(|e| e.extension_type == ExtensionType::PRE_SHARED_KEY)
        {
            if pos != extensions.len() - 1 {
                return Err(CodecError::IllegalParameter(
                    "pre_shared_key is not the last ClientHello extension",
                ));
            }
        }
        Ok(ClientHello {
            legacy_version,
            random,
            legacy_session_id,
            cipher_suites,
            legacy_compression_methods,
            extensions,
        })
    }
}

/// ServerHello, also used for HelloRetryRequest (distinguished by `random`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerHello {
    pub legacy_version: ProtocolVersion,
    pub random: [u8; 32],
    pub legacy_session_id_echo: Vec<u8>,
    pub cipher_suite: CipherSuite,
    pub legacy_compression_method: u8,
    pub extensions: Vec<Extension>,
}

impl ServerHello {
    fn encode_body(&self, out: &mut Vec<u8>) -> Result<(), CodecError> {
        put_u16(out, self.legacy_version.0);
        out.extend_from_slice(&self.random);
        put_vector(out, &self.legacy_session_id_echo, 0, 32)?;
        put_u16(out, self.cipher_suite.0);
        out.push(self.legacy_compression_method);
        Extension::encode_list(out, &self.extensions, 6, 0xffff)
    }

    fn decode_body(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(ServerHello {
            legacy_version: ProtocolVersion(r.u16()?),
            random: r.array()?,
            legacy_session_id_echo: r.vector(0, 32)?.to_vec(),
            cipher_suite: CipherSuite(r.u16()?),
            legacy_compression_method: r.u8()?,
            extensions: Extension::decode_list(r, 6, 0xffff)?,
        })
    }

    pub fn is_hello_retry_request(&self) -> bool {
        is_hello_retry_request(self)
    }
}

pub fn is_hello_retry_request(sh: &ServerHello) -> bool {
    sh.random == HRR_RANDOM
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EncryptedExtensionsMsg {
    pub extensions: Vec<Extension>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CertificateRequestMsg {
    pub context: Vec<u8>,
    pub extensions: Vec<Extension>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CertificateEntry {
    pub data: Vec<u8>,
    pub extensions: Vec<Extension>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CertificateMsg {
    pub context: Vec<u8>,
    pub entries: Vec<CertificateEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CertificateVerifyMsg {
    pub scheme: SignatureScheme,
    pub signature: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FinishedMsg {
    pub verify_data: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NewSessionTicketMsg {
    pub lifetime: u32,
    pub age_add: u32,
    pub nonce: Vec<u8>,
    pub ticket: Vec<u8>,
    pub extensions: Vec<Extension>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeyUpdateMsg {
    pub update_requested: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HandshakeMessage {
    ClientHello(ClientHello),
    ServerHello(ServerHello),
    NewSessionTicket(NewSessionTicketMsg),
    EndOfEarlyData,
    EncryptedExtensions(EncryptedExtensionsMsg),
    Certificate(CertificateMsg),
    CertificateRequest(CertificateRequestMsg),
    CertificateVerify(CertificateVerifyMsg),
    Finished(FinishedMsg),
    KeyUpdate(KeyUpdateMsg),
    /// Synthetic stand-in for the first ClientHello after a retry; never sent.
    MessageHash(Vec<u8>),
}

impl HandshakeMessage {
    pub fn handshake_type(&self) -> HandshakeType {
        match self {
            HandshakeMessage::ClientHello(_) => HandshakeType::CLIENT_HELLO,
            HandshakeMessage::ServerHello(_) => HandshakeType::SERVER_HELLO,
            HandshakeMessage::NewSessionTicket(_) => HandshakeType::NEW_SESSION_TICKET,
            HandshakeMessage::EndOfEarlyData => HandshakeType::END_OF_EARLY_DATA,
            HandshakeMessage::EncryptedExtensions(_) => HandshakeType::ENCRYPTED_EXTENSIONS,
            HandshakeMessage::Certificate(_) => HandshakeType::CERTIFICATE,
            HandshakeMessage::CertificateRequest(_) => HandshakeType::CERTIFICATE_REQUEST,
            HandshakeMessage::CertificateVerify(_) => HandshakeType::CERTIFICATE_VERIFY,
            HandshakeMessage::Finished(_) => HandshakeType::FINISHED,
            HandshakeMessage::KeyUpdate(_) => HandshakeType::KEY_UPDATE,
            HandshakeMessage::MessageHash(_) => HandshakeType::MESSAGE_HASH,
        }
    }

    /// Short name used in traces: "HRR" for a retry request, else the registry name.
    pub fn label(&self) -> &'static str {
        match self {
            HandshakeMessage::ServerHello(sh) if sh.is_hello_retry_request() => {
                "hello_retry_request"
            }
            m => m.handshake_type().name().unwrap_or("unknown"),
        }
    }

    fn encode_body(&self, out: &mut Vec<u8>) -> Result<(), CodecError> {
        match self {
            HandshakeMessage::ClientHello(m) => m.encode_body(out),
            HandshakeMessage::ServerHello(m) => m.encode_body(out),
            HandshakeMessage::NewSessionTicket(m) => {
                put_u32(out, m.lifetime);
                put_u32(out, m.age_add);
                put_vector(out, &m.nonce, 0, 255)?;
                put_vector(out, &m.ticket, 1, 0xffff)?;
                Extension::encode_list(out, &m.extensions, 0, 0xfffe)
            }
            HandshakeMessage::EndOfEarlyData => Ok(()),
            HandshakeMessage::EncryptedExtensions(m) => {
                Extension::encode_list(out, &m.extensions, 0, 0xffff)
            }
            HandshakeMessage::Certificate(m) => {
                put_vector(out, &m.context, 0, 255)?;
                let mut list = Vec::new();
                for entry in &m.entries {
                    put_vector(&mut list, &entry.data, 1, MAX_BODY)?;
                    Extension::encode_list(&mut list, &entry.extensions, 0, 0xffff)?;
                }
                put_vector(out, &list, 0, MAX_BODY)
            }
            HandshakeMessage::CertificateRequest(m) => {
                put_vector(out, &m.context, 0, 255)?;
                Extension::encode_list(out, &m.extensions, 2, 0xffff)
            }
            HandshakeMessage::CertificateVerify(m) => {
                put_u16(out, m.scheme.0);
                put_vector(out, &m.signature, 0, 0xffff)
            }
            HandshakeMessage::Finished(m) => {
                out.extend_from_slice(&m.verify_data);
                Ok(())
            }
            HandshakeMessage::KeyUpdate(m) => {
                out.push(m.update_requested as u8);
                Ok(())
            }
            HandshakeMessage::MessageHash(digest) => {
                out.extend_from_slice(digest);
                Ok(())
            }
        }
    }

    fn decode_body(typ: HandshakeType, body: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(body);
        let msg = match typ {
            HandshakeType::CLIENT_HELLO => HandshakeMessage::ClientHello(ClientHello::decode_body(&mut r)?),
            HandshakeType::SERVER_HELLO => HandshakeMessage::ServerHello(ServerHello::decode_body(&mut r)?),
            HandshakeType::NEW_SESSION_TICKET => {
                let lifetime = r.u32()?;
                let age_add = r.u32()?;
                let nonce = r.vector(0, 255)?.to_vec();
                let ticket = r.vector(1, 0xffff)?.to_vec();
                let extensions = Extension::decode_list(&mut r, 0, 0xfffe)?;
                if lifetime > MAX_TICKET_LIFETIME {
                    return Err(CodecError::IllegalParameter(
                        "ticket_lifetime exceeds seven days",
                    ));
                }
                HandshakeMessage::NewSessionTicket(NewSessionTicketMsg {
                    lifetime,
                    age_add,
                    nonce,
                    ticket,
                    extensions,
                })
            }
            HandshakeType::END_OF_EARLY_DATA => HandshakeMessage::EndOfEarlyData,
            HandshakeType::ENCRYPTED_EXTENSIONS => {
                HandshakeMessage::EncryptedExtensions(EncryptedExtensionsMsg {
                    extensions: Extension::decode_list(&mut r, 0, 0xffff)?,
                })
            }
            HandshakeType::CERTIFICATE => {
                let context = r.vector(0, 255)?.to_vec();
                let mut list = Reader::new(r.vector(0, MAX_BODY)?);
                let mut entries = Vec::new();
                while !list.is_empty() {
                    let data = list.vector(1, MAX_BODY)?.to_vec();
                    let extensions = Extension::decode_list(&mut list, 0, 0xffff)?;
                    entries.push(CertificateEntry { data, extensions });
                }
                HandshakeMessage::Certificate(CertificateMsg { context, entries })
            }
            HandshakeType::CERTIFICATE_REQUEST => {
                HandshakeMessage::CertificateRequest(CertificateRequestMsg {
                    context: r.vector(0, 255)?.to_vec(),
                    extensions: Extension::decode_list(&mut r, 2, 0xffff)?,
                })
            }
            HandshakeType::CERTIFICATE_VERIFY => {
                HandshakeMessage::CertificateVerify(CertificateVerifyMsg {
                    scheme: SignatureScheme(r.u16()?),
                    signature: r.vector(0, 0xffff)?.to_vec(),
                })
            }
            HandshakeType::FINISHED => HandshakeMessage::Finished(FinishedMsg {
                verify_data: r.rest().to_vec(),
            }),
            HandshakeType::KEY_UPDATE => {
                let update_requested = match r.u8()? {
                    0 => false,
                    1 => true,
                    _ => {
                        return Err(CodecError::IllegalParameter(
                            "request_update is neither 0 nor 1",
                        ))
                    }
                };
                HandshakeMessage::KeyUpdate(KeyUpdateMsg { update_requested })
            }
            HandshakeType::MESSAGE_HASH => HandshakeMessage::MessageHash(r.rest().to_vec()),
            other => return Err(CodecError::UnknownHandshakeType(other.0)),
        };
        r.expect_end()?;
        Ok(msg)
    }
}

impl fmt::Display for HandshakeMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Frames `msg` as type ‖ 24-bit length ‖ body.
pub fn encode_handshake(msg: &HandshakeMessage) -> Result<Vec<u8>, CodecError> {
    let mut body = Vec::new();
    msg.encode_body(&mut body)?;
    if body.len() > MAX_BODY {
        return Err(CodecError::MessageTooLarge(body.len()));
    }
    let mut out = Vec::with_capacity(body.len() + 4);
    out.push(msg.handshake_type().0);
    put_u24(&mut out, body.len() as u32);
    out.extend_from_slice(&body);
    Ok(out)
}

/// Decodes one framed message from the front of `input`; returns it with the
/// number of bytes consumed (always 4 + the declared length).
pub fn decode_handshake(input: &[u8]) -> Result<(HandshakeMessage, usize), CodecError> {
    let mut r = Reader::new(input);
    let typ = HandshakeType(r.u8()?);
    let len = r.u24()? as usize;
    if !typ.is_known() {
        return Err(CodecError::UnknownHandshakeType(typ.0));
    }
    let body = r.take(len)?;
    Ok((HandshakeMessage::decode_body(typ, body)?, 4 + len))
}
