use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::checks::{check_chain, check_finished, check_placement, expected_verify_data};
use super::connection::{Abort, Connection, Flow, Inbound, SkipMode};
use super::ticket::TicketSealer;
use super::{
    checkpoint, signed_content, ClientAuthPolicy, EngineError, EngineEvent, NegotiationResult,
    PeerIdentity, PreSharedKey, RecordStatus, ServerConfig, CLIENT_CV_CONTEXT,
    SERVER_CV_CONTEXT,
};
use crate::codec::{
    find_extension, AlertDescription, CertificateEntry, CertificateMsg, CertificateRequestMsg,
    CertificateVerifyMsg, CipherSuite, ClientHello, EncryptedExtensionsMsg, Extension,
    ExtensionType, FinishedMsg, HandshakeMessage, KeyShareEntry, MessageContext, NamedGroup,
    NewSessionTicketMsg, ProtocolVersion, PskKeyExchangeMode, ServerHello, HRR_RANDOM,
};
use crate::crypto::{suite_params, SuiteParams};
use crate::hkdf::Secret;
use crate::key_schedule::{
    derive_resumption_psk, verify_binder, KeySchedule, PskKind, TrafficSecret,
};
use crate::transcript::{truncated_hash, Transcript};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ServerState {
    WaitCH,
    WaitCH2,
    Negotiated,
    WaitClientCert,
    WaitClientCV,
    WaitClientFin,
    Connected,
    Closed,
}

#[derive(Debug)]
struct Retry {
    suite: CipherSuite,
    first_hello: Vec<u8>,
    retry_request: Vec<u8>,
    cookie: Option<Vec<u8>>,
    random: [u8; 32],
}

#[derive(Debug)]
struct Handshake {
    params: SuiteParams,
    schedule: KeySchedule,
    client_hs: TrafficSecret,
    client_ap: Option<TrafficSecret>,
    psk_mode: Option<PskKeyExchangeMode>,
    resumed: bool,
    group: Option<NamedGroup>,
    scheme: Option<crate::codec::SignatureScheme>,
    client_peer: Option<PeerIdentity>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum AuthStage {
    Cert,
    Verify,
    Finished,
}

#[derive(Debug)]
struct PostHandshakeAuth {
    context: Vec<u8>,
    transcript: Transcript,
    stage: AuthStage,
    peer: Option<PeerIdentity>,
}

/// Server side of the handshake.
#[derive(Debug)]
pub struct ServerEngine {
    config: ServerConfig,
    conn: Connection,
    rng: ChaCha20Rng,
    state: ServerState,
    transcript: Transcript,
    sealer: TicketSealer,
    cookie_key: Secret,
    retry: Option<Retry>,
    handshake: Option<Handshake>,
    client_offered_pha: bool,
    resumption_master: Option<TrafficSecret>,
    handshake_transcript: Option<Transcript>,
    pha: Option<PostHandshakeAuth>,
    tickets_issued: u64,
    result: Option<NegotiationResult>,
}

impl ServerEngine {
    pub fn new(config: ServerConfig) -> Result<Self, EngineError> {
        config.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
        let sealer = TicketSealer::new(
            config.provider.clone(),
            config.ticket_key.clone(),
            &mut rng,
        );
        let mut cookie_key = vec![0u8; 32];
        rng.fill_bytes(&mut cookie_key);
        let conn = Connection::new(
            config.provider.clone(),
            config.interceptor.clone(),
            config.padding,
        );
        Ok(ServerEngine {
            config,
            conn,
            rng,
            state: ServerState::WaitCH,
            transcript: Transcript::new(),
            sealer,
            cookie_key: Secret::new(cookie_key),
            retry: None,
            handshake: None,
            client_offered_pha: false,
            resumption_master: None,
            handshake_transcript: None,
            pha: None,
            tickets_issued: 0,
            result: None,
        })
    }

    pub fn state(&self) -> ServerState {
        if self.conn.dead || (self.conn.read_closed && self.conn.write_closed) {
            ServerState::Closed
        } else {
            self.state
        }
    }

    pub fn is_aborted(&self) -> bool {
        self.conn.dead
    }

    pub fn negotiated(&self) -> Option<&NegotiationResult> {
        self.result.as_ref()
    }

    pub fn client_identity(&self) -> Option<&PeerIdentity> {
        self.handshake.as_ref().and_then(|h| h.client_peer.as_ref())
    }

    pub fn record_status(&self) -> RecordStatus {
        self.conn.status()
    }

    pub fn transcript_hash(&self) -> Option<Vec<u8>> {
        self.transcript.hash(self.config.provider.as_ref()).ok()
    }

    pub fn handle_input(&mut self, bytes: &[u8]) -> Result<Vec<EngineEvent>, EngineError> {
        if self.conn.dead {
            return Err(EngineError::Dead);
        }
        self.conn.push_input(bytes);
        if let Err(a) = self.pump() {
            self.conn.fatal(a);
        }
        Ok(self.conn.take_events())
    }

    pub fn send_app_data(&mut self, data: &[u8]) -> Result<Vec<EngineEvent>, EngineError> {
        let connected = self.state == ServerState::Connected;
        self.conn.api(connected, |c| c.send_app_data(data))
    }

    pub fn key_update(&mut self, request_peer: bool) -> Result<Vec<EngineEvent>, EngineError> {
        let connected = self.state == ServerState::Connected;
        self.conn.api(connected, |c| c.send_key_update(request_peer))
    }

    pub fn close(&mut self) -> Result<Vec<EngineEvent>, EngineError> {
        self.conn.api(true, Connection::send_close_notify)
    }

    pub fn issue_tickets(&mut self, count: usize) -> Result<Vec<EngineEvent>, EngineError> {
        if self.state != ServerState::Connected {
            return Err(EngineError::NotConnected);
        }
        if self.conn.dead {
            return Err(EngineError::Dead);
        }
        if let Err(a) = (0..count).try_for_each(|_| self.issue_ticket()) {
            self.conn.fatal(a);
        }
        Ok(self.conn.take_events())
    }

    /// Sends a CertificateRequest with a fresh context to a client that
    /// offered post_handshake_auth.
    pub fn request_post_handshake_auth(&mut self) -> Result<Vec<EngineEvent>, EngineError> {
        if self.conn.dead {
            return Err(EngineError::Dead);
        }
        if self.state != ServerState::Connected {
            return Err(EngineError::NotConnected);
        }
        if !self.client_offered_pha {
            return Err(EngineError::NotOffered);
        }
        if self.pha.is_some() {
            return Err(EngineError::Busy);
        }
        let mut context = vec![0u8; 16];
        self.rng.fill_bytes(&mut context);
        let Some(mut transcript) = self.handshake_transcript.clone() else {
            return Err(EngineError::NotConnected);
        };
        let sent = Extension::signature_algorithms(&self.config.signature_schemes)
            .map_err(Abort::codec)
            .and_then(|sig| {
                self.conn.send_and_record(
                    HandshakeMessage::CertificateRequest(CertificateRequestMsg {
                        context: context.clone(),
                        extensions: vec![sig],
                    }),
                    &mut transcript,
                )
            });
        match sent {
            Ok(()) => {
                self.pha = Some(PostHandshakeAuth {
                    context,
                    transcript,
                    stage: AuthStage::Cert,
                    peer: None,
                })
            }
            Err(a) => self.conn.fatal(a),
        }
        Ok(self.conn.take_events())
    }

    fn pump(&mut self) -> Flow {
        while let Some(inbound) = self.conn.next_inbound()? {
            match inbound {
                Inbound::AppData(data) => {
                    if self.state != ServerState::Connected {
                        return Err(Abort::unexpected("application data before client Finished"));
                    }
                    self.conn.emit(EngineEvent::AppData(data))
                }
                Inbound::Handshake { msg, raw } => self.on_message(msg, raw)?,
            }
        }
        Ok(())
    }

    fn on_message(&mut self, msg: HandshakeMessage, raw: Vec<u8>) -> Flow {
        use HandshakeMessage as M;
        let pha = self.pha.as_ref().map(|p| p.stage);
        match (self.state, msg) {
            (ServerState::WaitCH | ServerState::WaitCH2, M::ClientHello(ch)) => {
                self.on_client_hello(ch, raw)
            }
            (ServerState::WaitClientCert, M::Certificate(ct)) => self.on_client_certificate(ct, raw),
            (ServerState::WaitClientCV, M::CertificateVerify(cv)) => {
                self.on_client_certificate_verify(cv, raw)
            }
            (ServerState::WaitClientFin, M::Finished(fin)) => self.on_client_finished(fin, raw),
            (ServerState::Connected, M::KeyUpdate(ku)) => self.conn.on_key_update(&ku),
            (ServerState::Connected, M::Certificate(ct)) if pha == Some(AuthStage::Cert) => {
                self.on_post_handshake_certificate(ct, raw)
            }
            (ServerState::Connected, M::CertificateVerify(cv)) if pha == Some(AuthStage::Verify) => {
                self.on_post_handshake_verify(cv, raw)
            }
            (ServerState::Connected, M::Finished(fin)) if pha == Some(AuthStage::Finished) => {
                self.on_post_handshake_finished(fin)
            }
            (state, m) => Err(Abort::unexpected(format!("{} in server state {state:?}", m.label()))),
        }
    }

    fn cookie_for(&self, hash: crate::crypto::HashAlg, first_hello: &[u8], group: NamedGroup) -> Vec<u8> {
        let p = self.config.provider.as_ref();
        let mut body = p.hash(hash, first_hello);
        body.extend_from_slice(&group.0.to_be_bytes());
        let tag = p.hmac(hash, self.cookie_key.as_bytes(), &body);
        body.extend_from_slice(&tag);
        body
    }

    fn on_client_hello(&mut self, ch: ClientHello, raw: Vec<u8>) -> Flow {
        let second = self.state == ServerState::WaitCH2;
        if self.config.check_legacy_fields {
            if ch.legacy_version != ProtocolVersion::TLS12 {
                return Err(Abort::new(
                    AlertDescription::PROTOCOL_VERSION,
                    format!("legacy_version {}", ch.legacy_version),
                ));
            }
            if ch.legacy_session_id.len() > 32 {
                return Err(Abort::illegal("legacy_session_id longer than 32 bytes"));
            }
        }
        let versions = find_extension(&ch.extensions, ExtensionType::SUPPORTED_VERSIONS)
            .ok_or_else(|| {
                Abort::new(AlertDescription::PROTOCOL_VERSION, "client does not offer TLS 1.3")
            })?
            .parse_supported_versions_offer()
            .map_err(Abort::codec)?;
        if !versions.contains(&ProtocolVersion::TLS13) {
            return Err(Abort::new(
                AlertDescription::PROTOCOL_VERSION,
                "client does not offer TLS 1.3",
            ));
        }
        check_placement(MessageContext::ClientHello, &ch.extensions)?;
        let has = |t| find_extension(&ch.extensions, t);
        if self.config.require_server_name && has(ExtensionType::SERVER_NAME).is_none() {
            return Err(Abort::new(
                AlertDescription::MISSING_EXTENSION,
                "server_name required",
            ));
        }
        let groups_ext = has(ExtensionType::SUPPORTED_GROUPS);
        let share_ext = has(ExtensionType::KEY_SHARE);
        let sig_ext = has(ExtensionType::SIGNATURE_ALGORITHMS);
        let psk_ext = has(ExtensionType::PRE_SHARED_KEY);
        let modes_ext = has(ExtensionType::PSK_KEY_EXCHANGE_MODES);
        if groups_ext.is_some() != share_ext.is_some() {
            return Err(Abort::new(
                AlertDescription::MISSING_EXTENSION,
                "supported_groups and key_share must appear together",
            ));
        }
        if psk_ext.is_some() && modes_ext.is_none() {
            return Err(Abort::new(
                AlertDescription::MISSING_EXTENSION,
                "pre_shared_key without psk_key_exchange_modes",
            ));
        }
        if psk_ext.is_none() && (groups_ext.is_none() || sig_ext.is_none()) {
            return Err(Abort::new(
                AlertDescription::MISSING_EXTENSION,
                "no pre_shared_key and no certificate-based key exchange",
            ));
        }
        let client_groups = groups_ext
            .map(|e| e.parse_supported_groups().map_err(Abort::codec))
            .transpose()?
            .unwrap_or_default();
        let client_shares = share_ext
            .map(|e| e.parse_key_share_offer().map_err(Abort::codec))
            .transpose()?
            .unwrap_or_default();
        for (i, s) in client_shares.iter().enumerate() {
            if client_shares[..i].iter().any(|p| p.group == s.group) {
                return Err(Abort::illegal("duplicate key share group"));
            }
        }
        let client_schemes = sig_ext
            .map(|e| e.parse_signature_algorithms().map_err(Abort::codec))
            .transpose()?
            .unwrap_or_default();
        let offered_early_data = has(ExtensionType::EARLY_DATA).is_some();

        let provider = self.config.provider.clone();
        let suite = match &self.retry {
            Some(r) => {
                if !ch.cipher_suites.contains(&r.suite) {
                    return Err(Abort::illegal("second ClientHello dropped the retry suite"));
                }
                if ch.random != r.random {
                    return Err(Abort::illegal("second ClientHello changed its random"));
                }
                if offered_early_data {
                    return Err(Abort::illegal("early_data in second ClientHello"));
                }
                let echoed = has(ExtensionType::COOKIE)
                    .map(|e| e.parse_cookie().map_err(Abort::codec))
                    .transpose()?;
                if echoed != r.cookie {
                    return Err(Abort::illegal("cookie does not match"));
                }
                r.suite
            }
            None => *self
                .config
                .cipher_suites
                .iter()
                .find(|s| ch.cipher_suites.contains(s) && provider.supports_suite(**s))
                .ok_or_else(|| {
                    Abort::new(AlertDescription::HANDSHAKE_FAILURE, "no cipher suite in common")
                })?,
        };
        let params = suite_params(suite).ok_or_else(|| Abort::internal("suite without parameters"))?;
        let mutual_group = self
            .config
            .groups
            .iter()
            .copied()
            .find(|g| client_groups.contains(g));

        // PSK: the first listed identity the server knows whose hash matches the suite.
        let mut selected: Option<(usize, PreSharedKey, PskKeyExchangeMode)> = None;
        if let (Some(pe), Some(me)) = (psk_ext, modes_ext) {
            let offer = pe.parse_pre_shared_key_offer().map_err(Abort::codec)?;
            let modes = me.parse_psk_key_exchange_modes().map_err(Abort::codec)?;
            let accepts = |m| modes.contains(&m) && self.config.psk_modes.contains(&m);
            let mode = if accepts(PskKeyExchangeMode::PSK_DHE_KE) && mutual_group.is_some() {
                Some(PskKeyExchangeMode::PSK_DHE_KE)
            } else if accepts(PskKeyExchangeMode::PSK_KE) {
                Some(PskKeyExchangeMode::PSK_KE)
            } else {
                None
            };
            if let Some(mode) = mode {
                let now = self.config.clock.now_ms();
                for (i, id) in offer.identities.iter().enumerate() {
                    let candidate = self
                        .config
                        .external_psks
                        .iter()
                        .find(|k| k.identity == id.identity)
                        .cloned()
                        .or_else(|| self.sealer.open(&id.identity));
                    let Some(k) = candidate else { continue };
                    if k.hash != params.hash || k.is_expired(now) {
                        continue;
                    }
                    selected = Some((i, k, mode));
                    break;
                }
                if let Some((i, k, _)) = &selected {
                    let prior = self
                        .retry
                        .as_ref()
                        .map(|r| (r.first_hello.as_slice(), r.retry_request.as_slice()));
                    let th = truncated_hash(provider.as_ref(), k.hash, &raw, offer.binders_len(), prior)
                        .map_err(|e| Abort::illegal(e.to_string()))?;
                    let mut ks = KeySchedule::new(provider.clone(), k.hash);
                    ks.early_secret(Some(k.secret.as_bytes())).map_err(Abort::internal)?;
                    let binder_key = ks.binder_key(k.kind).map_err(Abort::internal)?;
                    if !verify_binder(provider.as_ref(), &binder_key, &th, &offer.binders[*i]) {
                        return Err(Abort::new(
                            AlertDescription::DECRYPT_ERROR,
                            "PSK binder does not verify",
                        ));
                    }
                }
            }
        }

        let needs_dhe = !matches!(selected, Some((_, _, PskKeyExchangeMode::PSK_KE)));
        let mut client_share: Option<KeyShareEntry> = None;
        let mut group = None;
        if needs_dhe {
            let g = mutual_group.ok_or_else(|| {
                Abort::new(AlertDescription::HANDSHAKE_FAILURE, "no key exchange group in common")
            })?;
            match client_shares.into_iter().find(|s| s.group == g) {
                Some(s) => client_share = Some(s),
                None if second => {
                    return Err(Abort::illegal("second ClientHello lacks a share for the retry group"))
                }
                None => return self.send_retry(&ch, raw, params, g, offered_early_data),
            }
            group = Some(g);
        }
        let credential = if selected.is_none() {
            Some(
                self.config
                    .credentials
                    .iter()
                    .find(|c| client_schemes.contains(&c.scheme))
                    .cloned()
                    .ok_or_else(|| {
                        Abort::new(
                            AlertDescription::HANDSHAKE_FAILURE,
                            "no credential matches the client's signature_algorithms",
                        )
                    })?,
            )
        } else {
            None
        };

        let mut sh_exts = vec![Extension::supported_versions_selected(ProtocolVersion::TLS13)];
        let mut shared = None;
        if let (Some(cs), Some(g)) = (&client_share, group) {
            let (public, secret) = provider
                .generate_share(g, &mut self.rng)
                .map_err(Abort::internal)?;
            shared = Some(provider.agree(&secret, &cs.key_exchange).map_err(|e| {
                Abort::new(AlertDescription::HANDSHAKE_FAILURE, e.to_string())
            })?);
            sh_exts.push(
                Extension::key_share_selected(&KeyShareEntry {
                    group: g,
                    key_exchange: public,
                })
                .map_err(Abort::internal)?,
            );
        }
        if let Some((i, _, _)) = &selected {
            sh_exts.push(Extension::pre_shared_key_selected(*i as u16));
        }
        let mut random = [0u8; 32];
        self.rng.fill_bytes(&mut random);
        if random == HRR_RANDOM {
            random[0] ^= 1;
        }
        let sh = ServerHello {
            legacy_version: ProtocolVersion::TLS12,
            random,
            legacy_session_id_echo: ch.legacy_session_id.clone(),
            cipher_suite: suite,
            legacy_compression_method: 0,
            extensions: sh_exts,
        };
        if !second {
            self.transcript.set_hash(params.hash);
            self.conn.client_random = ch.random;
        }
        self.transcript.append(&raw);
        self.client_offered_pha = has(ExtensionType::POST_HANDSHAKE_AUTH).is_some();
        let sni = has(ExtensionType::SERVER_NAME).is_some();
        self.conn.stop_skipping();
        self.state = ServerState::Negotiated;
        self.conn
            .send_and_record(HandshakeMessage::ServerHello(sh), &mut self.transcript)?;

        let fail = Abort::internal;
        let mut schedule = KeySchedule::new(provider.clone(), params.hash);
        schedule
            .early_secret(selected.as_ref().map(|(_, k, _)| k.secret.as_bytes()))
            .map_err(fail)?;
        schedule
            .into_handshake(shared.as_deref().map(|v| v.as_slice()))
            .map_err(fail)?;
        let th = self.conn.checkpoint(checkpoint::SERVER_HELLO, &self.transcript)?;
        let (client_hs, server_hs) = schedule.handshake_traffic_secrets(&th).map_err(fail)?;
        self.conn.install_write(server_hs.clone(), &params.aead)?;
        self.conn.install_read(client_hs.clone(), &params.aead)?;
        if offered_early_data {
            self.conn
                .start_skipping(SkipMode::TrialDecrypt, self.config.max_early_data_skip);
        }

        // Server flight.
        let mut ee = Vec::new();
        if sni {
            ee.push(Extension::server_name_ack());
        }
        self.conn.send_and_record(
            HandshakeMessage::EncryptedExtensions(EncryptedExtensionsMsg { extensions: ee }),
            &mut self.transcript,
        )?;
        let request_cert = credential.is_some() && self.config.client_auth != ClientAuthPolicy::Off;
        if request_cert {
            let sig = Extension::signature_algorithms(&self.config.signature_schemes)
                .map_err(Abort::codec)?;
            self.conn.send_and_record(
                HandshakeMessage::CertificateRequest(CertificateRequestMsg {
                    context: Vec::new(),
                    extensions: vec![sig],
                }),
                &mut self.transcript,
            )?;
        }
        let scheme = credential.as_ref().map(|c| c.scheme);
        if let Some(key) = credential {
            self.conn.send_and_record(
                HandshakeMessage::Certificate(CertificateMsg {
                    context: Vec::new(),
                    entries: vec![CertificateEntry {
                        data: key.public.clone(),
                        extensions: Vec::new(),
                    }],
                }),
                &mut self.transcript,
            )?;
            let th = self.transcript.hash(provider.as_ref()).map_err(Abort::internal)?;
            let signature = provider
                .sign(&key, &signed_content(SERVER_CV_CONTEXT, &th))
                .map_err(Abort::internal)?;
            self.conn.send_and_record(
                HandshakeMessage::CertificateVerify(CertificateVerifyMsg {
                    scheme: key.scheme,
                    signature,
                }),
                &mut self.transcript,
            )?;
        }
        let th = self
            .conn
            .checkpoint(checkpoint::PRE_SERVER_FINISHED, &self.transcript)?;
        let verify_data = expected_verify_data(provider.as_ref(), &server_hs, &th);
        self.conn.send_and_record(
            HandshakeMessage::Finished(FinishedMsg { verify_data }),
            &mut self.transcript,
        )?;
        let th_sf = self.conn.checkpoint(checkpoint::SERVER_FINISHED, &self.transcript)?;
        schedule.into_master().map_err(fail)?;
        let (client_ap, server_ap) = schedule.application_traffic_secrets(&th_sf).map_err(fail)?;
        let exporter = schedule.exporter_master_secret(&th_sf).map_err(fail)?;
        self.conn.log_secret(&exporter);
        self.conn.install_write(server_ap, &params.aead)?;

        self.handshake = Some(Handshake {
            params,
            schedule,
            client_hs,
            client_ap: Some(client_ap),
            psk_mode: selected.as_ref().map(|(_, _, m)| *m),
            resumed: selected
                .as_ref()
                .is_some_and(|(_, k, _)| k.kind == PskKind::Resumption),
            group,
            scheme,
            client_peer: None,
        });
        self.state = if request_cert {
            ServerState::WaitClientCert
        } else {
            ServerState::WaitClientFin
        };
        Ok(())
    }

    fn send_retry(
        &mut self,
        ch: &ClientHello,
        raw: Vec<u8>,
        params: SuiteParams,
        group: NamedGroup,
        offered_early_data: bool,
    ) -> Flow {
        let cookie = self
            .config
            .use_cookie
            .then(|| self.cookie_for(params.hash, &raw, group));
        let mut exts = vec![
            Extension::supported_versions_selected(ProtocolVersion::TLS13),
            Extension::key_share_hrr(group),
        ];
        if let Some(c) = &cookie {
            exts.push(Extension::cookie(c).map_err(Abort::codec)?);
        }
        let hrr = ServerHello {
            legacy_version: ProtocolVersion::TLS12,
            random: HRR_RANDOM,
            legacy_session_id_echo: ch.legacy_session_id.clone(),
            cipher_suite: params.suite,
            legacy_compression_method: 0,
            extensions: exts,
        };
        self.transcript.set_hash(params.hash);
        self.conn.client_random = ch.random;
        self.transcript.append(&raw);
        self.transcript
            .substitute_hrr(self.config.provider.as_ref(), None)
            .map_err(Abort::internal)?;
        let sent = self.conn.send_handshake(HandshakeMessage::ServerHello(hrr))?;
        for r in &sent {
            self.transcript.append(r);
        }
        self.conn.checkpoint(checkpoint::HELLO_RETRY, &self.transcript)?;
        self.retry = Some(Retry {
            suite: params.suite,
            first_hello: raw,
            retry_request: sent.concat(),
            cookie,
            random: ch.random,
        });
        if offered_early_data {
            self.conn
                .start_skipping(SkipMode::Discard, self.config.max_early_data_skip);
        }
        self.state = ServerState::WaitCH2;
        Ok(())
    }

    fn hs(&mut self) -> Flow<&mut Handshake> {
        self.handshake
            .as_mut()
            .ok_or_else(|| Abort::internal("handshake parameters missing"))
    }

    /// Shared by the in-handshake and post-handshake paths. Returns the
    /// verified identity, or `None` for an acceptable empty certificate.
    fn verify_client_certificate(&self, ct: &CertificateMsg, context: &[u8]) -> Flow<Option<PeerIdentity>> {
        if ct.context != context {
            return Err(Abort::illegal("certificate_request_context does not match"));
        }
        for entry in &ct.entries {
            check_placement(MessageContext::Certificate, &entry.extensions)?;
        }
        if ct.entries.is_empty() {
            return match self.config.client_auth {
                ClientAuthPolicy::Require => Err(Abort::new(
                    AlertDescription::CERTIFICATE_REQUIRED,
                    "client declined to authenticate",
                )),
                _ => Ok(None),
            };
        }
        let peer = self
            .config
            .client_verifier
            .verify(&ct.entries)
            .map_err(|a| Abort::new(a, "client certificate rejected"))?;
        check_chain(&peer, self.config.reject_sha1_certificates)?;
        Ok(Some(peer))
    }

    fn verify_client_signature(
        &self,
        cv: &CertificateVerifyMsg,
        peer: Option<&PeerIdentity>,
        transcript: &Transcript,
    ) -> Flow {
        if !self.config.signature_schemes.contains(&cv.scheme) {
            return Err(Abort::illegal(format!(
                "signature scheme {} not in CertificateRequest",
                cv.scheme
            )));
        }
        let peer = peer.ok_or_else(|| Abort::internal("no client identity"))?;
        let th = transcript
            .hash(self.config.provider.as_ref())
            .map_err(Abort::internal)?;
        if !self.config.provider.verify(
            cv.scheme,
            &peer.public_key,
            &signed_content(CLIENT_CV_CONTEXT, &th),
            &cv.signature,
        ) {
            return Err(Abort::new(
                AlertDescription::BAD_CERTIFICATE,
                "client CertificateVerify signature does not verify",
            ));
        }
        Ok(())
    }

    fn on_client_certificate(&mut self, ct: CertificateMsg, raw: Vec<u8>) -> Flow {
        let peer = self.verify_client_certificate(&ct, &[])?;
        self.transcript.append(&raw);
        self.state = if peer.is_some() {
            ServerState::WaitClientCV
        } else {
            ServerState::WaitClientFin
        };
        self.hs()?.client_peer = peer;
        Ok(())
    }

    fn on_client_certificate_verify(&mut self, cv: CertificateVerifyMsg, raw: Vec<u8>) -> Flow {
        let peer = self.hs()?.client_peer.clone();
        self.verify_client_signature(&cv, peer.as_ref(), &self.transcript)?;
        self.transcript.append(&raw);
        self.state = ServerState::WaitClientFin;
        Ok(())
    }

    fn on_client_finished(&mut self, fin: FinishedMsg, raw: Vec<u8>) -> Flow {
        let provider = self.config.provider.clone();
        let th = self.transcript.hash(provider.as_ref()).map_err(Abort::internal)?;
        let hs = self.hs()?;
        check_finished(
            provider.as_ref(),
            hs.params.hash,
            &hs.client_hs.clone(),
            &th,
            &fin.verify_data,
        )?;
        self.transcript.append(&raw);
        let th_cf = self.conn.checkpoint(checkpoint::CLIENT_FINISHED, &self.transcript)?;
        let hs = self.handshake.as_mut().ok_or_else(|| Abort::internal("no handshake"))?;
        let rms = hs
            .schedule
            .resumption_master_secret(&th_cf)
            .map_err(Abort::internal)?;
        let client_ap = hs
            .client_ap
            .take()
            .ok_or_else(|| Abort::internal("no client application secret"))?;
        let aead = hs.params.aead;
        let result = NegotiationResult {
            version: ProtocolVersion::TLS13,
            suite: hs.params.suite,
            group: hs.group,
            psk_mode: hs.psk_mode,
            signature_scheme: hs.scheme,
            client_authenticated: hs.client_peer.is_some(),
            resumed: hs.resumed,
            hello_retry: self.retry.is_some(),
        };
        self.resumption_master = Some(rms);
        self.conn.install_read(client_ap, &aead)?;
        self.conn.handshake_done = true;
        self.handshake_transcript = Some(self.transcript.clone());
        self.state = ServerState::Connected;
        self.result = Some(result.clone());
        self.conn.emit(EngineEvent::HandshakeComplete(result));
        for _ in 0..self.config.ticket_count {
            self.issue_ticket()?;
        }
        Ok(())
    }

    fn issue_ticket(&mut self) -> Flow {
        let rms = self
            .resumption_master
            .clone()
            .ok_or_else(|| Abort::internal("no resumption master secret"))?;
        let nonce = self.tickets_issued.to_be_bytes().to_vec();
        self.tickets_issued += 1;
        let ticket_age_add = self.rng.next_u32();
        let secret = derive_resumption_psk(self.config.provider.as_ref(), rms.hash, &rms.secret, &nonce)
            .map_err(Abort::internal)?;
        let mut psk = PreSharedKey {
            identity: Vec::new(),
            secret,
            kind: PskKind::Resumption,
            hash: rms.hash,
            ticket_age_add,
            lifetime: self.config.ticket_lifetime,
            issued_at_ms: self.config.clock.now_ms(),
            max_early_data: None,
        };
        psk.identity = self.sealer.seal(&psk, &mut self.rng);
        self.conn.send_handshake(HandshakeMessage::NewSessionTicket(NewSessionTicketMsg {
            lifetime: psk.lifetime,
            age_add: ticket_age_add,
            nonce,
            ticket: psk.identity.clone(),
            extensions: Vec::new(),
        }))?;
        self.conn.emit(EngineEvent::TicketIssued(psk));
        Ok(())
    }

    fn pending_auth(&mut self) -> Flow<&mut PostHandshakeAuth> {
        self.pha
            .as_mut()
            .ok_or_else(|| Abort::internal("no post-handshake authentication pending"))
    }

    fn on_post_handshake_certificate(&mut self, ct: CertificateMsg, raw: Vec<u8>) -> Flow {
        let context = self.pending_auth()?.context.clone();
        let peer = self.verify_client_certificate(&ct, &context)?;
        let pha = self.pending_auth()?;
        pha.transcript.append(&raw);
        pha.stage = if peer.is_some() {
            AuthStage::Verify
        } else {
            AuthStage::Finished
        };
        pha.peer = peer;
        Ok(())
    }

    fn on_post_handshake_verify(&mut self, cv: CertificateVerifyMsg, raw: Vec<u8>) -> Flow {
        let pha = self.pha.as_ref().ok_or_else(|| Abort::internal("no pending auth"))?;
        self.verify_client_signature(&cv, pha.peer.as_ref(), &pha.transcript)?;
        let pha = self.pending_auth()?;
        pha.transcript.append(&raw);
        pha.stage = AuthStage::Finished;
        Ok(())
    }

    fn on_post_handshake_finished(&mut self, fin: FinishedMsg) -> Flow {
        let pha = self.pha.take().ok_or_else(|| Abort::internal("no pending auth"))?;
        let provider = self.config.provider.clone();
        let th = pha.transcript.hash(provider.as_ref()).map_err(Abort::internal)?;
        let secret = self
            .conn
            .read_secret
            .clone()
            .ok_or_else(|| Abort::internal("no client application secret"))?;
        check_finished(provider.as_ref(), secret.hash, &secret, &th, &fin.verify_data)?;
        let authenticated = pha.peer.is_some();
        if let Some(hs) = self.handshake.as_mut() {
            if authenticated {
                hs.client_peer = pha.peer;
            }
        }
        self.conn.emit(EngineEvent::PostHandshakeAuth {
            context: pha.context,
            authenticated,
        });
        Ok(())
    }
}
