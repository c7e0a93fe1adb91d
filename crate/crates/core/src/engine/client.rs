use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::checks::{check_chain, check_finished, check_placement, check_solicited, expected_verify_data};
use super::connection::{Abort, Connection, Flow, Inbound};
use super::{
    checkpoint, signed_content, ClientConfig, ConfigError, EngineError, EngineEvent,
    NegotiationResult, PeerIdentity, PreSharedKey, RecordStatus, CLIENT_CV_CONTEXT,
    SERVER_CV_CONTEXT,
};
use crate::codec::{
    encode_handshake, find_extension, AlertDescription, CertificateEntry, CertificateMsg,
    CertificateRequestMsg, CertificateVerifyMsg, CipherSuite, ClientHello, Extension,
    ExtensionType, FinishedMsg, HandshakeMessage, KeyShareEntry, MessageContext, NamedGroup,
    NewSessionTicketMsg, OfferedPsks, ProtocolVersion, PskIdentity, PskKeyExchangeMode,
    ServerHello, SignatureScheme,
};
use crate::crypto::{suite_params, KeyExchangeSecret, SuiteParams};
use crate::key_schedule::{
    compute_binder, derive_resumption_psk, obfuscate_ticket_age, KeySchedule, PskKind,
    TrafficSecret,
};
use crate::record::LEGACY_RECORD_VERSION;
use crate::transcript::{truncated_hash, Transcript};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ClientState {
    Begin,
    WaitSH,
    WaitEE,
    WaitCertOrCR,
    WaitCert,
    WaitCV,
    WaitFin,
    Connected,
    Closed,
}

#[derive(Debug)]
struct Retry {
    suite: CipherSuite,
    group: Option<NamedGroup>,
}

#[derive(Debug)]
struct Handshake {
    params: SuiteParams,
    schedule: KeySchedule,
    client_secret: TrafficSecret,
    server_secret: TrafficSecret,
    psk_mode: Option<PskKeyExchangeMode>,
    psk_kind: Option<PskKind>,
    group: Option<NamedGroup>,
    cert_request: Option<CertificateRequestMsg>,
    peer: Option<PeerIdentity>,
    peer_scheme: Option<SignatureScheme>,
}

/// Client side of the handshake.
#[derive(Debug)]
pub struct ClientEngine {
    config: ClientConfig,
    conn: Connection,
    rng: ChaCha20Rng,
    state: ClientState,
    transcript: Transcript,
    random: [u8; 32],
    shares: Vec<KeyExchangeSecret>,
    /// Extensions of the latest ClientHello, minus pre_shared_key.
    hello_extensions: Vec<Extension>,
    offered_psks: Vec<PreSharedKey>,
    retry: Option<Retry>,
    handshake: Option<Handshake>,
    resumption_master: Option<TrafficSecret>,
    /// Transcript through the client Finished, the base for post-handshake auth.
    handshake_transcript: Option<Transcript>,
    result: Option<NegotiationResult>,
}

impl ClientEngine {
    /// Builds the engine and its ClientHello, which is in the returned events.
    pub fn start(config: ClientConfig) -> Result<(Self, Vec<EngineEvent>), EngineError> {
        config.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
        let mut random = [0u8; 32];
        rng.fill_bytes(&mut random);
        let mut conn = Connection::new(
            config.provider.clone(),
            config.interceptor.clone(),
            config.padding,
        );
        conn.client_random = random;

        let mut shares = Vec::new();
        let mut entries = Vec::new();
        if config.offer_dhe {
            for g in config.share_groups() {
                let (public, secret) = config
                    .provider
                    .generate_share(g, &mut rng)
                    .map_err(|_| ConfigError::UnsupportedGroup(g))?;
                entries.push(KeyShareEntry {
                    group: g,
                    key_exchange: public,
                });
                shares.push(secret);
            }
        }
        let now = config.clock.now_ms();
        let offered_psks: Vec<PreSharedKey> = config
            .psks
            .iter()
            .filter(|k| !k.is_expired(now))
            .filter(|k| {
                config
                    .cipher_suites
                    .iter()
                    .any(|s| suite_params(*s).is_some_and(|p| p.hash == k.hash))
            })
            .cloned()
            .collect();

        let mut exts = Vec::new();
        let build = |exts: &mut Vec<Extension>| -> Result<(), crate::codec::CodecError> {
            exts.push(Extension::supported_versions_offer(&config.versions)?);
            if let Some(name) = &config.server_name {
                exts.push(Extension::server_name(name)?);
            }
            if config.offer_dhe {
                exts.push(Extension::supported_groups(&config.groups)?);
            }
            exts.push(Extension::signature_algorithms(&config.signature_schemes)?);
            if let Some(s) = &config.signature_schemes_cert {
                exts.push(Extension::signature_algorithms_cert(s)?);
            }
            if config.offer_dhe {
                exts.push(Extension::key_share_offer(&entries)?);
            }
            if config.offer_post_handshake_auth {
                exts.push(Extension::post_handshake_auth());
            }
            if config.offer_early_data {
                exts.push(Extension::early_data());
            }
            exts.extend(config.extra_extensions.iter().cloned());
            if !offered_psks.is_empty() {
                exts.push(Extension::psk_key_exchange_modes(&config.psk_modes)?);
            }
            Ok(())
        };
        build(&mut exts).map_err(|_| ConfigError::NothingToOffer)?;

        let mut engine = ClientEngine {
            config,
            conn,
            rng,
            state: ClientState::Begin,
            transcript: Transcript::new(),
            random,
            shares,
            hello_extensions: exts.clone(),
            offered_psks,
            retry: None,
            handshake: None,
            resumption_master: None,
            handshake_transcript: None,
            result: None,
        };
        let sent = engine
            .finish_client_hello(exts, None)
            .and_then(|ch| engine.conn.send_handshake(HandshakeMessage::ClientHello(ch)));
        match sent {
            Ok(raws) => raws.iter().for_each(|r| engine.transcript.append(r)),
            Err(a) => engine.conn.fatal(a),
        }
        engine.state = ClientState::WaitSH;
        let events = engine.conn.take_events();
        Ok((engine, events))
    }

    /// Appends pre_shared_key (if any PSKs remain on offer) with binders
    /// computed over the truncated hello, optionally preceded by CH1 ‖ HRR.
    fn finish_client_hello(
        &mut self,
        mut exts: Vec<Extension>,
        prior: Option<(&[u8], &[u8])>,
    ) -> Flow<ClientHello> {
        let mut ch = ClientHello {
            legacy_version: ProtocolVersion::TLS12,
            random: self.random,
            legacy_session_id: Vec::new(),
            cipher_suites: self.config.cipher_suites.clone(),
            legacy_compression_methods: vec![0],
            extensions: Vec::new(),
        };
        if self.offered_psks.is_empty() {
            ch.extensions = exts;
            return Ok(ch);
        }
        let now = self.config.clock.now_ms();
        let mut offer = OfferedPsks {
            identities: self
                .offered_psks
                .iter()
                .map(|k| PskIdentity {
                    identity: k.identity.clone(),
                    obfuscated_ticket_age: match k.kind {
                        PskKind::External => 0,
                        PskKind::Resumption => obfuscate_ticket_age(
                            now.saturating_sub(k.issued_at_ms).min(u32::MAX as u64) as u32,
                            k.ticket_age_add,
                        ),
                    },
                })
                .collect(),
            binders: self
                .offered_psks
                .iter()
                .map(|k| vec![0; k.hash.output_len()])
                .collect(),
        };
        exts.push(Extension::pre_shared_key_offer(&offer).map_err(Abort::internal)?);
        ch.extensions = exts;
        let raw = encode_handshake(&HandshakeMessage::ClientHello(ch.clone()))
            .map_err(Abort::internal)?;
        let provider = self.config.provider.clone();
        for (i, k) in self.offered_psks.iter().enumerate() {
            let mut ks = KeySchedule::new(provider.clone(), k.hash);
            ks.early_secret(Some(k.secret.as_bytes()))
                .map_err(Abort::internal)?;
            let binder_key = ks.binder_key(k.kind).map_err(Abort::internal)?;
            let th = truncated_hash(provider.as_ref(), k.hash, &raw, offer.binders_len(), prior)
                .map_err(Abort::internal)?;
            offer.binders[i] = compute_binder(provider.as_ref(), &binder_key, &th);
        }
        let last = ch.extensions.len() - 1;
        ch.extensions[last] = Extension::pre_shared_key_offer(&offer).map_err(Abort::internal)?;
        Ok(ch)
    }

    pub fn state(&self) -> ClientState {
        if self.conn.dead || (self.conn.read_closed && self.conn.write_closed) {
            ClientState::Closed
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

    pub fn client_random(&self) -> [u8; 32] {
        self.random
    }

    pub fn peer_identity(&self) -> Option<&PeerIdentity> {
        self.handshake.as_ref().and_then(|h| h.peer.as_ref())
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
        let connected = self.state == ClientState::Connected;
        self.conn.api(connected, |c| c.send_app_data(data))
    }

    pub fn key_update(&mut self, request_peer: bool) -> Result<Vec<EngineEvent>, EngineError> {
        let connected = self.state == ClientState::Connected;
        self.conn.api(connected, |c| c.send_key_update(request_peer))
    }

    /// Sends close_notify; reading continues until the peer closes too.
    pub fn close(&mut self) -> Result<Vec<EngineEvent>, EngineError> {
        self.conn.api(true, Connection::send_close_notify)
    }

    fn pump(&mut self) -> Flow {
        while let Some(inbound) = self.conn.next_inbound()? {
            match inbound {
                Inbound::AppData(data) => self.conn.emit(EngineEvent::AppData(data)),
                Inbound::Handshake { msg, raw } => self.on_message(msg, raw)?,
            }
        }
        Ok(())
    }

    fn on_message(&mut self, msg: HandshakeMessage, raw: Vec<u8>) -> Flow {
        use HandshakeMessage as M;
        match (self.state, msg) {
            (ClientState::WaitSH, M::ServerHello(sh)) => self.on_server_hello(sh, raw),
            (ClientState::WaitEE, M::EncryptedExtensions(ee)) => {
                self.on_encrypted_extensions(ee.extensions, raw)
            }
            (ClientState::WaitCertOrCR, M::CertificateRequest(cr)) => {
                self.on_certificate_request(cr, raw)
            }
            (ClientState::WaitCertOrCR | ClientState::WaitCert, M::Certificate(ct)) => {
                self.on_certificate(ct, raw)
            }
            (ClientState::WaitCV, M::CertificateVerify(cv)) => self.on_certificate_verify(cv, raw),
            (ClientState::WaitFin, M::Finished(fin)) => self.on_finished(fin, raw),
            (ClientState::Connected, M::NewSessionTicket(nst)) => self.on_ticket(nst),
            (ClientState::Connected, M::KeyUpdate(ku)) => self.conn.on_key_update(&ku),
            (ClientState::Connected, M::CertificateRequest(cr)) => {
                self.on_post_handshake_request(cr, raw)
            }
            (state, m) => Err(Abort::unexpected(format!("{} in client state {state:?}", m.label()))),
        }
    }

    fn offered_types(&self) -> Vec<ExtensionType> {
        let mut t: Vec<ExtensionType> = self
            .hello_extensions
            .iter()
            .map(|e| e.extension_type)
            .collect();
        if !self.offered_psks.is_empty() {
            t.push(ExtensionType::PRE_SHARED_KEY);
        }
        t
    }

    fn check_hello_common(&self, sh: &ServerHello) -> Flow {
        if sh.legacy_session_id_echo.as_slice() != [0u8; 0] {
            return Err(Abort::illegal("legacy_session_id_echo does not match"));
        }
        if sh.legacy_compression_method != 0 {
            return Err(Abort::illegal("non-null compression method"));
        }
        if !self.config.cipher_suites.contains(&sh.cipher_suite) {
            return Err(Abort::illegal(format!(
                "cipher suite {} was not offered",
                sh.cipher_suite
            )));
        }
        Ok(())
    }

    fn on_server_hello(&mut self, sh: ServerHello, raw: Vec<u8>) -> Flow {
        // supported_versions is examined before the retry sentinel.
        let selected = find_extension(&sh.extensions, ExtensionType::SUPPORTED_VERSIONS)
            .ok_or_else(|| {
                Abort::new(
                    AlertDescription::PROTOCOL_VERSION,
                    "server did not negotiate TLS 1.3",
                )
            })?
            .parse_supported_versions_selected()
            .map_err(Abort::codec)?;
        if selected != ProtocolVersion::TLS13 || !self.config.versions.contains(&selected) {
            return Err(Abort::illegal(format!("server selected version {selected}")));
        }
        if sh.is_hello_retry_request() {
            return self.on_hello_retry(sh, raw);
        }
        self.check_hello_common(&sh)?;
        if let Some(r) = &self.retry {
            if r.suite != sh.cipher_suite {
                return Err(Abort::illegal("cipher suite changed after HelloRetryRequest"));
            }
        }
        check_placement(MessageContext::ServerHello, &sh.extensions)?;
        check_solicited(&sh.extensions, &self.offered_types())?;
        let params = suite_params(sh.cipher_suite)
            .ok_or_else(|| Abort::illegal("unknown cipher suite"))?;

        let psk = match find_extension(&sh.extensions, ExtensionType::PRE_SHARED_KEY) {
            Some(e) => {
                let idx = e.parse_pre_shared_key_selected().map_err(Abort::codec)? as usize;
                let psk = self
                    .offered_psks
                    .get(idx)
                    .ok_or_else(|| Abort::illegal("selected PSK identity was not offered"))?
                    .clone();
                if psk.hash != params.hash {
                    return Err(Abort::illegal("selected PSK hash differs from the suite hash"));
                }
                Some(psk)
            }
            None => None,
        };
        let share = find_extension(&sh.extensions, ExtensionType::KEY_SHARE)
            .map(|e| e.parse_key_share_selected().map_err(Abort::codec))
            .transpose()?;
        let (shared, group, psk_mode) = match (&psk, share) {
            (None, None) => {
                return Err(Abort::new(
                    AlertDescription::MISSING_EXTENSION,
                    "neither pre_shared_key nor key_share in ServerHello",
                ))
            }
            (Some(_), None) => {
                if !self.config.psk_modes.contains(&PskKeyExchangeMode::PSK_KE) {
                    return Err(Abort::illegal("key_share missing although psk_ke was not offered"));
                }
                (None, None, Some(PskKeyExchangeMode::PSK_KE))
            }
            (psk, Some(entry)) => {
                if psk.is_some() && !self.config.psk_modes.contains(&PskKeyExchangeMode::PSK_DHE_KE)
                {
                    return Err(Abort::illegal("key_share present although psk_dhe_ke was not offered"));
                }
                if let Some(Retry { group: Some(g), .. }) = &self.retry {
                    if *g != entry.group {
                        return Err(Abort::illegal("key share group differs from the retry group"));
                    }
                }
                let secret = self
                    .shares
                    .iter()
                    .find(|s| s.group == entry.group)
                    .ok_or_else(|| Abort::illegal(format!("no share was offered for {}", entry.group)))?;
                let shared = self
                    .config
                    .provider
                    .agree(secret, &entry.key_exchange)
                    .map_err(|e| Abort::new(AlertDescription::HANDSHAKE_FAILURE, e.to_string()))?;
                let mode = psk.as_ref().map(|_| PskKeyExchangeMode::PSK_DHE_KE);
                (Some(shared), Some(entry.group), mode)
            }
        };
        self.shares.clear();

        if self.transcript.hash_alg().is_none() {
            self.transcript.set_hash(params.hash);
        }
        self.transcript.append(&raw);
        let mut schedule = KeySchedule::new(self.config.provider.clone(), params.hash);
        let fail = Abort::internal;
        schedule
            .early_secret(psk.as_ref().map(|k| k.secret.as_bytes()))
            .map_err(fail)?;
        schedule
            .into_handshake(shared.as_deref().map(|v| v.as_slice()))
            .map_err(fail)?;
        let th = self.conn.checkpoint(checkpoint::SERVER_HELLO, &self.transcript)?;
        let (client_secret, server_secret) =
            schedule.handshake_traffic_secrets(&th).map_err(fail)?;
        self.conn.install_read(server_secret.clone(), &params.aead)?;
        self.conn.install_write(client_secret.clone(), &params.aead)?;
        self.handshake = Some(Handshake {
            params,
            schedule,
            client_secret,
            server_secret,
            psk_mode,
            psk_kind: psk.as_ref().map(|k| k.kind),
            group,
            cert_request: None,
            peer: None,
            peer_scheme: None,
        });
        self.offered_psks = psk.into_iter().collect();
        self.state = ClientState::WaitEE;
        Ok(())
    }

    fn on_hello_retry(&mut self, hrr: ServerHello, raw: Vec<u8>) -> Flow {
        if self.retry.is_some() {
            return Err(Abort::unexpected("second HelloRetryRequest"));
        }
        self.check_hello_common(&hrr)?;
        check_placement(MessageContext::HelloRetryRequest, &hrr.extensions)?;
        let mut allowed = self.offered_types();
        allowed.push(ExtensionType::COOKIE);
        check_solicited(&hrr.extensions, &allowed)?;
        let params = suite_params(hrr.cipher_suite)
            .ok_or_else(|| Abort::illegal("unknown cipher suite"))?;
        let cookie = find_extension(&hrr.extensions, ExtensionType::COOKIE)
            .map(|e| e.parse_cookie().map_err(Abort::codec))
            .transpose()?;
        let group = match find_extension(&hrr.extensions, ExtensionType::KEY_SHARE) {
            Some(e) => {
                let g = e.parse_key_share_hrr().map_err(Abort::codec)?;
                if !self.config.offer_dhe || !self.config.groups.contains(&g) {
                    return Err(Abort::illegal(format!("retry selected unoffered group {g}")));
                }
                if self.shares.iter().any(|s| s.group == g) {
                    return Err(Abort::illegal(format!("a share for {g} was already offered")));
                }
                Some(g)
            }
            // Tolerated only when a cookie makes the retry meaningful.
            None if cookie.is_some() => None,
            None => return Err(Abort::illegal("HelloRetryRequest would not change the ClientHello")),
        };

        let ch1 = self
            .transcript
            .messages()
            .first()
            .cloned()
            .ok_or_else(|| Abort::internal("no ClientHello in transcript"))?;
        self.transcript.set_hash(params.hash);
        self.transcript
            .substitute_hrr(self.config.provider.as_ref(), None)
            .map_err(Abort::internal)?;
        self.transcript.append(&raw);
        self.conn.checkpoint(checkpoint::HELLO_RETRY, &self.transcript)?;

        self.offered_psks.retain(|k| k.hash == params.hash);
        let mut exts = Vec::with_capacity(self.hello_extensions.len() + 1);
        for e in std::mem::take(&mut self.hello_extensions) {
            match e.extension_type {
                ExtensionType::KEY_SHARE => match group {
                    Some(g) => {
                        let (public, secret) = self
                            .config
                            .provider
                            .generate_share(g, &mut self.rng)
                            .map_err(Abort::internal)?;
                        self.shares = vec![secret];
                        exts.push(
                            Extension::key_share_offer(&[KeyShareEntry {
                                group: g,
                                key_exchange: public,
                            }])
                            .map_err(Abort::internal)?,
                        );
                    }
                    None => exts.push(e),
                },
                ExtensionType::EARLY_DATA => {}
                ExtensionType::PSK_KEY_EXCHANGE_MODES if self.offered_psks.is_empty() => {}
                _ => exts.push(e),
            }
        }
        if let Some(c) = &cookie {
            exts.push(Extension::cookie(c).map_err(Abort::codec)?);
        }
        self.hello_extensions = exts.clone();
        self.retry = Some(Retry {
            suite: hrr.cipher_suite,
            group,
        });
        let ch2 = self.finish_client_hello(exts, Some((&ch1, &raw)))?;
        self.conn.record_version = LEGACY_RECORD_VERSION;
        self.conn
            .send_and_record(HandshakeMessage::ClientHello(ch2), &mut self.transcript)?;
        Ok(())
    }

    fn hs(&mut self) -> Flow<&mut Handshake> {
        self.handshake
            .as_mut()
            .ok_or_else(|| Abort::internal("handshake parameters missing"))
    }

    fn on_encrypted_extensions(&mut self, exts: Vec<Extension>, raw: Vec<u8>) -> Flow {
        check_placement(MessageContext::EncryptedExtensions, &exts)?;
        check_solicited(&exts, &self.offered_types())?;
        if find_extension(&exts, ExtensionType::EARLY_DATA).is_some() {
            return Err(Abort::illegal("server accepted early data that was never sent"));
        }
        if let Some(e) = find_extension(&exts, ExtensionType::SERVER_NAME) {
            e.expect_empty().map_err(Abort::codec)?;
        }
        self.transcript.append(&raw);
        self.state = if self.hs()?.psk_mode.is_some() {
            ClientState::WaitFin
        } else {
            ClientState::WaitCertOrCR
        };
        Ok(())
    }

    fn on_certificate_request(&mut self, cr: CertificateRequestMsg, raw: Vec<u8>) -> Flow {
        if !cr.context.is_empty() {
            return Err(Abort::illegal("handshake CertificateRequest context must be empty"));
        }
        check_placement(MessageContext::CertificateRequest, &cr.extensions)?;
        if find_extension(&cr.extensions, ExtensionType::SIGNATURE_ALGORITHMS).is_none() {
            return Err(Abort::new(
                AlertDescription::MISSING_EXTENSION,
                "CertificateRequest without signature_algorithms",
            ));
        }
        self.transcript.append(&raw);
        self.hs()?.cert_request = Some(cr);
        self.state = ClientState::WaitCert;
        Ok(())
    }

    fn on_certificate(&mut self, ct: CertificateMsg, raw: Vec<u8>) -> Flow {
        if !ct.context.is_empty() {
            return Err(Abort::illegal("server Certificate context must be empty"));
        }
        if ct.entries.is_empty() {
            return Err(Abort::new(
                AlertDescription::DECODE_ERROR,
                "server sent an empty certificate list",
            ));
        }
        for entry in &ct.entries {
            check_placement(MessageContext::Certificate, &entry.extensions)?;
        }
        let peer = self
            .config
            .verifier
            .verify(&ct.entries)
            .map_err(|a| Abort::new(a, "server certificate rejected"))?;
        check_chain(&peer, self.config.reject_sha1_certificates)?;
        self.transcript.append(&raw);
        self.hs()?.peer = Some(peer);
        self.state = ClientState::WaitCV;
        Ok(())
    }

    fn on_certificate_verify(&mut self, cv: CertificateVerifyMsg, raw: Vec<u8>) -> Flow {
        if !self.config.signature_schemes.contains(&cv.scheme) {
            return Err(Abort::illegal(format!("signature scheme {} was not offered", cv.scheme)));
        }
        let th = self
            .transcript
            .hash(self.config.provider.as_ref())
            .map_err(Abort::internal)?;
        let provider = self.config.provider.clone();
        let hs = self.hs()?;
        let public = &hs.peer.as_ref().ok_or_else(|| Abort::internal("no peer"))?.public_key;
        if !provider.verify(cv.scheme, public, &signed_content(SERVER_CV_CONTEXT, &th), &cv.signature) {
            return Err(Abort::new(
                AlertDescription::BAD_CERTIFICATE,
                "server CertificateVerify signature does not verify",
            ));
        }
        hs.peer_scheme = Some(cv.scheme);
        self.transcript.append(&raw);
        self.state = ClientState::WaitFin;
        Ok(())
    }

    fn on_finished(&mut self, fin: FinishedMsg, raw: Vec<u8>) -> Flow {
        let provider = self.config.provider.clone();
        let th = self.conn.checkpoint(checkpoint::PRE_SERVER_FINISHED, &self.transcript)?;
        let hs = self.handshake.as_ref().ok_or_else(|| Abort::internal("no handshake"))?;
        check_finished(
            provider.as_ref(),
            hs.params.hash,
            &hs.server_secret,
            &th,
            &fin.verify_data,
        )?;
        self.transcript.append(&raw);
        let th_sf = self.conn.checkpoint(checkpoint::SERVER_FINISHED, &self.transcript)?;
        let hs = self.handshake.as_mut().ok_or_else(|| Abort::internal("no handshake"))?;
        let fail = Abort::internal;
        hs.schedule.into_master().map_err(fail)?;
        let (client_ap, server_ap) = hs.schedule.application_traffic_secrets(&th_sf).map_err(fail)?;
        let exporter = hs.schedule.exporter_master_secret(&th_sf).map_err(fail)?;
        let aead = hs.params.aead;
        let cert_request = hs.cert_request.clone();
        let client_hs = hs.client_secret.clone();
        self.conn.log_secret(&exporter);
        self.conn.install_read(server_ap, &aead)?;

        let mut authenticated = false;
        if let Some(cr) = cert_request {
            authenticated = self.send_client_auth(&cr)?;
        }
        let th = self
            .transcript
            .hash(provider.as_ref())
            .map_err(Abort::internal)?;
        let verify_data = expected_verify_data(provider.as_ref(), &client_hs, &th);
        self.conn.send_and_record(
            HandshakeMessage::Finished(FinishedMsg { verify_data }),
            &mut self.transcript,
        )?;
        let th_cf = self.conn.checkpoint(checkpoint::CLIENT_FINISHED, &self.transcript)?;
        let hs = self.handshake.as_mut().ok_or_else(|| Abort::internal("no handshake"))?;
        self.resumption_master = Some(hs.schedule.resumption_master_secret(&th_cf).map_err(fail)?);
        let result = NegotiationResult {
            version: ProtocolVersion::TLS13,
            suite: hs.params.suite,
            group: hs.group,
            psk_mode: hs.psk_mode,
            signature_scheme: hs.peer_scheme,
            client_authenticated: authenticated,
            resumed: hs.psk_kind == Some(PskKind::Resumption),
            hello_retry: self.retry.is_some(),
        };
        self.conn.install_write(client_ap, &aead)?;
        self.conn.handshake_done = true;
        self.handshake_transcript = Some(self.transcript.clone());
        self.state = ClientState::Connected;
        self.result = Some(result.clone());
        self.conn.emit(EngineEvent::HandshakeComplete(result));
        Ok(())
    }

    /// Certificate (possibly empty) and, with a usable credential,
    /// CertificateVerify. Returns whether a certificate was sent.
    fn send_client_auth(&mut self, cr: &CertificateRequestMsg) -> Flow<bool> {
        self.send_client_auth_into(cr, None)
    }

    fn send_client_auth_into(
        &mut self,
        cr: &CertificateRequestMsg,
        transcript: Option<&mut Transcript>,
    ) -> Flow<bool> {
        let schemes = find_extension(&cr.extensions, ExtensionType::SIGNATURE_ALGORITHMS)
            .ok_or_else(|| {
                Abort::new(
                    AlertDescription::MISSING_EXTENSION,
                    "CertificateRequest without signature_algorithms",
                )
            })?
            .parse_signature_algorithms()
            .map_err(Abort::codec)?;
        let credential = self
            .config
            .credential
            .clone()
            .filter(|c| schemes.contains(&c.scheme));
        let transcript = match transcript {
            Some(t) => t,
            None => &mut self.transcript,
        };
        let entries = credential
            .iter()
            .map(|c| CertificateEntry {
                data: c.public.clone(),
                extensions: Vec::new(),
            })
            .collect();
        self.conn.send_and_record(
            HandshakeMessage::Certificate(CertificateMsg {
                context: cr.context.clone(),
                entries,
            }),
            transcript,
        )?;
        let Some(key) = credential else {
            return Ok(false);
        };
        let th = transcript
            .hash(self.config.provider.as_ref())
            .map_err(Abort::internal)?;
        let signature = self
            .config
            .provider
            .sign(&key, &signed_content(CLIENT_CV_CONTEXT, &th))
            .map_err(Abort::internal)?;
        self.conn.send_and_record(
            HandshakeMessage::CertificateVerify(CertificateVerifyMsg {
                scheme: key.scheme,
                signature,
            }),
            transcript,
        )?;
        Ok(true)
    }

    fn on_ticket(&mut self, nst: NewSessionTicketMsg) -> Flow {
        check_placement(MessageContext::NewSessionTicket, &nst.extensions)?;
        let max_early_data = find_extension(&nst.extensions, ExtensionType::EARLY_DATA)
            .map(|e| e.parse_early_data_max().map_err(Abort::codec))
            .transpose()?;
        if nst.lifetime == 0 {
            return Ok(());
        }
        let rms = self
            .resumption_master
            .as_ref()
            .ok_or_else(|| Abort::internal("no resumption master secret"))?;
        let secret = derive_resumption_psk(
            self.config.provider.as_ref(),
            rms.hash,
            &rms.secret,
            &nst.nonce,
        )
        .map_err(Abort::internal)?;
        let psk = PreSharedKey {
            identity: nst.ticket,
            secret,
            kind: PskKind::Resumption,
            hash: rms.hash,
            ticket_age_add: nst.age_add,
            lifetime: nst.lifetime,
            issued_at_ms: self.config.clock.now_ms(),
            max_early_data,
        };
        self.conn.emit(EngineEvent::TicketReceived(psk));
        Ok(())
    }

    fn on_post_handshake_request(&mut self, cr: CertificateRequestMsg, raw: Vec<u8>) -> Flow {
        if !self.config.offer_post_handshake_auth {
            return Err(Abort::unexpected(
                "unsolicited post-handshake CertificateRequest",
            ));
        }
        if cr.context.is_empty() {
            return Err(Abort::illegal("post-handshake CertificateRequest needs a context"));
        }
        check_placement(MessageContext::CertificateRequest, &cr.extensions)?;
        let mut t = self
            .handshake_transcript
            .clone()
            .ok_or_else(|| Abort::internal("no handshake transcript"))?;
        t.append(&raw);
        let authenticated = self.send_client_auth_into(&cr, Some(&mut t))?;
        let th = t
            .hash(self.config.provider.as_ref())
            .map_err(Abort::internal)?;
        let secret = self
            .conn
            .write_secret
            .clone()
            .ok_or_else(|| Abort::internal("no application secret"))?;
        let verify_data = expected_verify_data(self.config.provider.as_ref(), &secret, &th);
        self.conn
            .send_handshake(HandshakeMessage::Finished(FinishedMsg { verify_data }))?;
        self.conn.emit(EngineEvent::PostHandshakeAuth {
            context: cr.context,
            authenticated,
        });
        Ok(())
    }
}
