//! Early, Handshake and Master secret chain and everything derived from it.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::crypto::{constant_time_eq, AeadDescriptor, CryptoProvider, HashAlg};
use crate::hkdf::{Hkdf, HkdfError, Secret};

pub const LABEL_EXT_BINDER: &str = "ext binder";
pub const LABEL_RES_BINDER: &str = "res binder";
pub const LABEL_CLIENT_EARLY: &str = "c e traffic";
pub const LABEL_EARLY_EXPORTER: &str = "e exp master";
pub const LABEL_DERIVED: &str = "derived";
pub const LABEL_CLIENT_HANDSHAKE: &str = "c hs traffic";
pub const LABEL_SERVER_HANDSHAKE: &str = "s hs traffic";
pub const LABEL_CLIENT_APPLICATION: &str = "c ap traffic";
pub const LABEL_SERVER_APPLICATION: &str = "s ap traffic";
pub const LABEL_EXPORTER: &str = "exp master";
pub const LABEL_RESUMPTION_MASTER: &str = "res master";
pub const LABEL_TRAFFIC_UPDATE: &str = "traffic upd";
pub const LABEL_FINISHED: &str = "finished";
pub const LABEL_KEY: &str = "key";
pub const LABEL_IV: &str = "iv";
pub const LABEL_RESUMPTION: &str = "resumption";

/// Application secrets may be updated at most this many times per connection.
pub const MAX_GENERATION: u32 = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Fresh,
    Early,
    Handshake,
    Master,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PskKind {
    External,
    Resumption,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sender {
    Client,
    Server,
}

impl Sender {
    pub fn peer(self) -> Sender {
        match self {
            Sender::Client => Sender::Server,
            Sender::Server => Sender::Client,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Sender::Client => "client",
            Sender::Server => "server",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Binder,
    Early,
    EarlyExporter,
    Handshake,
    Application,
    ExporterMaster,
    ResumptionMaster,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KeyScheduleError {
    #[error("operation needs stage {expected:?}, schedule is at {actual:?}")]
    WrongStage { expected: Stage, actual: Stage },
    #[error("only application traffic secrets can be updated")]
    NotApplication,
    #[error("application secret generation limit reached")]
    GenerationExhausted,
    #[error(transparent)]
    Hkdf(#[from] HkdfError),
}

/// A derived secret tagged with who uses it and for what.
#[derive(Clone, PartialEq, Eq)]
pub struct TrafficSecret {
    pub sender: Option<Sender>,
    pub purpose: Purpose,
    pub generation: u32,
    pub hash: HashAlg,
    pub secret: Secret,
}

impl fmt::Debug for TrafficSecret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TrafficSecret")
            .field("sender", &self.sender)
            .field("purpose", &self.purpose)
            .field("generation", &self.generation)
            .finish_non_exhaustive()
    }
}

impl TrafficSecret {
    pub fn as_bytes(&self) -> &[u8] {
        self.secret.as_bytes()
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct TrafficKeys {
    pub key: Secret,
    pub iv: Secret,
}

impl fmt::Debug for TrafficKeys {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TrafficKeys({}/{})", self.key.len(), self.iv.len())
    }
}

/// One derivation performed by a [`KeySchedule`]: which stage secret, label and context.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Derivation {
    pub stage: Stage,
    pub label: &'static str,
    pub context: Vec<u8>,
}

/// Staged key schedule. Each stage's secret replaces the previous one and the
/// only way forward is Fresh → Early → Handshake → Master.
pub struct KeySchedule {
    provider: Arc<dyn CryptoProvider>,
    hash: HashAlg,
    stage: Stage,
    current: Secret,
    derivations: Vec<Derivation>,
}

impl fmt::Debug for KeySchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeySchedule")
            .field("hash", &self.hash)
            .field("stage", &self.stage)
            .finish_non_exhaustive()
    }
}

impl KeySchedule {
    pub fn new(provider: Arc<dyn CryptoProvider>, hash: HashAlg) -> Self {
        KeySchedule {
            provider,
            hash,
            stage: Stage::Fresh,
            current: Secret::new(Vec::new()),
            derivations: Vec::new(),
        }
    }

    fn hkdf(&self) -> Hkdf<'_> {
        Hkdf::new(self.provider.as_ref(), self.hash)
    }

    fn require(&self, expected: Stage) -> Result<(), KeyScheduleError> {
        if self.stage == expected {
            Ok(())
        } else {
            Err(KeyScheduleError::WrongStage {
                expected,
                actual: self.stage,
            })
        }
    }

    fn derive(&mut self, label: &'static str, context: &[u8]) -> Secret {
        self.derivations.push(Derivation {
            stage: self.stage,
            label,
            context: context.to_vec(),
        });
        self.hkdf().derive_secret(self.current.as_bytes(), label, context)
    }

    fn tagged(
        &mut self,
        sender: Option<Sender>,
        purpose: Purpose,
        label: &'static str,
        context: &[u8],
    ) -> TrafficSecret {
        TrafficSecret {
            sender,
            purpose,
            generation: 0,
            hash: self.hash,
            secret: self.derive(label, context),
        }
    }

    pub fn hash_alg(&self) -> HashAlg {
        self.hash
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    /// The Early, Handshake or Master secret, depending on stage.
    pub fn current_secret(&self) -> &Secret {
        &self.current
    }

    pub fn derivations(&self) -> &[Derivation] {
        &self.derivations
    }

    /// Early Secret = HKDF-Extract(0s, PSK or 0s).
    pub fn early_secret(&mut self, psk: Option<&[u8]>) -> Result<(), KeyScheduleError> {
        self.require(Stage::Fresh)?;
        let zeros = vec![0u8; self.hash.output_len()];
        self.current = self.hkdf().extract(None, psk.unwrap_or(&zeros));
        self.stage = Stage::Early;
        Ok(())
    }

    pub fn binder_key(&mut self, kind: PskKind) -> Result<TrafficSecret, KeyScheduleError> {
        self.require(Stage::Early)?;
        let label = match kind {
            PskKind::External => LABEL_EXT_BINDER,
            PskKind::Resumption => LABEL_RES_BINDER,
        };
        let empty = self.hkdf().empty_hash();
        Ok(self.tagged(None, Purpose::Binder, label, &empty))
    }

    pub fn client_early_traffic_secret(
        &mut self,
        client_hello_hash: &[u8],
    ) -> Result<TrafficSecret, KeyScheduleError> {
        self.require(Stage::Early)?;
        Ok(self.tagged(
            Some(Sender::Client),
            Purpose::Early,
            LABEL_CLIENT_EARLY,
            client_hello_hash,
        ))
    }

    pub fn early_exporter_master_secret(
        &mut self,
        client_hello_hash: &[u8],
    ) -> Result<TrafficSecret, KeyScheduleError> {
        self.require(Stage::Early)?;
        Ok(self.tagged(
            None,
            Purpose::EarlyExporter,
            LABEL_EARLY_EXPORTER,
            client_hello_hash,
        ))
    }

    fn advance(&mut self, ikm: Option<&[u8]>, next: Stage) {
        let empty = self.hkdf().empty_hash();
        let salt = self.derive(LABEL_DERIVED, &empty);
        let zeros = vec![0u8; self.hash.output_len()];
        self.current = self.hkdf().extract(Some(salt.as_bytes()), ikm.unwrap_or(&zeros));
        self.stage = next;
    }

    /// Handshake Secret = HKDF-Extract(Derive-Secret(Early, "derived", ""), K or 0s).
    pub fn into_handshake(&mut self, ecdhe: Option<&[u8]>) -> Result<(), KeyScheduleError> {
        self.require(Stage::Early)?;
        self.advance(ecdhe, Stage::Handshake);
        Ok(())
    }

    pub fn handshake_traffic_secrets(
        &mut self,
        transcript_hash: &[u8],
    ) -> Result<(TrafficSecret, TrafficSecret), KeyScheduleError> {
        self.require(Stage::Handshake)?;
        Ok((
            self.tagged(
                Some(Sender::Client),
                Purpose::Handshake,
                LABEL_CLIENT_HANDSHAKE,
                transcript_hash,
            ),
            self.tagged(
                Some(Sender::Server),
                Purpose::Handshake,
                LABEL_SERVER_HANDSHAKE,
                transcript_hash,
            ),
        ))
    }

    /// Master Secret = HKDF-Extract(Derive-Secret(Handshake, "derived", ""), 0s).
    pub fn into_master(&mut self) -> Result<(), KeyScheduleError> {
        self.require(Stage::Handshake)?;
        self.advance(None, Stage::Master);
        Ok(())
    }

    pub fn application_traffic_secrets(
        &mut self,
        transcript_hash: &[u8],
    ) -> Result<(TrafficSecret, TrafficSecret), KeyScheduleError> {
        self.require(Stage::Master)?;
        Ok((
            self.tagged(
                Some(Sender::Client),
                Purpose::Application,
                LABEL_CLIENT_APPLICATION,
                transcript_hash,
            ),
            self.tagged(
                Some(Sender::Server),
                Purpose::Application,
                LABEL_SERVER_APPLICATION,
                transcript_hash,
            ),
        ))
    }

    pub fn exporter_master_secret(
        &mut self,
        server_finished_hash: &[u8],
    ) -> Result<TrafficSecret, KeyScheduleError> {
        self.require(Stage::Master)?;
        Ok(self.tagged(
            None,
            Purpose::ExporterMaster,
            LABEL_EXPORTER,
            server_finished_hash,
        ))
    }

    pub fn resumption_master_secret(
        &mut self,
        client_finished_hash: &[u8],
    ) -> Result<TrafficSecret, KeyScheduleError> {
        self.require(Stage::Master)?;
        Ok(self.tagged(
            None,
            Purpose::ResumptionMaster,
            LABEL_RESUMPTION_MASTER,
            client_finished_hash,
        ))
    }

    pub fn exporter_and_resumption_masters(
        &mut self,
        server_finished_hash: &[u8],
        client_finished_hash: &[u8],
    ) -> Result<(TrafficSecret, TrafficSecret), KeyScheduleError> {
        Ok((
            self.exporter_master_secret(server_finished_hash)?,
            self.resumption_master_secret(client_finished_hash)?,
        ))
    }
}

/// Next-generation application secret:
/// Derive-Secret(secret_N, "traffic upd", "") with Hash("") as context.
pub fn update_traffic_secret(
    provider: &dyn CryptoProvider,
    current: &TrafficSecret,
) -> Result<TrafficSecret, KeyScheduleError> {
    if current.purpose != Purpose::Application {
        return Err(KeyScheduleError::NotApplication);
    }
    if current.generation >= MAX_GENERATION {
        return Err(KeyScheduleError::GenerationExhausted);
    }
    let hkdf = Hkdf::new(provider, current.hash);
    let secret = hkdf.derive_secret(current.as_bytes(), LABEL_TRAFFIC_UPDATE, &hkdf.empty_hash());
    Ok(TrafficSecret {
        generation: current.generation + 1,
        secret,
        ..current.clone()
    })
}

pub fn traffic_keys(
    provider: &dyn CryptoProvider,
    secret: &TrafficSecret,
    aead: &AeadDescriptor,
) -> Result<TrafficKeys, KeyScheduleError> {
    let hkdf = Hkdf::new(provider, secret.hash);
    Ok(TrafficKeys {
        key: hkdf.expand_label(secret.as_bytes(), LABEL_KEY, &[], aead.key_len)?,
        iv: hkdf.expand_label(secret.as_bytes(), LABEL_IV, &[], aead.iv_len)?,
    })
}

pub fn finished_key(provider: &dyn CryptoProvider, secret: &TrafficSecret) -> Secret {
    Hkdf::new(provider, secret.hash)
        .expand_label(secret.as_bytes(), LABEL_FINISHED, &[], secret.hash.output_len())
        .expect("Hash.length always fits")
}

/// verify_data = HMAC(finished_key, transcript hash).
pub fn compute_verify_data(
    provider: &dyn CryptoProvider,
    hash: HashAlg,
    finished_key: &Secret,
    transcript_hash: &[u8],
) -> Vec<u8> {
    provider.hmac(hash, finished_key.as_bytes(), transcript_hash)
}

pub fn derive_resumption_psk(
    provider: &dyn CryptoProvider,
    hash: HashAlg,
    resumption_master: &Secret,
    ticket_nonce: &[u8],
) -> Result<Secret, KeyScheduleError> {
    Ok(Hkdf::new(provider, hash).expand_label(
        resumption_master.as_bytes(),
        LABEL_RESUMPTION,
        ticket_nonce,
        hash.output_len(),
    )?)
}

/// binder = HMAC(binder_key, Transcript-Hash(Truncate(CH))).
pub fn compute_binder(
    provider: &dyn CryptoProvider,
    binder_key: &TrafficSecret,
    truncated_hash: &[u8],
) -> Vec<u8> {
    provider.hmac(binder_key.hash, binder_key.as_bytes(), truncated_hash)
}

pub fn verify_binder(
    provider: &dyn CryptoProvider,
    binder_key: &TrafficSecret,
    truncated_hash: &[u8],
    binder: &[u8],
) -> bool {
    constant_time_eq(&compute_binder(provider, binder_key, truncated_hash), binder)
}

pub fn obfuscate_ticket_age(age_ms: u32, ticket_age_add: u32) -> u32 {
    age_ms.wrapping_add(ticket_age_add)
}

pub fn deobfuscate_ticket_age(obfuscated: u32, ticket_age_add: u32) -> u32 {
    obfuscated.wrapping_sub(ticket_age_add)
}

/// Every secret of one full (EC)DHE handshake over a seven-message
/// transcript (ClientHello .. client Finished), in derivation order.
/// Traffic keys use `aead`; the resumption PSK uses `ticket_nonce`.
pub fn secret_table(
    provider: Arc<dyn CryptoProvider>,
    hash: HashAlg,
    aead: &AeadDescriptor,
    psk: Option<&[u8]>,
    ecdhe: Option<&[u8]>,
    messages: &[Vec<u8>; 7],
    ticket_nonce: &[u8],
) -> Result<Vec<(&'static str, Vec<u8>)>, KeyScheduleError> {
    let p = provider.as_ref();
    let hash_of = |k: usize| p.hash(hash, &messages[..k].concat());
    let (th_ch, th_sh, th_sf, th_cf) = (hash_of(1), hash_of(2), hash_of(6), hash_of(7));
    let mut ks = KeySchedule::new(provider.clone(), hash);
    let mut out: Vec<(&'static str, Vec<u8>)> = Vec::new();
    ks.early_secret(psk)?;
    out.push(("early_secret", ks.current_secret().as_bytes().to_vec()));
    out.push(("ext_binder_key", ks.binder_key(PskKind::External)?.as_bytes().to_vec()));
    out.push(("res_binder_key", ks.binder_key(PskKind::Resumption)?.as_bytes().to_vec()));
    out.push((
        "client_early_traffic_secret",
        ks.client_early_traffic_secret(&th_ch)?.as_bytes().to_vec(),
    ));
    out.push((
        "early_exporter_master_secret",
        ks.early_exporter_master_secret(&th_ch)?.as_bytes().to_vec(),
    ));
    ks.into_handshake(ecdhe)?;
    out.push(("handshake_secret", ks.current_secret().as_bytes().to_vec()));
    let (chts, shts) = ks.handshake_traffic_secrets(&th_sh)?;
    out.push(("client_handshake_traffic_secret", chts.as_bytes().to_vec()));
    out.push(("server_handshake_traffic_secret", shts.as_bytes().to_vec()));
    ks.into_master()?;
    out.push(("master_secret", ks.current_secret().as_bytes().to_vec()));
    let (cats, sats) = ks.application_traffic_secrets(&th_sf)?;
    out.push(("client_application_traffic_secret_0", cats.as_bytes().to_vec()));
    out.push(("server_application_traffic_secret_0", sats.as_bytes().to_vec()));
    let (exporter, rms) = ks.exporter_and_resumption_masters(&th_sf, &th_cf)?;
    out.push(("exporter_master_secret", exporter.as_bytes().to_vec()));
    out.push(("resumption_master_secret", rms.as_bytes().to_vec()));
    out.push(("client_handshake_finished_key", finished_key(p, &chts).as_bytes().to_vec()));
    let sfk = finished_key(p, &shts);
    out.push(("server_handshake_finished_key", sfk.as_bytes().to_vec()));
    out.push((
        "client_application_traffic_secret_1",
        update_traffic_secret(p, &cats)?.as_bytes().to_vec(),
    ));
    out.push((
        "resumption_psk",
        derive_resumption_psk(p, hash, &rms.secret, ticket_nonce)?
            .as_bytes()
            .to_vec(),
    ));
    for (names, secret) in [
        (("client_handshake_key", "client_handshake_iv"), &chts),
        (("server_handshake_key", "server_handshake_iv"), &shts),
        (("client_application_key", "client_application_iv"), &cats),
        (("server_application_key", "server_application_iv"), &sats),
    ] {
        let keys = traffic_keys(p, secret, aead)?;
        out.push((names.0, keys.key.as_bytes().to_vec()));
        out.push((names.1, keys.iv.as_bytes().to_vec()));
    }
    out.push((
        "server_verify_data",
        compute_verify_data(p, hash, &sfk, &hash_of(5)),
    ));
    Ok(out)
}
