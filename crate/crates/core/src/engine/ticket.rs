//! Self-contained session tickets: the server keeps no per-ticket state and
//! recovers the resumption PSK by opening the ticket it issued.

use std::sync::Arc;

use rand::RngCore;

use super::PreSharedKey;
use crate::codec::Reader;
use crate::crypto::{AeadAlg, CryptoProvider, HashAlg};
use crate::hkdf::Secret;
use crate::key_schedule::PskKind;

const AAD: &[u8] = b"tls13 session ticket";
const NONCE_LEN: usize = 12;

#[derive(Debug)]
pub(crate) struct TicketSealer {
    provider: Arc<dyn CryptoProvider>,
    key: Secret,
}

impl TicketSealer {
    pub fn new(
        provider: Arc<dyn CryptoProvider>,
        key: Option<Secret>,
        rng: &mut dyn RngCore,
    ) -> Self {
        let key = key.unwrap_or_else(|| {
            let mut key = vec![0u8; 16];
            rng.fill_bytes(&mut key);
            Secret::new(key)
        });
        TicketSealer { provider, key }
    }

    pub fn seal(&self, psk: &PreSharedKey, rng: &mut dyn RngCore) -> Vec<u8> {
        let mut pt = vec![match psk.hash {
            HashAlg::Sha256 => 0,
            HashAlg::Sha384 => 1,
        }];
        pt.extend_from_slice(&psk.issued_at_ms.to_be_bytes());
        pt.extend_from_slice(&psk.lifetime.to_be_bytes());
        pt.extend_from_slice(&psk.ticket_age_add.to_be_bytes());
        pt.push(psk.secret.len() as u8);
        pt.extend_from_slice(psk.secret.as_bytes());
        let mut nonce = [0u8; NONCE_LEN];
        rng.fill_bytes(&mut nonce);
        let ct = self
            .provider
            .seal(AeadAlg::Aes128Gcm, self.key.as_bytes(), &nonce, AAD, &pt)
            .expect("AES-128-GCM is mandatory");
        let mut ticket = nonce.to_vec();
        ticket.extend_from_slice(&ct);
        ticket
    }

    /// Recovers the PSK behind a ticket this sealer issued; `None` for anything else.
    pub fn open(&self, ticket: &[u8]) -> Option<PreSharedKey> {
        if ticket.len() < NONCE_LEN {
            return None;
        }
        let (nonce, ct) = ticket.split_at(NONCE_LEN);
        let pt = self
            .provider
            .open(AeadAlg::Aes128Gcm, self.key.as_bytes(), nonce, AAD, ct)
            .ok()?;
        let mut r = Reader::new(&pt);
        let hash = match r.u8().ok()? {
            0 => HashAlg::Sha256,
            1 => HashAlg::Sha384,
            _ => return None,
        };
        let issued_at_ms = u64::from_be_bytes(r.array().ok()?);
        let lifetime = r.u32().ok()?;
        let ticket_age_add = r.u32().ok()?;
        let len = r.u8().ok()? as usize;
        let secret = Secret::from(r.take(len).ok()?);
        r.expect_end().ok()?;
        Some(PreSharedKey {
            identity: ticket.to_vec(),
            secret,
            kind: PskKind::Resumption,
            hash,
            ticket_age_add,
            lifetime,
            issued_at_ms,
            max_early_data: None,
        })
    }
}
