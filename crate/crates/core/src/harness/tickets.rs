use std::fs;
use std::path::Path;

use super::HarnessError;
use crate::codec::MAX_TICKET_LIFETIME;
use crate::crypto::HashAlg;
use crate::engine::PreSharedKey;
use crate::hkdf::Secret;
use crate::key_schedule::PskKind;

/// Client-side ticket persistence, one tab-separated line per ticket:
/// identity, secret, hash name, age_add, lifetime, issue time in Unix ms.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct TicketStoreFile {
    pub tickets: Vec<PreSharedKey>,
}

impl TicketStoreFile {
    pub fn new(tickets: Vec<PreSharedKey>) -> Self {
        TicketStoreFile { tickets }
    }

    pub fn render(&self) -> String {
        self.tickets
            .iter()
            .map(|t| {
                format!(
                    "{}\t{}\t{}\t{}\t{}\t{}\n",
                    hex::encode(&t.identity),
                    t.secret.to_hex(),
                    t.hash.name(),
                    t.ticket_age_add,
                    t.lifetime,
                    t.issued_at_ms
                )
            })
            .collect()
    }

    /// Parses stored tickets, dropping those past their lifetime (capped at
    /// seven days) as of `now_ms`.
    pub fn parse(text: &str, now_ms: u64) -> Result<Self, HarnessError> {
        let mut tickets = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = || HarnessError::TicketStore(n + 1);
            let f: Vec<&str> = line.split('\t').collect();
            let [identity, secret, hash, age_add, lifetime, issued] = f[..] else {
                return Err(bad());
            };
            let lifetime: u32 = lifetime.parse().map_err(|_| bad())?;
            let t = PreSharedKey {
                identity: hex::decode(identity).map_err(|_| bad())?,
                secret: Secret::new(hex::decode(secret).map_err(|_| bad())?),
                kind: PskKind::Resumption,
                hash: HashAlg::from_name(hash).ok_or_else(bad)?,
                ticket_age_add: age_add.parse().map_err(|_| bad())?,
                lifetime,
                issued_at_ms: issued.parse().map_err(|_| bad())?,
                max_early_data: None,
            };
            let capped = PreSharedKey {
                lifetime: lifetime.min(MAX_TICKET_LIFETIME),
                ..t.clone()
            };
            if !capped.is_expired(now_ms) {
                tickets.push(t);
            }
        }
        Ok(TicketStoreFile { tickets })
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        fs::write(path, self.render())?;
        Ok(())
    }

    pub fn load(path: &Path, now_ms: u64) -> Result<Self, HarnessError> {
        Self::parse(&fs::read_to_string(path)?, now_ms)
    }
}
