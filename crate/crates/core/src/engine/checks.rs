use super::connection::{Abort, Flow};
use super::PeerIdentity;
use crate::codec::{
    check_extension_placement, AlertDescription, Extension, ExtensionType, MessageContext,
};
use crate::crypto::{constant_time_eq, CryptoProvider, HashAlg};
use crate::key_schedule::{compute_verify_data, finished_key, TrafficSecret};

/// Placement rules for registered extension types. Unregistered types are
/// left to the solicitation check (server side) or ignored (ClientHello).
pub(crate) fn check_placement(context: MessageContext, exts: &[Extension]) -> Flow {
    let known: Vec<Extension> = exts
        .iter()
        .filter(|e| e.extension_type.is_known())
        .cloned()
        .collect();
    check_extension_placement(context, &known)
        .map_err(|v| Abort::illegal(format!("{v} in {}", context.abbreviation())))
}

/// Response extensions must answer something the client offered.
pub(crate) fn check_solicited(exts: &[Extension], offered: &[ExtensionType]) -> Flow {
    match exts.iter().find(|e| !offered.contains(&e.extension_type)) {
        Some(e) => Err(Abort::new(
            AlertDescription::UNSUPPORTED_EXTENSION,
            format!("unsolicited extension {}", e.extension_type),
        )),
        None => Ok(()),
    }
}

pub(crate) fn check_chain(peer: &PeerIdentity, reject_sha1: bool) -> Flow {
    for s in &peer.chain_signature_schemes {
        if s.uses_md5() || (reject_sha1 && s.uses_sha1()) {
            return Err(Abort::new(
                AlertDescription::BAD_CERTIFICATE,
                format!("certificate signed with {s}"),
            ));
        }
    }
    Ok(())
}

pub(crate) fn expected_verify_data(
    provider: &dyn CryptoProvider,
    secret: &TrafficSecret,
    transcript_hash: &[u8],
) -> Vec<u8> {
    let key = finished_key(provider, secret);
    compute_verify_data(provider, secret.hash, &key, transcript_hash)
}

pub(crate) fn check_finished(
    provider: &dyn CryptoProvider,
    hash: HashAlg,
    secret: &TrafficSecret,
    transcript_hash: &[u8],
    received: &[u8],
) -> Flow {
    if received.len() != hash.output_len() {
        return Err(Abort::new(
            AlertDescription::DECODE_ERROR,
            "Finished has the wrong length",
        ));
    }
    let expected = expected_verify_data(provider, secret, transcript_hash);
    if !constant_time_eq(&expected, received) {
        return Err(Abort::new(
            AlertDescription::DECRYPT_ERROR,
            "Finished verify_data mismatch",
        ));
    }
    Ok(())
}
