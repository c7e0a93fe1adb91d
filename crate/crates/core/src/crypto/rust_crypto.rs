use aes_gcm::aead::{Aead, KeyInit, Payload};
use aes_gcm::{Aes128Gcm, Aes256Gcm};
use chacha20poly1305::ChaCha20Poly1305;
use hmac::{Hmac, Mac};
use p256::ecdsa::signature::{Signer as _, Verifier as _};
use p256::elliptic_curve::sec1::ToEncodedPoint;
use rand::RngCore;
use sha2::{Digest, Sha256, Sha384};
use zeroize::Zeroizing;

use super::{AeadAlg, CryptoError, CryptoProvider, HashAlg, KeyExchangeSecret, SigningKey};
use crate::codec::{NamedGroup, SignatureScheme};

/// Provider backed by the RustCrypto and dalek crates.
///
/// Hashes: SHA-256, SHA-384. AEADs: AES-128/256-GCM, ChaCha20-Poly1305.
/// Groups: x25519, secp256r1. Signatures: Ed25519, ECDSA P-256/SHA-256.
#[derive(Debug, Clone, Copy, Default)]
pub struct RustCryptoProvider;

fn aead_call<C: Aead + KeyInit>(
    key: &[u8],
    nonce: &[u8],
    aad: &[u8],
    input: &[u8],
    seal: bool,
) -> Result<Vec<u8>, CryptoError> {
    let cipher = C::new_from_slice(key).map_err(|_| CryptoError::BadLength)?;
    if nonce.len() != 12 {
        return Err(CryptoError::BadLength);
    }
    let nonce = aes_gcm::Nonce::from_slice(nonce);
    let payload = Payload { msg: input, aad };
    if seal {
        cipher.encrypt(nonce, payload).map_err(|_| CryptoError::BadLength)
    } else {
        cipher.decrypt(nonce, payload).map_err(|_| CryptoError::AeadFailure)
    }
}

fn random_array<const N: usize>(rng: &mut dyn RngCore) -> Zeroizing<[u8; N]> {
    let mut out = Zeroizing::new([0u8; N]);
    rng.fill_bytes(out.as_mut());
    out
}

fn p256_secret(rng: &mut dyn RngCore) -> p256::SecretKey {
    loop {
        // out-of-range scalars are rejected; the retry probability is ~2^-32
        if let Ok(sk) = p256::SecretKey::from_slice(random_array::<32>(rng).as_ref()) {
            return sk;
        }
    }
}

impl RustCryptoProvider {
    fn dispatch_aead(
        alg: AeadAlg,
        key: &[u8],
        nonce: &[u8],
        aad: &[u8],
        input: &[u8],
        seal: bool,
    ) -> Result<Vec<u8>, CryptoError> {
        match alg {
            AeadAlg::Aes128Gcm => aead_call::<Aes128Gcm>(key, nonce, aad, input, seal),
            AeadAlg::Aes256Gcm => aead_call::<Aes256Gcm>(key, nonce, aad, input, seal),
            AeadAlg::ChaCha20Poly1305 => aead_call::<ChaCha20Poly1305>(key, nonce, aad, input, seal),
            other => Err(CryptoError::Unsupported(format!("{other:?}"))),
        }
    }
}

impl CryptoProvider for RustCryptoProvider {
    fn hash(&self, alg: HashAlg, data: &[u8]) -> Vec<u8> {
        match alg {
            HashAlg::Sha256 => Sha256::digest(data).to_vec(),
            HashAlg::Sha384 => Sha384::digest(data).to_vec(),
        }
    }

    fn hmac(&self, alg: HashAlg, key: &[u8], msg: &[u8]) -> Vec<u8> {
        // HMAC accepts keys of any length, so construction cannot fail
        match alg {
            HashAlg::Sha256 => {
                let mut mac = <Hmac<Sha256> as Mac>::new_from_slice(key).expect("any key length");
                mac.update(msg);
                mac.finalize().into_bytes().to_vec()
            }
            HashAlg::Sha384 => {
                let mut mac = <Hmac<Sha384> as Mac>::new_from_slice(key).expect("any key length");
                mac.update(msg);
                mac.finalize().into_bytes().to_vec()
            }
        }
    }

    fn supports_aead(&self, alg: AeadAlg) -> bool {
        matches!(
            alg,
            AeadAlg::Aes128Gcm | AeadAlg::Aes256Gcm | AeadAlg::ChaCha20Poly1305
        )
    }

    fn seal(
        &self,
        alg: AeadAlg,
        key: &[u8],
        nonce: &[u8],
        aad: &[u8],
        plaintext: &[u8],
    ) -> Result<Vec<u8>, CryptoError> {
        Self::dispatch_aead(alg, key, nonce, aad, plaintext, true)
    }

    fn open(
        &self,
        alg: AeadAlg,
        key: &[u8],
        nonce: &[u8],
        aad: &[u8],
        ciphertext: &[u8],
    ) -> Result<Vec<u8>, CryptoError> {
        Self::dispatch_aead(alg, key, nonce, aad, ciphertext, false)
    }

    fn supports_group(&self, group: NamedGroup) -> bool {
        group == NamedGroup::X25519 || group == NamedGroup::SECP256R1
    }

    fn generate_share(
        &self,
        group: NamedGroup,
        rng: &mut dyn RngCore,
    ) -> Result<(Vec<u8>, KeyExchangeSecret), CryptoError> {
        match group {
            NamedGroup::X25519 => {
                let bytes = random_array::<32>(rng);
                let secret = x25519_dalek::StaticSecret::from(*bytes);
                let public = x25519_dalek::PublicKey::from(&secret);
                Ok((
                    public.as_bytes().to_vec(),
                    KeyExchangeSecret::new(group, secret.to_bytes().to_vec()),
                ))
            }
            NamedGroup::SECP256R1 => {
                let secret = p256_secret(rng);
                let public = secret.public_key().to_encoded_point(false);
                Ok((
                    public.as_bytes().to_vec(),
                    KeyExchangeSecret::new(group, secret.to_bytes().to_vec()),
                ))
            }
            other => Err(CryptoError::Unsupported(format!("group {other}"))),
        }
    }

    fn agree(
        &self,
        secret: &KeyExchangeSecret,
        peer_share: &[u8],
    ) -> Result<Zeroizing<Vec<u8>>, CryptoError> {
        match secret.group {
            NamedGroup::X25519 => {
                let peer: [u8; 32] = peer_share.try_into().map_err(|_| CryptoError::InvalidShare)?;
                let own: [u8; 32] = secret.bytes().try_into().map_err(|_| CryptoError::InvalidKey)?;
                let own = x25519_dalek::StaticSecret::from(own);
                let shared = own.diffie_hellman(&x25519_dalek::PublicKey::from(peer));
                if !shared.was_contributory() {
                    return Err(CryptoError::InvalidShare);
                }
                Ok(Zeroizing::new(shared.as_bytes().to_vec()))
            }
            NamedGroup::SECP256R1 => {
                // only the uncompressed point form is legal in TLS 1.3
                if peer_share.len() != 65 || peer_share[0] != 0x04 {
                    return Err(CryptoError::InvalidShare);
                }
                let peer = p256::PublicKey::from_sec1_bytes(peer_share)
                    .map_err(|_| CryptoError::InvalidShare)?;
                let own = p256::SecretKey::from_slice(secret.bytes())
                    .map_err(|_| CryptoError::InvalidKey)?;
                let shared = p256::ecdh::diffie_hellman(own.to_nonzero_scalar(), peer.as_affine());
                Ok(Zeroizing::new(shared.raw_secret_bytes().to_vec()))
            }
            other => Err(CryptoError::Unsupported(format!("group {other}"))),
        }
    }

    fn supports_signature(&self, scheme: SignatureScheme) -> bool {
        scheme == SignatureScheme::ED25519 || scheme == SignatureScheme::ECDSA_SECP256R1_SHA256
    }

    fn generate_signing_key(
        &self,
        scheme: SignatureScheme,
        rng: &mut dyn RngCore,
    ) -> Result<SigningKey, CryptoError> {
        match scheme {
            SignatureScheme::ED25519 => {
                let seed = random_array::<32>(rng);
                let sk = ed25519_dalek::SigningKey::from_bytes(&seed);
                Ok(SigningKey::new(
                    scheme,
                    seed.to_vec(),
                    sk.verifying_key().to_bytes().to_vec(),
                ))
            }
            SignatureScheme::ECDSA_SECP256R1_SHA256 => {
                let sk = p256_secret(rng);
                let public = sk.public_key().to_encoded_point(false).as_bytes().to_vec();
                Ok(SigningKey::new(scheme, sk.to_bytes().to_vec(), public))
            }
            other => Err(CryptoError::Unsupported(format!("signature {other}"))),
        }
    }

    fn sign(&self, key: &SigningKey, msg: &[u8]) -> Result<Vec<u8>, CryptoError> {
        match key.scheme {
            SignatureScheme::ED25519 => {
                let seed: [u8; 32] = key
                    .secret_bytes()
                    .try_into()
                    .map_err(|_| CryptoError::InvalidKey)?;
                let sk = ed25519_dalek::SigningKey::from_bytes(&seed);
                Ok(ed25519_dalek::Signer::sign(&sk, msg).to_bytes().to_vec())
            }
            SignatureScheme::ECDSA_SECP256R1_SHA256 => {
                let sk = p256::ecdsa::SigningKey::from_slice(key.secret_bytes())
                    .map_err(|_| CryptoError::InvalidKey)?;
                let sig: p256::ecdsa::Signature = sk.sign(msg);
                Ok(sig.to_der().as_bytes().to_vec())
            }
            other => Err(CryptoError::Unsupported(format!("signature {other}"))),
        }
    }

    fn verify(&self, scheme: SignatureScheme, public: &[u8], msg: &[u8], signature: &[u8]) -> bool {
        match scheme {
            SignatureScheme::ED25519 => {
                let Ok(public) = <[u8; 32]>::try_from(public) else {
                    return false;
                };
                let Ok(vk) = ed25519_dalek::VerifyingKey::from_bytes(&public) else {
                    return false;
                };
                let Ok(sig) = ed25519_dalek::Signature::from_slice(signature) else {
                    return false;
                };
                vk.verify_strict(msg, &sig).is_ok()
            }
            SignatureScheme::ECDSA_SECP256R1_SHA256 => {
                let Ok(vk) = p256::ecdsa::VerifyingKey::from_sec1_bytes(public) else {
                    return false;
                };
                let Ok(sig) = p256::ecdsa::Signature::from_der(signature) else {
                    return false;
                };
                vk.verify(msg, &sig).is_ok()
            }
            _ => false,
        }
    }
}
