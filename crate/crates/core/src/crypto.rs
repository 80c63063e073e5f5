//! Digests, party identities and the out-of-band key registry.

use std::collections::HashMap;
use std::fmt;
use std::sync::RwLock;

use ed25519_dalek::pkcs8::EncodePrivateKey;
use ed25519_dalek::{Signature, Signer, SigningKey, VerifyingKey};
use rand::{CryptoRng, RngCore};
use rustls::pki_types::{CertificateDer, PrivateKeyDer, PrivatePkcs8KeyDer};
use sha2::{Digest as _, Sha256};

pub const DIGEST_LEN: usize = 32;
pub const SIGNATURE_LEN: usize = 64;
pub const PUBLIC_KEY_LEN: usize = 32;

/// SHA-256 digest.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    pub const ZERO: Digest = Digest([0; DIGEST_LEN]);

    pub fn of(data: &[u8]) -> Self {
        Digest(Sha256::digest(data).into())
    }

    pub fn of_parts(parts: &[&[u8]]) -> Self {
        let mut h = Sha256::new();
        for p in parts {
            h.update(p);
        }
        Digest(h.finalize().into())
    }

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_slice(b: &[u8]) -> Option<Self> {
        Some(Digest(b.try_into().ok()?))
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({}..)", &self.to_hex()[..12])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// SHA-256 of a raw Ed25519 public key.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Fingerprint(pub [u8; DIGEST_LEN]);

impl Fingerprint {
    pub fn of(key: &VerifyingKey) -> Self {
        Fingerprint(Digest::of(key.as_bytes()).0)
    }
}

impl fmt::Debug for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fingerprint({})", &hex::encode(self.0)[..16])
    }
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

/// A party's long-term Ed25519 key and its self-signed certificate.
///
/// The same key authenticates the secure session and signs payment messages.
pub struct Identity {
    name: String,
    signing: SigningKey,
    cert: CertificateDer<'static>,
    pkcs8: Vec<u8>,
}

impl Clone for Identity {
    fn clone(&self) -> Self {
        Self {
            name: self.name.clone(),
            signing: self.signing.clone(),
            cert: self.cert.clone(),
            pkcs8: self.pkcs8.clone(),
        }
    }
}

impl fmt::Debug for Identity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Identity")
            .field("name", &self.name)
            .field("fingerprint", &self.fingerprint())
            .finish()
    }
}

impl Identity {
    pub fn generate<R: RngCore + CryptoRng>(name: &str, rng: &mut R) -> Self {
        Self::from_signing_key(name, SigningKey::generate(rng))
    }

    pub fn from_seed(name: &str, seed: [u8; 32]) -> Self {
        Self::from_signing_key(name, SigningKey::from_bytes(&seed))
    }

    pub fn from_signing_key(name: &str, signing: SigningKey) -> Self {
        let pkcs8 = signing
            .to_pkcs8_der()
            .expect("ed25519 pkcs8 encoding")
            .as_bytes()
            .to_vec();
        let key_pair = rcgen::KeyPair::try_from(pkcs8.as_slice()).expect("ed25519 key pair");
        let mut params =
            rcgen::CertificateParams::new(vec![name.to_string()]).expect("certificate params");
        // Fixed serial and validity keep certificate sizes, and therefore
        // handshake timings, identical across runs.
        params.serial_number = Some(rcgen::SerialNumber::from(vec![1u8]));
        params.not_before = rcgen::date_time_ymd(2024, 1, 1);
        params.not_after = rcgen::date_time_ymd(2099, 1, 1);
        let cert = params.self_signed(&key_pair).expect("self-signed certificate");
        Self {
            name: name.to_string(),
            signing,
            cert: cert.der().clone(),
            pkcs8,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn signing_key(&self) -> &SigningKey {
        &self.signing
    }

    pub fn verifying_key(&self) -> VerifyingKey {
        self.signing.verifying_key()
    }

    pub fn fingerprint(&self) -> Fingerprint {
        Fingerprint::of(&self.verifying_key())
    }

    pub fn sign(&self, msg: &[u8]) -> Signature {
        self.signing.sign(msg)
    }

    pub fn certificate(&self) -> CertificateDer<'static> {
        self.cert.clone()
    }

    pub fn private_key(&self) -> PrivateKeyDer<'static> {
        PrivateKeyDer::Pkcs8(PrivatePkcs8KeyDer::from(self.pkcs8.clone()))
    }
}

pub fn verify(key: &VerifyingKey, msg: &[u8], sig: &[u8]) -> bool {
    let Ok(sig) = Signature::from_slice(sig) else {
        return false;
    };
    key.verify_strict(msg, &sig).is_ok()
}

const ED25519_SPKI_PREFIX: [u8; 12] = [
    0x30, 0x2a, 0x30, 0x05, 0x06, 0x03, 0x2b, 0x65, 0x70, 0x03, 0x21, 0x00,
];

/// Extracts the Ed25519 subject key from a DER certificate.
pub fn public_key_from_cert(der: &[u8]) -> Option<VerifyingKey> {
    let at = der
        .windows(ED25519_SPKI_PREFIX.len())
        .position(|w| w == ED25519_SPKI_PREFIX)?;
    let start = at + ED25519_SPKI_PREFIX.len();
    let raw: [u8; PUBLIC_KEY_LEN] = der.get(start..start + PUBLIC_KEY_LEN)?.try_into().ok()?;
    VerifyingKey::from_bytes(&raw).ok()
}

/// Public keys registered out-of-band, looked up by fingerprint.
#[derive(Debug, Default)]
pub struct KeyRegistry {
    keys: RwLock<HashMap<Fingerprint, VerifyingKey>>,
}

impl KeyRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&self, key: VerifyingKey) -> Fingerprint {
        let fp = Fingerprint::of(&key);
        self.keys.write().unwrap_or_else(|e| e.into_inner()).insert(fp, key);
        fp
    }

    pub fn revoke(&self, fp: &Fingerprint) -> bool {
        self.keys
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .remove(fp)
            .is_some()
    }

    pub fn contains(&self, key: &VerifyingKey) -> bool {
        self.get(&Fingerprint::of(key)).is_some_and(|k| k == *key)
    }

    pub fn get(&self, fp: &Fingerprint) -> Option<VerifyingKey> {
        self.keys.read().unwrap_or_else(|e| e.into_inner()).get(fp).copied()
    }

    pub fn len(&self) -> usize {
        self.keys.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn certificate_carries_the_identity_key() {
        let id = Identity::from_seed("charger-1", [7; 32]);
        let key = public_key_from_cert(&id.certificate()).unwrap();
        assert_eq!(key, id.verifying_key());
        let again = Identity::from_seed("charger-1", [7; 32]);
        assert_eq!(id.certificate(), again.certificate());
    }

    #[test]
    fn registry_lookup() {
        let reg = KeyRegistry::new();
        let a = Identity::from_seed("a", [1; 32]);
        let b = Identity::from_seed("b", [2; 32]);
        reg.register(a.verifying_key());
        assert!(reg.contains(&a.verifying_key()));
        assert!(!reg.contains(&b.verifying_key()));
        assert!(reg.revoke(&a.fingerprint()));
        assert!(reg.is_empty());
    }

    #[test]
    fn signatures_verify_only_under_the_signer() {
        let a = Identity::from_seed("a", [1; 32]);
        let b = Identity::from_seed("b", [2; 32]);
        let sig = a.sign(b"msg");
        assert!(verify(&a.verifying_key(), b"msg", &sig.to_bytes()));
        assert!(!verify(&b.verifying_key(), b"msg", &sig.to_bytes()));
        assert!(!verify(&a.verifying_key(), b"msh", &sig.to_bytes()));
        assert!(!verify(&a.verifying_key(), b"msg", &[0; 10]));
    }
}
