//! Software-update domain: signed manifests, ECU version state and the
//! charger-side image cache.

mod cache;

pub use cache::{CacheEntry, UpdateCache, DEFAULT_CACHE_CAPACITY};

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ed25519_dalek::VerifyingKey;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{verify, Digest, Identity, SIGNATURE_LEN};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UpdateError {
    #[error("manifest signature does not verify under the repository key")]
    BadSignature,
    #[error("image hash mismatch: expected {expected}, got {actual}")]
    Integrity { expected: Digest, actual: Digest },
    #[error("image is {actual} bytes, manifest says {expected}")]
    SizeMismatch { expected: u64, actual: u64 },
    #[error("version {offered} is not newer than {current}")]
    Downgrade { current: Version, offered: Version },
    #[error("manifest targets `{offered}`, ECU is `{ecu}`")]
    WrongModel { ecu: String, offered: String },
    #[error("no previous image to roll back to")]
    NoPrevious,
    #[error("manifest {0} is not pending")]
    NotPending(String),
    #[error("malformed manifest: {0}")]
    Malformed(String),
    #[error("fetch failed: {reason}; retry after {retry_after_ms} ms")]
    Fetch { reason: String, retry_after_ms: u64 },
    #[error("image of {size} bytes exceeds cache capacity {capacity}")]
    Capacity { size: u64, capacity: u64 },
    #[error("cache storage: {0}")]
    Storage(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct Version {
    pub major: u16,
    pub minor: u16,
    pub patch: u16,
}

impl Version {
    pub const fn new(major: u16, minor: u16, patch: u16) -> Self {
        Self { major, minor, patch }
    }

    pub fn to_bytes(self) -> [u8; 6] {
        let mut out = [0u8; 6];
        out[..2].copy_from_slice(&self.major.to_be_bytes());
        out[2..4].copy_from_slice(&self.minor.to_be_bytes());
        out[4..].copy_from_slice(&self.patch.to_be_bytes());
        out
    }

    pub fn from_bytes(b: [u8; 6]) -> Self {
        Self::new(
            u16::from_be_bytes([b[0], b[1]]),
            u16::from_be_bytes([b[2], b[3]]),
            u16::from_be_bytes([b[4], b[5]]),
        )
    }
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}.{}", self.major, self.minor, self.patch)
    }
}

impl FromStr for Version {
    type Err = UpdateError;

    fn from_str(s: &str) -> Result<Self, UpdateError> {
        let parts: Vec<&str> = s.trim_start_matches('v').split('.').collect();
        let [a, b, c] = parts.as_slice() else {
            return Err(UpdateError::Malformed(format!("version `{s}`")));
        };
        let p = |x: &str| x.parse::<u16>().map_err(|_| UpdateError::Malformed(format!("version `{s}`")));
        Ok(Self::new(p(a)?, p(b)?, p(c)?))
    }
}

/// Signed description of one firmware image.
///
/// Canonical encoding: every field carries a 32-bit big-endian length prefix,
/// in declaration order. The signature covers the first four fields.
#[derive(Clone, PartialEq, Eq)]
pub struct UpdateManifest {
    pub ecu_model: String,
    pub version: Version,
    pub size_bytes: u64,
    pub image_hash: Digest,
    pub signature: [u8; SIGNATURE_LEN],
}

impl fmt::Debug for UpdateManifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UpdateManifest")
            .field("ecu_model", &self.ecu_model)
            .field("version", &self.version.to_string())
            .field("size_bytes", &self.size_bytes)
            .field("image_hash", &self.image_hash)
            .finish()
    }
}

fn put_field(out: &mut Vec<u8>, field: &[u8]) {
    out.extend_from_slice(&(field.len() as u32).to_be_bytes());
    out.extend_from_slice(field);
}

impl UpdateManifest {
    pub fn sign(ecu_model: &str, version: Version, image: &[u8], publisher: &Identity) -> Self {
        let mut m = Self {
            ecu_model: ecu_model.to_string(),
            version,
            size_bytes: image.len() as u64,
            image_hash: Digest::of(image),
            signature: [0; SIGNATURE_LEN],
        };
        m.signature = publisher.sign(&m.signed_bytes()).to_bytes();
        m
    }

    pub fn signed_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.ecu_model.len());
        put_field(&mut out, self.ecu_model.as_bytes());
        put_field(&mut out, &self.version.to_bytes());
        put_field(&mut out, &self.size_bytes.to_be_bytes());
        put_field(&mut out, self.image_hash.as_bytes());
        out
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.signed_bytes();
        put_field(&mut out, &self.signature);
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self, UpdateError> {
        let mut rest = buf;
        let mut field = |want: Option<usize>| -> Result<&[u8], UpdateError> {
            if rest.len() < 4 {
                return Err(UpdateError::Malformed("truncated".into()));
            }
            let n = u32::from_be_bytes(rest[..4].try_into().expect("4 bytes")) as usize;
            if rest.len() - 4 < n || want.is_some_and(|w| w != n) {
                return Err(UpdateError::Malformed("bad field length".into()));
            }
            let f = &rest[4..4 + n];
            rest = &rest[4 + n..];
            Ok(f)
        };
        let ecu_model = String::from_utf8(field(None)?.to_vec())
            .map_err(|_| UpdateError::Malformed("ecu model is not utf-8".into()))?;
        let version = Version::from_bytes(field(Some(6))?.try_into().expect("6 bytes"));
        let size_bytes = u64::from_be_bytes(field(Some(8))?.try_into().expect("8 bytes"));
        let image_hash = Digest::from_slice(field(Some(32))?).expect("32 bytes");
        let signature = field(Some(SIGNATURE_LEN))?.try_into().expect("64 bytes");
        if !rest.is_empty() {
            return Err(UpdateError::Malformed("trailing bytes".into()));
        }
        Ok(Self {
            ecu_model,
            version,
            size_bytes,
            image_hash,
            signature,
        })
    }

    /// Identifies the manifest independent of its signature bytes.
    pub fn id(&self) -> Digest {
        Digest::of(&self.signed_bytes())
    }

    pub fn verify_signature(&self, repo_key: &VerifyingKey) -> Result<(), UpdateError> {
        if verify(repo_key, &self.signed_bytes(), &self.signature) {
            Ok(())
        } else {
            Err(UpdateError::BadSignature)
        }
    }

    pub fn verify_image(&self, image: &[u8]) -> Result<(), UpdateError> {
        if image.len() as u64 != self.size_bytes {
            return Err(UpdateError::SizeMismatch {
                expected: self.size_bytes,
                actual: image.len() as u64,
            });
        }
        let actual = Digest::of(image);
        if actual != self.image_hash {
            return Err(UpdateError::Integrity {
                expected: self.image_hash,
                actual,
            });
        }
        Ok(())
    }

    pub fn verify(&self, repo_key: &VerifyingKey, image: &[u8]) -> Result<(), UpdateError> {
        self.verify_signature(repo_key)?;
        self.verify_image(image)
    }
}

/// Software state of one vehicle ECU.
#[derive(Clone, PartialEq, Eq)]
pub struct EcuState {
    pub ecu_model: String,
    pub current_version: Version,
    pub image: Arc<[u8]>,
    pub previous_image: Option<(Version, Arc<[u8]>)>,
}

impl fmt::Debug for EcuState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EcuState")
            .field("ecu_model", &self.ecu_model)
            .field("current_version", &self.current_version.to_string())
            .field("previous", &self.previous_image.as_ref().map(|(v, _)| v.to_string()))
            .finish()
    }
}

impl EcuState {
    pub fn new(ecu_model: &str, version: Version, image: impl Into<Arc<[u8]>>) -> Self {
        Self {
            ecu_model: ecu_model.to_string(),
            current_version: version,
            image: image.into(),
            previous_image: None,
        }
    }

    pub fn previous_version(&self) -> Option<Version> {
        self.previous_image.as_ref().map(|(v, _)| *v)
    }
}

/// Verifies `image` against `manifest` end to end and installs it.
pub fn apply_update(
    state: &EcuState,
    manifest: &UpdateManifest,
    image: impl Into<Arc<[u8]>>,
    repo_key: &VerifyingKey,
) -> Result<EcuState, UpdateError> {
    if manifest.ecu_model != state.ecu_model {
        return Err(UpdateError::WrongModel {
            ecu: state.ecu_model.clone(),
            offered: manifest.ecu_model.clone(),
        });
    }
    let image = image.into();
    manifest.verify(repo_key, &image)?;
    if manifest.version <= state.current_version {
        return Err(UpdateError::Downgrade {
            current: state.current_version,
            offered: manifest.version,
        });
    }
    Ok(EcuState {
        ecu_model: state.ecu_model.clone(),
        current_version: manifest.version,
        image,
        previous_image: Some((state.current_version, state.image.clone())),
    })
}

pub fn rollback(state: &EcuState) -> Result<EcuState, UpdateError> {
    let (version, image) = state.previous_image.clone().ok_or(UpdateError::NoPrevious)?;
    Ok(EcuState {
        ecu_model: state.ecu_model.clone(),
        current_version: version,
        image,
        previous_image: None,
    })
}
