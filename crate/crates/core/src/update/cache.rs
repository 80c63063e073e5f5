//! Verified image cache, evicting the least recently served entry.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};

use ed25519_dalek::VerifyingKey;

use super::{UpdateError, UpdateManifest, Version};
use crate::crypto::Digest;

pub const DEFAULT_CACHE_CAPACITY: u64 = 4 << 30;

#[derive(Clone, PartialEq, Eq)]
pub struct CacheEntry {
    pub manifest: UpdateManifest,
    pub image: Arc<[u8]>,
    pub verified: bool,
}

impl std::fmt::Debug for CacheEntry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CacheEntry")
            .field("manifest", &self.manifest)
            .field("verified", &self.verified)
            .finish()
    }
}

struct Slot {
    entry: CacheEntry,
    last_served: u64,
}

#[derive(Default)]
struct Inner {
    slots: HashMap<Digest, Slot>,
    used: u64,
    tick: u64,
}

/// Charger-side image cache keyed by manifest id.
///
/// Only verified entries are admitted. When a directory is configured each
/// image is also written there under the hex of its hash.
pub struct UpdateCache {
    capacity: u64,
    dir: Option<PathBuf>,
    inner: Mutex<Inner>,
    fetches: Mutex<HashMap<Digest, Arc<Mutex<()>>>>,
}

impl std::fmt::Debug for UpdateCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("UpdateCache")
            .field("capacity", &self.capacity)
            .field("used", &self.used_bytes())
            .finish()
    }
}

impl Default for UpdateCache {
    fn default() -> Self {
        Self::new(DEFAULT_CACHE_CAPACITY)
    }
}

impl UpdateCache {
    pub fn new(capacity: u64) -> Self {
        Self {
            capacity,
            dir: None,
            inner: Mutex::new(Inner::default()),
            fetches: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_dir(capacity: u64, dir: impl Into<PathBuf>) -> Result<Self, UpdateError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| UpdateError::Storage(e.to_string()))?;
        Ok(Self {
            dir: Some(dir),
            ..Self::new(capacity)
        })
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn used_bytes(&self) -> u64 {
        self.lock().used
    }

    pub fn len(&self) -> usize {
        self.lock().slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, manifest: &UpdateManifest) -> bool {
        self.lock().slots.contains_key(&manifest.id())
    }

    pub fn image_path(&self, hash: &Digest) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(hash.to_hex()))
    }

    pub fn get(&self, manifest: &UpdateManifest) -> Option<CacheEntry> {
        self.lock().slots.get(&manifest.id()).map(|s| s.entry.clone())
    }

    pub fn newest_version(&self, ecu_model: &str) -> Option<Version> {
        self.lock()
            .slots
            .values()
            .filter(|s| s.entry.manifest.ecu_model == ecu_model)
            .map(|s| s.entry.manifest.version)
            .max()
    }

    /// Returns the newest entry for `ecu_model` above `min_version` and marks
    /// it served.
    pub fn serve_newest(&self, ecu_model: &str, min_version: Version) -> Option<CacheEntry> {
        let mut inner = self.lock();
        inner.tick += 1;
        let tick = inner.tick;
        let slot = inner
            .slots
            .values_mut()
            .filter(|s| s.entry.manifest.ecu_model == ecu_model && s.entry.manifest.version > min_version)
            .max_by_key(|s| s.entry.manifest.version)?;
        slot.last_served = tick;
        Some(slot.entry.clone())
    }

    /// Verifies and admits an image, evicting least recently served entries
    /// as needed.
    pub fn insert(&self, manifest: UpdateManifest, image: Arc<[u8]>, repo_key: &VerifyingKey) -> Result<CacheEntry, UpdateError> {
        manifest.verify(repo_key, &image)?;
        let size = image.len() as u64;
        if size > self.capacity {
            return Err(UpdateError::Capacity {
                size,
                capacity: self.capacity,
            });
        }
        let entry = CacheEntry {
            manifest,
            image,
            verified: true,
        };
        let id = entry.manifest.id();
        let mut inner = self.lock();
        if let Some(s) = inner.slots.get(&id) {
            return Ok(s.entry.clone());
        }
        while inner.used + size > self.capacity {
            let victim = inner
                .slots
                .iter()
                .min_by_key(|(_, s)| s.last_served)
                .map(|(k, _)| *k)
                .expect("used > 0 implies an entry");
            let slot = inner.slots.remove(&victim).expect("present");
            inner.used -= slot.entry.image.len() as u64;
            if let Some(path) = self.image_path(&slot.entry.manifest.image_hash) {
                let _ = std::fs::remove_file(path);
            }
        }
        if let Some(path) = self.image_path(&entry.manifest.image_hash) {
            std::fs::write(path, &entry.image).map_err(|e| UpdateError::Storage(e.to_string()))?;
        }
        inner.tick += 1;
        let tick = inner.tick;
        inner.used += size;
        inner.slots.insert(
            id,
            Slot {
                entry: entry.clone(),
                last_served: tick,
            },
        );
        Ok(entry)
    }

    /// Returns the cached entry, or runs `download` once while concurrent
    /// callers for the same manifest wait for its result.
    pub fn get_or_fetch<F>(&self, manifest: &UpdateManifest, repo_key: &VerifyingKey, download: F) -> Result<(CacheEntry, bool), UpdateError>
    where
        F: FnOnce() -> Result<Arc<[u8]>, UpdateError>,
    {
        let id = manifest.id();
        if let Some(e) = self.get(manifest) {
            return Ok((e, true));
        }
        let gate = self
            .fetches
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .entry(id)
            .or_default()
            .clone();
        let _guard = gate.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(e) = self.get(manifest) {
            return Ok((e, true));
        }
        let result = download().and_then(|image| self.insert(manifest.clone(), image, repo_key));
        self.fetches.lock().unwrap_or_else(|e| e.into_inner()).remove(&id);
        result.map(|e| (e, false))
    }

    /// Rewrites a cached image in place, bypassing verification. Models a
    /// compromised or faulty charger store.
    pub fn tamper<F: FnOnce(&mut Vec<u8>)>(&self, manifest: &UpdateManifest, f: F) -> bool {
        let mut inner = self.lock();
        let Some(slot) = inner.slots.get_mut(&manifest.id()) else {
            return false;
        };
        let mut bytes = slot.entry.image.to_vec();
        f(&mut bytes);
        slot.entry.image = bytes.into();
        true
    }
}
