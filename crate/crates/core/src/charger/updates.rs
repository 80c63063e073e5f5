use std::sync::atomic::Ordering;

use super::{lock, Charger};
use crate::bus::{roles, topics, Criticality};
use crate::cloud::ops;
use crate::update::{CacheEntry, UpdateError, UpdateManifest, Version};
use crate::wire::{service_ids, VasMessage};

/// Suggested wait before retrying a failed cloud fetch.
const FETCH_RETRY_MS: u64 = 5_000;

impl Charger {
    /// Records a repository notification after checking its signature.
    ///
    /// Bad signatures are rejected and reported on `siem/alerts`. Repeating a
    /// notification is harmless. Manifests not newer than what the charger
    /// already holds for that ECU model are refused.
    pub fn notify_update(&self, manifest: UpdateManifest) -> Result<(), UpdateError> {
        if let Err(e) = manifest.verify_signature(&self.repo_key) {
            self.rejected_notifications.fetch_add(1, Ordering::Relaxed);
            self.publish_alert(
                roles::VAS_UPDATE,
                format!("rejected update notification for {} {}: {e}", manifest.ecu_model, manifest.version),
            );
            return Err(e);
        }
        let id = manifest.id();
        {
            let mut pending = lock(&self.pending);
            if pending.contains_key(&id) {
                return Ok(());
            }
            if let Some(newest) = self.newest_known(&pending, &manifest.ecu_model) {
                if manifest.version <= newest {
                    return Err(UpdateError::Downgrade {
                        current: newest,
                        offered: manifest.version,
                    });
                }
            }
            pending.insert(id, manifest.clone());
        }
        self.publish(roles::VAS_UPDATE, topics::UPDATES_AVAILABLE, manifest.encode(), Criticality::Standard);
        Ok(())
    }

    fn newest_known(
        &self,
        pending: &std::collections::BTreeMap<crate::crypto::Digest, UpdateManifest>,
        ecu_model: &str,
    ) -> Option<Version> {
        let cached = self.cache.newest_version(ecu_model);
        pending
            .values()
            .filter(|m| m.ecu_model == ecu_model)
            .map(|m| m.version)
            .chain(cached)
            .max()
    }

    pub fn pending_updates(&self) -> Vec<UpdateManifest> {
        lock(&self.pending).values().cloned().collect()
    }

    pub fn rejected_notifications(&self) -> u64 {
        self.rejected_notifications.load(Ordering::Relaxed)
    }

    /// Returns the verified cache entry for a pending manifest, downloading
    /// and verifying it on a miss.
    pub fn fetch_update(&self, manifest: &UpdateManifest) -> Result<CacheEntry, UpdateError> {
        let now = self.repo_link().map_or(0.0, |l| l.now_ms());
        self.fetch_update_at(manifest, now).map(|(e, _)| e)
    }

    /// As [`Charger::fetch_update`], starting no earlier than `not_before_ms`.
    /// Also returns the time the charger holds the entry.
    pub(crate) fn fetch_update_at(
        &self,
        manifest: &UpdateManifest,
        not_before_ms: f64,
    ) -> Result<(CacheEntry, f64), UpdateError> {
        if !lock(&self.pending).contains_key(&manifest.id()) {
            return Err(UpdateError::NotPending(manifest.id().to_hex()));
        }
        let mut done = not_before_ms;
        let (entry, hit) = self.cache.get_or_fetch(manifest, &self.repo_key, || {
            let link = self.repo_link().ok_or_else(|| UpdateError::Fetch {
                reason: "no image repository attached".into(),
                retry_after_ms: FETCH_RETRY_MS,
            })?;
            let request = VasMessage::new(service_ids::UPDATES, ops::FETCH_IMAGE, manifest.id().0.to_vec());
            let (reply, t) = link.call(&request, not_before_ms).map_err(|e| UpdateError::Fetch {
                reason: e.to_string(),
                retry_after_ms: FETCH_RETRY_MS,
            })?;
            done = t;
            Ok(reply.data.into())
        })?;
        if !hit {
            self.publish(
                roles::VAS_UPDATE,
                topics::UPDATES_FETCHED,
                manifest.encode(),
                Criticality::Standard,
            );
        }
        Ok((entry, done))
    }

    /// Finds the newest verified image for `ecu_model` above `min_version`,
    /// fetching a pending one first if the cache has nothing newer. Returns
    /// the entry, if any, and the time the charger is ready to serve it.
    pub(crate) fn prepare_serve(
        &self,
        ecu_model: &str,
        min_version: Version,
        now_ms: f64,
    ) -> Result<(Option<CacheEntry>, f64), UpdateError> {
        let candidate = lock(&self.pending)
            .values()
            .filter(|m| m.ecu_model == ecu_model && m.version > min_version)
            .max_by_key(|m| m.version)
            .cloned();
        let cached = self.cache.newest_version(ecu_model);
        let mut ready = now_ms;
        if let Some(m) = candidate {
            if cached.is_none_or(|v| v < m.version) {
                ready = self.fetch_update_at(&m, now_ms)?.1;
            }
        }
        Ok((self.cache.serve_newest(ecu_model, min_version), ready))
    }
}
