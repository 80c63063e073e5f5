use std::sync::{Arc, Mutex, Weak};

use ed25519_dalek::VerifyingKey;

use super::{ops, BlobStore, CloudEndpoint, CloudError, CloudKind, CloudLink};
use crate::update::UpdateManifest;
use crate::wire::{service_ids, VasMessage};

/// Receives manifests pushed by the repository.
pub trait ManifestListener: Send + Sync {
    fn on_manifest(&self, manifest: UpdateManifest);
}

struct Subscriber {
    link: CloudLink,
    listener: Weak<dyn ManifestListener>,
}

/// Image repository: stores signed manifests and images and pushes new
/// manifests to subscribed chargers.
pub struct ImageRepository {
    publisher_key: VerifyingKey,
    manifests: BlobStore,
    images: BlobStore,
    subscribers: Mutex<Vec<Subscriber>>,
}

impl std::fmt::Debug for ImageRepository {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ImageRepository")
            .field("manifests", &self.manifests.len())
            .finish()
    }
}

impl ImageRepository {
    pub fn new(publisher_key: VerifyingKey) -> Arc<Self> {
        Self::with_stores(publisher_key, BlobStore::in_memory(), BlobStore::in_memory())
    }

    pub fn with_stores(publisher_key: VerifyingKey, manifests: BlobStore, images: BlobStore) -> Arc<Self> {
        Arc::new(Self {
            publisher_key,
            manifests,
            images,
            subscribers: Mutex::new(Vec::new()),
        })
    }

    pub fn publisher_key(&self) -> VerifyingKey {
        self.publisher_key
    }

    /// Registers a charger: manifests will be pushed over `link` to `listener`.
    pub fn subscribe(&self, link: CloudLink, listener: Weak<dyn ManifestListener>) {
        self.subscribers
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(Subscriber { link, listener });
    }

    pub fn manifest_count(&self) -> usize {
        self.manifests.len()
    }

    pub fn image_bytes(&self) -> u64 {
        self.images.total_bytes()
    }

    /// Stores a release and notifies subscribers. Re-putting a stored release
    /// is a no-op that returns false.
    pub fn put(&self, manifest: &UpdateManifest, image: &[u8]) -> Result<bool, CloudError> {
        manifest
            .verify_image(image)
            .map_err(|e| CloudError::Rejected(e.to_string()))?;
        let key = manifest.id().to_hex();
        if self.manifests.contains(&key) {
            return Ok(false);
        }
        self.images.put(&manifest.image_hash.to_hex(), image.to_vec())?;
        self.manifests.put(&key, manifest.encode())?;
        self.notify(manifest);
        Ok(true)
    }

    /// Pushes `manifest` to every live subscriber as-is.
    pub fn notify(&self, manifest: &UpdateManifest) {
        let msg = VasMessage::new(service_ids::UPDATES, ops::NOTIFY_MANIFEST, manifest.encode());
        let mut subs = self.subscribers.lock().unwrap_or_else(|e| e.into_inner());
        subs.retain(|s| s.listener.strong_count() > 0);
        for s in subs.iter() {
            let Some(listener) = s.listener.upgrade() else { continue };
            // An unreachable charger simply misses the push.
            let Ok(received) = s.link.push(&msg) else { continue };
            if let Ok(m) = UpdateManifest::decode(&received.data) {
                listener.on_manifest(m);
            }
        }
    }
}

impl CloudEndpoint for ImageRepository {
    fn kind(&self) -> CloudKind {
        CloudKind::ImageRepo
    }

    fn handle(&self, request: &VasMessage, _now_ms: f64) -> Result<VasMessage, CloudError> {
        match request.op {
            ops::FETCH_IMAGE => {
                let key = hex::encode(&request.data);
                let raw = self
                    .manifests
                    .get(&key)
                    .ok_or_else(|| CloudError::NotFound(format!("manifest {key}")))?;
                let manifest = UpdateManifest::decode(&raw).map_err(|e| CloudError::Storage(e.to_string()))?;
                let image = self
                    .images
                    .get(&manifest.image_hash.to_hex())
                    .ok_or_else(|| CloudError::NotFound(format!("image {}", manifest.image_hash)))?;
                Ok(VasMessage::new(request.service_id, ops::IMAGE, image.to_vec()))
            }
            op => Err(CloudError::Malformed(format!("unknown repository op {op:#04x}"))),
        }
    }
}
