use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use super::{CloudError, CloudKind};

/// Keyed blob storage for one endpoint. Optionally mirrored to disk as one
/// file per key under `<dir>/<endpoint>/`.
#[derive(Debug)]
pub struct BlobStore {
    blobs: Mutex<BTreeMap<String, Arc<[u8]>>>,
    dir: Option<PathBuf>,
}

fn valid_key(key: &str) -> bool {
    !key.is_empty()
        && key
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.'))
        && !key.starts_with('.')
}

impl BlobStore {
    pub fn in_memory() -> Self {
        Self {
            blobs: Mutex::new(BTreeMap::new()),
            dir: None,
        }
    }

    pub fn on_disk(root: impl AsRef<Path>, kind: CloudKind) -> Result<Self, CloudError> {
        let dir = root.as_ref().join(kind.as_str());
        fs::create_dir_all(&dir).map_err(|e| CloudError::Storage(e.to_string()))?;
        Ok(Self {
            blobs: Mutex::new(BTreeMap::new()),
            dir: Some(dir),
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    /// Stores `value` under `key`; returns false when an identical blob was
    /// already present.
    pub fn put(&self, key: &str, value: impl Into<Arc<[u8]>>) -> Result<bool, CloudError> {
        if !valid_key(key) {
            return Err(CloudError::Storage(format!("invalid key `{key}`")));
        }
        let value = value.into();
        let mut blobs = self.blobs.lock().unwrap_or_else(|e| e.into_inner());
        if blobs.get(key).is_some_and(|v| *v == value) {
            return Ok(false);
        }
        if let Some(dir) = &self.dir {
            let tmp = dir.join(format!(".{key}.tmp"));
            fs::write(&tmp, &value).map_err(|e| CloudError::Storage(e.to_string()))?;
            fs::rename(&tmp, dir.join(key)).map_err(|e| CloudError::Storage(e.to_string()))?;
        }
        blobs.insert(key.to_string(), value);
        Ok(true)
    }

    pub fn get(&self, key: &str) -> Option<Arc<[u8]>> {
        self.blobs.lock().unwrap_or_else(|e| e.into_inner()).get(key).cloned()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.blobs.lock().unwrap_or_else(|e| e.into_inner()).contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.blobs.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn keys(&self) -> Vec<String> {
        self.blobs.lock().unwrap_or_else(|e| e.into_inner()).keys().cloned().collect()
    }

    pub fn total_bytes(&self) -> u64 {
        self.blobs
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .values()
            .map(|v| v.len() as u64)
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disk_layout_is_one_file_per_key() {
        let tmp = tempfile::tempdir().unwrap();
        let store = BlobStore::on_disk(tmp.path(), CloudKind::SiemBackend).unwrap();
        assert!(store.put("abc", vec![1u8, 2, 3]).unwrap());
        assert!(!store.put("abc", vec![1u8, 2, 3]).unwrap());
        assert_eq!(fs::read(tmp.path().join("siem_backend/abc")).unwrap(), vec![1, 2, 3]);
        assert!(store.put("../x", vec![0u8]).is_err());
        assert_eq!(store.total_bytes(), 3);
    }
}
