use std::sync::{Arc, Mutex, Weak};

use super::{ops, BlobStore, CloudEndpoint, CloudError, CloudKind, CloudLink};
use crate::crypto::Digest;
use crate::siem::{AnalysisReport, FlParameters};
use crate::wire::{service_ids, VasMessage};

/// Receives FL model-version announcements pushed by the backend.
pub trait FlListener: Send + Sync {
    fn on_fl_version(&self, model_version: u64);
}

/// One persisted ingest.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestRecord {
    pub arrival_ms: f64,
    pub vehicle_id: String,
    pub batch_digest: Digest,
    pub alert_count: usize,
    pub critical: bool,
    pub raw_included: bool,
    /// Bytes persisted for this ingest, report plus any raw batch.
    pub stored_bytes: u64,
}

struct FlSubscriber {
    link: CloudLink,
    listener: Weak<dyn FlListener>,
}

/// SIEM backend: persists analysis reports and distributes FL parameters.
pub struct SiemBackend {
    store: BlobStore,
    records: Mutex<Vec<IngestRecord>>,
    fl: Mutex<Option<FlParameters>>,
    subscribers: Mutex<Vec<FlSubscriber>>,
}

impl std::fmt::Debug for SiemBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SiemBackend")
            .field("records", &self.records().len())
            .finish()
    }
}

/// Ingest body: `report_len:u32 report raw_batch?`.
pub(crate) fn encode_ingest(report: &AnalysisReport, raw: Option<&[u8]>) -> Vec<u8> {
    let r = report.encode();
    let mut out = Vec::with_capacity(4 + r.len() + raw.map_or(0, <[u8]>::len));
    out.extend_from_slice(&(r.len() as u32).to_be_bytes());
    out.extend_from_slice(&r);
    if let Some(raw) = raw {
        out.extend_from_slice(raw);
    }
    out
}

impl SiemBackend {
    pub fn new() -> Arc<Self> {
        Self::with_store(BlobStore::in_memory())
    }

    pub fn with_store(store: BlobStore) -> Arc<Self> {
        Arc::new(Self {
            store,
            records: Mutex::new(Vec::new()),
            fl: Mutex::new(None),
            subscribers: Mutex::new(Vec::new()),
        })
    }

    pub fn subscribe(&self, link: CloudLink, listener: Weak<dyn FlListener>) {
        self.subscribers
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(FlSubscriber { link, listener });
    }

    pub fn records(&self) -> Vec<IngestRecord> {
        self.records.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn stored_bytes(&self) -> u64 {
        self.store.total_bytes()
    }

    pub fn fl_version(&self) -> Option<u64> {
        self.fl.lock().unwrap_or_else(|e| e.into_inner()).as_ref().map(|p| p.model_version)
    }

    /// Installs new FL parameters and announces the version to subscribers.
    pub fn publish_fl(&self, params: FlParameters) {
        let version = params.model_version;
        *self.fl.lock().unwrap_or_else(|e| e.into_inner()) = Some(params);
        let msg = VasMessage::new(service_ids::SIEM, ops::NOTIFY_FL, version.to_be_bytes().to_vec());
        let mut subs = self.subscribers.lock().unwrap_or_else(|e| e.into_inner());
        subs.retain(|s| s.listener.strong_count() > 0);
        for s in subs.iter() {
            let Some(listener) = s.listener.upgrade() else { continue };
            let Ok(received) = s.link.push(&msg) else { continue };
            if let Ok(b) = <[u8; 8]>::try_from(received.data.as_slice()) {
                listener.on_fl_version(u64::from_be_bytes(b));
            }
        }
    }

    fn ingest(&self, data: &[u8], now_ms: f64) -> Result<u64, CloudError> {
        let len = data
            .get(..4)
            .map(|b| u32::from_be_bytes(b.try_into().expect("4")) as usize)
            .ok_or_else(|| CloudError::Malformed("ingest truncated".into()))?;
        let body = &data[4..];
        if body.len() < len {
            return Err(CloudError::Malformed("ingest truncated".into()));
        }
        let (report_bytes, raw) = body.split_at(len);
        let report = AnalysisReport::decode(report_bytes).map_err(|e| CloudError::Malformed(e.to_string()))?;
        if !raw.is_empty() && Digest::of(raw) != report.batch_digest {
            return Err(CloudError::Rejected("raw batch does not match its digest".into()));
        }
        let mut records = self.records.lock().unwrap_or_else(|e| e.into_inner());
        let index = records.len() as u64;
        let key = format!("{index:08}-{}", report.batch_digest.to_hex());
        self.store.put(&format!("{key}.report"), report_bytes.to_vec())?;
        if !raw.is_empty() {
            self.store.put(&format!("{key}.raw"), raw.to_vec())?;
        }
        records.push(IngestRecord {
            arrival_ms: now_ms,
            vehicle_id: report.vehicle_id.clone(),
            batch_digest: report.batch_digest,
            alert_count: report.alerts.len(),
            critical: report.has_critical(),
            raw_included: !raw.is_empty(),
            stored_bytes: (report_bytes.len() + raw.len()) as u64,
        });
        Ok(index)
    }
}

impl CloudEndpoint for SiemBackend {
    fn kind(&self) -> CloudKind {
        CloudKind::SiemBackend
    }

    fn handle(&self, request: &VasMessage, now_ms: f64) -> Result<VasMessage, CloudError> {
        match request.op {
            ops::INGEST => {
                let index = self.ingest(&request.data, now_ms)?;
                Ok(VasMessage::new(request.service_id, ops::INGEST_ACK, index.to_be_bytes().to_vec()))
            }
            ops::FL_FETCH => {
                let fl = self.fl.lock().unwrap_or_else(|e| e.into_inner());
                let params = fl.as_ref().ok_or_else(|| CloudError::NotFound("no FL parameters".into()))?;
                Ok(VasMessage::new(request.service_id, ops::FL_PARAMS, params.encode()))
            }
            op => Err(CloudError::Malformed(format!("unknown SIEM op {op:#04x}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(digest: Digest) -> AnalysisReport {
        AnalysisReport {
            vehicle_id: "veh-1".into(),
            batch_digest: digest,
            record_count: 10,
            encoded_size: 1000,
            alerts: Vec::new(),
            anomalies: Vec::new(),
        }
    }

    #[test]
    fn digest_only_ingest_is_small_and_acked() {
        let backend = SiemBackend::new();
        let link = CloudLink::lte(backend.clone(), 5);
        let msg = VasMessage::new(service_ids::SIEM, ops::INGEST, encode_ingest(&report(Digest::of(b"x")), None));
        let (ack, _) = link.call(&msg, 0.0).unwrap();
        assert_eq!(ack.op, ops::INGEST_ACK);
        let recs = backend.records();
        assert_eq!(recs.len(), 1);
        assert!(recs[0].stored_bytes < 4096);
        assert!(link.meter().total_bytes() < 4096);
        assert!(recs[0].arrival_ms > 0.0);
    }

    #[test]
    fn raw_batch_must_match_digest() {
        let backend = SiemBackend::new();
        let raw = vec![5u8; 10_000];
        let ok = encode_ingest(&report(Digest::of(&raw)), Some(&raw));
        backend.handle(&VasMessage::new(3, ops::INGEST, ok), 0.0).unwrap();
        assert!(backend.stored_bytes() >= 10_000);
        let bad = encode_ingest(&report(Digest::of(b"other")), Some(&raw));
        assert!(backend.handle(&VasMessage::new(3, ops::INGEST, bad), 0.0).is_err());
    }

    #[test]
    fn fl_fetch_without_parameters_is_not_found() {
        let backend = SiemBackend::new();
        assert!(matches!(
            backend.handle(&VasMessage::new(3, ops::FL_FETCH, vec![]), 0.0),
            Err(CloudError::NotFound(_))
        ));
        backend.publish_fl(FlParameters::random(2, 1));
        assert_eq!(backend.fl_version(), Some(2));
    }
}
