use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use super::{lock, Charger};
use crate::bus::{roles, topics, Criticality};
use crate::cloud::{ops, CloudError};
use crate::crypto::Digest;
use crate::payments::ReconciliationRecord;
use crate::siem::{analyze_logs, AnalysisReport, FlParameters, InterArrivalDetector, LogBatch, Severity, SiemError};
use crate::wire::{service_ids, VasMessage};

pub(crate) struct AnalysisJob {
    pub batch: LogBatch,
    pub raw: Arc<[u8]>,
    pub at_ms: f64,
}

#[derive(Default)]
pub(crate) struct FlState {
    pub cached: Option<FlParameters>,
    /// Newest version the backend has announced.
    pub announced: u64,
}

/// Cloud upload waiting for a reachable endpoint.
#[derive(Debug, Clone, PartialEq)]
pub enum PendingForward {
    Report {
        report: AnalysisReport,
        raw: Option<Arc<[u8]>>,
    },
    Settlement(ReconciliationRecord),
}

/// Partially received upload, keyed by vehicle and batch digest so it can be
/// resumed from another session.
pub(crate) type UploadKey = (String, Digest);

pub(crate) struct SiemState {
    pub jobs: Mutex<VecDeque<AnalysisJob>>,
    pub detector: Mutex<Option<InterArrivalDetector>>,
    pub reports: Mutex<Vec<AnalysisReport>>,
    pub fl: Mutex<FlState>,
    pub uploads: Mutex<HashMap<UploadKey, Vec<u8>>>,
    pub forwards: Mutex<VecDeque<PendingForward>>,
    pub forward_capacity: usize,
    pub forwards_dropped: AtomicU64,
}

impl SiemState {
    pub fn new(forward_capacity: usize) -> Self {
        Self {
            jobs: Mutex::new(VecDeque::new()),
            detector: Mutex::new(None),
            reports: Mutex::new(Vec::new()),
            fl: Mutex::new(FlState::default()),
            uploads: Mutex::new(HashMap::new()),
            forwards: Mutex::new(VecDeque::new()),
            forward_capacity: forward_capacity.max(1),
            forwards_dropped: AtomicU64::new(0),
        }
    }
}

fn alert_payload(report: &AnalysisReport, index: usize) -> Vec<u8> {
    let a = &report.alerts[index];
    format!(
        "{} vehicle={} window={}..{} rate={:.1}Hz severity={:?}",
        a.rule_id, a.vehicle_id, a.window.0, a.window.1, a.observed_rate_hz, a.severity
    )
    .into_bytes()
}

impl Charger {
    /// Runs every queued analysis job: rule and anomaly analysis, alert
    /// publication on `siem/alerts`, then the cloud forward.
    pub fn process_siem_jobs(&self) -> Vec<AnalysisReport> {
        let mut out = Vec::new();
        loop {
            let Some(job) = lock(&self.siem.jobs).pop_front() else { break };
            let alerts = analyze_logs(&job.batch, &self.config.rules).unwrap_or_default();
            let anomalies = lock(&self.siem.detector)
                .as_ref()
                .map(|d| d.detect(&job.batch))
                .unwrap_or_default();
            let report = AnalysisReport {
                vehicle_id: job.batch.vehicle_id.clone(),
                batch_digest: Digest::of(&job.raw),
                record_count: job.batch.records.len() as u64,
                encoded_size: job.raw.len() as u64,
                alerts,
                anomalies,
            };
            for (i, a) in report.alerts.iter().enumerate() {
                let criticality = if a.severity == Severity::Critical {
                    Criticality::Critical
                } else {
                    Criticality::Standard
                };
                self.publish(roles::VAS_SIEM, topics::SIEM_ALERTS, alert_payload(&report, i), criticality);
            }
            // A failed forward stays queued for retry_forwards.
            let _ = self.forward_to_cloud(&report, Some(job.raw.clone()), job.at_ms);
            lock(&self.siem.reports).push(report.clone());
            out.push(report);
        }
        out
    }

    /// Sends the report and batch digest to the SIEM backend. The raw batch
    /// goes along only when some alert is critical. Unreachable backends get
    /// the upload queued instead.
    pub fn forward_to_cloud(
        &self,
        report: &AnalysisReport,
        raw: Option<Arc<[u8]>>,
        not_before_ms: f64,
    ) -> Result<(), SiemError> {
        let raw = if report.has_critical() { raw } else { None };
        let item = PendingForward::Report {
            report: report.clone(),
            raw,
        };
        match self.try_forward(&item, not_before_ms) {
            Ok(()) => Ok(()),
            Err(e) => {
                self.queue_forward(item);
                Err(SiemError::Forward(e.to_string()))
            }
        }
    }

    pub(crate) fn forward_or_queue(&self, item: PendingForward, not_before_ms: f64) {
        if self.try_forward(&item, not_before_ms).is_err() {
            self.queue_forward(item);
        }
    }

    fn queue_forward(&self, item: PendingForward) {
        let mut q = lock(&self.siem.forwards);
        if q.len() >= self.siem.forward_capacity {
            q.pop_front();
            self.siem.forwards_dropped.fetch_add(1, Ordering::Relaxed);
        }
        q.push_back(item);
    }

    fn try_forward(&self, item: &PendingForward, not_before_ms: f64) -> Result<(), CloudError> {
        match item {
            PendingForward::Report { report, raw } => {
                let link = self
                    .siem_link()
                    .ok_or(CloudError::Unreachable(crate::cloud::CloudKind::SiemBackend))?;
                let body = crate::cloud::encode_ingest(report, raw.as_deref());
                let msg = VasMessage::new(service_ids::SIEM, ops::INGEST, body);
                link.call(&msg, not_before_ms.max(link.now_ms()))?;
            }
            PendingForward::Settlement(record) => {
                let link = self
                    .gateway_link()
                    .ok_or(CloudError::Unreachable(crate::cloud::CloudKind::PaymentGateway))?;
                let msg = VasMessage::new(service_ids::PAYMENTS, ops::SETTLE, record.encode().to_vec());
                link.call(&msg, not_before_ms.max(link.now_ms()))?;
            }
        }
        Ok(())
    }

    /// Retries queued forwards in order; returns how many were delivered.
    pub fn retry_forwards(&self) -> usize {
        let items: Vec<PendingForward> = lock(&self.siem.forwards).drain(..).collect();
        let mut delivered = 0;
        for item in items {
            if self.try_forward(&item, 0.0).is_ok() {
                delivered += 1;
            } else {
                self.queue_forward(item);
            }
        }
        delivered
    }

    pub fn pending_forwards(&self) -> Vec<PendingForward> {
        lock(&self.siem.forwards).iter().cloned().collect()
    }

    /// Forwards evicted from a full retry queue.
    pub fn dropped_forwards(&self) -> u64 {
        self.siem.forwards_dropped.load(Ordering::Relaxed)
    }

    /// Refreshes the cached FL parameters from the backend.
    pub fn refresh_fl(&self) -> Result<FlParameters, SiemError> {
        let now = self.siem_link().map_or(0.0, |l| l.now_ms());
        self.fl_parameters_at(now).map(|(p, _)| p)
    }

    /// Cached FL parameters, refreshed from the cloud only when none are cached
    /// or the backend has announced a newer version. Returns the parameters and
    /// the time they are available.
    pub(crate) fn fl_parameters_at(&self, now_ms: f64) -> Result<(FlParameters, f64), SiemError> {
        let mut fl = lock(&self.siem.fl);
        let stale = match &fl.cached {
            None => true,
            Some(p) => p.model_version < fl.announced,
        };
        if !stale {
            return Ok((fl.cached.clone().expect("fresh cache"), now_ms));
        }
        let fetched = self.siem_link().map(|link| {
            let msg = VasMessage::new(service_ids::SIEM, ops::FL_FETCH, Vec::new());
            link.call(&msg, now_ms)
        });
        match fetched {
            Some(Ok((reply, done))) => {
                let params = FlParameters::decode(&reply.data)?;
                fl.announced = fl.announced.max(params.model_version);
                fl.cached = Some(params.clone());
                Ok((params, done))
            }
            failure => match &fl.cached {
                Some(stale) => Ok((stale.clone(), now_ms)),
                None => Err(SiemError::Unavailable(match failure {
                    Some(Err(e)) => e.to_string(),
                    _ => "no SIEM backend attached".into(),
                })),
            },
        }
    }
}
