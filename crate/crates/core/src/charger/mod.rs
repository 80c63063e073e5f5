//! Charger edge service: discovery responder, session acceptor and the
//! handlers of the charging, update, SIEM and payment services.

mod peer;
mod siem;
mod updates;

pub use siem::PendingForward;

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::net::{IpAddr, Ipv4Addr};
use std::sync::atomic::AtomicU64;
use std::sync::{Arc, Mutex, MutexGuard, Weak};

use ed25519_dalek::VerifyingKey;
use rustls::ServerConfig;

use crate::bus::{roles, topics, Criticality, EventBus};
use crate::cloud::{CloudLink, FlListener, ImageRepository, ManifestListener, PaymentGateway, SiemBackend};
use crate::crypto::{Digest, Identity, KeyRegistry};
use crate::link::LinkEnd;
use crate::payments::{ReconciliationRecord, Tariff};
use crate::protocol::PADDING_PARAM;
use crate::siem::{default_rules, AnalysisReport, CorrelationRule, FlParameters, InterArrivalDetector, LogBatch};
use crate::update::{UpdateCache, UpdateManifest, DEFAULT_CACHE_CAPACITY};
use crate::wire::{
    server_config, service_ids, Acceptor, Frame, Peer, SdpRequest, SdpResponder, SdpResponse, ServiceDescriptor,
    SessionId, WireError,
};

use peer::ChargerPeer;
use siem::{AnalysisJob, SiemState};

pub const DEFAULT_PORT: u16 = 15118;
pub const DEFAULT_FORWARD_QUEUE: usize = 64;

#[derive(Debug, Clone)]
pub struct ChargerConfig {
    pub address: IpAddr,
    pub port: u16,
    pub updates: bool,
    pub siem: bool,
    pub payments: bool,
    pub tariff: Tariff,
    pub cache_capacity: u64,
    pub forward_queue_capacity: usize,
    pub rules: Vec<CorrelationRule>,
}

impl Default for ChargerConfig {
    fn default() -> Self {
        Self {
            address: IpAddr::V4(Ipv4Addr::new(192, 168, 0, 10)),
            port: DEFAULT_PORT,
            updates: true,
            siem: true,
            payments: true,
            tariff: Tariff::new(1, 5).expect("static tariff"),
            cache_capacity: DEFAULT_CACHE_CAPACITY,
            forward_queue_capacity: DEFAULT_FORWARD_QUEUE,
            rules: default_rules(),
        }
    }
}

impl ChargerConfig {
    /// Charging only, every VAS disabled.
    pub fn charging_only() -> Self {
        Self {
            updates: false,
            siem: false,
            payments: false,
            ..Self::default()
        }
    }
}

#[derive(Default)]
struct SessionTable {
    seen: HashSet<SessionId>,
    active: HashSet<SessionId>,
}

#[derive(Default)]
struct CloudLinks {
    repo: Option<CloudLink>,
    siem: Option<CloudLink>,
    gateway: Option<CloudLink>,
}

pub struct Charger {
    identity: Identity,
    payment_identity: Identity,
    config: ChargerConfig,
    tls: Arc<ServerConfig>,
    repo_key: VerifyingKey,
    bus: EventBus,
    cache: UpdateCache,
    pending: Mutex<BTreeMap<Digest, UpdateManifest>>,
    rejected_notifications: AtomicU64,
    clouds: Mutex<CloudLinks>,
    sessions: Mutex<SessionTable>,
    siem: SiemState,
    records: Mutex<Vec<ReconciliationRecord>>,
    self_ref: Weak<Charger>,
}

impl std::fmt::Debug for Charger {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Charger")
            .field("identity", &self.identity.fingerprint())
            .field("address", &self.config.address)
            .field("port", &self.config.port)
            .finish()
    }
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl Charger {
    /// Creates a charger that accepts the vehicles in `trusted_vehicles` and
    /// the update publisher `repo_key`.
    pub fn new(
        identity: Identity,
        config: ChargerConfig,
        trusted_vehicles: Arc<KeyRegistry>,
        repo_key: VerifyingKey,
        bus: EventBus,
    ) -> Result<Arc<Self>, WireError> {
        let payment_identity = identity.clone();
        Self::build(identity, payment_identity, config, trusted_vehicles, repo_key, bus)
    }

    /// Like [`Charger::new`], but signs payment records with `payment_identity`
    /// instead of the session identity. Models a misconfigured or rogue charger.
    pub fn with_payment_identity(
        identity: Identity,
        payment_identity: Identity,
        config: ChargerConfig,
        trusted_vehicles: Arc<KeyRegistry>,
        repo_key: VerifyingKey,
        bus: EventBus,
    ) -> Result<Arc<Self>, WireError> {
        Self::build(identity, payment_identity, config, trusted_vehicles, repo_key, bus)
    }

    fn build(
        identity: Identity,
        payment_identity: Identity,
        config: ChargerConfig,
        trusted_vehicles: Arc<KeyRegistry>,
        repo_key: VerifyingKey,
        bus: EventBus,
    ) -> Result<Arc<Self>, WireError> {
        let tls = server_config(&identity, trusted_vehicles).map_err(|e| WireError::Tls(e.to_string()))?;
        if config.port == 0 {
            return Err(WireError::Malformed("charger port must be non-zero".into()));
        }
        let cache = UpdateCache::new(config.cache_capacity);
        let siem = SiemState::new(config.forward_queue_capacity);
        Ok(Arc::new_cyclic(|self_ref| Self {
            identity,
            payment_identity,
            tls,
            repo_key,
            bus,
            cache,
            pending: Mutex::new(BTreeMap::new()),
            rejected_notifications: AtomicU64::new(0),
            clouds: Mutex::new(CloudLinks::default()),
            sessions: Mutex::new(SessionTable::default()),
            siem,
            records: Mutex::new(Vec::new()),
            config,
            self_ref: self_ref.clone(),
        }))
    }

    fn arc(&self) -> Arc<Charger> {
        self.self_ref.upgrade().expect("charger is alive while in use")
    }

    pub fn identity(&self) -> &Identity {
        &self.identity
    }

    pub fn verifying_key(&self) -> VerifyingKey {
        self.identity.verifying_key()
    }

    pub fn config(&self) -> &ChargerConfig {
        &self.config
    }

    pub fn bus(&self) -> &EventBus {
        &self.bus
    }

    pub fn cache(&self) -> &UpdateCache {
        &self.cache
    }

    pub fn sdp_response(&self) -> SdpResponse {
        SdpResponse::new(self.config.address, self.config.port, true).expect("port checked at construction")
    }

    /// Services offered during negotiation, charging first.
    pub fn catalog(&self) -> Vec<ServiceDescriptor> {
        let mut out = vec![ServiceDescriptor::charging()];
        if self.config.updates {
            out.push(ServiceDescriptor::new(service_ids::UPDATES, "updates", Criticality::Standard));
        }
        if self.config.siem {
            out.push(
                ServiceDescriptor::new(service_ids::SIEM, "siem", Criticality::Standard)
                    .with_param("fl_blob_bytes", crate::siem::FL_BLOB_LEN),
            );
        }
        if self.config.payments {
            out.push(
                ServiceDescriptor::new(service_ids::PAYMENTS, "payments", Criticality::Standard)
                    .with_param("price_per_wh", self.config.tariff.price_per_wh)
                    .with_param("burst_wh", self.config.tariff.burst_wh)
                    .with_param(PADDING_PARAM, "optional"),
            );
        }
        out
    }

    pub fn offers(&self, service_id: u16) -> bool {
        self.catalog().iter().any(|s| s.service_id == service_id)
    }

    // ---- cloud attachment ----

    /// Connects the image repository over `link` and subscribes to its pushes.
    pub fn attach_repository(&self, repo: &Arc<ImageRepository>, link: CloudLink) {
        lock(&self.clouds).repo = Some(link.clone());
        let me: Arc<dyn ManifestListener> = self.arc();
        repo.subscribe(link, Arc::downgrade(&me));
    }

    /// Connects the SIEM backend over `link` and subscribes to FL announcements.
    pub fn attach_siem_backend(&self, backend: &Arc<SiemBackend>, link: CloudLink) {
        lock(&self.clouds).siem = Some(link.clone());
        let me: Arc<dyn FlListener> = self.arc();
        backend.subscribe(link, Arc::downgrade(&me));
    }

    pub fn attach_gateway(&self, gateway: &Arc<PaymentGateway>, link: CloudLink) {
        gateway.register_charger(self.payment_identity.verifying_key());
        lock(&self.clouds).gateway = Some(link);
    }

    pub fn repo_link(&self) -> Option<CloudLink> {
        lock(&self.clouds).repo.clone()
    }

    pub fn siem_link(&self) -> Option<CloudLink> {
        lock(&self.clouds).siem.clone()
    }

    pub fn gateway_link(&self) -> Option<CloudLink> {
        lock(&self.clouds).gateway.clone()
    }

    // ---- session table ----

    fn register_session(&self, id: SessionId) -> Result<(), WireError> {
        let mut t = lock(&self.sessions);
        if !t.seen.insert(id) {
            return Err(WireError::DuplicateSession);
        }
        t.active.insert(id);
        Ok(())
    }

    fn end_session(&self, id: SessionId) {
        lock(&self.sessions).active.remove(&id);
    }

    pub fn active_sessions(&self) -> usize {
        lock(&self.sessions).active.len()
    }

    /// Number of sessions established over the charger's lifetime.
    pub fn sessions_seen(&self) -> usize {
        lock(&self.sessions).seen.len()
    }

    // ---- bus helpers ----

    fn publish(&self, role: &str, topic: &str, payload: Vec<u8>, criticality: Criticality) {
        // A missing ACL grant is a deployment error; the service keeps running.
        let _ = self.bus.publish(role, topic, payload, criticality);
    }

    fn publish_alert(&self, role: &str, text: String) {
        self.publish(role, topics::SIEM_ALERTS, text.into_bytes(), Criticality::Standard);
    }

    // ---- payments bookkeeping ----

    fn payment_identity(&self) -> &Identity {
        &self.payment_identity
    }

    fn record_settlement(&self, record: ReconciliationRecord, not_before_ms: f64) {
        lock(&self.records).push(record.clone());
        self.forward_or_queue(PendingForward::Settlement(record), not_before_ms);
    }

    /// Dual-signed records this charger has produced.
    pub fn reconciled_records(&self) -> Vec<ReconciliationRecord> {
        lock(&self.records).clone()
    }

    // ---- SIEM configuration ----

    pub fn set_detector(&self, detector: InterArrivalDetector) {
        *lock(&self.siem.detector) = Some(detector);
    }

    pub fn rules(&self) -> &[CorrelationRule] {
        &self.config.rules
    }

    pub(crate) fn enqueue_analysis(&self, batch: LogBatch, raw: Arc<[u8]>, at_ms: f64) {
        lock(&self.siem.jobs).push_back(AnalysisJob { batch, raw, at_ms });
    }

    pub fn queued_analyses(&self) -> usize {
        lock(&self.siem.jobs).len()
    }

    pub fn reports(&self) -> Vec<AnalysisReport> {
        lock(&self.siem.reports).clone()
    }

    pub fn cached_fl(&self) -> Option<FlParameters> {
        lock(&self.siem.fl).cached.clone()
    }
}

impl Acceptor for Charger {
    fn accept(&self, end: LinkEnd) -> Result<Box<dyn Peer>, WireError> {
        Ok(Box::new(ChargerPeer::new(self.arc(), end)?))
    }
}

impl SdpResponder for Charger {
    fn serve_sdp(&self, end: &LinkEnd) -> Result<(), WireError> {
        let mut deferred = VecDeque::new();
        while let Some(d) = end.recv() {
            let crate::link::Segment::Bytes(bytes) = &d.segment else {
                deferred.push_back(d);
                continue;
            };
            let Ok(Some((frame, _))) = Frame::decode(bytes) else { continue };
            let Ok(req) = SdpRequest::from_frame(&frame) else { continue };
            end.send(self.sdp_response().to_frame(&req.nonce).encode()?)?;
        }
        if !deferred.is_empty() {
            return Err(WireError::Protocol("unexpected traffic during discovery".into()));
        }
        Ok(())
    }
}

impl ManifestListener for Charger {
    fn on_manifest(&self, manifest: UpdateManifest) {
        // Rejections are reported on the bus by notify_update itself.
        let _ = self.notify_update(manifest);
    }
}

impl FlListener for Charger {
    fn on_fl_version(&self, model_version: u64) {
        let mut fl = lock(&self.siem.fl);
        fl.announced = fl.announced.max(model_version);
    }
}

fn role_for(service_id: u16) -> &'static str {
    match service_id {
        service_ids::UPDATES => roles::VAS_UPDATE,
        service_ids::SIEM => roles::VAS_SIEM,
        service_ids::PAYMENTS => roles::VAS_PAYMENTS,
        _ => roles::CHARGING_STACK,
    }
}
