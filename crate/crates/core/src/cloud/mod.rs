//! In-process cloud endpoints reached by the charger over emulated cellular
//! links: image repository, SIEM backend and payment gateway.
//!
//! Calls carry the same VAS-data frames as the vehicle link, without the
//! transport-security layer.

mod gateway;
mod repo;
mod siem;
mod store;

pub use gateway::{PaymentGateway, Settlement};
pub use repo::{ImageRepository, ManifestListener};
pub use siem::{FlListener, IngestRecord, SiemBackend};
pub(crate) use siem::encode_ingest;
pub use store::BlobStore;

use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::link::{open_link, EmulatedLink, LinkProfile, Segment, Side, TransportModel};
use crate::wire::{error_codes, ErrorBody, Frame, MsgType, VasMessage, WireError};

/// Operation codes understood by the cloud endpoints.
pub mod ops {
    pub const FETCH_IMAGE: u8 = 0x01;
    pub const IMAGE: u8 = 0x02;
    pub const NOTIFY_MANIFEST: u8 = 0x03;
    pub const INGEST: u8 = 0x10;
    pub const INGEST_ACK: u8 = 0x11;
    pub const FL_FETCH: u8 = 0x12;
    pub const FL_PARAMS: u8 = 0x13;
    pub const NOTIFY_FL: u8 = 0x14;
    pub const SETTLE: u8 = 0x20;
    pub const SETTLED: u8 = 0x21;
    pub const PUSH_ACK: u8 = 0x7E;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CloudKind {
    ImageRepo,
    SiemBackend,
    PaymentGateway,
}

impl CloudKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CloudKind::ImageRepo => "image_repo",
            CloudKind::SiemBackend => "siem_backend",
            CloudKind::PaymentGateway => "payment_gateway",
        }
    }
}

impl fmt::Display for CloudKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CloudError {
    #[error("{0} unreachable")]
    Unreachable(CloudKind),
    #[error("request rejected: {0}")]
    Rejected(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("malformed cloud message: {0}")]
    Malformed(String),
    #[error("blob storage: {0}")]
    Storage(String),
}

impl CloudError {
    fn code(&self) -> u8 {
        match self {
            CloudError::Unreachable(_) | CloudError::NotFound(_) => error_codes::UNAVAILABLE,
            CloudError::Rejected(_) => error_codes::REJECTED,
            CloudError::Malformed(_) => error_codes::BAD_REQUEST,
            CloudError::Storage(_) => error_codes::STATE,
        }
    }

    fn from_remote(kind: CloudKind, body: ErrorBody) -> Self {
        match body.code {
            error_codes::REJECTED | error_codes::INTEGRITY => CloudError::Rejected(body.message),
            error_codes::BAD_REQUEST => CloudError::Malformed(body.message),
            error_codes::UNAVAILABLE => CloudError::NotFound(body.message),
            _ => CloudError::Rejected(format!("{kind}: {}", body.message)),
        }
    }
}

/// Server side of a cloud service.
pub trait CloudEndpoint: Send + Sync {
    fn kind(&self) -> CloudKind;
    /// Handles one request arriving at emulated time `now_ms`.
    fn handle(&self, request: &VasMessage, now_ms: f64) -> Result<VasMessage, CloudError>;
}

/// Frame-body byte counters for one charger-to-endpoint link.
#[derive(Debug, Default)]
pub struct Meter {
    to_cloud: AtomicU64,
    from_cloud: AtomicU64,
    calls: AtomicU64,
}

impl Meter {
    pub fn bytes_to_cloud(&self) -> u64 {
        self.to_cloud.load(Ordering::Relaxed)
    }

    pub fn bytes_from_cloud(&self) -> u64 {
        self.from_cloud.load(Ordering::Relaxed)
    }

    pub fn total_bytes(&self) -> u64 {
        self.bytes_to_cloud() + self.bytes_from_cloud()
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

/// Emulated cellular link from one charger to one cloud endpoint.
///
/// The charger holds the client end; the endpoint runs on the server end.
#[derive(Clone)]
pub struct CloudLink {
    link: EmulatedLink,
    endpoint: Arc<dyn CloudEndpoint>,
    meter: Arc<Meter>,
    online: Arc<AtomicBool>,
    serial: Arc<Mutex<()>>,
}

impl fmt::Debug for CloudLink {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CloudLink")
            .field("endpoint", &self.endpoint.kind())
            .field("link", &self.link)
            .finish()
    }
}

fn frame_bytes(frame: &Frame) -> Vec<u8> {
    frame.encode().expect("cloud frames are far below the frame limit")
}

fn read_frame(segment: Segment) -> Result<Frame, CloudError> {
    let Segment::Bytes(bytes) = segment else {
        return Err(CloudError::Malformed("unexpected bulk segment".into()));
    };
    match Frame::decode(&bytes) {
        Ok(Some((frame, used))) if used == bytes.len() => Ok(frame),
        Ok(_) => Err(CloudError::Malformed("truncated frame".into())),
        Err(e) => Err(CloudError::Malformed(e.to_string())),
    }
}

fn read_message(segment: Segment, kind: CloudKind) -> Result<VasMessage, CloudError> {
    let frame = read_frame(segment)?;
    if frame.msg_type == MsgType::Error {
        let body = ErrorBody::from_frame(&frame).map_err(|e| CloudError::Malformed(e.to_string()))?;
        return Err(CloudError::from_remote(kind, body));
    }
    VasMessage::from_frame(&frame).map_err(|e: WireError| CloudError::Malformed(e.to_string()))
}

impl CloudLink {
    pub fn new(endpoint: Arc<dyn CloudEndpoint>, profile: LinkProfile, model: TransportModel, seed: u64) -> Self {
        Self {
            link: open_link(profile, model, seed),
            endpoint,
            meter: Arc::new(Meter::default()),
            online: Arc::new(AtomicBool::new(true)),
            serial: Arc::new(Mutex::new(())),
        }
    }

    /// Default cellular uplink: 4G, ideal transport.
    pub fn lte(endpoint: Arc<dyn CloudEndpoint>, seed: u64) -> Self {
        Self::new(endpoint, LinkProfile::lte_4g(), TransportModel::ideal(), seed)
    }

    pub fn kind(&self) -> CloudKind {
        self.endpoint.kind()
    }

    pub fn link(&self) -> &EmulatedLink {
        &self.link
    }

    pub fn meter(&self) -> &Meter {
        &self.meter
    }

    /// Charger-side clock of this link.
    pub fn now_ms(&self) -> f64 {
        self.link.now_ms(Side::Client)
    }

    pub fn set_online(&self, online: bool) {
        self.online.store(online, Ordering::SeqCst);
    }

    pub fn is_online(&self) -> bool {
        self.online.load(Ordering::SeqCst)
    }

    /// Sends `request` no earlier than `not_before_ms` and waits for the reply.
    /// Returns the reply and the charger-side completion time.
    pub fn call(&self, request: &VasMessage, not_before_ms: f64) -> Result<(VasMessage, f64), CloudError> {
        let kind = self.kind();
        let _serial = self.serial.lock().unwrap_or_else(|e| e.into_inner());
        let client = self.link.client();
        let server = self.link.server();
        client.advance_to(not_before_ms);
        let out = frame_bytes(&request.to_frame());
        if !self.is_online() {
            return Err(CloudError::Unreachable(kind));
        }
        client.send(out).map_err(|_| CloudError::Unreachable(kind))?;
        self.meter.to_cloud.fetch_add(request.body_len() as u64, Ordering::Relaxed);
        self.meter.calls.fetch_add(1, Ordering::Relaxed);
        let delivery = server.recv().ok_or(CloudError::Unreachable(kind))?;
        let reply_frame = match read_message(delivery.segment, kind) {
            Ok(req) => match self.endpoint.handle(&req, server.now_ms()) {
                Ok(reply) => reply.to_frame(),
                Err(e) => ErrorBody::new(request.service_id, e.code(), e.to_string()).to_frame(),
            },
            Err(e) => ErrorBody::new(request.service_id, e.code(), e.to_string()).to_frame(),
        };
        server.send(frame_bytes(&reply_frame)).map_err(|_| CloudError::Unreachable(kind))?;
        self.meter.from_cloud.fetch_add(reply_frame.body.len() as u64, Ordering::Relaxed);
        let delivery = client.recv().ok_or(CloudError::Unreachable(kind))?;
        let reply = read_message(delivery.segment, kind)?;
        Ok((reply, client.now_ms()))
    }

    /// Cloud-initiated notification toward the charger. Returns the message
    /// as the charger decoded it.
    pub fn push(&self, message: &VasMessage) -> Result<VasMessage, CloudError> {
        let kind = self.kind();
        if !self.is_online() {
            return Err(CloudError::Unreachable(kind));
        }
        let _serial = self.serial.lock().unwrap_or_else(|e| e.into_inner());
        let server = self.link.server();
        let client = self.link.client();
        server.advance_to(client.now_ms());
        server
            .send(frame_bytes(&message.to_frame()))
            .map_err(|_| CloudError::Unreachable(kind))?;
        self.meter.from_cloud.fetch_add(message.body_len() as u64, Ordering::Relaxed);
        let delivery = client.recv().ok_or(CloudError::Unreachable(kind))?;
        read_message(delivery.segment, kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Echo;

    impl CloudEndpoint for Echo {
        fn kind(&self) -> CloudKind {
            CloudKind::SiemBackend
        }

        fn handle(&self, request: &VasMessage, _now_ms: f64) -> Result<VasMessage, CloudError> {
            if request.data.is_empty() {
                return Err(CloudError::Rejected("empty".into()));
            }
            Ok(VasMessage::new(request.service_id, request.op + 1, request.data.clone()))
        }
    }

    #[test]
    fn call_meters_frame_bodies_and_takes_a_round_trip() {
        let link = CloudLink::lte(Arc::new(Echo), 3);
        let req = VasMessage::new(3, 1, vec![7; 1000]);
        let (reply, done) = link.call(&req, 10.0).unwrap();
        assert_eq!(reply.op, 2);
        assert_eq!(link.meter().bytes_to_cloud(), 1004);
        assert_eq!(link.meter().bytes_from_cloud(), 1004);
        assert!(done >= 10.0 + 72.0 * 0.7);
    }

    #[test]
    fn endpoint_errors_and_offline_links() {
        let link = CloudLink::lte(Arc::new(Echo), 3);
        assert!(matches!(
            link.call(&VasMessage::new(3, 1, vec![]), 0.0),
            Err(CloudError::Rejected(_))
        ));
        link.set_online(false);
        assert_eq!(
            link.call(&VasMessage::new(3, 1, vec![1]), 0.0),
            Err(CloudError::Unreachable(CloudKind::SiemBackend))
        );
    }
}
