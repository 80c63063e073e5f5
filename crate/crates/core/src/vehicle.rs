//! Vehicle-side client for every value-added service.

use std::sync::Arc;

use ed25519_dalek::VerifyingKey;
use thiserror::Error;

use crate::charger::Charger;
use crate::crypto::{Digest, Identity, KeyRegistry};
use crate::link::LinkEnd;
use crate::payments::{
    Dispute, PaymentError, PaymentSession, PaymentState, ReconciliationRecord, Tariff, RECEIPT_LEN, RECORD_LEN,
};
use crate::protocol::{
    self, pad, payment_session_id, BurstRequest, ServeRequest, UploadAck, UploadHeader, PADDING_PARAM,
    UPLOAD_CHUNK_LEN,
};
use crate::siem::{FlParameters, LogBatch, SiemError};
use crate::update::{apply_update, EcuState, UpdateError, UpdateManifest, Version};
use crate::wire::{
    error_codes, sdp_discover, service_ids, Discovered, SdpResponder, SdpResponse, ServiceDescriptor, ServiceHandle,
    Session, SessionId, VasMessage, WireError,
};

#[derive(Debug, Error)]
pub enum VasError {
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Update(#[from] UpdateError),
    #[error(transparent)]
    Siem(#[from] SiemError),
    #[error(transparent)]
    Payment(#[from] PaymentError),
}

/// The vehicle's end of a link and the charger on the other end.
#[derive(Clone)]
pub struct ChargerEndpoint {
    pub end: LinkEnd,
    pub charger: Arc<Charger>,
}

impl ChargerEndpoint {
    pub fn new(end: LinkEnd, charger: Arc<Charger>) -> Self {
        Self { end, charger }
    }
}

/// Time spent bringing a session up, in virtual milliseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SetupTimes {
    pub sdp_ms: f64,
    pub handshake_ms: f64,
    /// Discovery, handshake, negotiation and selection together.
    pub total_ms: f64,
}

pub struct Vehicle {
    identity: Identity,
    trusted_chargers: Arc<KeyRegistry>,
    repo_key: VerifyingKey,
}

impl Vehicle {
    pub fn new(identity: Identity, trusted_chargers: Arc<KeyRegistry>, repo_key: VerifyingKey) -> Self {
        Self {
            identity,
            trusted_chargers,
            repo_key,
        }
    }

    pub fn identity(&self) -> &Identity {
        &self.identity
    }

    pub fn verifying_key(&self) -> VerifyingKey {
        self.identity.verifying_key()
    }

    /// Broadcasts discovery to every endpoint and returns the first answer.
    pub fn discover(&self, nonce: [u8; 12], endpoints: &[ChargerEndpoint]) -> Result<Discovered, WireError> {
        let scope: Vec<(LinkEnd, Arc<dyn SdpResponder>)> = endpoints
            .iter()
            .map(|e| (e.end.clone(), e.charger.clone() as Arc<dyn SdpResponder>))
            .collect();
        sdp_discover(nonce, &scope, crate::wire::sdp::DEFAULT_DISCOVERY_TIMEOUT_MS)
    }

    /// Runs the handshake with the charger advertised by `sdp`.
    pub fn connect(&self, endpoint: &ChargerEndpoint, sdp: &SdpResponse) -> Result<VehicleSession, WireError> {
        let session = Session::establish(
            &self.identity,
            self.trusted_chargers.clone(),
            sdp,
            endpoint.end.clone(),
            endpoint.charger.as_ref(),
        )?;
        Ok(VehicleSession::new(session, self.identity.clone(), self.repo_key))
    }

    /// Discovery, handshake, negotiation and selection of `services` (charging
    /// is always selected first). `padded` services exchange 1 KB records.
    pub fn discover_and_connect(
        &self,
        nonce: [u8; 12],
        endpoints: &[ChargerEndpoint],
        services: &[u16],
        padded: bool,
    ) -> Result<(VehicleSession, SetupTimes), VasError> {
        let t0 = endpoints.iter().map(|e| e.end.now_ms()).fold(0.0, f64::max);
        let found = self.discover(nonce, endpoints)?;
        let mut session = self.connect(&endpoints[found.index], &found.response)?;
        session.negotiate()?;
        session.select(service_ids::CHARGING, padded)?;
        for &id in services.iter().filter(|&&id| id != service_ids::CHARGING) {
            session.select(id, padded)?;
        }
        let times = SetupTimes {
            sdp_ms: found.elapsed_ms,
            handshake_ms: session.handshake_ms(),
            total_ms: session.now_ms() - t0,
        };
        Ok((session, times))
    }
}

fn remote_payment_error(e: WireError) -> VasError {
    match e {
        WireError::Remote { code, message } if code == error_codes::REJECTED => PaymentError::Rejected(message).into(),
        WireError::Remote { code, message } if code == error_codes::STATE => PaymentError::State(message).into(),
        other => other.into(),
    }
}

/// One authenticated session from the vehicle's side.
pub struct VehicleSession {
    session: Session,
    identity: Identity,
    repo_key: VerifyingKey,
    handles: Vec<ServiceHandle>,
    padded: Vec<u16>,
    payment: Option<PaymentSession>,
    payment_counter: u32,
}

impl VehicleSession {
    fn new(session: Session, identity: Identity, repo_key: VerifyingKey) -> Self {
        Self {
            session,
            identity,
            repo_key,
            handles: Vec::new(),
            padded: Vec::new(),
            payment: None,
            payment_counter: 0,
        }
    }

    pub fn id(&self) -> SessionId {
        self.session.id()
    }

    pub fn peer_key(&self) -> VerifyingKey {
        self.session.peer_key()
    }

    pub fn handshake_ms(&self) -> f64 {
        self.session.handshake_ms()
    }

    pub fn now_ms(&self) -> f64 {
        self.session.now_ms()
    }

    pub fn link_end(&self) -> &LinkEnd {
        self.session.link_end()
    }

    pub fn wire(&mut self) -> &mut Session {
        &mut self.session
    }

    pub fn negotiate(&mut self) -> Result<Vec<ServiceDescriptor>, WireError> {
        self.session.negotiate()
    }

    /// Selects a service, optionally asking for 1 KB padded records.
    pub fn select(&mut self, service_id: u16, padded: bool) -> Result<ServiceHandle, WireError> {
        let params = if padded {
            vec![(PADDING_PARAM.to_string(), protocol::PADDED_WIRE_BYTES.to_string())]
        } else {
            Vec::new()
        };
        let handle = self.session.select(service_id, &params)?;
        if !self.handles.contains(&handle) {
            self.handles.push(handle);
        }
        if padded && !self.padded.contains(&service_id) {
            self.padded.push(service_id);
        }
        Ok(handle)
    }

    fn handle(&self, service_id: u16) -> Result<ServiceHandle, WireError> {
        self.handles
            .iter()
            .copied()
            .find(|h| h.service_id() == service_id)
            .ok_or_else(|| WireError::Protocol(format!("service {service_id} is not selected")))
    }

    fn send(&mut self, service_id: u16, op: u8, data: Vec<u8>) -> Result<(), WireError> {
        let handle = self.handle(service_id)?;
        let data = if self.padded.contains(&service_id) { pad(data) } else { data };
        self.session.send_vas(&handle, op, data, None)
    }

    fn recv(&mut self, service_id: u16, expected_op: u8) -> Result<VasMessage, WireError> {
        let handle = self.handle(service_id)?;
        let msg = self.session.recv_vas(&handle)?;
        if msg.op != expected_op {
            return Err(WireError::Protocol(format!("expected op {expected_op:#04x}, got {:#04x}", msg.op)));
        }
        Ok(msg)
    }

    fn request(&mut self, service_id: u16, op: u8, data: Vec<u8>, reply_op: u8) -> Result<VasMessage, WireError> {
        self.send(service_id, op, data)?;
        self.recv(service_id, reply_op)
    }

    /// Charging-channel echo; returns the reply's data length.
    pub fn echo(&mut self, response_len: u32) -> Result<usize, WireError> {
        let reply = self.request(
            service_ids::CHARGING,
            protocol::charging::ECHO,
            protocol::encode_echo(response_len),
            protocol::charging::ECHO_REPLY,
        )?;
        Ok(reply.data.len())
    }

    /// Asks for the newest image above `min_version`. The offer is checked
    /// against the repository key and its hash before it is returned.
    pub fn request_update(
        &mut self,
        ecu_model: &str,
        min_version: Version,
    ) -> Result<Option<(UpdateManifest, Arc<[u8]>)>, VasError> {
        let req = ServeRequest {
            ecu_model: ecu_model.to_string(),
            min_version,
        };
        self.send(service_ids::UPDATES, protocol::updates::SERVE, req.encode()?)?;
        let handle = self.handle(service_ids::UPDATES)?;
        let reply = self.session.recv_vas(&handle)?;
        match reply.op {
            protocol::updates::UP_TO_DATE => Ok(None),
            protocol::updates::OFFER => {
                let (m, image) = protocol::decode_offer(&reply.data)?;
                let manifest = UpdateManifest::decode(m)?;
                manifest.verify(&self.repo_key, image)?;
                Ok(Some((manifest, image.into())))
            }
            op => Err(WireError::Protocol(format!("unexpected update reply {op:#04x}")).into()),
        }
    }

    /// Fetches and installs the newest image for `ecu`. Returns the new ECU
    /// state, or `None` when the ECU is already current.
    pub fn update_ecu(&mut self, ecu: &EcuState) -> Result<Option<EcuState>, VasError> {
        match self.request_update(&ecu.ecu_model, ecu.current_version)? {
            None => Ok(None),
            Some((manifest, image)) => Ok(Some(apply_update(ecu, &manifest, image, &self.repo_key)?)),
        }
    }

    /// Benchmark download: `len` bulk bytes from the charger.
    pub fn raw_download(&mut self, len: u64) -> Result<u64, WireError> {
        let reply = self.request(
            service_ids::UPDATES,
            protocol::updates::RAW_DOWNLOAD,
            len.to_be_bytes().to_vec(),
            protocol::updates::RAW,
        )?;
        Ok(reply.opaque.unwrap_or(0))
    }

    /// Uploads a log batch in 1 MiB chunks. If the link drops, the error
    /// carries the offset to pass to [`VehicleSession::resume_upload`] on a
    /// new session.
    pub fn upload_logs(&mut self, batch: &LogBatch) -> Result<UploadAck, VasError> {
        self.resume_upload(batch, 0)
    }

    pub fn resume_upload(&mut self, batch: &LogBatch, offset: u64) -> Result<UploadAck, VasError> {
        use protocol::siem as op;
        let raw = batch.encode();
        let digest = Digest::of(&raw);
        let total = raw.len() as u64;
        if offset > total {
            return Err(SiemError::Malformed(format!("resume offset {offset} beyond {total} bytes")).into());
        }
        let header = UploadHeader {
            vehicle_id: batch.vehicle_id.clone(),
            window_seconds: batch.window_seconds,
            digest,
            total,
            offset,
        };
        let interrupted = |at: u64| VasError::Siem(SiemError::Interrupted { resume_offset: at });
        self.send(service_ids::SIEM, op::UPLOAD_BEGIN, header.encode()?)
            .map_err(|_| interrupted(offset))?;
        let mut at = offset;
        for chunk in raw[offset as usize..].chunks(UPLOAD_CHUNK_LEN) {
            self.send(service_ids::SIEM, op::UPLOAD_CHUNK, chunk.to_vec())
                .map_err(|_| interrupted(at))?;
            self.session.link_end().wait_sent();
            self.session.drive().map_err(|_| interrupted(at))?;
            at += chunk.len() as u64;
        }
        self.send(service_ids::SIEM, op::UPLOAD_END, Vec::new())
            .map_err(|_| interrupted(at))?;
        let reply = self.recv(service_ids::SIEM, op::ACK)?;
        let ack = UploadAck::decode(&reply.data)?;
        if ack.received != total || ack.digest != digest {
            return Err(SiemError::Malformed("acknowledgement does not match the upload".into()).into());
        }
        Ok(ack)
    }

    /// Benchmark upload: `len` bulk bytes, acknowledged by size only.
    pub fn upload_opaque(&mut self, len: u64) -> Result<UploadAck, WireError> {
        let handle = self.handle(service_ids::SIEM)?;
        self.session
            .send_vas(&handle, protocol::siem::UPLOAD_OPAQUE, Vec::new(), Some(len))?;
        let reply = self.recv(service_ids::SIEM, protocol::siem::ACK)?;
        UploadAck::decode(&reply.data)
    }

    pub fn pull_fl(&mut self) -> Result<FlParameters, VasError> {
        let reply = self.request(
            service_ids::SIEM,
            protocol::siem::FL_PULL,
            Vec::new(),
            protocol::siem::FL_PARAMS,
        )?;
        Ok(FlParameters::decode(&reply.data)?)
    }

    fn next_payment_id(&mut self) -> [u8; 16] {
        let id = payment_session_id(&self.session.id(), self.payment_counter);
        self.payment_counter += 1;
        id
    }

    /// Pays once with a dual-signed record and no burst chain.
    pub fn naive_payment(&mut self, amount: u64, energy_wh: u64) -> Result<ReconciliationRecord, VasError> {
        let id = self.next_payment_id();
        let charger = self.session.peer_key();
        let mut draft = ReconciliationRecord::one_shot(id, amount, energy_wh, &charger, &self.identity.verifying_key());
        draft.sign_as_vehicle(&self.identity);
        let reply = self
            .request(
                service_ids::PAYMENTS,
                protocol::payments::NAIVE,
                draft.encode().to_vec(),
                protocol::payments::RECORD,
            )
            .map_err(remote_payment_error)?;
        let record = decode_record(&reply.data)?;
        if record.signed_bytes() != draft.signed_bytes() || record.vehicle_signature != draft.vehicle_signature {
            return Err(PaymentError::Rejected("charger returned a different record".into()).into());
        }
        record
            .verify()
            .map_err(|e| PaymentError::Rejected(format!("charger countersignature: {e}")))?;
        Ok(record)
    }

    pub fn payment(&self) -> Option<&PaymentSession> {
        self.payment.as_ref()
    }

    /// Mutable access to the local chain, for fault injection.
    pub fn payment_mut(&mut self) -> Option<&mut PaymentSession> {
        self.payment.as_mut()
    }

    /// Opens a local micropayment session. Fails while another is open.
    pub fn start_micropayment(&mut self, price_per_wh: u32, burst_wh: u32) -> Result<(), PaymentError> {
        if self.payment.as_ref().is_some_and(|p| p.state() == PaymentState::Open) {
            return Err(PaymentError::State("a payment session is already open".into()));
        }
        let tariff = Tariff::new(price_per_wh, burst_wh)?;
        let id = self.next_payment_id();
        self.payment = Some(PaymentSession::new(
            id,
            tariff,
            self.session.peer_key(),
            self.identity.verifying_key(),
        ));
        Ok(())
    }

    fn open_payment(&mut self) -> Result<&mut PaymentSession, PaymentError> {
        self.payment
            .as_mut()
            .filter(|p| p.state() == PaymentState::Open)
            .ok_or_else(|| PaymentError::State("no open payment session".into()))
    }

    /// Runs `bursts` receipt/authorization rounds. Returns the virtual time
    /// from the request to the last receipt.
    pub fn run_bursts(&mut self, bursts: u32) -> Result<f64, VasError> {
        let tariff = self.open_payment()?.tariff();
        if bursts == 0 {
            return Ok(0.0);
        }
        let start = self.now_ms();
        let req = BurstRequest {
            price_per_wh: tariff.price_per_wh,
            burst_wh: tariff.burst_wh,
            count: bursts,
        };
        self.send(service_ids::PAYMENTS, protocol::payments::BURSTS, req.encode())
            .map_err(remote_payment_error)?;
        let mut elapsed = 0.0;
        for _ in 0..bursts {
            let reply = self
                .recv(service_ids::PAYMENTS, protocol::payments::RECEIPT)
                .map_err(remote_payment_error)?;
            elapsed = self.now_ms() - start;
            let receipt = &reply.data[..RECEIPT_LEN.min(reply.data.len())];
            let identity = self.identity.clone();
            let auth = self.open_payment()?.authorize_burst(&identity, receipt)?;
            self.send(service_ids::PAYMENTS, protocol::payments::AUTH, auth.encode().to_vec())
                .map_err(remote_payment_error)?;
        }
        Ok(elapsed)
    }

    /// Closes the open micropayment session with a dual-signed record.
    pub fn reconcile(&mut self) -> Result<ReconciliationRecord, VasError> {
        let identity = self.identity.clone();
        let p = self.open_payment()?;
        let mut draft = p.reconcile()?;
        draft.sign_as_vehicle(&identity);
        self.send(service_ids::PAYMENTS, protocol::payments::RECONCILE, draft.encode().to_vec())
            .map_err(remote_payment_error)?;
        let handle = self.handle(service_ids::PAYMENTS)?;
        let reply = self.session.recv_vas(&handle).map_err(remote_payment_error)?;
        match reply.op {
            protocol::payments::RECORD => {
                let record = decode_record(&reply.data)?;
                self.open_payment()?
                    .finalize(&record)
                    .map_err(|e| PaymentError::Rejected(format!("charger record: {e}")))?;
                Ok(record)
            }
            protocol::payments::DISPUTE => {
                let (burst_index, authorization) = protocol::decode_dispute(&reply.data)?;
                self.payment = None;
                let element = if authorization {
                    crate::payments::ChainElement::Authorization
                } else {
                    crate::payments::ChainElement::Receipt
                };
                Err(PaymentError::Disputed(Dispute { burst_index, element }).into())
            }
            op => Err(WireError::Protocol(format!("unexpected payment reply {op:#04x}")).into()),
        }
    }

    pub fn close(&mut self) {
        self.session.close();
    }
}

fn decode_record(data: &[u8]) -> Result<ReconciliationRecord, PaymentError> {
    ReconciliationRecord::decode(&data[..RECORD_LEN.min(data.len())])
}
