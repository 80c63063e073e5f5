use std::sync::Arc;

use ed25519_dalek::VerifyingKey;

use super::siem::UploadKey;
use super::{lock, role_for, Charger};
use crate::bus::{roles, topics, Criticality};
use crate::crypto::Digest;
use crate::payments::{
    ChainElement, PaymentError, PaymentSession, ReconciliationRecord, SettlementMode, Tariff,
};
use crate::protocol::{self, pad, payment_session_id, BurstRequest, ServeRequest, UploadAck, UploadHeader, PADDING_PARAM};
use crate::siem::LogBatch;
use crate::wire::{
    decode_params, encode_catalog, error_codes, service_ids, Channel, ErrorBody, Frame, Incoming, MsgType, Peer,
    SessionId, VasMessage, WireError,
};
use crate::link::LinkEnd;

enum Upload {
    Idle,
    Receiving { key: UploadKey, header: UploadHeader },
    Failed(ErrorBody),
}

/// Charger half of one vehicle session.
pub(crate) struct ChargerPeer {
    charger: Arc<Charger>,
    channel: Channel,
    session: Option<SessionId>,
    vehicle_key: Option<VerifyingKey>,
    selected: Vec<u16>,
    padded: Vec<u16>,
    awaiting_opaque: Option<VasMessage>,
    upload: Upload,
    payment: Option<PaymentSession>,
    bursts_remaining: u32,
    payment_counter: u32,
    closed: bool,
}

type Reply = Result<(), ErrorBody>;

fn err(service_id: u16, code: u8, message: impl Into<String>) -> ErrorBody {
    ErrorBody::new(service_id, code, message)
}

fn bad_request(service_id: u16, e: impl std::fmt::Display) -> ErrorBody {
    err(service_id, error_codes::BAD_REQUEST, e.to_string())
}

fn payment_error(e: &PaymentError) -> ErrorBody {
    let code = match e {
        PaymentError::Validation(_) | PaymentError::Malformed(_) => error_codes::BAD_REQUEST,
        PaymentError::State(_) | PaymentError::Sequencing(_) | PaymentError::Replay { .. } => error_codes::STATE,
        PaymentError::Disputed(_) | PaymentError::ChainMismatch(_) => error_codes::INTEGRITY,
        PaymentError::BadSignature(_) | PaymentError::Rejected(_) => error_codes::REJECTED,
    };
    err(service_ids::PAYMENTS, code, e.to_string())
}

impl ChargerPeer {
    pub fn new(charger: Arc<Charger>, end: LinkEnd) -> Result<Self, WireError> {
        let channel = Channel::server(charger.tls.clone(), end)?;
        Ok(Self {
            charger,
            channel,
            session: None,
            vehicle_key: None,
            selected: Vec::new(),
            padded: Vec::new(),
            awaiting_opaque: None,
            upload: Upload::Idle,
            payment: None,
            bursts_remaining: 0,
            payment_counter: 0,
            closed: false,
        })
    }

    fn now_ms(&self) -> f64 {
        self.channel.now_ms()
    }

    fn teardown(&mut self) {
        if !self.closed {
            self.closed = true;
            if let Some(id) = self.session {
                self.charger.end_session(id);
            }
        }
    }

    fn send(&mut self, msg: VasMessage) -> Result<(), WireError> {
        let padded = self.padded.contains(&msg.service_id);
        let msg = if padded && msg.opaque.is_none() {
            VasMessage { data: pad(msg.data), ..msg }
        } else {
            msg
        };
        self.channel.send_frame(&msg.to_frame())?;
        if let Some(len) = msg.opaque {
            self.channel.send_opaque(len)?;
        }
        Ok(())
    }

    fn send_error(&mut self, body: ErrorBody) -> Result<(), WireError> {
        self.channel.send_frame(&body.to_frame())
    }

    fn on_established(&mut self) -> Result<(), WireError> {
        let id = SessionId(self.channel.export_session_id()?);
        let key = self
            .channel
            .peer_key()
            .ok_or_else(|| WireError::Authentication("vehicle presented no usable key".into()))?;
        self.charger.register_session(id)?;
        self.session = Some(id);
        self.vehicle_key = Some(key);
        Ok(())
    }

    fn handle_frame(&mut self, frame: Frame) -> Result<(), WireError> {
        let outcome = match frame.msg_type {
            MsgType::CatalogRequest => {
                let body = encode_catalog(&self.charger.catalog())?;
                self.channel.send_frame(&Frame::new(MsgType::Catalog, body))?;
                Ok(())
            }
            MsgType::ServiceSelect => self.on_select(&frame.body)?,
            MsgType::VasData => {
                let msg = VasMessage::from_frame(&frame)?;
                if msg.opaque.is_some() {
                    self.awaiting_opaque = Some(msg);
                    Ok(())
                } else {
                    self.on_vas(msg, None)?
                }
            }
            other => Err(err(0, error_codes::BAD_REQUEST, format!("unexpected {other:?}"))),
        };
        if let Err(body) = outcome {
            self.send_error(body)?;
        }
        Ok(())
    }

    fn on_select(&mut self, body: &[u8]) -> Result<Reply, WireError> {
        if body.len() < 2 {
            return Ok(Err(bad_request(0, "short service-select")));
        }
        let service_id = u16::from_be_bytes([body[0], body[1]]);
        let params = match decode_params(&body[2..]) {
            Ok(p) => p,
            Err(e) => return Ok(Err(bad_request(service_id, e))),
        };
        if !self.charger.offers(service_id) {
            return Ok(Err(err(service_id, error_codes::UNKNOWN_SERVICE, "service not offered")));
        }
        if service_id != service_ids::CHARGING && !self.selected.contains(&service_ids::CHARGING) {
            return Ok(Err(err(service_id, error_codes::ORDERING, "charging must be selected first")));
        }
        if !self.selected.contains(&service_id) {
            self.selected.push(service_id);
        }
        if params.iter().any(|(k, v)| k == PADDING_PARAM && v == "1024") && !self.padded.contains(&service_id) {
            self.padded.push(service_id);
        }
        if service_id == service_ids::CHARGING {
            let id = self.session.map(|s| s.to_string()).unwrap_or_default();
            self.charger.publish(
                roles::CHARGING_STACK,
                topics::CHARGING_STATE,
                format!("session {id} charging").into_bytes(),
                Criticality::Critical,
            );
        }
        self.channel
            .send_frame(&Frame::new(MsgType::ServiceSelectAck, service_id.to_be_bytes().to_vec()))?;
        Ok(Ok(()))
    }

    fn on_vas(&mut self, msg: VasMessage, opaque: Option<u64>) -> Result<Reply, WireError> {
        let sid = msg.service_id;
        if !self.selected.contains(&sid) {
            return Ok(Err(err(sid, error_codes::NOT_SELECTED, "service not selected")));
        }
        match sid {
            service_ids::CHARGING => self.on_charging(msg),
            service_ids::UPDATES => self.on_updates(msg),
            service_ids::SIEM => self.on_siem(msg, opaque),
            service_ids::PAYMENTS => self.on_payments(msg),
            _ => Ok(Err(err(sid, error_codes::UNKNOWN_SERVICE, "no handler"))),
        }
    }

    fn on_charging(&mut self, msg: VasMessage) -> Result<Reply, WireError> {
        match msg.op {
            protocol::charging::ECHO => {
                let n = match protocol::decode_echo(&msg.data) {
                    Ok(n) => n as usize,
                    Err(e) => return Ok(Err(bad_request(msg.service_id, e))),
                };
                self.send(VasMessage::new(msg.service_id, protocol::charging::ECHO_REPLY, vec![0; n]))?;
                Ok(Ok(()))
            }
            op => Ok(Err(bad_request(msg.service_id, format!("unknown charging op {op:#04x}")))),
        }
    }

    fn on_updates(&mut self, msg: VasMessage) -> Result<Reply, WireError> {
        let sid = msg.service_id;
        match msg.op {
            protocol::updates::SERVE => {
                let req = match ServeRequest::decode(&msg.data) {
                    Ok(r) => r,
                    Err(e) => return Ok(Err(bad_request(sid, e))),
                };
                let (entry, ready) = match self.charger.prepare_serve(&req.ecu_model, req.min_version, self.now_ms()) {
                    Ok(r) => r,
                    Err(e) => return Ok(Err(err(sid, error_codes::UNAVAILABLE, e.to_string()))),
                };
                self.channel.end().advance_to(ready);
                match entry {
                    Some(e) if e.verified => {
                        let body = protocol::encode_offer(&e.manifest.encode(), &e.image);
                        self.send(VasMessage::new(sid, protocol::updates::OFFER, body))?;
                    }
                    _ => self.send(VasMessage::new(sid, protocol::updates::UP_TO_DATE, Vec::new()))?,
                }
                Ok(Ok(()))
            }
            protocol::updates::RAW_DOWNLOAD => {
                let len = match protocol::Cursor::new(&msg.data).u64() {
                    Ok(n) => n,
                    Err(e) => return Ok(Err(bad_request(sid, e))),
                };
                self.send(VasMessage::new(sid, protocol::updates::RAW, Vec::new()).with_opaque(len))?;
                Ok(Ok(()))
            }
            op => Ok(Err(bad_request(sid, format!("unknown update op {op:#04x}")))),
        }
    }

    fn on_siem(&mut self, msg: VasMessage, opaque: Option<u64>) -> Result<Reply, WireError> {
        use protocol::siem as op;
        let sid = msg.service_id;
        match msg.op {
            op::UPLOAD_BEGIN => {
                self.upload = match UploadHeader::decode(&msg.data) {
                    Err(e) => Upload::Failed(bad_request(sid, e)),
                    Ok(header) => self.begin_upload(header),
                };
                Ok(Ok(()))
            }
            op::UPLOAD_CHUNK => {
                if let Upload::Receiving { key, header } = &self.upload {
                    let mut uploads = lock(&self.charger.siem.uploads);
                    let buf = uploads.entry(key.clone()).or_default();
                    if buf.len() as u64 + msg.data.len() as u64 > header.total {
                        drop(uploads);
                        self.upload = Upload::Failed(bad_request(sid, "upload exceeds announced size"));
                    } else {
                        buf.extend_from_slice(&msg.data);
                    }
                }
                Ok(Ok(()))
            }
            op::UPLOAD_END => {
                let state = std::mem::replace(&mut self.upload, Upload::Idle);
                match state {
                    Upload::Idle => Ok(Err(err(sid, error_codes::STATE, "no upload in progress"))),
                    Upload::Failed(e) => Ok(Err(e)),
                    Upload::Receiving { key, header } => self.finish_upload(key, header),
                }
            }
            op::UPLOAD_OPAQUE => {
                let received = opaque.unwrap_or(0);
                let ack = UploadAck {
                    received,
                    digest: Digest::ZERO,
                };
                self.send(VasMessage::new(sid, op::ACK, ack.encode()))?;
                Ok(Ok(()))
            }
            op::FL_PULL => match self.charger.fl_parameters_at(self.now_ms()) {
                Ok((params, ready)) => {
                    self.channel.end().advance_to(ready);
                    self.send(VasMessage::new(sid, op::FL_PARAMS, params.encode()))?;
                    Ok(Ok(()))
                }
                Err(e) => Ok(Err(err(sid, error_codes::UNAVAILABLE, e.to_string()))),
            },
            other => Ok(Err(bad_request(sid, format!("unknown SIEM op {other:#04x}")))),
        }
    }

    fn begin_upload(&mut self, header: UploadHeader) -> Upload {
        let key = (header.vehicle_id.clone(), header.digest);
        let mut uploads = lock(&self.charger.siem.uploads);
        if header.offset == 0 {
            uploads.insert(key.clone(), Vec::with_capacity(header.total.min(1 << 30) as usize));
        } else {
            let have = uploads.get(&key).map_or(0, |b| b.len() as u64);
            if have != header.offset {
                return Upload::Failed(err(
                    service_ids::SIEM,
                    error_codes::STATE,
                    format!("cannot resume at {}; charger holds {have} bytes", header.offset),
                ));
            }
        }
        Upload::Receiving { key, header }
    }

    fn finish_upload(&mut self, key: UploadKey, header: UploadHeader) -> Result<Reply, WireError> {
        let sid = service_ids::SIEM;
        let Some(buf) = lock(&self.charger.siem.uploads).remove(&key) else {
            return Ok(Err(err(sid, error_codes::STATE, "upload state lost")));
        };
        if buf.len() as u64 != header.total {
            let have = buf.len() as u64;
            lock(&self.charger.siem.uploads).insert(key, buf);
            return Ok(Err(err(sid, error_codes::STATE, format!("received {have} of {} bytes", header.total))));
        }
        let digest = Digest::of(&buf);
        if digest != header.digest {
            return Ok(Err(err(sid, error_codes::INTEGRITY, "upload digest mismatch")));
        }
        let batch = match LogBatch::decode(&header.vehicle_id, header.window_seconds, &buf) {
            Ok(b) => b,
            Err(e) => return Ok(Err(bad_request(sid, e))),
        };
        self.charger.enqueue_analysis(batch, buf.into(), self.now_ms());
        let ack = UploadAck {
            received: header.total,
            digest,
        };
        self.send(VasMessage::new(sid, protocol::siem::ACK, ack.encode()))?;
        Ok(Ok(()))
    }

    fn next_payment_id(&mut self) -> Result<[u8; 16], ErrorBody> {
        let session = self
            .session
            .ok_or_else(|| err(service_ids::PAYMENTS, error_codes::STATE, "session not established"))?;
        let id = payment_session_id(&session, self.payment_counter);
        self.payment_counter += 1;
        Ok(id)
    }

    fn open_payment(&mut self, tariff: Tariff) -> Result<(), ErrorBody> {
        if tariff != self.charger.config.tariff {
            return Err(err(service_ids::PAYMENTS, error_codes::REJECTED, "tariff does not match the charger's"));
        }
        let id = self.next_payment_id()?;
        let vehicle = self.vehicle_key.expect("set with the session");
        self.payment = Some(PaymentSession::new(
            id,
            tariff,
            self.charger.payment_identity().verifying_key(),
            vehicle,
        ));
        self.bursts_remaining = 0;
        Ok(())
    }

    fn payment_is_open(&self) -> bool {
        self.payment
            .as_ref()
            .is_some_and(|p| p.state() == crate::payments::PaymentState::Open)
    }

    fn issue_next_receipt(&mut self) -> Result<Reply, WireError> {
        if self.bursts_remaining == 0 {
            return Ok(Ok(()));
        }
        let charger = self.charger.clone();
        let p = self.payment.as_mut().expect("open payment");
        match p.issue_micro_receipt(charger.payment_identity()) {
            Ok(r) => {
                self.bursts_remaining -= 1;
                self.send(VasMessage::new(
                    service_ids::PAYMENTS,
                    protocol::payments::RECEIPT,
                    r.encode().to_vec(),
                ))?;
                Ok(Ok(()))
            }
            Err(e) => Ok(Err(payment_error(&e))),
        }
    }

    fn on_payments(&mut self, msg: VasMessage) -> Result<Reply, WireError> {
        use protocol::payments as op;
        let sid = msg.service_id;
        match msg.op {
            op::BURSTS => {
                let req = match BurstRequest::decode(&msg.data) {
                    Ok(r) => r,
                    Err(e) => return Ok(Err(bad_request(sid, e))),
                };
                let tariff = match Tariff::new(req.price_per_wh, req.burst_wh) {
                    Ok(t) => t,
                    Err(e) => return Ok(Err(payment_error(&e))),
                };
                if !self.payment_is_open() {
                    if let Err(e) = self.open_payment(tariff) {
                        return Ok(Err(e));
                    }
                } else if self.payment.as_ref().map(PaymentSession::tariff) != Some(tariff) {
                    return Ok(Err(err(sid, error_codes::STATE, "tariff changed mid-session")));
                }
                self.bursts_remaining = req.count;
                self.issue_next_receipt()
            }
            op::AUTH => {
                let Some(p) = self.payment.as_mut().filter(|p| p.state() == crate::payments::PaymentState::Open)
                else {
                    return Ok(Err(err(sid, error_codes::STATE, "no open payment session")));
                };
                let len = crate::payments::AUTHORIZATION_LEN.min(msg.data.len());
                if let Err(e) = p.record_authorization(&msg.data[..len]) {
                    self.bursts_remaining = 0;
                    return Ok(Err(payment_error(&e)));
                }
                self.issue_next_receipt()
            }
            op::RECONCILE => self.on_reconcile(&msg.data),
            op::NAIVE => self.on_naive(&msg.data),
            other => Ok(Err(bad_request(sid, format!("unknown payment op {other:#04x}")))),
        }
    }

    fn publish_reconciled(&self, status: u8, body: &[u8]) {
        let mut payload = vec![status];
        payload.extend_from_slice(body);
        self.charger
            .publish(role_for(service_ids::PAYMENTS), topics::PAYMENTS_RECONCILED, payload, Criticality::Standard);
    }

    fn on_reconcile(&mut self, data: &[u8]) -> Result<Reply, WireError> {
        let sid = service_ids::PAYMENTS;
        let draft = match ReconciliationRecord::decode(&data[..crate::payments::RECORD_LEN.min(data.len())]) {
            Ok(r) => r,
            Err(e) => return Ok(Err(payment_error(&e))),
        };
        if draft.mode != SettlementMode::BurstChain {
            return Ok(Err(bad_request(sid, "reconcile expects a burst-chain record")));
        }
        if !self.payment_is_open() {
            let tariff = match Tariff::new(draft.price_per_wh, draft.burst_wh) {
                Ok(t) => t,
                Err(e) => return Ok(Err(payment_error(&e))),
            };
            if let Err(e) = self.open_payment(tariff) {
                return Ok(Err(e));
            }
        }
        self.bursts_remaining = 0;
        let p = self.payment.as_mut().expect("opened above");
        let mut record = match p.reconcile() {
            Ok(r) => r,
            Err(PaymentError::Disputed(d)) => {
                let body = protocol::encode_dispute(d.burst_index, d.element == ChainElement::Authorization);
                let mut event = p.session_id().to_vec();
                event.extend_from_slice(&body);
                self.publish_reconciled(1, &event);
                self.send(VasMessage::new(sid, protocol::payments::DISPUTE, body))?;
                return Ok(Ok(()));
            }
            Err(e) => return Ok(Err(payment_error(&e))),
        };
        if record.signed_bytes() != draft.signed_bytes() {
            return Ok(Err(err(sid, error_codes::REJECTED, "draft does not match the charger's chain")));
        }
        record.vehicle_signature = draft.vehicle_signature;
        if !record.vehicle_signature_valid() {
            return Ok(Err(err(sid, error_codes::REJECTED, "vehicle signature invalid")));
        }
        record.sign_as_charger(self.charger.payment_identity());
        if let Err(e) = p.finalize(&record) {
            return Ok(Err(payment_error(&e)));
        }
        self.settle(record)
    }

    fn on_naive(&mut self, data: &[u8]) -> Result<Reply, WireError> {
        let sid = service_ids::PAYMENTS;
        let id = match self.next_payment_id() {
            Ok(id) => id,
            Err(e) => return Ok(Err(e)),
        };
        let mut record = match ReconciliationRecord::decode(&data[..crate::payments::RECORD_LEN.min(data.len())]) {
            Ok(r) => r,
            Err(e) => return Ok(Err(payment_error(&e))),
        };
        let vehicle = self.vehicle_key.expect("set with the session");
        let consistent = record.mode == SettlementMode::OneShot
            && record.session_id == id
            && record.vehicle_key == vehicle.to_bytes()
            && record.charger_key == self.charger.verifying_key().to_bytes();
        if !consistent {
            return Ok(Err(err(sid, error_codes::REJECTED, "payment record does not match this session")));
        }
        if !record.vehicle_signature_valid() {
            return Ok(Err(err(sid, error_codes::REJECTED, "vehicle signature invalid")));
        }
        record.sign_as_charger(self.charger.payment_identity());
        self.settle(record)
    }

    fn settle(&mut self, record: ReconciliationRecord) -> Result<Reply, WireError> {
        let bytes = record.encode();
        self.publish_reconciled(0, &bytes);
        self.charger.record_settlement(record, self.now_ms());
        self.send(VasMessage::new(service_ids::PAYMENTS, protocol::payments::RECORD, bytes.to_vec()))?;
        Ok(Ok(()))
    }
}

impl Peer for ChargerPeer {
    fn pump(&mut self) -> Result<bool, WireError> {
        if self.closed {
            return Ok(false);
        }
        let progressed = match self.channel.poll() {
            Ok(p) => p,
            Err(e) => {
                self.teardown();
                return Err(e);
            }
        };
        if self.session.is_none() && !self.channel.is_handshaking() {
            if let Err(e) = self.on_established() {
                self.channel.close();
                self.teardown();
                return Err(e);
            }
        }
        loop {
            let item = match self.channel.try_recv() {
                Ok(Some(item)) => item,
                Ok(None) => break,
                Err(e) => {
                    self.teardown();
                    return Err(e);
                }
            };
            match item {
                Incoming::Frame(frame) => self.handle_frame(frame)?,
                Incoming::Opaque(n) => {
                    let Some(msg) = self.awaiting_opaque.take() else {
                        self.send_error(err(0, error_codes::BAD_REQUEST, "unannounced bulk data"))?;
                        continue;
                    };
                    if msg.opaque != Some(n) {
                        self.send_error(err(msg.service_id, error_codes::BAD_REQUEST, "bulk length mismatch"))?;
                        continue;
                    }
                    if let Err(body) = self.on_vas(msg, Some(n))? {
                        self.send_error(body)?;
                    }
                }
            }
        }
        if self.channel.peer_closed() {
            self.teardown();
        }
        Ok(progressed)
    }
}

impl Drop for ChargerPeer {
    fn drop(&mut self) {
        self.teardown();
    }
}
