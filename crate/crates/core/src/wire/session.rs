//! Vehicle-side secure session and service negotiation.
//!
//! The charger half of a session lives behind [`Peer`]; the vehicle drives it
//! in-process whenever it waits for input, so both halves advance on the same
//! emulated link without threads.

use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

use ed25519_dalek::VerifyingKey;

use super::catalog::{decode_catalog, encode_params, service_ids};
use super::tls::client_config;
use super::vas::{error_codes, ErrorBody, VasMessage};
use super::{Channel, Frame, Incoming, MsgType, SdpResponse, ServiceDescriptor, WireError};
use crate::crypto::{Fingerprint, Identity, KeyRegistry};
use crate::link::LinkEnd;

/// 128-bit session identifier derived from the handshake's keying material.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SessionId(pub [u8; 16]);

impl SessionId {
    pub fn as_bytes(&self) -> &[u8; 16] {
        &self.0
    }
}

impl fmt::Debug for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SessionId({})", hex::encode(self.0))
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

/// The charger's half of one connection.
pub trait Peer: Send {
    /// Processes everything that has reached the charger's end of the link.
    /// Returns whether any input was consumed.
    fn pump(&mut self) -> Result<bool, WireError>;
}

/// Creates the charger half for a new connection on `end`.
pub trait Acceptor: Send + Sync {
    fn accept(&self, end: LinkEnd) -> Result<Box<dyn Peer>, WireError>;
}

/// Token for one selected service on one session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ServiceHandle {
    session_id: SessionId,
    service_id: u16,
}

impl ServiceHandle {
    pub fn service_id(&self) -> u16 {
        self.service_id
    }

    pub fn session_id(&self) -> SessionId {
        self.session_id
    }
}

pub struct Session {
    channel: Channel,
    peer: Box<dyn Peer>,
    id: SessionId,
    peer_key: VerifyingKey,
    catalog: Option<Vec<ServiceDescriptor>>,
    selected: Vec<u16>,
    stash: VecDeque<VasMessage>,
    handshake_ms: f64,
    closed: bool,
}

impl fmt::Debug for Session {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Session")
            .field("id", &self.id)
            .field("peer", &self.peer_identity())
            .field("selected", &self.selected)
            .finish()
    }
}

/// Runs the mutually authenticated handshake with the charger found by `sdp`.
///
/// `trusted_chargers` holds the charger keys the vehicle accepts.
pub fn establish_session(
    identity: &Identity,
    trusted_chargers: Arc<KeyRegistry>,
    sdp: &SdpResponse,
    end: LinkEnd,
    acceptor: &dyn Acceptor,
) -> Result<Session, WireError> {
    Session::establish(identity, trusted_chargers, sdp, end, acceptor)
}

pub fn negotiate_services(session: &mut Session) -> Result<Vec<ServiceDescriptor>, WireError> {
    session.negotiate()
}

pub fn select_service(
    session: &mut Session,
    service_id: u16,
    params: &[(String, String)],
) -> Result<ServiceHandle, WireError> {
    session.select(service_id, params)
}

impl Session {
    pub fn establish(
        identity: &Identity,
        trusted_chargers: Arc<KeyRegistry>,
        sdp: &SdpResponse,
        end: LinkEnd,
        acceptor: &dyn Acceptor,
    ) -> Result<Session, WireError> {
        if sdp.port == 0 {
            return Err(WireError::Malformed("SDP port must be non-zero".into()));
        }
        let config = client_config(identity, trusted_chargers).map_err(|e| WireError::Tls(e.to_string()))?;
        let start = end.now_ms();
        let peer_end = end.link().end(end.side().peer());
        let mut channel = Channel::client(config, end)?;
        let mut peer = acceptor.accept(peer_end)?;
        channel.flush()?;
        while channel.is_handshaking() {
            let served = match peer.pump() {
                Ok(p) => p,
                Err(e) => {
                    channel.poll()?;
                    return Err(e);
                }
            };
            let received = channel.poll()?;
            if !served && !received {
                return Err(WireError::Transport("handshake stalled".into()));
            }
        }
        // The charger verifies our certificate only on our final flight.
        if let Err(e) = peer.pump() {
            channel.poll()?;
            return Err(e);
        }
        let id = SessionId(channel.export_session_id()?);
        let peer_key = channel
            .peer_key()
            .ok_or_else(|| WireError::Authentication("charger presented no usable key".into()))?;
        let handshake_ms = channel.now_ms() - start;
        Ok(Session {
            channel,
            peer,
            id,
            peer_key,
            catalog: None,
            selected: Vec::new(),
            stash: VecDeque::new(),
            handshake_ms,
            closed: false,
        })
    }

    pub fn id(&self) -> SessionId {
        self.id
    }

    pub fn peer_key(&self) -> VerifyingKey {
        self.peer_key
    }

    pub fn peer_identity(&self) -> Fingerprint {
        Fingerprint::of(&self.peer_key)
    }

    /// Emulated time the handshake took on the vehicle's clock.
    pub fn handshake_ms(&self) -> f64 {
        self.handshake_ms
    }

    pub fn now_ms(&self) -> f64 {
        self.channel.now_ms()
    }

    pub fn link_end(&self) -> &LinkEnd {
        self.channel.end()
    }

    pub fn catalog(&self) -> Option<&[ServiceDescriptor]> {
        self.catalog.as_deref()
    }

    pub fn is_selected(&self, service_id: u16) -> bool {
        self.selected.contains(&service_id)
    }

    pub fn send_frame(&mut self, frame: &Frame) -> Result<(), WireError> {
        if self.closed {
            return Err(WireError::SessionClosed);
        }
        self.channel.send_frame(frame)
    }

    /// Waits for the next item from the charger, driving the charger half.
    pub fn recv(&mut self) -> Result<Incoming, WireError> {
        loop {
            if let Some(item) = self.channel.try_recv()? {
                return Ok(item);
            }
            if self.channel.peer_closed() {
                return Err(WireError::SessionClosed);
            }
            let served = self.peer.pump()?;
            if !served && !self.channel.end().has_pending() {
                return Err(WireError::Protocol("charger sent no response".into()));
            }
        }
    }

    fn recv_frame(&mut self) -> Result<Frame, WireError> {
        match self.recv()? {
            Incoming::Frame(f) if f.msg_type == MsgType::Error => Err(ErrorBody::from_frame(&f)?.into_error()),
            Incoming::Frame(f) => Ok(f),
            Incoming::Opaque(_) => Err(WireError::Protocol("unexpected bulk data".into())),
        }
    }

    /// Lets the charger process everything sent so far without waiting for a reply.
    pub fn drive(&mut self) -> Result<(), WireError> {
        while self.peer.pump()? {}
        Ok(())
    }

    pub fn negotiate(&mut self) -> Result<Vec<ServiceDescriptor>, WireError> {
        self.send_frame(&Frame::new(MsgType::CatalogRequest, Vec::new()))?;
        let frame = self.recv_frame()?;
        let parsed = if frame.msg_type == MsgType::Catalog {
            decode_catalog(&frame.body)
        } else {
            Err(WireError::Protocol(format!("expected catalog, got {:?}", frame.msg_type)))
        };
        match parsed {
            Ok(catalog) => {
                self.catalog = Some(catalog.clone());
                Ok(catalog)
            }
            Err(e) => {
                self.close();
                Err(e)
            }
        }
    }

    pub fn select(&mut self, service_id: u16, params: &[(String, String)]) -> Result<ServiceHandle, WireError> {
        let catalog = self
            .catalog
            .as_ref()
            .ok_or_else(|| WireError::Protocol("services not negotiated".into()))?;
        if !catalog.iter().any(|s| s.service_id == service_id) {
            return Err(WireError::Selection(service_id));
        }
        let handle = ServiceHandle {
            session_id: self.id,
            service_id,
        };
        if self.selected.contains(&service_id) {
            return Ok(handle);
        }
        if service_id != service_ids::CHARGING && !self.selected.contains(&service_ids::CHARGING) {
            return Err(WireError::Ordering { service_id });
        }
        let mut body = service_id.to_be_bytes().to_vec();
        body.extend_from_slice(&encode_params(params)?);
        self.send_frame(&Frame::new(MsgType::ServiceSelect, body))?;
        let ack = match self.recv_frame() {
            Ok(f) => f,
            Err(WireError::Remote { code, .. }) if code == error_codes::ORDERING => {
                return Err(WireError::Ordering { service_id })
            }
            Err(WireError::Remote { code, .. }) if code == error_codes::UNKNOWN_SERVICE => {
                return Err(WireError::Selection(service_id))
            }
            Err(e) => return Err(e),
        };
        if ack.msg_type != MsgType::ServiceSelectAck || ack.body != service_id.to_be_bytes() {
            return Err(WireError::Protocol("bad service-select ack".into()));
        }
        self.selected.push(service_id);
        Ok(handle)
    }

    fn check_handle(&self, handle: &ServiceHandle) -> Result<(), WireError> {
        if handle.session_id != self.id || !self.selected.contains(&handle.service_id) {
            return Err(WireError::Protocol("service handle does not belong to this session".into()));
        }
        Ok(())
    }

    /// Sends a service message, followed by its bulk segment if it announces one.
    pub fn send_vas(&mut self, handle: &ServiceHandle, op: u8, data: Vec<u8>, opaque: Option<u64>) -> Result<(), WireError> {
        self.check_handle(handle)?;
        let msg = VasMessage {
            service_id: handle.service_id,
            op,
            data,
            opaque,
        };
        self.send_frame(&msg.to_frame())?;
        if let Some(len) = opaque {
            self.channel.send_opaque(len)?;
        }
        Ok(())
    }

    /// Waits for the next message addressed to `handle`'s service. Messages for
    /// other services are kept for their own receivers.
    pub fn recv_vas(&mut self, handle: &ServiceHandle) -> Result<VasMessage, WireError> {
        self.check_handle(handle)?;
        if let Some(pos) = self.stash.iter().position(|m| m.service_id == handle.service_id) {
            return Ok(self.stash.remove(pos).expect("position is valid"));
        }
        loop {
            let frame = self.recv_frame()?;
            let msg = VasMessage::from_frame(&frame)?;
            if let Some(len) = msg.opaque {
                match self.recv()? {
                    Incoming::Opaque(n) if n == len => {}
                    _ => return Err(WireError::Protocol("announced bulk data missing".into())),
                }
            }
            if msg.service_id == handle.service_id {
                return Ok(msg);
            }
            self.stash.push_back(msg);
        }
    }

    pub fn request_vas(
        &mut self,
        handle: &ServiceHandle,
        op: u8,
        data: Vec<u8>,
        opaque: Option<u64>,
    ) -> Result<VasMessage, WireError> {
        self.send_vas(handle, op, data, opaque)?;
        self.recv_vas(handle)
    }

    pub fn close(&mut self) {
        if !self.closed {
            self.channel.close();
            let _ = self.peer.pump();
            self.closed = true;
        }
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        self.close();
    }
}
