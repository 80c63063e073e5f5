//! Connectionless charger discovery datagrams.
//!
//! Request body (16 bytes): magic `SECC` followed by a 12-byte nonce.
//! Response body (35 bytes): magic, echoed nonce, 16-byte address (IPv4 is
//! carried IPv6-mapped), big-endian port, security flag.

use std::net::{IpAddr, Ipv6Addr};
use std::sync::Arc;

use super::{Frame, MsgType, WireError};
use crate::link::{LinkEnd, Segment};

pub const SDP_MAGIC: [u8; 4] = *b"SECC";
pub const SDP_REQUEST_LEN: usize = 16;
pub const SDP_RESPONSE_LEN: usize = 35;
/// Default wait for the first response, in emulated milliseconds.
pub const DEFAULT_DISCOVERY_TIMEOUT_MS: f64 = 500.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SdpRequest {
    pub nonce: [u8; 12],
}

impl SdpRequest {
    pub fn to_frame(&self) -> Frame {
        let mut body = Vec::with_capacity(SDP_REQUEST_LEN);
        body.extend_from_slice(&SDP_MAGIC);
        body.extend_from_slice(&self.nonce);
        Frame::new(MsgType::SdpRequest, body)
    }

    pub fn from_frame(frame: &Frame) -> Result<Self, WireError> {
        if frame.msg_type != MsgType::SdpRequest
            || frame.body.len() != SDP_REQUEST_LEN
            || frame.body[..4] != SDP_MAGIC
        {
            return Err(WireError::Malformed("not an SDP request".into()));
        }
        Ok(Self {
            nonce: frame.body[4..].try_into().expect("length checked"),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SdpResponse {
    pub charger_address: IpAddr,
    pub port: u16,
    pub security_required: bool,
}

impl SdpResponse {
    pub fn new(charger_address: IpAddr, port: u16, security_required: bool) -> Result<Self, WireError> {
        if port == 0 {
            return Err(WireError::Malformed("SDP port must be non-zero".into()));
        }
        Ok(Self {
            charger_address,
            port,
            security_required,
        })
    }

    pub fn to_frame(&self, nonce: &[u8; 12]) -> Frame {
        let addr = match self.charger_address {
            IpAddr::V4(v4) => v4.to_ipv6_mapped(),
            IpAddr::V6(v6) => v6,
        };
        let mut body = Vec::with_capacity(SDP_RESPONSE_LEN);
        body.extend_from_slice(&SDP_MAGIC);
        body.extend_from_slice(nonce);
        body.extend_from_slice(&addr.octets());
        body.extend_from_slice(&self.port.to_be_bytes());
        body.push(u8::from(self.security_required));
        Frame::new(MsgType::SdpResponse, body)
    }

    /// Parses a response and checks it answers the request with `nonce`.
    pub fn from_frame(frame: &Frame, nonce: &[u8; 12]) -> Result<Self, WireError> {
        let b = &frame.body;
        if frame.msg_type != MsgType::SdpResponse || b.len() != SDP_RESPONSE_LEN || b[..4] != SDP_MAGIC {
            return Err(WireError::Malformed("not an SDP response".into()));
        }
        if &b[4..16] != nonce {
            return Err(WireError::Malformed("SDP nonce mismatch".into()));
        }
        let octets: [u8; 16] = b[16..32].try_into().expect("length checked");
        let v6 = Ipv6Addr::from(octets);
        let addr = match v6.to_ipv4_mapped() {
            Some(v4) => IpAddr::V4(v4),
            None => IpAddr::V6(v6),
        };
        let port = u16::from_be_bytes([b[32], b[33]]);
        let security_required = match b[34] {
            0 => false,
            1 => true,
            _ => return Err(WireError::Malformed("bad SDP security flag".into())),
        };
        Self::new(addr, port, security_required)
    }
}

/// Charger-side handler for discovery datagrams.
pub trait SdpResponder: Send + Sync {
    /// Answers every discovery request pending on `end`.
    fn serve_sdp(&self, end: &LinkEnd) -> Result<(), WireError>;
}

/// Outcome of discovery: the winning response and its position in the scope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Discovered {
    pub response: SdpResponse,
    pub index: usize,
    pub elapsed_ms: f64,
}

/// Broadcasts one discovery request over every link in `scope` and returns the
/// first valid response to arrive within `timeout_ms`.
///
/// Each scope entry is the vehicle's end of a link plus the charger that sits
/// on the other end.
pub fn sdp_discover(
    nonce: [u8; 12],
    scope: &[(LinkEnd, Arc<dyn SdpResponder>)],
    timeout_ms: f64,
) -> Result<Discovered, WireError> {
    let t0 = scope.iter().map(|(e, _)| e.now_ms()).fold(0.0, f64::max);
    let request = SdpRequest { nonce }.to_frame().encode()?;
    for (end, responder) in scope {
        end.advance_to(t0);
        end.send(request.clone())?;
        responder.serve_sdp(&end.link().end(end.side().peer()))?;
    }
    let mut best: Option<Discovered> = None;
    for (index, (end, _)) in scope.iter().enumerate() {
        while let Some(arrival) = end.peek_arrival() {
            if arrival - t0 > timeout_ms {
                break;
            }
            let d = end.recv().expect("peeked");
            let Segment::Bytes(bytes) = d.segment else { continue };
            let Ok(Some((frame, _))) = Frame::decode(&bytes) else { continue };
            let Ok(response) = SdpResponse::from_frame(&frame, &nonce) else { continue };
            let elapsed_ms = arrival - t0;
            if best.is_none_or(|b| elapsed_ms < b.elapsed_ms) {
                best = Some(Discovered {
                    response,
                    index,
                    elapsed_ms,
                });
            }
        }
    }
    match best {
        Some(found) => Ok(found),
        None => {
            for (end, _) in scope {
                end.advance_to(t0 + timeout_ms);
            }
            Err(WireError::DiscoveryTimeout { waited_ms: timeout_ms })
        }
    }
}
