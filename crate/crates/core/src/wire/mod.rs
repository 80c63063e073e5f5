//! Vehicle-charger wire protocol: framing, discovery, the secure channel and
//! service negotiation.

mod catalog;
mod channel;
mod frame;
pub mod sdp;
mod session;
mod tls;
mod vas;

pub use catalog::{
    decode_catalog, decode_params, encode_catalog, encode_params, service_ids, ServiceDescriptor,
};
pub use channel::{Channel, Incoming};
pub use frame::{Frame, FrameDecoder, MsgType, DEFAULT_DECODE_LIMIT, HEADER_LEN, MAX_BODY_LEN};
pub use sdp::{sdp_discover, Discovered, SdpRequest, SdpResponder, SdpResponse};
pub use session::{
    establish_session, negotiate_services, select_service, Acceptor, Peer, ServiceHandle, Session,
    SessionId,
};
pub use tls::{client_config, server_config, TLS_RECORD_OVERHEAD, TLS_MAX_FRAGMENT, SERVER_NAME};
pub use vas::{error_codes, ErrorBody, VasMessage};

use thiserror::Error;

use crate::link::LinkError;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("unknown message type 0x{0:02x}")]
    UnknownMsgType(u8),
    #[error("frame body of {0} bytes exceeds the limit")]
    FrameTooLarge(u64),
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("no charger answered discovery within {waited_ms} ms")]
    DiscoveryTimeout { waited_ms: f64 },
    #[error("authentication failed: {0}")]
    Authentication(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("service {0} is not in the negotiated catalog")]
    Selection(u16),
    #[error("service {service_id} selected before the charging service")]
    Ordering { service_id: u16 },
    #[error("duplicate session id")]
    DuplicateSession,
    #[error("tls: {0}")]
    Tls(String),
    #[error("peer error {code}: {message}")]
    Remote { code: u8, message: String },
    #[error("session closed")]
    SessionClosed,
    #[error(transparent)]
    Link(#[from] LinkError),
}
