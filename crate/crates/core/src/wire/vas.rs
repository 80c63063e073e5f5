//! Service-tagged payloads carried in VAS-data and error frames.
//!
//! VAS-data body: `service_id:u16 op:u8 flags:u8 [opaque_len:u64] data`.
//! When flag bit 0 is set, an opaque bulk segment of `opaque_len` bytes
//! follows the frame on the channel.

use super::catalog::Reader;
use super::{Frame, MsgType, WireError};

const FLAG_OPAQUE: u8 = 0x01;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VasMessage {
    pub service_id: u16,
    pub op: u8,
    pub data: Vec<u8>,
    pub opaque: Option<u64>,
}

impl VasMessage {
    pub fn new(service_id: u16, op: u8, data: Vec<u8>) -> Self {
        Self {
            service_id,
            op,
            data,
            opaque: None,
        }
    }

    pub fn with_opaque(mut self, len: u64) -> Self {
        self.opaque = Some(len);
        self
    }

    /// Size of the frame body, excluding any trailing opaque segment.
    pub fn body_len(&self) -> usize {
        4 + if self.opaque.is_some() { 8 } else { 0 } + self.data.len()
    }

    pub fn to_frame(&self) -> Frame {
        let mut body = Vec::with_capacity(self.body_len());
        body.extend_from_slice(&self.service_id.to_be_bytes());
        body.push(self.op);
        match self.opaque {
            Some(n) => {
                body.push(FLAG_OPAQUE);
                body.extend_from_slice(&n.to_be_bytes());
            }
            None => body.push(0),
        }
        body.extend_from_slice(&self.data);
        Frame::new(MsgType::VasData, body)
    }

    pub fn from_frame(frame: &Frame) -> Result<Self, WireError> {
        if frame.msg_type != MsgType::VasData {
            return Err(WireError::Protocol(format!("expected VAS data, got {:?}", frame.msg_type)));
        }
        let mut r = Reader::new(&frame.body);
        let service_id = r.u16()?;
        let op = r.u8()?;
        let flags = r.u8()?;
        if flags & !FLAG_OPAQUE != 0 {
            return Err(WireError::Malformed(format!("unknown VAS flags 0x{flags:02x}")));
        }
        let opaque = if flags & FLAG_OPAQUE != 0 { Some(r.u64()?) } else { None };
        Ok(Self {
            service_id,
            op,
            data: r.rest().to_vec(),
            opaque,
        })
    }
}

pub mod error_codes {
    pub const UNKNOWN_SERVICE: u8 = 1;
    pub const ORDERING: u8 = 2;
    pub const NOT_SELECTED: u8 = 3;
    pub const BAD_REQUEST: u8 = 4;
    pub const STATE: u8 = 5;
    pub const UNAVAILABLE: u8 = 6;
    pub const INTEGRITY: u8 = 7;
    pub const REJECTED: u8 = 8;
}

/// Error frame body: `service_id:u16 code:u8 message`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErrorBody {
    pub service_id: u16,
    pub code: u8,
    pub message: String,
}

impl ErrorBody {
    pub fn new(service_id: u16, code: u8, message: impl Into<String>) -> Self {
        Self {
            service_id,
            code,
            message: message.into(),
        }
    }

    pub fn to_frame(&self) -> Frame {
        let mut body = Vec::with_capacity(3 + self.message.len());
        body.extend_from_slice(&self.service_id.to_be_bytes());
        body.push(self.code);
        body.extend_from_slice(self.message.as_bytes());
        Frame::new(MsgType::Error, body)
    }

    pub fn from_frame(frame: &Frame) -> Result<Self, WireError> {
        let mut r = Reader::new(&frame.body);
        let service_id = r.u16()?;
        let code = r.u8()?;
        Ok(Self {
            service_id,
            code,
            message: String::from_utf8_lossy(r.rest()).into_owned(),
        })
    }

    pub fn into_error(self) -> WireError {
        WireError::Remote {
            code: self.code,
            message: self.message,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let m = VasMessage::new(4, 0x10, vec![0xEE]);
        assert_eq!(m.to_frame().body, vec![0, 4, 0x10, 0, 0xEE]);
        let o = VasMessage::new(2, 1, vec![]).with_opaque(258);
        assert_eq!(o.to_frame().body, vec![0, 2, 1, 1, 0, 0, 0, 0, 0, 0, 1, 2]);
        assert_eq!(o.to_frame().body.len(), o.body_len());
    }

    #[test]
    fn error_roundtrip() {
        let e = ErrorBody::new(3, error_codes::ORDERING, "charging first");
        assert_eq!(ErrorBody::from_frame(&e.to_frame()).unwrap(), e);
    }

    proptest! {
        #[test]
        fn vas_roundtrip(sid in any::<u16>(), op in any::<u8>(), data in proptest::collection::vec(any::<u8>(), 0..256), opaque in proptest::option::of(any::<u64>())) {
            let m = VasMessage { service_id: sid, op, data, opaque };
            prop_assert_eq!(VasMessage::from_frame(&m.to_frame()).unwrap(), m);
        }
    }
}
