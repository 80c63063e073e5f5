//! Operation codes and payload layouts of the VAS exchanges between vehicle
//! and charger. Both sides build and parse messages through this module.

use crate::crypto::{Digest, DIGEST_LEN};
use crate::update::Version;
use crate::wire::{SessionId, WireError, HEADER_LEN, TLS_RECORD_OVERHEAD};

/// Wire size of one padded benchmark message: a single transport record.
pub const PADDED_WIRE_BYTES: usize = 1024;
/// Service id, op and flags in front of every VAS payload.
pub const VAS_HEADER_LEN: usize = 4;
/// Payload length that makes a VAS message occupy exactly [`PADDED_WIRE_BYTES`].
pub const PADDED_DATA_LEN: usize = PADDED_WIRE_BYTES - TLS_RECORD_OVERHEAD as usize - HEADER_LEN - VAS_HEADER_LEN;

/// Select parameter that switches a service to padded benchmark messages.
pub const PADDING_PARAM: &str = "padding";

pub mod charging {
    pub const ECHO: u8 = 0x01;
    pub const ECHO_REPLY: u8 = 0x02;
}

pub mod updates {
    pub const SERVE: u8 = 0x01;
    pub const OFFER: u8 = 0x02;
    pub const UP_TO_DATE: u8 = 0x03;
    pub const RAW_DOWNLOAD: u8 = 0x04;
    pub const RAW: u8 = 0x05;
}

pub mod siem {
    pub const UPLOAD_BEGIN: u8 = 0x01;
    pub const UPLOAD_CHUNK: u8 = 0x02;
    pub const UPLOAD_END: u8 = 0x03;
    pub const UPLOAD_OPAQUE: u8 = 0x04;
    pub const ACK: u8 = 0x05;
    pub const FL_PULL: u8 = 0x06;
    pub const FL_PARAMS: u8 = 0x07;
}

pub mod payments {
    pub const BURSTS: u8 = 0x01;
    pub const RECEIPT: u8 = 0x02;
    pub const AUTH: u8 = 0x03;
    pub const RECONCILE: u8 = 0x04;
    pub const RECORD: u8 = 0x05;
    pub const DISPUTE: u8 = 0x06;
    pub const NAIVE: u8 = 0x07;
}

/// Upload chunk size for real log transfers.
pub const UPLOAD_CHUNK_LEN: usize = 1 << 20;
/// Upper bound on an acknowledgement frame, header included.
pub const MAX_ACK_FRAME: usize = 64;

/// Appends zeros so the payload reaches [`PADDED_DATA_LEN`].
pub fn pad(mut data: Vec<u8>) -> Vec<u8> {
    if data.len() < PADDED_DATA_LEN {
        data.resize(PADDED_DATA_LEN, 0);
    }
    data
}

pub(crate) struct Cursor<'a> {
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.buf.len() < n {
            return Err(WireError::Malformed(format!("need {n} bytes, have {}", self.buf.len())));
        }
        let (h, t) = self.buf.split_at(n);
        self.buf = t;
        Ok(h)
    }

    pub fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().expect("2")))
    }

    pub fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4")))
    }

    pub fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8")))
    }

    pub fn digest(&mut self) -> Result<Digest, WireError> {
        Ok(Digest::from_slice(self.take(DIGEST_LEN)?).expect("length"))
    }

    pub fn str(&mut self) -> Result<String, WireError> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| WireError::Malformed("invalid utf-8".into()))
    }

    pub fn rest(&mut self) -> &'a [u8] {
        std::mem::take(&mut self.buf)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<(), WireError> {
    let n = u16::try_from(s.len()).map_err(|_| WireError::Malformed("string too long".into()))?;
    out.extend_from_slice(&n.to_be_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

/// Echo request: the size of the reply the charger should send.
pub fn encode_echo(response_len: u32) -> Vec<u8> {
    response_len.to_be_bytes().to_vec()
}

pub fn decode_echo(data: &[u8]) -> Result<u32, WireError> {
    Cursor::new(data).u32()
}

/// Update request: the ECU model and the version it runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServeRequest {
    pub ecu_model: String,
    pub min_version: Version,
}

impl ServeRequest {
    pub fn encode(&self) -> Result<Vec<u8>, WireError> {
        let mut out = self.min_version.to_bytes().to_vec();
        put_str(&mut out, &self.ecu_model)?;
        Ok(out)
    }

    pub fn decode(data: &[u8]) -> Result<Self, WireError> {
        let mut c = Cursor::new(data);
        let min_version = Version::from_bytes(c.take(6)?.try_into().expect("6"));
        let ecu_model = c.str()?;
        Ok(Self { ecu_model, min_version })
    }
}

/// Offer body: `manifest_len:u32 manifest image`.
pub fn encode_offer(manifest: &[u8], image: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + manifest.len() + image.len());
    out.extend_from_slice(&(manifest.len() as u32).to_be_bytes());
    out.extend_from_slice(manifest);
    out.extend_from_slice(image);
    out
}

pub fn decode_offer(data: &[u8]) -> Result<(&[u8], &[u8]), WireError> {
    let mut c = Cursor::new(data);
    let n = c.u32()? as usize;
    let manifest = c.take(n)?;
    Ok((manifest, c.rest()))
}

/// Header opening a log upload, or resuming one at `offset`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UploadHeader {
    pub vehicle_id: String,
    pub window_seconds: u32,
    pub digest: Digest,
    pub total: u64,
    pub offset: u64,
}

impl UploadHeader {
    pub fn encode(&self) -> Result<Vec<u8>, WireError> {
        let mut out = Vec::with_capacity(54 + self.vehicle_id.len());
        put_str(&mut out, &self.vehicle_id)?;
        out.extend_from_slice(&self.window_seconds.to_be_bytes());
        out.extend_from_slice(self.digest.as_bytes());
        out.extend_from_slice(&self.total.to_be_bytes());
        out.extend_from_slice(&self.offset.to_be_bytes());
        Ok(out)
    }

    pub fn decode(data: &[u8]) -> Result<Self, WireError> {
        let mut c = Cursor::new(data);
        Ok(Self {
            vehicle_id: c.str()?,
            window_seconds: c.u32()?,
            digest: c.digest()?,
            total: c.u64()?,
            offset: c.u64()?,
        })
    }
}

/// Upload acknowledgement: bytes received and their digest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UploadAck {
    pub received: u64,
    pub digest: Digest,
}

impl UploadAck {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.received.to_be_bytes().to_vec();
        out.extend_from_slice(self.digest.as_bytes());
        out
    }

    pub fn decode(data: &[u8]) -> Result<Self, WireError> {
        let mut c = Cursor::new(data);
        Ok(Self {
            received: c.u64()?,
            digest: c.digest()?,
        })
    }
}

/// Burst request: the tariff the vehicle accepts and how many bursts to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BurstRequest {
    pub price_per_wh: u32,
    pub burst_wh: u32,
    pub count: u32,
}

impl BurstRequest {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12);
        out.extend_from_slice(&self.price_per_wh.to_be_bytes());
        out.extend_from_slice(&self.burst_wh.to_be_bytes());
        out.extend_from_slice(&self.count.to_be_bytes());
        out
    }

    pub fn decode(data: &[u8]) -> Result<Self, WireError> {
        let mut c = Cursor::new(data);
        Ok(Self {
            price_per_wh: c.u32()?,
            burst_wh: c.u32()?,
            count: c.u32()?,
        })
    }
}

/// Dispute body: `burst_index:u32 element:u8` (0 receipt, 1 authorization).
pub fn encode_dispute(burst_index: usize, authorization: bool) -> Vec<u8> {
    let mut out = (burst_index as u32).to_be_bytes().to_vec();
    out.push(u8::from(authorization));
    out
}

pub fn decode_dispute(data: &[u8]) -> Result<(usize, bool), WireError> {
    let mut c = Cursor::new(data);
    let index = c.u32()? as usize;
    let element = match c.u8()? {
        0 => false,
        1 => true,
        e => return Err(WireError::Malformed(format!("bad dispute element {e}"))),
    };
    Ok((index, element))
}

/// Payment session id for the `counter`-th payment on a TLS session.
pub fn payment_session_id(session: &SessionId, counter: u32) -> [u8; 16] {
    let d = Digest::of_parts(&[&session.0, &counter.to_be_bytes()]);
    let mut id = [0; 16];
    id.copy_from_slice(&d.0[..16]);
    id
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::{Frame, MsgType, VasMessage};

    #[test]
    fn padded_message_is_one_kilobyte_record() {
        assert_eq!(PADDED_DATA_LEN, 993);
        let msg = VasMessage::new(4, payments::NAIVE, pad(vec![1; 268]));
        let frame: Frame = msg.to_frame();
        assert_eq!(frame.msg_type, MsgType::VasData);
        assert_eq!(frame.wire_len() + TLS_RECORD_OVERHEAD as usize, PADDED_WIRE_BYTES);
    }

    #[test]
    fn payloads_round_trip() {
        let h = UploadHeader {
            vehicle_id: "veh-7".into(),
            window_seconds: 600,
            digest: Digest::of(b"x"),
            total: 85_000_000,
            offset: 1 << 20,
        };
        assert_eq!(UploadHeader::decode(&h.encode().unwrap()).unwrap(), h);
        let ack = UploadAck {
            received: 9,
            digest: Digest::of(b"y"),
        };
        assert_eq!(UploadAck::decode(&ack.encode()).unwrap(), ack);
        assert!(VasMessage::new(3, siem::ACK, ack.encode()).to_frame().wire_len() <= MAX_ACK_FRAME);
        let r = ServeRequest {
            ecu_model: "bms".into(),
            min_version: Version::new(1, 0, 0),
        };
        assert_eq!(ServeRequest::decode(&r.encode().unwrap()).unwrap(), r);
        let b = BurstRequest {
            price_per_wh: 1,
            burst_wh: 5,
            count: 10,
        };
        assert_eq!(BurstRequest::decode(&pad(b.encode())).unwrap(), b);
        assert_eq!(decode_dispute(&encode_dispute(3, true)).unwrap(), (3, true));
        let offer = encode_offer(b"man", b"image");
        assert_eq!(decode_offer(&offer).unwrap(), (&b"man"[..], &b"image"[..]));
    }
}
