//! Length-prefixed frame codec.
//!
//! ```text
//! +----------------+---------+------------------+
//! | length: u32 BE | type:u8 | body (length-1)  |
//! +----------------+---------+------------------+
//! ```

use super::WireError;

pub const HEADER_LEN: usize = 5;
/// Largest body the 32-bit length field can describe.
pub const MAX_BODY_LEN: u64 = u32::MAX as u64 - 1;
/// Default cap applied by [`FrameDecoder`] to guard memory.
pub const DEFAULT_DECODE_LIMIT: usize = 32 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgType {
    SdpRequest = 0x01,
    SdpResponse = 0x02,
    CatalogRequest = 0x10,
    Catalog = 0x11,
    ServiceSelect = 0x12,
    ServiceSelectAck = 0x13,
    VasData = 0x20,
    Error = 0x7F,
}

impl TryFrom<u8> for MsgType {
    type Error = WireError;

    fn try_from(code: u8) -> Result<Self, WireError> {
        Ok(match code {
            0x01 => MsgType::SdpRequest,
            0x02 => MsgType::SdpResponse,
            0x10 => MsgType::CatalogRequest,
            0x11 => MsgType::Catalog,
            0x12 => MsgType::ServiceSelect,
            0x13 => MsgType::ServiceSelectAck,
            0x20 => MsgType::VasData,
            0x7F => MsgType::Error,
            other => return Err(WireError::UnknownMsgType(other)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: MsgType,
    pub body: Vec<u8>,
}

impl Frame {
    pub fn new(msg_type: MsgType, body: Vec<u8>) -> Self {
        Self { msg_type, body }
    }

    pub fn wire_len(&self) -> usize {
        HEADER_LEN + self.body.len()
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) -> Result<(), WireError> {
        let len = self.body.len() as u64;
        if len > MAX_BODY_LEN {
            return Err(WireError::FrameTooLarge(len));
        }
        out.reserve(self.wire_len());
        out.extend_from_slice(&((len + 1) as u32).to_be_bytes());
        out.push(self.msg_type as u8);
        out.extend_from_slice(&self.body);
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>, WireError> {
        let mut out = Vec::with_capacity(self.wire_len());
        self.encode_into(&mut out)?;
        Ok(out)
    }

    /// Decodes one frame from the front of `buf`.
    ///
    /// Returns `Ok(None)` when `buf` holds only part of a frame, otherwise the
    /// frame and the number of bytes consumed.
    pub fn decode(buf: &[u8]) -> Result<Option<(Frame, usize)>, WireError> {
        let Some(header) = buf.get(..HEADER_LEN) else {
            return Ok(None);
        };
        let len = u32::from_be_bytes([header[0], header[1], header[2], header[3]]) as usize;
        if len == 0 {
            return Err(WireError::Malformed("zero frame length".into()));
        }
        let msg_type = MsgType::try_from(header[4])?;
        let total = 4 + len;
        if buf.len() < total {
            return Ok(None);
        }
        Ok(Some((Frame::new(msg_type, buf[HEADER_LEN..total].to_vec()), total)))
    }
}

/// Incremental decoder for a byte stream of frames.
#[derive(Debug)]
pub struct FrameDecoder {
    buf: Vec<u8>,
    pos: usize,
    limit: usize,
}

impl Default for FrameDecoder {
    fn default() -> Self {
        Self::with_limit(DEFAULT_DECODE_LIMIT)
    }
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_limit(limit: usize) -> Self {
        Self {
            buf: Vec::new(),
            pos: 0,
            limit,
        }
    }

    pub fn push(&mut self, bytes: &[u8]) {
        if self.pos > 0 && self.pos == self.buf.len() {
            self.buf.clear();
            self.pos = 0;
        }
        self.buf.extend_from_slice(bytes);
    }

    pub fn buffered(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn next_frame(&mut self) -> Result<Option<Frame>, WireError> {
        let rest = &self.buf[self.pos..];
        if rest.len() >= 4 {
            let len = u32::from_be_bytes([rest[0], rest[1], rest[2], rest[3]]) as usize;
            if len.saturating_sub(1) > self.limit {
                return Err(WireError::FrameTooLarge(len as u64 - 1));
            }
        }
        match Frame::decode(rest)? {
            Some((frame, used)) => {
                self.pos += used;
                if self.pos > (1 << 20) && self.pos * 2 > self.buf.len() {
                    self.buf.drain(..self.pos);
                    self.pos = 0;
                }
                Ok(Some(frame))
            }
            None => Ok(None),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TYPES: [MsgType; 8] = [
        MsgType::SdpRequest,
        MsgType::SdpResponse,
        MsgType::CatalogRequest,
        MsgType::Catalog,
        MsgType::ServiceSelect,
        MsgType::ServiceSelectAck,
        MsgType::VasData,
        MsgType::Error,
    ];

    #[test]
    fn layout_is_bit_exact() {
        let f = Frame::new(MsgType::VasData, vec![0xAA, 0xBB]);
        assert_eq!(f.encode().unwrap(), vec![0, 0, 0, 3, 0x20, 0xAA, 0xBB]);
        let empty = Frame::new(MsgType::CatalogRequest, vec![]);
        assert_eq!(empty.encode().unwrap(), vec![0, 0, 0, 1, 0x10]);
    }

    #[test]
    fn rejects_bad_headers() {
        assert!(matches!(
            Frame::decode(&[0, 0, 0, 1, 0x55]),
            Err(WireError::UnknownMsgType(0x55))
        ));
        assert!(Frame::decode(&[0, 0, 0, 0, 0x20]).is_err());
        assert!(Frame::decode(&[0, 0, 0, 4, 0x20, 1]).unwrap().is_none());
        let mut d = FrameDecoder::with_limit(8);
        d.push(&[0, 0, 1, 0, 0x20]);
        assert!(matches!(d.next_frame(), Err(WireError::FrameTooLarge(_))));
    }

    proptest! {
        #[test]
        fn codec_is_a_bijection(t in 0usize..8, body in proptest::collection::vec(any::<u8>(), 0..4096)) {
            let f = Frame::new(TYPES[t], body);
            let enc = f.encode().unwrap();
            prop_assert_eq!(enc.len(), f.wire_len());
            let (g, used) = Frame::decode(&enc).unwrap().unwrap();
            prop_assert_eq!(used, enc.len());
            prop_assert_eq!(g, f);
        }

        #[test]
        fn decoder_handles_arbitrary_splits(
            bodies in proptest::collection::vec(proptest::collection::vec(any::<u8>(), 0..300), 1..12),
            cuts in proptest::collection::vec(1usize..97, 1..40),
        ) {
            let frames: Vec<Frame> = bodies.into_iter().map(|b| Frame::new(MsgType::VasData, b)).collect();
            let mut stream = Vec::new();
            for f in &frames {
                f.encode_into(&mut stream).unwrap();
            }
            let mut dec = FrameDecoder::new();
            let mut out = Vec::new();
            let mut at = 0;
            let mut i = 0;
            while at < stream.len() {
                let step = cuts[i % cuts.len()].min(stream.len() - at);
                dec.push(&stream[at..at + step]);
                at += step;
                i += 1;
                while let Some(f) = dec.next_frame().unwrap() {
                    out.push(f);
                }
            }
            prop_assert_eq!(out, frames);
            prop_assert_eq!(dec.buffered(), 0);
        }
    }
}
