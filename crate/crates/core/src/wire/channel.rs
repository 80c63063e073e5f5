//! A TLS connection bound to one end of an emulated link.

use std::collections::VecDeque;
use std::io::{ErrorKind, Read, Write};
use std::sync::Arc;

use ed25519_dalek::VerifyingKey;
use rustls::pki_types::ServerName;
use rustls::{AlertDescription, ClientConfig, ClientConnection, Connection, ServerConfig, ServerConnection};

use super::tls::{SERVER_NAME, TLS_MAX_FRAGMENT, TLS_RECORD_OVERHEAD};
use super::{Frame, FrameDecoder, WireError};
use crate::crypto::public_key_from_cert;
use crate::link::{LinkEnd, Segment};

const SESSION_ID_LABEL: &[u8] = b"vas session id";

/// Something received on a channel, in arrival order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Incoming {
    Frame(Frame),
    /// A bulk segment of the given plaintext length.
    Opaque(u64),
}

pub struct Channel {
    conn: Connection,
    end: LinkEnd,
    decoder: FrameDecoder,
    incoming: VecDeque<Incoming>,
    peer_closed: bool,
}

impl std::fmt::Debug for Channel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Channel")
            .field("side", &self.end.side())
            .field("handshaking", &self.conn.is_handshaking())
            .field("queued", &self.incoming.len())
            .finish()
    }
}

fn map_tls_error(e: rustls::Error) -> WireError {
    use rustls::Error as E;
    match e {
        E::InvalidCertificate(c) => WireError::Authentication(format!("{c:?}")),
        E::DecryptError => WireError::Authentication("handshake keys do not match".into()),
        E::AlertReceived(
            d @ (AlertDescription::BadCertificate
            | AlertDescription::UnknownCA
            | AlertDescription::CertificateUnknown
            | AlertDescription::CertificateRequired
            | AlertDescription::DecryptError
            | AlertDescription::HandshakeFailure
            | AlertDescription::AccessDenied),
        ) => WireError::Authentication(format!("peer sent {d:?}")),
        other => WireError::Tls(other.to_string()),
    }
}

/// Wire size of `len` plaintext bytes once split into TLS records.
pub(crate) fn opaque_wire_len(len: u64) -> u64 {
    len + len.div_ceil(TLS_MAX_FRAGMENT) * TLS_RECORD_OVERHEAD
}

impl Channel {
    pub fn client(config: Arc<ClientConfig>, end: LinkEnd) -> Result<Self, WireError> {
        let name = ServerName::try_from(SERVER_NAME).expect("static server name");
        let conn = ClientConnection::new(config, name).map_err(map_tls_error)?;
        Ok(Self::wrap(conn.into(), end))
    }

    pub fn server(config: Arc<ServerConfig>, end: LinkEnd) -> Result<Self, WireError> {
        let conn = ServerConnection::new(config).map_err(map_tls_error)?;
        Ok(Self::wrap(conn.into(), end))
    }

    fn wrap(mut conn: Connection, end: LinkEnd) -> Self {
        conn.set_buffer_limit(None);
        Self {
            conn,
            end,
            decoder: FrameDecoder::new(),
            incoming: VecDeque::new(),
            peer_closed: false,
        }
    }

    pub fn end(&self) -> &LinkEnd {
        &self.end
    }

    pub fn now_ms(&self) -> f64 {
        self.end.now_ms()
    }

    pub fn is_handshaking(&self) -> bool {
        self.conn.is_handshaking()
    }

    pub fn peer_closed(&self) -> bool {
        self.peer_closed
    }

    /// Sends any pending TLS output as one segment.
    pub fn flush(&mut self) -> Result<(), WireError> {
        let mut buf = Vec::new();
        while self.conn.wants_write() {
            self.conn
                .write_tls(&mut buf)
                .map_err(|e| WireError::Transport(e.to_string()))?;
        }
        if !buf.is_empty() {
            self.end.send(buf)?;
        }
        Ok(())
    }

    fn absorb(&mut self, mut bytes: &[u8]) -> Result<(), WireError> {
        let mut plain = vec![0u8; 64 * 1024];
        while !bytes.is_empty() {
            self.conn
                .read_tls(&mut bytes)
                .map_err(|e| WireError::Transport(e.to_string()))?;
            if let Err(e) = self.conn.process_new_packets() {
                // Let the peer see our alert before reporting.
                let _ = self.flush();
                return Err(map_tls_error(e));
            }
            loop {
                match self.conn.reader().read(&mut plain) {
                    Ok(0) => {
                        self.peer_closed = true;
                        break;
                    }
                    Ok(n) => self.decoder.push(&plain[..n]),
                    Err(e) if e.kind() == ErrorKind::WouldBlock => break,
                    Err(e) => return Err(WireError::Transport(e.to_string())),
                }
            }
        }
        while let Some(frame) = self.decoder.next_frame()? {
            self.incoming.push_back(Incoming::Frame(frame));
        }
        Ok(())
    }

    /// Consumes every segment that has reached this end. Returns whether any did.
    pub fn poll(&mut self) -> Result<bool, WireError> {
        let mut progressed = false;
        while let Some(d) = self.end.recv() {
            progressed = true;
            match d.segment {
                Segment::Bytes(b) => self.absorb(&b)?,
                Segment::Opaque(n) => {
                    if self.conn.is_handshaking() {
                        return Err(WireError::Protocol("bulk data before handshake".into()));
                    }
                    let plain = n - n.div_ceil(TLS_MAX_FRAGMENT + TLS_RECORD_OVERHEAD) * TLS_RECORD_OVERHEAD;
                    self.incoming.push_back(Incoming::Opaque(plain));
                }
            }
        }
        if progressed {
            self.flush()?;
        }
        Ok(progressed)
    }

    /// Returns the next received item without waiting for new arrivals.
    pub fn try_recv(&mut self) -> Result<Option<Incoming>, WireError> {
        if self.incoming.is_empty() {
            self.poll()?;
        }
        Ok(self.incoming.pop_front())
    }

    pub fn send_frame(&mut self, frame: &Frame) -> Result<(), WireError> {
        let bytes = frame.encode()?;
        self.conn
            .writer()
            .write_all(&bytes)
            .map_err(|e| WireError::Transport(e.to_string()))?;
        self.flush()
    }

    /// Sends `len` bytes of bulk application data without materializing them.
    pub fn send_opaque(&mut self, len: u64) -> Result<(), WireError> {
        if self.conn.is_handshaking() {
            return Err(WireError::Protocol("bulk data before handshake".into()));
        }
        self.flush()?;
        self.end.send_opaque(opaque_wire_len(len))?;
        Ok(())
    }

    pub fn peer_key(&self) -> Option<VerifyingKey> {
        let certs = self.conn.peer_certificates()?;
        public_key_from_cert(certs.first()?)
    }

    /// 16 bytes of keying material bound to this handshake.
    pub fn export_session_id(&self) -> Result<[u8; 16], WireError> {
        let mut out = [0u8; 16];
        match &self.conn {
            Connection::Client(c) => c.export_keying_material(&mut out, SESSION_ID_LABEL, None),
            Connection::Server(s) => s.export_keying_material(&mut out, SESSION_ID_LABEL, None),
        }
        .map_err(map_tls_error)?;
        Ok(out)
    }

    pub fn close(&mut self) {
        self.conn.send_close_notify();
        let _ = self.flush();
    }
}
