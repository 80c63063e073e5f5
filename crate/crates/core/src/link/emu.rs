//! Virtual-time link emulator.
//!
//! A link has two ends with their own local clocks. Sending never blocks the
//! sender; each segment is scheduled for arrival after queueing behind earlier
//! segments in the same direction (serialization at the effective rate) plus
//! the sampled one-way delay. Receiving advances the receiver's clock to the
//! arrival time. One delay sample is drawn per exchange (a run of segments in
//! one direction followed by the reply run in the other), so a request and its
//! response see the same propagation delay.

use std::collections::VecDeque;
use std::fmt;
use std::sync::{Arc, Mutex, MutexGuard};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracle::effective_rate_mbps;
use super::{LinkError, LinkProfile, TransportKind, TransportModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Client,
    Server,
}

impl Side {
    pub fn peer(self) -> Side {
        match self {
            Side::Client => Side::Server,
            Side::Server => Side::Client,
        }
    }

    fn idx(self) -> usize {
        match self {
            Side::Client => 0,
            Side::Server => 1,
        }
    }
}

/// Unit of delivery on a link.
#[derive(Clone, PartialEq, Eq)]
pub enum Segment {
    Bytes(Vec<u8>),
    /// Bulk traffic that occupies the link but whose content is not modeled.
    Opaque(u64),
}

impl Segment {
    pub fn wire_len(&self) -> u64 {
        match self {
            Segment::Bytes(b) => b.len() as u64,
            Segment::Opaque(n) => *n,
        }
    }
}

impl fmt::Debug for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Segment::Bytes(b) => write!(f, "Bytes({})", b.len()),
            Segment::Opaque(n) => write!(f, "Opaque({n})"),
        }
    }
}

/// A segment handed to the receiving end, stamped with its arrival time.
#[derive(Debug, Clone)]
pub struct Delivery {
    pub segment: Segment,
    pub sent_ms: f64,
    pub arrival_ms: f64,
}

/// Copy of one segment as observed on the wire.
#[derive(Debug, Clone)]
pub struct TapRecord {
    pub from: Side,
    pub sent_ms: f64,
    pub arrival_ms: f64,
    pub segment: Segment,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TransferResult {
    pub duration_ms: f64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub retransmissions: u64,
}

type Tamper = Box<dyn FnMut(Side, &mut Vec<u8>) + Send>;

#[derive(Debug, Clone, Copy)]
enum Phase {
    Idle,
    Request(Side),
    Response(Side),
}

struct InFlight {
    sent_ms: f64,
    arrival_ms: f64,
    segment: Segment,
}

struct LinkState {
    profile: LinkProfile,
    model: TransportModel,
    rate_bps: f64,
    rng: ChaCha8Rng,
    clock: [f64; 2],
    busy_until: [f64; 2],
    last_arrival: [f64; 2],
    // indexed by destination side
    queues: [VecDeque<InFlight>; 2],
    phase: Phase,
    jitter: f64,
    // indexed by sending side
    bytes_sent: [u64; 2],
    segments_sent: [u64; 2],
    lost_packets: f64,
    closed: bool,
    close_at_ms: Option<f64>,
    tap: Option<Vec<TapRecord>>,
    tamper: Option<Tamper>,
}

impl LinkState {
    fn next_delay_ms(&mut self, from: Side) -> f64 {
        let fresh = match self.phase {
            Phase::Idle => true,
            Phase::Request(d) if d == from => false,
            Phase::Request(_) => {
                self.phase = Phase::Response(from);
                false
            }
            Phase::Response(d) => d != from,
        };
        if fresh {
            let j = self.profile.jitter_fraction;
            self.jitter = if j > 0.0 { self.rng.gen_range(-j..=j) } else { 0.0 };
            self.phase = Phase::Request(from);
        }
        self.profile.one_way_latency_ms * (1.0 + self.jitter)
    }

    fn is_closed_at(&self, t: f64) -> bool {
        self.closed || self.close_at_ms.is_some_and(|c| t >= c)
    }

    fn send(&mut self, from: Side, mut segment: Segment) -> Result<(), LinkError> {
        let s = from.idx();
        let now = self.clock[s];
        if self.is_closed_at(now) {
            self.closed = true;
            return Err(LinkError::Closed);
        }
        if let (Some(tamper), Segment::Bytes(bytes)) = (self.tamper.as_mut(), &mut segment) {
            tamper(from, bytes);
        }
        let len = segment.wire_len();
        let start = now.max(self.busy_until[s]);
        let ser_ms = len as f64 * 8.0 / self.rate_bps * 1000.0;
        self.busy_until[s] = start + ser_ms;
        let delay = self.next_delay_ms(from);
        let arrival = (start + ser_ms + delay).max(self.last_arrival[s]);
        self.last_arrival[s] = arrival;
        self.bytes_sent[s] += len;
        self.segments_sent[s] += 1;
        if self.model.kind == TransportKind::LossThrottled {
            let packets = (len as f64 / f64::from(self.model.mss_bytes)).ceil();
            self.lost_packets += packets * self.profile.plr_percent / 100.0;
        }
        if let Some(tap) = self.tap.as_mut() {
            tap.push(TapRecord {
                from,
                sent_ms: now,
                arrival_ms: arrival,
                segment: segment.clone(),
            });
        }
        self.queues[from.peer().idx()].push_back(InFlight {
            sent_ms: now,
            arrival_ms: arrival,
            segment,
        });
        Ok(())
    }

    fn recv(&mut self, side: Side) -> Option<Delivery> {
        let f = self.queues[side.idx()].pop_front()?;
        let c = &mut self.clock[side.idx()];
        *c = c.max(f.arrival_ms);
        Some(Delivery {
            segment: f.segment,
            sent_ms: f.sent_ms,
            arrival_ms: f.arrival_ms,
        })
    }
}

/// Handle to a seeded, virtual-time emulated link. Clones share the link.
#[derive(Clone)]
pub struct EmulatedLink {
    state: Arc<Mutex<LinkState>>,
}

impl fmt::Debug for EmulatedLink {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let st = self.lock();
        f.debug_struct("EmulatedLink")
            .field("profile", &st.profile.name)
            .field("model", &st.model.kind)
            .field("clock", &st.clock)
            .finish()
    }
}

/// Opens a link; identical profile, model, seed and traffic yield identical timings.
pub fn open_link(profile: LinkProfile, model: TransportModel, seed: u64) -> EmulatedLink {
    EmulatedLink::open(profile, model, seed)
}

impl EmulatedLink {
    pub fn open(profile: LinkProfile, model: TransportModel, seed: u64) -> Self {
        let rate_bps = effective_rate_mbps(&profile, &model) * 1e6;
        let state = LinkState {
            profile,
            model,
            rate_bps,
            rng: ChaCha8Rng::seed_from_u64(seed),
            clock: [0.0; 2],
            busy_until: [0.0; 2],
            last_arrival: [0.0; 2],
            queues: [VecDeque::new(), VecDeque::new()],
            phase: Phase::Idle,
            jitter: 0.0,
            bytes_sent: [0; 2],
            segments_sent: [0; 2],
            lost_packets: 0.0,
            closed: false,
            close_at_ms: None,
            tap: None,
            tamper: None,
        };
        Self {
            state: Arc::new(Mutex::new(state)),
        }
    }

    fn lock(&self) -> MutexGuard<'_, LinkState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn end(&self, side: Side) -> LinkEnd {
        LinkEnd {
            link: self.clone(),
            side,
        }
    }

    pub fn client(&self) -> LinkEnd {
        self.end(Side::Client)
    }

    pub fn server(&self) -> LinkEnd {
        self.end(Side::Server)
    }

    pub fn profile(&self) -> LinkProfile {
        self.lock().profile.clone()
    }

    pub fn model(&self) -> TransportModel {
        self.lock().model
    }

    pub fn effective_rate_mbps(&self) -> f64 {
        self.lock().rate_bps / 1e6
    }

    pub fn now_ms(&self, side: Side) -> f64 {
        self.lock().clock[side.idx()]
    }

    /// Wire bytes sent so far from `side`.
    pub fn bytes_sent(&self, side: Side) -> u64 {
        self.lock().bytes_sent[side.idx()]
    }

    pub fn segments_sent(&self, side: Side) -> u64 {
        self.lock().segments_sent[side.idx()]
    }

    /// Expected number of retransmitted packets under the throttled model.
    pub fn retransmissions(&self) -> u64 {
        self.lock().lost_packets.floor() as u64
    }

    pub fn close(&self) {
        self.lock().closed = true;
    }

    /// Closes the link for any send issued at or after virtual time `t_ms`.
    pub fn close_at(&self, t_ms: f64) {
        self.lock().close_at_ms = Some(t_ms);
    }

    pub fn is_closed(&self) -> bool {
        self.lock().closed
    }

    /// Starts recording every segment sent on the link.
    pub fn enable_tap(&self) {
        let mut st = self.lock();
        if st.tap.is_none() {
            st.tap = Some(Vec::new());
        }
    }

    pub fn tap(&self) -> Vec<TapRecord> {
        self.lock().tap.clone().unwrap_or_default()
    }

    /// Installs a hook that may rewrite byte segments as they enter the link.
    pub fn set_tamper<F>(&self, f: F)
    where
        F: FnMut(Side, &mut Vec<u8>) + Send + 'static,
    {
        self.lock().tamper = Some(Box::new(f));
    }

    pub fn clear_tamper(&self) {
        self.lock().tamper = None;
    }

    pub fn pending(&self, to: Side) -> usize {
        self.lock().queues[to.idx()].len()
    }

    /// One client-initiated exchange of bulk payloads.
    pub fn transfer(&self, request_bytes: u64, response_bytes: u64) -> Result<TransferResult, LinkError> {
        if request_bytes == 0 {
            return Err(LinkError::EmptyRequest);
        }
        let mut st = self.lock();
        let start = st.clock[Side::Client.idx()];
        let lost_before = st.lost_packets;
        st.send(Side::Client, Segment::Opaque(request_bytes))?;
        st.recv(Side::Server).ok_or(LinkError::Closed)?;
        st.send(Side::Server, Segment::Opaque(response_bytes))?;
        st.recv(Side::Client).ok_or(LinkError::Closed)?;
        let end = st.clock[Side::Client.idx()];
        Ok(TransferResult {
            duration_ms: end - start,
            bytes_sent: request_bytes,
            bytes_received: response_bytes,
            retransmissions: (st.lost_packets.floor() - lost_before.floor()) as u64,
        })
    }
}

/// One end of an emulated link.
#[derive(Clone, Debug)]
pub struct LinkEnd {
    link: EmulatedLink,
    side: Side,
}

impl LinkEnd {
    pub fn side(&self) -> Side {
        self.side
    }

    pub fn link(&self) -> &EmulatedLink {
        &self.link
    }

    pub fn now_ms(&self) -> f64 {
        self.link.now_ms(self.side)
    }

    pub fn send(&self, bytes: Vec<u8>) -> Result<(), LinkError> {
        self.link.lock().send(self.side, Segment::Bytes(bytes))
    }

    pub fn send_opaque(&self, len: u64) -> Result<(), LinkError> {
        self.link.lock().send(self.side, Segment::Opaque(len))
    }

    /// Takes the next segment addressed to this end, if any is in flight.
    pub fn recv(&self) -> Option<Delivery> {
        self.link.lock().recv(self.side)
    }

    /// Arrival time of the next pending segment without consuming it.
    pub fn peek_arrival(&self) -> Option<f64> {
        self.link.lock().queues[self.side.idx()]
            .front()
            .map(|f| f.arrival_ms)
    }

    pub fn has_pending(&self) -> bool {
        self.link.pending(self.side) > 0
    }

    /// Advances this end's clock until everything it has sent is on the wire,
    /// like a blocking socket write.
    pub fn wait_sent(&self) {
        let mut st = self.link.lock();
        let i = self.side.idx();
        st.clock[i] = st.clock[i].max(st.busy_until[i]);
    }

    /// Advances this end's clock, e.g. to model local processing time.
    pub fn advance_to(&self, t_ms: f64) {
        let mut st = self.link.lock();
        let c = &mut st.clock[self.side.idx()];
        *c = c.max(t_ms);
    }
}
