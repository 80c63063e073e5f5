//! CAN log records and the seeded synthetic traffic generator.

use std::collections::BTreeMap;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SiemError;
use crate::crypto::Digest;

pub const MAX_CAN_ID: u16 = 0x7FF;
pub const RECORD_HEADER_LEN: usize = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CanRecord {
    pub timestamp_us: u64,
    pub can_id: u16,
    dlc: u8,
    payload: [u8; 8],
}

impl CanRecord {
    pub fn new(timestamp_us: u64, can_id: u16, data: &[u8]) -> Result<Self, SiemError> {
        if can_id > MAX_CAN_ID {
            return Err(SiemError::Malformed(format!("CAN id 0x{can_id:x} exceeds 11 bits")));
        }
        if data.len() > 8 {
            return Err(SiemError::Malformed(format!("dlc {} exceeds 8", data.len())));
        }
        let mut payload = [0u8; 8];
        payload[..data.len()].copy_from_slice(data);
        Ok(Self {
            timestamp_us,
            can_id,
            dlc: data.len() as u8,
            payload,
        })
    }

    pub fn dlc(&self) -> u8 {
        self.dlc
    }

    pub fn data(&self) -> &[u8] {
        &self.payload[..self.dlc as usize]
    }

    pub fn encoded_len(&self) -> usize {
        RECORD_HEADER_LEN + self.dlc as usize
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.timestamp_us.to_be_bytes());
        out.extend_from_slice(&self.can_id.to_be_bytes());
        out.push(self.dlc);
        out.extend_from_slice(self.data());
    }
}

/// A window of CAN traffic from one vehicle, in timestamp order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogBatch {
    pub vehicle_id: String,
    pub window_seconds: u32,
    pub records: Vec<CanRecord>,
}

impl LogBatch {
    pub fn new(vehicle_id: &str, window_seconds: u32, records: Vec<CanRecord>) -> Result<Self, SiemError> {
        if records.windows(2).any(|w| w[1].timestamp_us < w[0].timestamp_us) {
            return Err(SiemError::Malformed("records are not time-ordered".into()));
        }
        Ok(Self {
            vehicle_id: vehicle_id.to_string(),
            window_seconds,
            records,
        })
    }

    pub fn empty(vehicle_id: &str) -> Self {
        Self {
            vehicle_id: vehicle_id.to_string(),
            window_seconds: 0,
            records: Vec::new(),
        }
    }

    pub fn encoded_size_bytes(&self) -> u64 {
        self.records.iter().map(|r| r.encoded_len() as u64).sum()
    }

    /// Records concatenated in order, big-endian.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_size_bytes() as usize);
        for r in &self.records {
            r.encode_into(&mut out);
        }
        out
    }

    pub fn decode(vehicle_id: &str, window_seconds: u32, mut buf: &[u8]) -> Result<Self, SiemError> {
        let mut records = Vec::with_capacity(buf.len() / 19);
        while !buf.is_empty() {
            if buf.len() < RECORD_HEADER_LEN {
                return Err(SiemError::Malformed("truncated record header".into()));
            }
            let ts = u64::from_be_bytes(buf[..8].try_into().expect("8 bytes"));
            let id = u16::from_be_bytes([buf[8], buf[9]]);
            let dlc = buf[10] as usize;
            if buf.len() < RECORD_HEADER_LEN + dlc {
                return Err(SiemError::Malformed("truncated record data".into()));
            }
            records.push(CanRecord::new(ts, id, &buf[RECORD_HEADER_LEN..RECORD_HEADER_LEN + dlc])?);
            buf = &buf[RECORD_HEADER_LEN + dlc..];
        }
        Self::new(vehicle_id, window_seconds, records)
    }

    pub fn digest(&self) -> Digest {
        Digest::of(&self.encode())
    }

    /// Records per second of `can_id` over the whole window.
    pub fn rate_hz(&self, can_id: u16) -> f64 {
        if self.window_seconds == 0 {
            return 0.0;
        }
        self.records.iter().filter(|r| r.can_id == can_id).count() as f64 / f64::from(self.window_seconds)
    }
}

/// Periodic traffic of one CAN id.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdProfile {
    pub can_id: u16,
    pub base_rate_hz: f64,
    pub dlc: u8,
}

/// Replaces an id's traffic with `rate_hz` during `[start_s, end_s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Flood {
    pub can_id: u16,
    pub rate_hz: f64,
    pub start_s: f64,
    pub end_s: f64,
}

/// Nominal traffic mix, about 85 MB per ten minutes. Rates are scaled
/// uniformly to meet a size target.
pub fn default_profile() -> Vec<IdProfile> {
    [
        (0x0A0, 1000.0, 8),
        (0x0B0, 1000.0, 8),
        (0x0C0, 800.0, 8),
        (0x100, 500.0, 8),
        (0x110, 500.0, 6),
        (0x120, 400.0, 8),
        (0x130, 50.0, 8),
        (0x140, 250.0, 8),
        (0x1A0, 200.0, 4),
        (0x200, 1000.0, 8),
        (0x210, 1000.0, 8),
        (0x2F0, 100.0, 2),
        (0x300, 500.0, 8),
        (0x3E0, 100.0, 8),
        (0x400, 200.0, 8),
        (0x500, 10.0, 8),
        (0x7DF, 5.0, 8),
    ]
    .into_iter()
    .map(|(can_id, base_rate_hz, dlc)| IdProfile {
        can_id,
        base_rate_hz,
        dlc,
    })
    .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticLogConfig {
    pub seed: u64,
    pub vehicle_id: String,
    pub window_seconds: u32,
    pub target_bytes: u64,
    pub profile: Vec<IdProfile>,
    pub floods: Vec<Flood>,
    /// Timing jitter as a fraction of each id's period.
    pub jitter: f64,
}

impl SyntheticLogConfig {
    pub fn new(seed: u64, window_seconds: u32, target_bytes: u64) -> Self {
        Self {
            seed,
            vehicle_id: "vehicle-1".into(),
            window_seconds,
            target_bytes,
            profile: default_profile(),
            floods: Vec::new(),
            jitter: 0.1,
        }
    }

    pub fn with_flood(mut self, flood: Flood) -> Self {
        self.floods.push(flood);
        self
    }

    /// Rate multiplier applied to the profile for this target.
    pub fn rate_scale(&self) -> f64 {
        let base: f64 = self
            .profile
            .iter()
            .map(|p| p.base_rate_hz * (RECORD_HEADER_LEN as f64 + f64::from(p.dlc)))
            .sum();
        let flood_bytes = self.flood_bytes();
        let w = f64::from(self.window_seconds.max(1));
        ((self.target_bytes as f64 - flood_bytes).max(0.0) / w) / base.max(f64::MIN_POSITIVE)
    }

    fn flood_bytes(&self) -> f64 {
        self.floods
            .iter()
            .map(|f| {
                let dlc = self.dlc_of(f.can_id);
                f.rate_hz * self.flood_span(f) * (RECORD_HEADER_LEN as f64 + f64::from(dlc))
            })
            .sum()
    }

    fn flood_span(&self, f: &Flood) -> f64 {
        let end = f.end_s.min(f64::from(self.window_seconds));
        (end - f.start_s.max(0.0)).max(0.0)
    }

    fn dlc_of(&self, can_id: u16) -> u8 {
        self.profile.iter().find(|p| p.can_id == can_id).map_or(8, |p| p.dlc)
    }
}

/// Emits `count` periodic timestamps over `[start_us, end_us)` with bounded jitter.
fn periodic(rng: &mut ChaCha8Rng, start_us: f64, end_us: f64, count: u64, jitter: f64, out: &mut Vec<u64>) {
    if count == 0 || end_us <= start_us {
        return;
    }
    let period = (end_us - start_us) / count as f64;
    let phase = rng.gen_range(0.0..period);
    for k in 0..count {
        let nominal = start_us + phase + k as f64 * period;
        let j = if jitter > 0.0 { rng.gen_range(-jitter..jitter) * period } else { 0.0 };
        out.push((nominal + j).clamp(start_us, end_us - 1.0) as u64);
    }
}

/// Generates a deterministic batch whose encoded size is within 1% of the
/// target (for targets of at least 1 KB).
pub fn generate_synthetic_logs(cfg: &SyntheticLogConfig) -> Result<LogBatch, SiemError> {
    if cfg.target_bytes < 1024 {
        return Err(SiemError::Malformed("target must be at least 1 KB".into()));
    }
    if cfg.window_seconds == 0 || cfg.profile.is_empty() {
        return Err(SiemError::Malformed("window and profile must be non-empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let scale = cfg.rate_scale();
    let w_us = f64::from(cfg.window_seconds) * 1e6;

    // Record counts per id, then a correction on the busiest id so the total
    // lands on the target.
    let mut counts: BTreeMap<u16, u64> = BTreeMap::new();
    for p in &cfg.profile {
        counts.insert(p.can_id, (p.base_rate_hz * scale * f64::from(cfg.window_seconds)).round() as u64);
    }
    let flood_counts: Vec<u64> = cfg
        .floods
        .iter()
        .map(|f| (f.rate_hz * cfg.flood_span(f)).round() as u64)
        .collect();
    let size_of = |id: u16, n: u64| n * (RECORD_HEADER_LEN as u64 + u64::from(cfg.dlc_of(id)));
    let total: u64 = counts.iter().map(|(&id, &n)| size_of(id, n)).sum::<u64>()
        + cfg.floods.iter().zip(&flood_counts).map(|(f, &n)| size_of(f.can_id, n)).sum::<u64>();
    let busiest = cfg
        .profile
        .iter()
        .max_by(|a, b| a.base_rate_hz.total_cmp(&b.base_rate_hz))
        .expect("non-empty")
        .can_id;
    let unit = (RECORD_HEADER_LEN as u64 + u64::from(cfg.dlc_of(busiest))) as f64;
    let delta = ((cfg.target_bytes as f64 - total as f64) / unit).round() as i64;
    let c = counts.get_mut(&busiest).expect("present");
    *c = (*c as i64 + delta).max(0) as u64;

    let mut records = Vec::new();
    let mut stamps = Vec::new();
    for p in &cfg.profile {
        stamps.clear();
        let floods: Vec<&Flood> = cfg.floods.iter().filter(|f| f.can_id == p.can_id).collect();
        let n = counts[&p.can_id];
        if floods.is_empty() {
            periodic(&mut rng, 0.0, w_us, n, cfg.jitter, &mut stamps);
        } else {
            // Base traffic is suppressed while a flood is active.
            let mut candidate = Vec::new();
            periodic(&mut rng, 0.0, w_us, n, cfg.jitter, &mut candidate);
            stamps.extend(candidate.into_iter().filter(|&t| {
                let s = t as f64 / 1e6;
                !floods.iter().any(|f| s >= f.start_s && s < f.end_s)
            }));
        }
        for &t in &stamps {
            let mut data = [0u8; 8];
            rng.fill_bytes(&mut data);
            records.push(CanRecord::new(t, p.can_id, &data[..p.dlc as usize])?);
        }
    }
    for (f, &n) in cfg.floods.iter().zip(&flood_counts) {
        stamps.clear();
        let start = f.start_s.max(0.0) * 1e6;
        let end = f.end_s.min(f64::from(cfg.window_seconds)) * 1e6;
        periodic(&mut rng, start, end, n, cfg.jitter, &mut stamps);
        let dlc = cfg.dlc_of(f.can_id) as usize;
        for &t in &stamps {
            let mut data = [0u8; 8];
            rng.fill_bytes(&mut data);
            records.push(CanRecord::new(t, f.can_id, &data[..dlc])?);
        }
    }
    records.sort_by_key(|r| (r.timestamp_us, r.can_id));
    LogBatch::new(&cfg.vehicle_id, cfg.window_seconds, records)
}
