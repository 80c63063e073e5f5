//! Wire encodings for analysis reports and FL parameter blobs.

use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Alert, Anomaly, Severity, SiemError};
use crate::crypto::Digest;

pub const FL_BLOB_LEN: usize = 1 << 20;

#[derive(Clone, PartialEq, Eq)]
pub struct FlParameters {
    pub model_version: u64,
    pub blob: Arc<[u8]>,
}

impl std::fmt::Debug for FlParameters {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FlParameters")
            .field("model_version", &self.model_version)
            .field("blob_len", &self.blob.len())
            .finish()
    }
}

impl FlParameters {
    /// Opaque random parameters of exactly [`FL_BLOB_LEN`] bytes.
    pub fn random(model_version: u64, seed: u64) -> Self {
        let mut blob = vec![0u8; FL_BLOB_LEN];
        ChaCha8Rng::seed_from_u64(seed).fill_bytes(&mut blob);
        Self {
            model_version,
            blob: blob.into(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.blob.len());
        out.extend_from_slice(&self.model_version.to_be_bytes());
        out.extend_from_slice(&self.blob);
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self, SiemError> {
        if buf.len() < 8 {
            return Err(SiemError::Malformed("FL parameters truncated".into()));
        }
        Ok(Self {
            model_version: u64::from_be_bytes(buf[..8].try_into().expect("8 bytes")),
            blob: buf[8..].to_vec().into(),
        })
    }
}

/// Analysis summary forwarded to the cloud in place of the raw batch.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisReport {
    pub vehicle_id: String,
    pub batch_digest: Digest,
    pub record_count: u64,
    pub encoded_size: u64,
    pub alerts: Vec<Alert>,
    pub anomalies: Vec<Anomaly>,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    let b = &s.as_bytes()[..s.len().min(u16::MAX as usize)];
    out.extend_from_slice(&(b.len() as u16).to_be_bytes());
    out.extend_from_slice(b);
}

struct Cursor<'a>(&'a [u8]);

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SiemError> {
        if self.0.len() < n {
            return Err(SiemError::Malformed("report truncated".into()));
        }
        let (h, t) = self.0.split_at(n);
        self.0 = t;
        Ok(h)
    }
    fn u16(&mut self) -> Result<u16, SiemError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().expect("2")))
    }
    fn u64(&mut self) -> Result<u64, SiemError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8")))
    }
    fn f64(&mut self) -> Result<f64, SiemError> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn str(&mut self) -> Result<String, SiemError> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| SiemError::Malformed("invalid utf-8".into()))
    }
}

impl AnalysisReport {
    pub fn has_critical(&self) -> bool {
        self.alerts.iter().any(|a| a.severity == Severity::Critical)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        put_str(&mut out, &self.vehicle_id);
        out.extend_from_slice(self.batch_digest.as_bytes());
        out.extend_from_slice(&self.record_count.to_be_bytes());
        out.extend_from_slice(&self.encoded_size.to_be_bytes());
        out.extend_from_slice(&(self.alerts.len().min(u16::MAX as usize) as u16).to_be_bytes());
        for a in self.alerts.iter().take(u16::MAX as usize) {
            put_str(&mut out, &a.rule_id);
            out.extend_from_slice(&a.window.0.to_be_bytes());
            out.extend_from_slice(&a.window.1.to_be_bytes());
            out.extend_from_slice(&a.observed_rate_hz.to_bits().to_be_bytes());
            out.push(a.severity.code());
        }
        out.extend_from_slice(&(self.anomalies.len().min(u16::MAX as usize) as u16).to_be_bytes());
        for a in self.anomalies.iter().take(u16::MAX as usize) {
            out.extend_from_slice(&a.can_id.to_be_bytes());
            out.extend_from_slice(&a.window.0.to_be_bytes());
            out.extend_from_slice(&a.window.1.to_be_bytes());
            out.extend_from_slice(&a.mean_gap_us.to_bits().to_be_bytes());
            out.extend_from_slice(&a.z_score.to_bits().to_be_bytes());
        }
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self, SiemError> {
        let mut c = Cursor(buf);
        let vehicle_id = c.str()?;
        let batch_digest = Digest::from_slice(c.take(32)?).expect("32 bytes");
        let record_count = c.u64()?;
        let encoded_size = c.u64()?;
        let n = c.u16()?;
        let mut alerts = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let rule_id = c.str()?;
            let window = (c.u64()?, c.u64()?);
            let observed_rate_hz = c.f64()?;
            let severity = Severity::from_code(c.take(1)?[0]).ok_or_else(|| SiemError::Malformed("severity".into()))?;
            alerts.push(Alert {
                rule_id,
                vehicle_id: vehicle_id.clone(),
                window,
                observed_rate_hz,
                severity,
            });
        }
        let n = c.u16()?;
        let mut anomalies = Vec::with_capacity(n as usize);
        for _ in 0..n {
            anomalies.push(Anomaly {
                can_id: c.u16()?,
                window: (c.u64()?, c.u64()?),
                mean_gap_us: c.f64()?,
                z_score: c.f64()?,
            });
        }
        if !c.0.is_empty() {
            return Err(SiemError::Malformed("trailing report bytes".into()));
        }
        Ok(Self {
            vehicle_id,
            batch_digest,
            record_count,
            encoded_size,
            alerts,
            anomalies,
        })
    }
}
