//! Network link emulation for the PLC and cellular configurations.

mod emu;
pub mod oracle;
mod profile;

pub use emu::{open_link, Delivery, EmulatedLink, LinkEnd, Segment, Side, TapRecord, TransferResult};
pub use oracle::{effective_rate_mbps, model_transfer_time_ms, serialization_ms};
pub use profile::{
    load_profiles, resolve_profile, LinkProfile, TransportKind, TransportModel, CELLULAR_JITTER,
    DEFAULT_MSS_BYTES, PLC_JITTER,
};

use thiserror::Error;

use crate::measure::Measurement;

pub const DEFAULT_SAMPLES: u32 = 300;

#[derive(Debug, Error)]
pub enum LinkError {
    #[error("invalid link profile `{name}`: {reason}")]
    InvalidProfile { name: String, reason: String },
    #[error("link configuration: {0}")]
    Config(String),
    #[error("request payload must be at least one byte")]
    EmptyRequest,
    #[error("link closed")]
    Closed,
    #[error("benchmark aborted after {} samples: {cause}", completed.len())]
    BenchmarkAborted {
        completed: Vec<Measurement>,
        cause: Box<LinkError>,
    },
}

/// Runs `samples` sequential raw exchanges on `link` and records each duration.
pub fn rtt_benchmark(
    link: &EmulatedLink,
    request_bytes: u64,
    response_bytes: u64,
    samples: u32,
) -> Result<Vec<Measurement>, LinkError> {
    if samples == 0 {
        return Err(LinkError::Config("samples must be >= 1".into()));
    }
    let profile = link.profile();
    let transport = link.model().kind;
    let mut out = Vec::with_capacity(samples as usize);
    for i in 0..samples {
        match link.transfer(request_bytes, response_bytes) {
            Ok(r) => out.push(Measurement {
                scenario: "rtt".into(),
                profile: profile.name.clone(),
                transport,
                sample_index: i,
                request_bytes,
                response_bytes,
                handshake_ms: 0.0,
                rtt_ms: r.duration_ms,
            }),
            Err(cause) => {
                return Err(LinkError::BenchmarkAborted {
                    completed: out,
                    cause: Box::new(cause),
                })
            }
        }
    }
    Ok(out)
}
