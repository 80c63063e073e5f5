use serde::{Deserialize, Serialize};

use crate::link::TransportKind;

/// One timed request/response sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub scenario: String,
    pub profile: String,
    pub transport: TransportKind,
    #[serde(rename = "sample")]
    pub sample_index: u32,
    pub request_bytes: u64,
    pub response_bytes: u64,
    /// Discovery, handshake and negotiation cost paid before this sample.
    pub handshake_ms: f64,
    pub rtt_ms: f64,
}
