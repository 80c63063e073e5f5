//! Log collection and analysis domain: CAN records, the synthetic traffic
//! generator, rule and anomaly analysis, FL parameters and cloud reports.

mod anomaly;
mod records;
mod report;
mod rules;

pub use anomaly::{Anomaly, GapStats, InterArrivalDetector};
pub use records::{
    default_profile, generate_synthetic_logs, CanRecord, Flood, IdProfile, LogBatch, SyntheticLogConfig,
    MAX_CAN_ID, RECORD_HEADER_LEN,
};
pub use report::{AnalysisReport, FlParameters, FL_BLOB_LEN};
pub use rules::{analyze_logs, default_rules, load_rules, Alert, CorrelationRule, Severity};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SiemError {
    #[error("malformed input: {0}")]
    Malformed(String),
    #[error("upload interrupted; resume from byte {resume_offset}")]
    Interrupted { resume_offset: u64 },
    #[error("FL parameters unavailable: {0}")]
    Unavailable(String),
    #[error("cloud forwarding failed: {0}")]
    Forward(String),
}
