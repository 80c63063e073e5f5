//! Micropayment domain: tariffs, signed per-burst messages, the alternating
//! hash chain and dual-signed reconciliation.

mod codec;
mod session;

pub use codec::{
    MicroReceipt, PaymentAuthorization, ReconciliationRecord, SettlementMode, AUTHORIZATION_LEN, KIND_AUTHORIZATION,
    KIND_RECEIPT, KIND_RECORD, PREV_TAG_LEN, RECEIPT_LEN, RECORD_LEN,
};
pub use session::{ChainElement, Dispute, PaymentSession, PaymentState, Tariff};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PaymentError {
    #[error("invalid tariff: {0}")]
    Validation(String),
    #[error("payment session state: {0}")]
    State(String),
    #[error("out of sequence: {0}")]
    Sequencing(String),
    #[error("signature check failed: {0}")]
    BadSignature(String),
    #[error("chain mismatch: {0}")]
    ChainMismatch(String),
    #[error("replayed burst {index}; expected burst {expected}")]
    Replay { index: u16, expected: u16 },
    #[error("chain disputed at {0}")]
    Disputed(Dispute),
    #[error("malformed payment message: {0}")]
    Malformed(String),
    #[error("payment rejected: {0}")]
    Rejected(String),
}
