//! Fixed-layout payment messages.
//!
//! ```text
//! MicroReceipt (97):         kind=0x51 | session_id[16] | burst_index:u16 | energy_wh:u32
//!                            | amount:u32 | prev_auth_tag[6] | charger_sig[64]
//! PaymentAuthorization (119): kind=0x52 | session_id[16] | burst_index:u16 | amount:u32
//!                            | receipt_hash[32] | vehicle_sig[64]
//! ReconciliationRecord (268): kind=0x53 | session_id[16] | mode:u8 | burst_count:u16
//!                            | price_per_wh:u32 | burst_wh:u32 | total_energy_wh:u64
//!                            | total_amount:u64 | chain_head[32] | charger_pk[32]
//!                            | vehicle_pk[32] | charger_sig[64] | vehicle_sig[64]
//! ```
//!
//! A receipt carries only the first six bytes of the previous authorization's
//! hash, but its signature covers all 32. The verifier supplies the full hash
//! from its own copy of the chain.

use ed25519_dalek::VerifyingKey;

use super::PaymentError;
use crate::crypto::{verify, Digest, Identity, PUBLIC_KEY_LEN, SIGNATURE_LEN};

pub const RECEIPT_LEN: usize = 97;
pub const AUTHORIZATION_LEN: usize = 119;
pub const RECORD_LEN: usize = 268;
pub const PREV_TAG_LEN: usize = 6;

pub const KIND_RECEIPT: u8 = 0x51;
pub const KIND_AUTHORIZATION: u8 = 0x52;
pub const KIND_RECORD: u8 = 0x53;

const RECEIPT_BODY: usize = RECEIPT_LEN - SIGNATURE_LEN - PREV_TAG_LEN;
const AUTH_BODY: usize = AUTHORIZATION_LEN - SIGNATURE_LEN;
const RECORD_BODY: usize = RECORD_LEN - 2 * SIGNATURE_LEN;

fn be_u16(b: &[u8]) -> u16 {
    u16::from_be_bytes(b.try_into().expect("2 bytes"))
}

fn be_u32(b: &[u8]) -> u32 {
    u32::from_be_bytes(b.try_into().expect("4 bytes"))
}

fn be_u64(b: &[u8]) -> u64 {
    u64::from_be_bytes(b.try_into().expect("8 bytes"))
}

fn check_frame(buf: &[u8], len: usize, kind: u8, what: &str) -> Result<(), PaymentError> {
    if buf.len() != len {
        return Err(PaymentError::Malformed(format!("{what} is {} bytes, expected {len}", buf.len())));
    }
    if buf[0] != kind {
        return Err(PaymentError::Malformed(format!("{what} has kind 0x{:02x}", buf[0])));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MicroReceipt {
    pub session_id: [u8; 16],
    pub burst_index: u16,
    pub energy_wh: u32,
    pub amount: u32,
    pub prev_auth_hash: Digest,
    pub charger_signature: [u8; SIGNATURE_LEN],
}

impl MicroReceipt {
    fn body(&self) -> [u8; RECEIPT_BODY] {
        let mut b = [0u8; RECEIPT_BODY];
        b[0] = KIND_RECEIPT;
        b[1..17].copy_from_slice(&self.session_id);
        b[17..19].copy_from_slice(&self.burst_index.to_be_bytes());
        b[19..23].copy_from_slice(&self.energy_wh.to_be_bytes());
        b[23..27].copy_from_slice(&self.amount.to_be_bytes());
        b
    }

    /// Bytes covered by the charger's signature.
    pub fn signed_bytes(&self) -> Vec<u8> {
        let mut m = self.body().to_vec();
        m.extend_from_slice(self.prev_auth_hash.as_bytes());
        m
    }

    pub fn sign(mut self, charger: &Identity) -> Self {
        self.charger_signature = charger.sign(&self.signed_bytes()).to_bytes();
        self
    }

    pub fn verify(&self, charger_key: &VerifyingKey) -> bool {
        verify(charger_key, &self.signed_bytes(), &self.charger_signature)
    }

    pub fn encode(&self) -> [u8; RECEIPT_LEN] {
        let mut out = [0u8; RECEIPT_LEN];
        out[..RECEIPT_BODY].copy_from_slice(&self.body());
        out[RECEIPT_BODY..RECEIPT_BODY + PREV_TAG_LEN].copy_from_slice(&self.prev_auth_hash.as_bytes()[..PREV_TAG_LEN]);
        out[RECEIPT_BODY + PREV_TAG_LEN..].copy_from_slice(&self.charger_signature);
        out
    }

    /// Decodes a receipt whose chain predecessor hashes to `prev_auth_hash`.
    pub fn decode(buf: &[u8], prev_auth_hash: &Digest) -> Result<Self, PaymentError> {
        check_frame(buf, RECEIPT_LEN, KIND_RECEIPT, "micro-receipt")?;
        if buf[RECEIPT_BODY..RECEIPT_BODY + PREV_TAG_LEN] != prev_auth_hash.as_bytes()[..PREV_TAG_LEN] {
            return Err(PaymentError::ChainMismatch("receipt does not follow the previous authorization".into()));
        }
        Ok(Self {
            session_id: buf[1..17].try_into().expect("16 bytes"),
            burst_index: be_u16(&buf[17..19]),
            energy_wh: be_u32(&buf[19..23]),
            amount: be_u32(&buf[23..27]),
            prev_auth_hash: *prev_auth_hash,
            charger_signature: buf[RECEIPT_BODY + PREV_TAG_LEN..].try_into().expect("64 bytes"),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaymentAuthorization {
    pub session_id: [u8; 16],
    pub burst_index: u16,
    pub amount: u32,
    pub receipt_hash: Digest,
    pub vehicle_signature: [u8; SIGNATURE_LEN],
}

impl PaymentAuthorization {
    pub fn signed_bytes(&self) -> [u8; AUTH_BODY] {
        let mut b = [0u8; AUTH_BODY];
        b[0] = KIND_AUTHORIZATION;
        b[1..17].copy_from_slice(&self.session_id);
        b[17..19].copy_from_slice(&self.burst_index.to_be_bytes());
        b[19..23].copy_from_slice(&self.amount.to_be_bytes());
        b[23..55].copy_from_slice(self.receipt_hash.as_bytes());
        b
    }

    pub fn sign(mut self, vehicle: &Identity) -> Self {
        self.vehicle_signature = vehicle.sign(&self.signed_bytes()).to_bytes();
        self
    }

    pub fn verify(&self, vehicle_key: &VerifyingKey) -> bool {
        verify(vehicle_key, &self.signed_bytes(), &self.vehicle_signature)
    }

    pub fn encode(&self) -> [u8; AUTHORIZATION_LEN] {
        let mut out = [0u8; AUTHORIZATION_LEN];
        out[..AUTH_BODY].copy_from_slice(&self.signed_bytes());
        out[AUTH_BODY..].copy_from_slice(&self.vehicle_signature);
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self, PaymentError> {
        check_frame(buf, AUTHORIZATION_LEN, KIND_AUTHORIZATION, "authorization")?;
        Ok(Self {
            session_id: buf[1..17].try_into().expect("16 bytes"),
            burst_index: be_u16(&buf[17..19]),
            amount: be_u32(&buf[19..23]),
            receipt_hash: Digest::from_slice(&buf[23..55]).expect("32 bytes"),
            vehicle_signature: buf[AUTH_BODY..].try_into().expect("64 bytes"),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SettlementMode {
    OneShot = 0,
    BurstChain = 1,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReconciliationRecord {
    pub session_id: [u8; 16],
    pub mode: SettlementMode,
    pub burst_count: u16,
    pub price_per_wh: u32,
    pub burst_wh: u32,
    pub total_energy_wh: u64,
    pub total_amount: u64,
    pub chain_head: Digest,
    pub charger_key: [u8; PUBLIC_KEY_LEN],
    pub vehicle_key: [u8; PUBLIC_KEY_LEN],
    pub charger_signature: [u8; SIGNATURE_LEN],
    pub vehicle_signature: [u8; SIGNATURE_LEN],
}

impl ReconciliationRecord {
    /// Record for a single payment outside any burst chain.
    pub fn one_shot(
        session_id: [u8; 16],
        amount: u64,
        energy_wh: u64,
        charger_key: &VerifyingKey,
        vehicle_key: &VerifyingKey,
    ) -> Self {
        Self {
            session_id,
            mode: SettlementMode::OneShot,
            burst_count: 0,
            price_per_wh: 0,
            burst_wh: 0,
            total_energy_wh: energy_wh,
            total_amount: amount,
            chain_head: Digest::ZERO,
            charger_key: charger_key.to_bytes(),
            vehicle_key: vehicle_key.to_bytes(),
            charger_signature: [0; SIGNATURE_LEN],
            vehicle_signature: [0; SIGNATURE_LEN],
        }
    }

    /// The 140 bytes both parties sign.
    pub fn signed_bytes(&self) -> [u8; RECORD_BODY] {
        let mut b = [0u8; RECORD_BODY];
        b[0] = KIND_RECORD;
        b[1..17].copy_from_slice(&self.session_id);
        b[17] = self.mode as u8;
        b[18..20].copy_from_slice(&self.burst_count.to_be_bytes());
        b[20..24].copy_from_slice(&self.price_per_wh.to_be_bytes());
        b[24..28].copy_from_slice(&self.burst_wh.to_be_bytes());
        b[28..36].copy_from_slice(&self.total_energy_wh.to_be_bytes());
        b[36..44].copy_from_slice(&self.total_amount.to_be_bytes());
        b[44..76].copy_from_slice(self.chain_head.as_bytes());
        b[76..108].copy_from_slice(&self.charger_key);
        b[108..140].copy_from_slice(&self.vehicle_key);
        b
    }

    pub fn sign_as_charger(&mut self, charger: &Identity) {
        self.charger_signature = charger.sign(&self.signed_bytes()).to_bytes();
    }

    pub fn sign_as_vehicle(&mut self, vehicle: &Identity) {
        self.vehicle_signature = vehicle.sign(&self.signed_bytes()).to_bytes();
    }

    fn key(raw: &[u8; PUBLIC_KEY_LEN]) -> Option<VerifyingKey> {
        VerifyingKey::from_bytes(raw).ok()
    }

    pub fn charger_signature_valid(&self) -> bool {
        Self::key(&self.charger_key).is_some_and(|k| verify(&k, &self.signed_bytes(), &self.charger_signature))
    }

    pub fn vehicle_signature_valid(&self) -> bool {
        Self::key(&self.vehicle_key).is_some_and(|k| verify(&k, &self.signed_bytes(), &self.vehicle_signature))
    }

    /// Checks both signatures under the embedded keys.
    pub fn verify(&self) -> Result<(), PaymentError> {
        if !self.charger_signature_valid() {
            return Err(PaymentError::BadSignature("charger signature on record".into()));
        }
        if !self.vehicle_signature_valid() {
            return Err(PaymentError::BadSignature("vehicle signature on record".into()));
        }
        Ok(())
    }

    pub fn encode(&self) -> [u8; RECORD_LEN] {
        let mut out = [0u8; RECORD_LEN];
        out[..RECORD_BODY].copy_from_slice(&self.signed_bytes());
        out[RECORD_BODY..RECORD_BODY + SIGNATURE_LEN].copy_from_slice(&self.charger_signature);
        out[RECORD_BODY + SIGNATURE_LEN..].copy_from_slice(&self.vehicle_signature);
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self, PaymentError> {
        check_frame(buf, RECORD_LEN, KIND_RECORD, "reconciliation record")?;
        let mode = match buf[17] {
            0 => SettlementMode::OneShot,
            1 => SettlementMode::BurstChain,
            m => return Err(PaymentError::Malformed(format!("settlement mode {m}"))),
        };
        Ok(Self {
            session_id: buf[1..17].try_into().expect("16 bytes"),
            mode,
            burst_count: be_u16(&buf[18..20]),
            price_per_wh: be_u32(&buf[20..24]),
            burst_wh: be_u32(&buf[24..28]),
            total_energy_wh: be_u64(&buf[28..36]),
            total_amount: be_u64(&buf[36..44]),
            chain_head: Digest::from_slice(&buf[44..76]).expect("32 bytes"),
            charger_key: buf[76..108].try_into().expect("32 bytes"),
            vehicle_key: buf[108..140].try_into().expect("32 bytes"),
            charger_signature: buf[RECORD_BODY..RECORD_BODY + SIGNATURE_LEN].try_into().expect("64 bytes"),
            vehicle_signature: buf[RECORD_BODY + SIGNATURE_LEN..].try_into().expect("64 bytes"),
        })
    }

    pub fn digest(&self) -> Digest {
        Digest::of(&self.encode())
    }
}
