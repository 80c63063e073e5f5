use std::fmt;

use ed25519_dalek::VerifyingKey;

use super::codec::{MicroReceipt, PaymentAuthorization, ReconciliationRecord, SettlementMode};
use super::PaymentError;
use crate::crypto::{Digest, Identity, SIGNATURE_LEN};

/// Integer pricing: every burst delivers `burst_wh` at `price_per_wh` minor
/// currency units per watt-hour.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tariff {
    pub price_per_wh: u32,
    pub burst_wh: u32,
}

impl Tariff {
    pub fn new(price_per_wh: u32, burst_wh: u32) -> Result<Self, PaymentError> {
        if price_per_wh == 0 || burst_wh == 0 {
            return Err(PaymentError::Validation("price_per_wh and burst_wh must be positive".into()));
        }
        price_per_wh
            .checked_mul(burst_wh)
            .ok_or_else(|| PaymentError::Validation("burst amount overflows".into()))?;
        Ok(Self { price_per_wh, burst_wh })
    }

    pub fn burst_amount(&self) -> u32 {
        self.price_per_wh * self.burst_wh
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainElement {
    Receipt,
    Authorization,
}

/// First invalid element of a chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dispute {
    pub burst_index: usize,
    pub element: ChainElement,
}

impl fmt::Display for Dispute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = match self.element {
            ChainElement::Receipt => "receipt",
            ChainElement::Authorization => "authorization",
        };
        write!(f, "{what} {}", self.burst_index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PaymentState {
    Open,
    Reconciled,
    Disputed(Dispute),
}

/// One party's copy of a burst payment chain.
///
/// Receipts and authorizations are stored as their canonical encodings;
/// every check works from those bytes.
#[derive(Clone)]
pub struct PaymentSession {
    session_id: [u8; 16],
    tariff: Tariff,
    charger_key: VerifyingKey,
    vehicle_key: VerifyingKey,
    receipts: Vec<Vec<u8>>,
    authorizations: Vec<Vec<u8>>,
    state: PaymentState,
}

impl fmt::Debug for PaymentSession {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PaymentSession")
            .field("session_id", &hex::encode(self.session_id))
            .field("tariff", &self.tariff)
            .field("receipts", &self.receipts.len())
            .field("authorizations", &self.authorizations.len())
            .field("state", &self.state)
            .finish()
    }
}

fn receipt_dispute(i: usize) -> Dispute {
    Dispute {
        burst_index: i,
        element: ChainElement::Receipt,
    }
}

fn auth_dispute(i: usize) -> Dispute {
    Dispute {
        burst_index: i,
        element: ChainElement::Authorization,
    }
}

impl PaymentSession {
    pub fn new(session_id: [u8; 16], tariff: Tariff, charger_key: VerifyingKey, vehicle_key: VerifyingKey) -> Self {
        Self {
            session_id,
            tariff,
            charger_key,
            vehicle_key,
            receipts: Vec::new(),
            authorizations: Vec::new(),
            state: PaymentState::Open,
        }
    }

    pub fn session_id(&self) -> [u8; 16] {
        self.session_id
    }

    pub fn tariff(&self) -> Tariff {
        self.tariff
    }

    pub fn state(&self) -> PaymentState {
        self.state
    }

    pub fn burst_count(&self) -> usize {
        self.receipts.len()
    }

    pub fn receipts(&self) -> &[Vec<u8>] {
        &self.receipts
    }

    pub fn authorizations(&self) -> &[Vec<u8>] {
        &self.authorizations
    }

    /// Mutable access to stored receipts, for fault-injection tests.
    pub fn raw_receipts_mut(&mut self) -> &mut Vec<Vec<u8>> {
        &mut self.receipts
    }

    /// Mutable access to stored authorizations, for fault-injection tests.
    pub fn raw_authorizations_mut(&mut self) -> &mut Vec<Vec<u8>> {
        &mut self.authorizations
    }

    fn require_open(&self) -> Result<(), PaymentError> {
        match self.state {
            PaymentState::Open => Ok(()),
            s => Err(PaymentError::State(format!("session is {s:?}"))),
        }
    }

    fn head(&self) -> Digest {
        self.authorizations.last().map_or(Digest::ZERO, |a| Digest::of(a))
    }

    /// Charger: issues the receipt for the next burst.
    pub fn issue_micro_receipt(&mut self, charger: &Identity) -> Result<MicroReceipt, PaymentError> {
        self.require_open()?;
        if self.receipts.len() != self.authorizations.len() {
            return Err(PaymentError::Sequencing(format!(
                "burst {} is not yet authorized",
                self.receipts.len() - 1
            )));
        }
        if charger.verifying_key() != self.charger_key {
            return Err(PaymentError::BadSignature("issuer is not the session's charger".into()));
        }
        let index = u16::try_from(self.receipts.len())
            .map_err(|_| PaymentError::Sequencing("burst index exhausted".into()))?;
        let receipt = MicroReceipt {
            session_id: self.session_id,
            burst_index: index,
            energy_wh: self.tariff.burst_wh,
            amount: self.tariff.burst_amount(),
            prev_auth_hash: self.head(),
            charger_signature: [0; SIGNATURE_LEN],
        }
        .sign(charger);
        self.receipts.push(receipt.encode().to_vec());
        Ok(receipt)
    }

    /// Vehicle: checks a received receipt against the local chain and signs
    /// the matching authorization.
    pub fn authorize_burst(&mut self, vehicle: &Identity, receipt_bytes: &[u8]) -> Result<PaymentAuthorization, PaymentError> {
        self.require_open()?;
        let expected = self.receipts.len();
        if receipt_bytes.len() >= 19 {
            let index = u16::from_be_bytes([receipt_bytes[17], receipt_bytes[18]]);
            if (index as usize) < expected {
                return Err(PaymentError::Replay {
                    index,
                    expected: expected as u16,
                });
            }
        }
        let receipt = match MicroReceipt::decode(receipt_bytes, &self.head()) {
            Ok(r) => r,
            Err(PaymentError::ChainMismatch(m)) => {
                self.state = PaymentState::Disputed(receipt_dispute(expected));
                return Err(PaymentError::ChainMismatch(m));
            }
            Err(e) => return Err(e),
        };
        if !receipt.verify(&self.charger_key) {
            return Err(PaymentError::BadSignature(format!("charger signature on receipt {}", receipt.burst_index)));
        }
        let consistent = receipt.session_id == self.session_id
            && receipt.burst_index as usize == expected
            && receipt.amount == self.tariff.burst_amount()
            && receipt.energy_wh == self.tariff.burst_wh;
        if !consistent {
            self.state = PaymentState::Disputed(receipt_dispute(expected));
            return Err(PaymentError::ChainMismatch(format!("receipt {} disagrees with the local chain", receipt.burst_index)));
        }
        let auth = PaymentAuthorization {
            session_id: self.session_id,
            burst_index: receipt.burst_index,
            amount: receipt.amount,
            receipt_hash: Digest::of(receipt_bytes),
            vehicle_signature: [0; SIGNATURE_LEN],
        }
        .sign(vehicle);
        self.receipts.push(receipt_bytes.to_vec());
        self.authorizations.push(auth.encode().to_vec());
        Ok(auth)
    }

    /// Charger: accepts the vehicle's authorization for the open burst.
    pub fn record_authorization(&mut self, auth_bytes: &[u8]) -> Result<PaymentAuthorization, PaymentError> {
        self.require_open()?;
        if self.receipts.len() != self.authorizations.len() + 1 {
            return Err(PaymentError::Sequencing("no burst awaiting authorization".into()));
        }
        let auth = PaymentAuthorization::decode(auth_bytes)?;
        if !auth.verify(&self.vehicle_key) {
            return Err(PaymentError::BadSignature(format!("vehicle signature on authorization {}", auth.burst_index)));
        }
        let last = self.receipts.last().expect("one open receipt");
        let receipt = MicroReceipt::decode(last, &self.head())?;
        if auth.session_id != self.session_id
            || auth.burst_index != receipt.burst_index
            || auth.amount != receipt.amount
            || auth.receipt_hash != Digest::of(last)
        {
            return Err(PaymentError::ChainMismatch(format!("authorization {} does not match its receipt", auth.burst_index)));
        }
        self.authorizations.push(auth_bytes.to_vec());
        Ok(auth)
    }

    /// Walks receipt 0, authorization 0, receipt 1, ... and reports the
    /// first element that fails to decode, verify or link.
    pub fn verify_chain(&self) -> Result<(), Dispute> {
        let mut prev = Digest::ZERO;
        let amount = self.tariff.burst_amount();
        for (i, raw) in self.receipts.iter().enumerate() {
            let r = MicroReceipt::decode(raw, &prev).map_err(|_| receipt_dispute(i))?;
            let ok = r.verify(&self.charger_key)
                && r.session_id == self.session_id
                && r.burst_index as usize == i
                && r.amount == amount
                && r.energy_wh == self.tariff.burst_wh;
            if !ok {
                return Err(receipt_dispute(i));
            }
            let Some(raw_auth) = self.authorizations.get(i) else {
                return Err(auth_dispute(i));
            };
            let a = PaymentAuthorization::decode(raw_auth).map_err(|_| auth_dispute(i))?;
            let ok = a.verify(&self.vehicle_key)
                && a.session_id == self.session_id
                && a.burst_index as usize == i
                && a.amount == r.amount
                && a.receipt_hash == Digest::of(raw);
            if !ok {
                return Err(auth_dispute(i));
            }
            prev = Digest::of(raw_auth);
        }
        if self.authorizations.len() > self.receipts.len() {
            return Err(auth_dispute(self.receipts.len()));
        }
        Ok(())
    }

    /// Verifies the chain and builds the unsigned settlement record. A broken
    /// chain moves the session to the disputed state.
    pub fn reconcile(&mut self) -> Result<ReconciliationRecord, PaymentError> {
        self.require_open()?;
        if self.receipts.len() != self.authorizations.len() {
            return Err(PaymentError::Sequencing("last burst is not authorized".into()));
        }
        if let Err(d) = self.verify_chain() {
            self.state = PaymentState::Disputed(d);
            return Err(PaymentError::Disputed(d));
        }
        let n = self.receipts.len() as u64;
        Ok(ReconciliationRecord {
            session_id: self.session_id,
            mode: SettlementMode::BurstChain,
            burst_count: self.receipts.len() as u16,
            price_per_wh: self.tariff.price_per_wh,
            burst_wh: self.tariff.burst_wh,
            total_energy_wh: n * u64::from(self.tariff.burst_wh),
            total_amount: n * u64::from(self.tariff.burst_amount()),
            chain_head: self.head(),
            charger_key: self.charger_key.to_bytes(),
            vehicle_key: self.vehicle_key.to_bytes(),
            charger_signature: [0; SIGNATURE_LEN],
            vehicle_signature: [0; SIGNATURE_LEN],
        })
    }

    /// Accepts a dual-signed record that matches this chain and closes the session.
    pub fn finalize(&mut self, record: &ReconciliationRecord) -> Result<(), PaymentError> {
        let mut expected = self.reconcile()?;
        expected.charger_signature = record.charger_signature;
        expected.vehicle_signature = record.vehicle_signature;
        if &expected != record {
            return Err(PaymentError::Rejected("record does not match the local chain".into()));
        }
        record.verify()?;
        self.state = PaymentState::Reconciled;
        Ok(())
    }
}
