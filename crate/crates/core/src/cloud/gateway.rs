use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use ed25519_dalek::VerifyingKey;

use super::{ops, BlobStore, CloudEndpoint, CloudError, CloudKind};
use crate::crypto::{Digest, KeyRegistry};
use crate::payments::ReconciliationRecord;
use crate::wire::VasMessage;

#[derive(Debug, Clone, PartialEq)]
pub struct Settlement {
    pub id: u64,
    pub record: ReconciliationRecord,
    pub arrival_ms: f64,
}

#[derive(Default)]
struct Ledger {
    by_digest: HashMap<Digest, u64>,
    settled: Vec<Settlement>,
}

/// Payment gateway: settles dual-signed records from registered chargers.
/// Settlement is idempotent per record.
pub struct PaymentGateway {
    chargers: KeyRegistry,
    store: BlobStore,
    ledger: Mutex<Ledger>,
}

impl std::fmt::Debug for PaymentGateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PaymentGateway")
            .field("settled", &self.settlements().len())
            .finish()
    }
}

impl PaymentGateway {
    pub fn new() -> Arc<Self> {
        Self::with_store(BlobStore::in_memory())
    }

    pub fn with_store(store: BlobStore) -> Arc<Self> {
        Arc::new(Self {
            chargers: KeyRegistry::new(),
            store,
            ledger: Mutex::new(Ledger::default()),
        })
    }

    pub fn register_charger(&self, key: VerifyingKey) {
        self.chargers.register(key);
    }

    pub fn settlements(&self) -> Vec<Settlement> {
        self.ledger.lock().unwrap_or_else(|e| e.into_inner()).settled.clone()
    }

    pub fn settle(&self, record: &ReconciliationRecord, now_ms: f64) -> Result<u64, CloudError> {
        record.verify().map_err(|e| CloudError::Rejected(e.to_string()))?;
        let charger = VerifyingKey::from_bytes(&record.charger_key)
            .map_err(|_| CloudError::Rejected("invalid charger key".into()))?;
        if !self.chargers.contains(&charger) {
            return Err(CloudError::Rejected("charger is not registered".into()));
        }
        let digest = record.digest();
        let mut ledger = self.ledger.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(&id) = ledger.by_digest.get(&digest) {
            return Ok(id);
        }
        let id = ledger.settled.len() as u64 + 1;
        self.store.put(&format!("{id:010}"), record.encode().to_vec())?;
        ledger.by_digest.insert(digest, id);
        ledger.settled.push(Settlement {
            id,
            record: record.clone(),
            arrival_ms: now_ms,
        });
        Ok(id)
    }
}

impl CloudEndpoint for PaymentGateway {
    fn kind(&self) -> CloudKind {
        CloudKind::PaymentGateway
    }

    fn handle(&self, request: &VasMessage, now_ms: f64) -> Result<VasMessage, CloudError> {
        match request.op {
            ops::SETTLE => {
                let record =
                    ReconciliationRecord::decode(&request.data).map_err(|e| CloudError::Malformed(e.to_string()))?;
                let id = self.settle(&record, now_ms)?;
                Ok(VasMessage::new(request.service_id, ops::SETTLED, id.to_be_bytes().to_vec()))
            }
            op => Err(CloudError::Malformed(format!("unknown gateway op {op:#04x}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::Identity;

    #[test]
    fn settlement_is_idempotent_and_checks_signatures() {
        let charger = Identity::from_seed("c", [1; 32]);
        let vehicle = Identity::from_seed("v", [2; 32]);
        let intruder = Identity::from_seed("x", [3; 32]);
        let gw = PaymentGateway::new();
        gw.register_charger(charger.verifying_key());
        let mut rec = ReconciliationRecord::one_shot([1; 16], 50, 10, &charger.verifying_key(), &vehicle.verifying_key());
        rec.sign_as_vehicle(&vehicle);
        rec.sign_as_charger(&charger);
        let a = gw.settle(&rec, 1.0).unwrap();
        assert_eq!(gw.settle(&rec, 2.0).unwrap(), a);
        let mut rec2 = rec.clone();
        rec2.total_amount = 51;
        rec2.sign_as_vehicle(&vehicle);
        rec2.sign_as_charger(&charger);
        assert_eq!(gw.settle(&rec2, 3.0).unwrap(), a + 1);
        let mut forged = rec2.clone();
        forged.total_amount = 52;
        forged.sign_as_vehicle(&intruder);
        forged.sign_as_charger(&charger);
        assert!(matches!(gw.settle(&forged, 4.0), Err(CloudError::Rejected(_))));
        assert_eq!(gw.settlements().len(), 2);
    }
}
