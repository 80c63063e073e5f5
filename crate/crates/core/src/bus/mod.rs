//! Topic-based publish/subscribe with role ACLs and two-level criticality.
//!
//! Each subscription owns a bounded queue. Critical events are delivered
//! ahead of queued standard events. When a queue is full, an arriving
//! standard event is dropped; an arriving critical event evicts the oldest
//! queued standard event, or overflows the bound if none is queued.

mod acl;

pub use acl::{pattern_covers, pattern_matches, AclEntry, AclTable, Permission};

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard, RwLock, Weak};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_QUEUE_CAPACITY: usize = 1024;
pub const MAX_PAYLOAD_BYTES: usize = 16 << 20;

pub mod topics {
    pub const UPDATES_AVAILABLE: &str = "updates/available";
    pub const UPDATES_FETCHED: &str = "updates/fetched";
    pub const SIEM_ALERTS: &str = "siem/alerts";
    pub const PAYMENTS_RECONCILED: &str = "payments/reconciled";
    pub const CHARGING_STATE: &str = "charging/state";
    pub const TELEMETRY_EXPORT: &str = "telemetry/export";
}

pub mod roles {
    pub const CHARGING_STACK: &str = "charging_stack";
    pub const VAS_UPDATE: &str = "vas_update";
    pub const VAS_SIEM: &str = "vas_siem";
    pub const VAS_PAYMENTS: &str = "vas_payments";
    pub const TELEMETRY: &str = "telemetry";
    pub const CLOUD_BRIDGE: &str = "cloud_bridge";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criticality {
    Critical,
    Standard,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BusError {
    #[error("role `{role}` may not {action} on `{pattern}`")]
    AccessDenied {
        role: String,
        pattern: String,
        action: Permission,
    },
    #[error("payload of {0} bytes exceeds the 16 MiB limit")]
    Payload(usize),
    #[error("invalid topic `{0}`")]
    InvalidTopic(String),
    #[error("ACL configuration: {0}")]
    Config(String),
}

impl std::fmt::Display for Permission {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Permission::Publish => "publish",
            Permission::Subscribe => "subscribe",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub topic: String,
    pub payload: Arc<[u8]>,
    pub publisher_role: String,
    pub criticality: Criticality,
    pub sequence: u64,
}

/// Per-topic delivery counters. `delivered + dropped == eligible`, where
/// `eligible` sums the permitted matching subscribers over every publish.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TopicStats {
    pub published: u64,
    pub eligible: u64,
    pub delivered: u64,
    pub dropped: u64,
}

fn valid_topic(topic: &str) -> bool {
    !topic.is_empty() && !topic.contains('*') && topic.split('/').all(|s| !s.is_empty())
}

#[derive(Default)]
struct Queue {
    critical: VecDeque<Event>,
    standard: VecDeque<Event>,
}

impl Queue {
    fn len(&self) -> usize {
        self.critical.len() + self.standard.len()
    }

    fn pop(&mut self) -> Option<Event> {
        self.critical.pop_front().or_else(|| self.standard.pop_front())
    }
}

struct SubShared {
    role: String,
    pattern: String,
    capacity: usize,
    queue: Mutex<Queue>,
    ready: Condvar,
    dropped: AtomicU64,
}

impl SubShared {
    fn lock(&self) -> MutexGuard<'_, Queue> {
        self.queue.lock().unwrap_or_else(|e| e.into_inner())
    }
}

enum Offer {
    Queued,
    Dropped,
    /// Queued after evicting a standard event from the given topic.
    Evicted(String),
}

impl SubShared {
    fn offer(&self, event: Event) -> Offer {
        let mut q = self.lock();
        let outcome = if q.len() < self.capacity {
            match event.criticality {
                Criticality::Critical => q.critical.push_back(event),
                Criticality::Standard => q.standard.push_back(event),
            }
            Offer::Queued
        } else {
            match event.criticality {
                Criticality::Standard => {
                    self.dropped.fetch_add(1, Ordering::Relaxed);
                    return Offer::Dropped;
                }
                Criticality::Critical => {
                    let evicted = q.standard.pop_front();
                    q.critical.push_back(event);
                    match evicted {
                        Some(e) => {
                            self.dropped.fetch_add(1, Ordering::Relaxed);
                            Offer::Evicted(e.topic)
                        }
                        None => Offer::Queued,
                    }
                }
            }
        };
        drop(q);
        self.ready.notify_one();
        outcome
    }
}

struct BusInner {
    acl: RwLock<Arc<AclTable>>,
    capacity: usize,
    // Serializes publishes so every subscriber sees one order per topic.
    state: Mutex<BusState>,
}

#[derive(Default)]
struct BusState {
    sequences: HashMap<String, u64>,
    stats: HashMap<String, TopicStats>,
    subs: Vec<Weak<SubShared>>,
}

/// Shared handle to an event bus. Clones refer to the same bus.
#[derive(Clone)]
pub struct EventBus {
    inner: Arc<BusInner>,
}

impl std::fmt::Debug for EventBus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EventBus").field("capacity", &self.inner.capacity).finish()
    }
}

impl Default for EventBus {
    fn default() -> Self {
        Self::new(AclTable::default())
    }
}

impl EventBus {
    pub fn new(acl: AclTable) -> Self {
        Self::with_capacity(acl, DEFAULT_QUEUE_CAPACITY)
    }

    pub fn with_capacity(acl: AclTable, capacity: usize) -> Self {
        Self {
            inner: Arc::new(BusInner {
                acl: RwLock::new(Arc::new(acl)),
                capacity: capacity.max(1),
                state: Mutex::new(BusState::default()),
            }),
        }
    }

    /// A bus with the bundled platform ACL.
    pub fn platform() -> Self {
        Self::new(AclTable::default_platform())
    }

    fn state(&self) -> MutexGuard<'_, BusState> {
        self.inner.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn acl(&self) -> Arc<AclTable> {
        self.inner.acl.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Validates and installs a new ACL table in one step.
    pub fn set_acl(&self, entries: Vec<AclEntry>) -> Result<(), BusError> {
        let table = AclTable::new(entries)?;
        *self.inner.acl.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(table);
        Ok(())
    }

    pub fn set_acl_table(&self, table: AclTable) {
        *self.inner.acl.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(table);
    }

    pub fn subscribe(&self, role: &str, topic_pattern: &str) -> Result<Subscription, BusError> {
        if !self.acl().allows_subscription(role, topic_pattern) {
            return Err(BusError::AccessDenied {
                role: role.to_string(),
                pattern: topic_pattern.to_string(),
                action: Permission::Subscribe,
            });
        }
        let shared = Arc::new(SubShared {
            role: role.to_string(),
            pattern: topic_pattern.to_string(),
            capacity: self.inner.capacity,
            queue: Mutex::new(Queue::default()),
            ready: Condvar::new(),
            dropped: AtomicU64::new(0),
        });
        let mut st = self.state();
        st.subs.retain(|w| w.strong_count() > 0);
        st.subs.push(Arc::downgrade(&shared));
        Ok(Subscription { shared })
    }

    /// Publishes an event and returns how many subscriptions queued it.
    pub fn publish(
        &self,
        role: &str,
        topic: &str,
        payload: impl Into<Arc<[u8]>>,
        criticality: Criticality,
    ) -> Result<usize, BusError> {
        if !valid_topic(topic) {
            return Err(BusError::InvalidTopic(topic.to_string()));
        }
        let acl = self.acl();
        if !acl.allows(role, topic, Permission::Publish) {
            return Err(BusError::AccessDenied {
                role: role.to_string(),
                pattern: topic.to_string(),
                action: Permission::Publish,
            });
        }
        let payload = payload.into();
        if payload.len() > MAX_PAYLOAD_BYTES {
            return Err(BusError::Payload(payload.len()));
        }
        let mut st = self.state();
        let seq = st.sequences.entry(topic.to_string()).or_insert(0);
        *seq += 1;
        let event = Event {
            topic: topic.to_string(),
            payload,
            publisher_role: role.to_string(),
            criticality,
            sequence: *seq,
        };
        st.subs.retain(|w| w.strong_count() > 0);
        let targets: Vec<Arc<SubShared>> = st
            .subs
            .iter()
            .filter_map(Weak::upgrade)
            .filter(|s| pattern_matches(&s.pattern, topic) && acl.allows(&s.role, topic, Permission::Subscribe))
            .collect();
        let mut delivered = 0usize;
        let mut evictions = Vec::new();
        let mut dropped = 0u64;
        for sub in &targets {
            match sub.offer(event.clone()) {
                Offer::Queued => delivered += 1,
                Offer::Dropped => dropped += 1,
                Offer::Evicted(t) => {
                    delivered += 1;
                    evictions.push(t);
                }
            }
        }
        let stats = st.stats.entry(topic.to_string()).or_default();
        stats.published += 1;
        stats.eligible += targets.len() as u64;
        stats.delivered += delivered as u64;
        stats.dropped += dropped;
        for t in evictions {
            let s = st.stats.entry(t).or_default();
            s.delivered -= 1;
            s.dropped += 1;
        }
        Ok(delivered)
    }

    pub fn topic_stats(&self, topic: &str) -> TopicStats {
        self.state().stats.get(topic).copied().unwrap_or_default()
    }

    pub fn subscriber_count(&self) -> usize {
        self.state().subs.iter().filter(|w| w.strong_count() > 0).count()
    }
}

/// Receiving end of a subscription; dropping it unsubscribes.
pub struct Subscription {
    shared: Arc<SubShared>,
}

impl std::fmt::Debug for Subscription {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Subscription")
            .field("role", &self.shared.role)
            .field("pattern", &self.shared.pattern)
            .finish()
    }
}

impl Subscription {
    pub fn role(&self) -> &str {
        &self.shared.role
    }

    pub fn pattern(&self) -> &str {
        &self.shared.pattern
    }

    pub fn try_recv(&self) -> Option<Event> {
        self.shared.lock().pop()
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Option<Event> {
        let deadline = Instant::now() + timeout;
        let mut q = self.shared.lock();
        loop {
            if let Some(e) = q.pop() {
                return Some(e);
            }
            let now = Instant::now();
            if now >= deadline {
                return None;
            }
            q = self
                .shared
                .ready
                .wait_timeout(q, deadline - now)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
    }

    /// Takes every queued event in delivery order.
    pub fn drain(&self) -> Vec<Event> {
        let mut q = self.shared.lock();
        std::iter::from_fn(|| q.pop()).collect()
    }

    pub fn pending(&self) -> usize {
        self.shared.lock().len()
    }

    /// Events this subscription lost to a full queue.
    pub fn dropped(&self) -> u64 {
        self.shared.dropped.load(Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Permission::*;

    fn bus(cap: usize) -> EventBus {
        EventBus::with_capacity(
            AclTable::new(vec![
                AclEntry::new("pub", "*", &[Publish]),
                AclEntry::new("sub", "*", &[Subscribe]),
                AclEntry::new("vas_update", "updates/*", &[Subscribe]),
            ])
            .unwrap(),
            cap,
        )
    }

    #[test]
    fn empty_table_denies_everything() {
        let b = EventBus::default();
        assert!(matches!(b.subscribe("r", "a"), Err(BusError::AccessDenied { .. })));
        assert!(matches!(b.publish("r", "a", vec![], Criticality::Standard), Err(BusError::AccessDenied { .. })));
    }

    #[test]
    fn subscribe_only_role_cannot_publish() {
        let b = bus(8);
        let s = b.subscribe("vas_update", "updates/*").unwrap();
        assert!(b.publish("vas_update", "updates/new", vec![1], Criticality::Standard).is_err());
        assert_eq!(b.publish("pub", "updates/new", vec![1], Criticality::Standard).unwrap(), 1);
        assert_eq!(s.try_recv().unwrap().topic, "updates/new");
    }

    #[test]
    fn zero_subscribers_and_fan_out() {
        let b = bus(8);
        assert_eq!(b.publish("pub", "t", vec![], Criticality::Standard).unwrap(), 0);
        let s1 = b.subscribe("sub", "t").unwrap();
        let s2 = b.subscribe("sub", "*").unwrap();
        for i in 0..5u8 {
            assert_eq!(b.publish("pub", "t", vec![i], Criticality::Standard).unwrap(), 2);
        }
        let a: Vec<u64> = s1.drain().iter().map(|e| e.sequence).collect();
        let c: Vec<u64> = s2.drain().iter().map(|e| e.sequence).collect();
        assert_eq!(a, vec![2, 3, 4, 5, 6]);
        assert_eq!(a, c);
    }

    #[test]
    fn critical_preempts_on_saturated_queue() {
        let b = bus(1);
        let s = b.subscribe("sub", "*").unwrap();
        b.publish("pub", "std", vec![], Criticality::Standard).unwrap();
        b.publish("pub", "std", vec![], Criticality::Standard).unwrap();
        b.publish("pub", "crit", vec![], Criticality::Critical).unwrap();
        assert_eq!(s.try_recv().unwrap().topic, "crit");
        assert!(s.try_recv().is_none());
        let st = b.topic_stats("std");
        assert_eq!((st.delivered, st.dropped), (0, 2));

        b.publish("pub", "crit", vec![], Criticality::Critical).unwrap();
        b.publish("pub", "crit", vec![], Criticality::Critical).unwrap();
        assert_eq!(s.pending(), 2);
    }

    #[test]
    fn critical_is_delivered_before_queued_standard() {
        let b = bus(4);
        let s = b.subscribe("sub", "*").unwrap();
        for _ in 0..3 {
            b.publish("pub", "s", vec![], Criticality::Standard).unwrap();
        }
        b.publish("pub", "c", vec![], Criticality::Critical).unwrap();
        assert_eq!(s.try_recv().unwrap().topic, "c");
    }

    #[test]
    fn oversize_and_bad_topics() {
        let b = bus(1);
        let big = vec![0u8; MAX_PAYLOAD_BYTES + 1];
        assert_eq!(
            b.publish("pub", "t", big, Criticality::Standard),
            Err(BusError::Payload(MAX_PAYLOAD_BYTES + 1))
        );
        assert!(b.publish("pub", "", vec![], Criticality::Standard).is_err());
        assert!(b.publish("pub", "a//b", vec![], Criticality::Standard).is_err());
    }

    #[test]
    fn acl_change_applies_at_delivery() {
        let b = bus(8);
        let s = b.subscribe("sub", "*").unwrap();
        b.set_acl(vec![AclEntry::new("pub", "*", &[Publish])]).unwrap();
        assert_eq!(b.publish("pub", "t", vec![], Criticality::Standard).unwrap(), 0);
        assert!(s.try_recv().is_none());
    }

    #[test]
    fn dropped_subscription_is_removed() {
        let b = bus(8);
        let s = b.subscribe("sub", "*").unwrap();
        assert_eq!(b.subscriber_count(), 1);
        drop(s);
        assert_eq!(b.publish("pub", "t", vec![], Criticality::Standard).unwrap(), 0);
        assert_eq!(b.subscriber_count(), 0);
    }

    #[test]
    fn recv_across_threads() {
        let b = bus(8);
        let s = b.subscribe("sub", "*").unwrap();
        let h = std::thread::spawn(move || s.recv_timeout(Duration::from_secs(5)));
        b.publish("pub", "t", vec![7], Criticality::Standard).unwrap();
        assert_eq!(&*h.join().unwrap().unwrap().payload, &[7]);
    }
}
