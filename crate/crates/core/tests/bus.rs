use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use vas_core::bus::{AclEntry, AclTable, BusError, Criticality, EventBus, Permission};

const ROLE_PATTERNS: &[&str] = &["a", "b", "vas_x", "vas_*", "*"];
const TOPIC_PATTERNS: &[&str] = &["t", "t/x", "t/*", "t/x/*", "u/*", "*", "t/x/y"];
const ROLES: &[&str] = &["a", "b", "vas_x", "vas_y", "c"];
const TOPICS: &[&str] = &["t", "t/x", "t/x/y", "t/z", "u/v", "w"];

// Reference matcher written out longhand.
fn role_ok(pattern: &str, role: &str) -> bool {
    if pattern.ends_with('*') {
        role.starts_with(&pattern[..pattern.len() - 1])
    } else {
        pattern == role
    }
}

fn topic_ok(pattern: &str, topic: &str) -> bool {
    if pattern == "*" {
        return true;
    }
    if let Some(prefix) = pattern.strip_suffix('*') {
        topic.starts_with(prefix) && topic.len() > prefix.len()
    } else {
        pattern == topic
    }
}

type Rules = BTreeMap<(usize, usize), BTreeSet<Permission>>;

fn allowed(rules: &Rules, role: &str, topic: &str, perm: Permission) -> bool {
    rules
        .iter()
        .any(|(&(r, t), perms)| perms.contains(&perm) && role_ok(ROLE_PATTERNS[r], role) && topic_ok(TOPIC_PATTERNS[t], topic))
}

fn perms() -> impl Strategy<Value = BTreeSet<Permission>> {
    prop_oneof![
        Just(BTreeSet::from([Permission::Publish])),
        Just(BTreeSet::from([Permission::Subscribe])),
        Just(BTreeSet::from([Permission::Publish, Permission::Subscribe])),
    ]
}

fn rules() -> impl Strategy<Value = Rules> {
    prop::collection::btree_map((0..ROLE_PATTERNS.len(), 0..TOPIC_PATTERNS.len()), perms(), 0..8)
}

fn table(rules: &Rules) -> AclTable {
    let entries = rules
        .iter()
        .map(|(&(r, t), p)| AclEntry::new(ROLE_PATTERNS[r], TOPIC_PATTERNS[t], &p.iter().copied().collect::<Vec<_>>()))
        .collect();
    AclTable::new(entries).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn bus_follows_the_acl(rules in rules(), publisher in 0..ROLES.len(), subscriber in 0..ROLES.len(), topic in 0..TOPICS.len()) {
        let (p, s, t) = (ROLES[publisher], ROLES[subscriber], TOPICS[topic]);
        let bus = EventBus::new(table(&rules));
        let may_sub = allowed(&rules, s, t, Permission::Subscribe);
        let sub = bus.subscribe(s, t);
        prop_assert_eq!(sub.is_ok(), may_sub);
        let may_pub = allowed(&rules, p, t, Permission::Publish);
        match bus.publish(p, t, vec![1, 2, 3], Criticality::Standard) {
            Ok(n) => {
                prop_assert!(may_pub);
                prop_assert_eq!(n, usize::from(may_sub));
            }
            Err(BusError::AccessDenied { action, .. }) => {
                prop_assert!(!may_pub);
                prop_assert_eq!(action, Permission::Publish);
            }
            Err(e) => prop_assert!(false, "unexpected {e}"),
        }
        if let Ok(sub) = sub {
            prop_assert_eq!(sub.drain().len(), usize::from(may_pub));
        }
    }

    #[test]
    fn table_lookup_matches_reference(rules in rules(), role in 0..ROLES.len(), topic in 0..TOPICS.len()) {
        let t = table(&rules);
        for perm in [Permission::Publish, Permission::Subscribe] {
            prop_assert_eq!(t.allows(ROLES[role], TOPICS[topic], perm), allowed(&rules, ROLES[role], TOPICS[topic], perm));
        }
    }
}

#[test]
fn default_table_keeps_services_off_the_charging_stack() {
    let bus = EventBus::platform();
    for role in ["vas_update", "vas_siem", "vas_payments", "telemetry", "cloud_bridge"] {
        for topic in ["charging/state", "charging/session", "charging/limits"] {
            assert!(matches!(
                bus.publish(role, topic, vec![0], Criticality::Critical),
                Err(BusError::AccessDenied { .. })
            ));
        }
    }
    assert!(bus.publish("charging_stack", "charging/state", vec![0], Criticality::Critical).is_ok());
}

#[test]
fn critical_events_overtake_standard_ones() {
    let bus = EventBus::platform();
    let sub = bus.subscribe("vas_siem", "siem/*").unwrap();
    bus.publish("vas_siem", "siem/alerts", vec![1], Criticality::Standard).unwrap();
    bus.publish("vas_siem", "siem/alerts", vec![2], Criticality::Critical).unwrap();
    let order: Vec<u8> = sub.drain().iter().map(|e| e.payload[0]).collect();
    assert_eq!(order, vec![2, 1]);
}
