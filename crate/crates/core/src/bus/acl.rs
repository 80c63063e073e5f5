use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::BusError;

const DEFAULT_ACL: &str = include_str!("../../config/default_acl.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Permission {
    Publish,
    Subscribe,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AclEntry {
    pub role: String,
    #[serde(rename = "topic")]
    pub topic_pattern: String,
    pub allow: BTreeSet<Permission>,
}

impl AclEntry {
    pub fn new(role: &str, topic_pattern: &str, allow: &[Permission]) -> Self {
        Self {
            role: role.to_string(),
            topic_pattern: topic_pattern.to_string(),
            allow: allow.iter().copied().collect(),
        }
    }
}

/// `*` matches everything, `a/b/*` matches any topic under `a/b/`, and a
/// pattern without a wildcard matches only itself.
pub fn pattern_matches(pattern: &str, topic: &str) -> bool {
    if pattern == "*" {
        return true;
    }
    match pattern.strip_suffix('*') {
        Some(prefix) => topic.len() > prefix.len() && topic.starts_with(prefix),
        None => pattern == topic,
    }
}

/// Whether every topic matched by `inner` is also matched by `outer`.
pub fn pattern_covers(outer: &str, inner: &str) -> bool {
    if outer == "*" {
        return true;
    }
    match (outer.strip_suffix('*'), inner.strip_suffix('*')) {
        (Some(o), Some(i)) => inner != "*" && i.starts_with(o),
        (Some(_), None) => pattern_matches(outer, inner),
        (None, Some(_)) => false,
        (None, None) => outer == inner,
    }
}

fn role_matches(pattern: &str, role: &str) -> bool {
    match pattern.strip_suffix('*') {
        Some(prefix) => role.starts_with(prefix),
        None => pattern == role,
    }
}

#[derive(Deserialize)]
struct AclFile {
    #[serde(default)]
    acl: Vec<AclEntry>,
}

/// A validated ACL table. Lookups take the union of all matching entries.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AclTable {
    entries: Vec<AclEntry>,
}

impl AclTable {
    pub fn new(entries: Vec<AclEntry>) -> Result<Self, BusError> {
        let mut seen: HashMap<(&str, &str), &BTreeSet<Permission>> = HashMap::new();
        for e in &entries {
            if e.topic_pattern.is_empty() || e.role.is_empty() {
                return Err(BusError::Config("empty role or topic pattern".into()));
            }
            let body = e.topic_pattern.strip_suffix('*').unwrap_or(&e.topic_pattern);
            if body.contains('*') {
                return Err(BusError::Config(format!(
                    "wildcard must be the last character in `{}`",
                    e.topic_pattern
                )));
            }
            if let Some(prev) = seen.insert((&e.role, &e.topic_pattern), &e.allow) {
                if *prev != e.allow {
                    return Err(BusError::Config(format!(
                        "conflicting entries for role `{}` on `{}`",
                        e.role, e.topic_pattern
                    )));
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn from_toml(text: &str) -> Result<Self, BusError> {
        let file: AclFile = toml::from_str(text).map_err(|e| BusError::Config(e.to_string()))?;
        Self::new(file.acl)
    }

    /// The table shipped with the platform.
    pub fn default_platform() -> Self {
        Self::from_toml(DEFAULT_ACL).expect("bundled ACL is valid")
    }

    pub fn entries(&self) -> &[AclEntry] {
        &self.entries
    }

    pub fn allows(&self, role: &str, topic: &str, perm: Permission) -> bool {
        self.entries.iter().any(|e| {
            e.allow.contains(&perm) && role_matches(&e.role, role) && pattern_matches(&e.topic_pattern, topic)
        })
    }

    /// Whether `role` may subscribe with `pattern`: some single entry must cover it.
    pub fn allows_subscription(&self, role: &str, pattern: &str) -> bool {
        self.entries.iter().any(|e| {
            e.allow.contains(&Permission::Subscribe)
                && role_matches(&e.role, role)
                && pattern_covers(&e.topic_pattern, pattern)
        })
    }
}
