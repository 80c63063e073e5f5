//! Sliding-window frequency rules.
//!
//! For a rule on one CAN id, every record of that id anchors a window
//! `[t, t + window)`. The window violates the rule when it holds more than
//! `max_rate_hz * window_s` records. Overlapping violating windows merge into
//! one maximal span, and each span yields one alert.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{LogBatch, SiemError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRule {
    pub rule_id: String,
    pub can_id: u16,
    pub max_rate_hz: f64,
    pub window_ms: u64,
}

impl CorrelationRule {
    pub fn new(rule_id: &str, can_id: u16, max_rate_hz: f64, window_ms: u64) -> Result<Self, SiemError> {
        let r = Self {
            rule_id: rule_id.to_string(),
            can_id,
            max_rate_hz,
            window_ms,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<(), SiemError> {
        if !(self.max_rate_hz > 0.0 && self.max_rate_hz.is_finite()) {
            return Err(SiemError::Malformed(format!("rule {}: max_rate_hz must be > 0", self.rule_id)));
        }
        if self.window_ms == 0 {
            return Err(SiemError::Malformed(format!("rule {}: window_ms must be > 0", self.rule_id)));
        }
        Ok(())
    }

    /// Largest record count a window may hold without violating the rule.
    pub fn allowed_count(&self) -> f64 {
        self.max_rate_hz * self.window_ms as f64 / 1000.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Info,
    Warning,
    Critical,
}

impl Severity {
    /// Severity for an observed rate `ratio` times the threshold.
    pub fn for_ratio(ratio: f64) -> Self {
        if ratio >= 3.0 {
            Severity::Critical
        } else if ratio >= 1.5 {
            Severity::Warning
        } else {
            Severity::Info
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<Self> {
        [Severity::Info, Severity::Warning, Severity::Critical].get(c as usize).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub rule_id: String,
    pub vehicle_id: String,
    /// Start and end of the violating span in microseconds; `end` is exclusive.
    pub window: (u64, u64),
    pub observed_rate_hz: f64,
    pub severity: Severity,
}

#[derive(Deserialize)]
struct RuleFile {
    #[serde(default)]
    rule: Vec<CorrelationRule>,
}

/// Parses `[[rule]]` tables from TOML.
pub fn load_rules(text: &str) -> Result<Vec<CorrelationRule>, SiemError> {
    let file: RuleFile = toml::from_str(text).map_err(|e| SiemError::Malformed(e.to_string()))?;
    for r in &file.rule {
        r.validate()?;
    }
    Ok(file.rule)
}

/// Thresholds at twice each id's nominal rate in the default traffic profile,
/// over one-second windows.
pub fn default_rules() -> Vec<CorrelationRule> {
    super::default_profile()
        .iter()
        .map(|p| CorrelationRule {
            rule_id: format!("rate-0x{:03x}", p.can_id),
            can_id: p.can_id,
            max_rate_hz: (p.base_rate_hz * 2.0).max(100.0),
            window_ms: 1000,
        })
        .collect()
}

/// Applies `rules` to `batch`. Output is sorted by rule order, then time.
pub fn analyze_logs(batch: &LogBatch, rules: &[CorrelationRule]) -> Result<Vec<Alert>, SiemError> {
    if rules.is_empty() {
        return Err(SiemError::Malformed("at least one rule is required".into()));
    }
    for r in rules {
        r.validate()?;
    }
    let mut by_id: HashMap<u16, Vec<u64>> = HashMap::new();
    for r in rules {
        by_id.entry(r.can_id).or_default();
    }
    for rec in &batch.records {
        if let Some(v) = by_id.get_mut(&rec.can_id) {
            v.push(rec.timestamp_us);
        }
    }
    let mut alerts = Vec::new();
    for rule in rules {
        let times = &by_id[&rule.can_id];
        let w_us = rule.window_ms * 1000;
        let limit = rule.allowed_count();
        let w_s = rule.window_ms as f64 / 1000.0;
        let mut span: Option<(u64, u64, usize)> = None;
        let mut hi = 0usize;
        for (lo, &t) in times.iter().enumerate() {
            hi = hi.max(lo);
            while hi < times.len() && times[hi] < t + w_us {
                hi += 1;
            }
            let count = hi - lo;
            if count as f64 > limit {
                span = Some(match span {
                    Some((s, e, m)) if t < e => (s, t + w_us, m.max(count)),
                    Some(done) => {
                        alerts.push(make_alert(rule, batch, done, w_s));
                        (t, t + w_us, count)
                    }
                    None => (t, t + w_us, count),
                });
            }
        }
        if let Some(done) = span {
            alerts.push(make_alert(rule, batch, done, w_s));
        }
    }
    Ok(alerts)
}

fn make_alert(rule: &CorrelationRule, batch: &LogBatch, (start, end, max): (u64, u64, usize), w_s: f64) -> Alert {
    let observed = max as f64 / w_s;
    Alert {
        rule_id: rule.rule_id.clone(),
        vehicle_id: batch.vehicle_id.clone(),
        window: (start, end),
        observed_rate_hz: observed,
        severity: Severity::for_ratio(observed / rule.max_rate_hz),
    }
}
