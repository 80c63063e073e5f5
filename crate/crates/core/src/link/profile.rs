use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::LinkError;

/// Relative one-way latency spread used for the wired PLC profiles.
pub const PLC_JITTER: f64 = 0.03;
/// Relative one-way latency spread used for the cellular profiles.
pub const CELLULAR_JITTER: f64 = 0.30;

/// Named parameterization of an emulated network link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkProfile {
    pub name: String,
    pub rate_mbps: f64,
    pub one_way_latency_ms: f64,
    pub plr_percent: f64,
    #[serde(default)]
    pub jitter_fraction: f64,
}

impl LinkProfile {
    pub fn new(
        name: impl Into<String>,
        rate_mbps: f64,
        one_way_latency_ms: f64,
        plr_percent: f64,
        jitter_fraction: f64,
    ) -> Result<Self, LinkError> {
        let profile = Self {
            name: name.into(),
            rate_mbps,
            one_way_latency_ms,
            plr_percent,
            jitter_fraction,
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<(), LinkError> {
        let bad = |reason: &str| {
            Err(LinkError::InvalidProfile {
                name: self.name.clone(),
                reason: reason.to_string(),
            })
        };
        if self.name.trim().is_empty() {
            return bad("empty name");
        }
        if !(self.rate_mbps > 0.0 && self.rate_mbps.is_finite()) {
            return bad("rate_mbps must be > 0");
        }
        if !(self.one_way_latency_ms >= 0.0 && self.one_way_latency_ms.is_finite()) {
            return bad("one_way_latency_ms must be >= 0");
        }
        if !(0.0..100.0).contains(&self.plr_percent) {
            return bad("plr_percent must be in [0, 100)");
        }
        if !(0.0..1.0).contains(&self.jitter_fraction) {
            return bad("jitter_fraction must be in [0, 1)");
        }
        Ok(())
    }

    pub fn evolve10() -> Self {
        Self::builtin_unchecked("EVolve10", 10.0, 2.0, 0.0, PLC_JITTER)
    }

    pub fn evolve100() -> Self {
        Self::builtin_unchecked("EVolve100", 100.0, 2.0, 0.0, PLC_JITTER)
    }

    pub fn evolve1g() -> Self {
        Self::builtin_unchecked("EVolve1G", 1000.0, 2.0, 0.0, PLC_JITTER)
    }

    pub fn lte_4g() -> Self {
        Self::builtin_unchecked("4G", 30.0, 36.0, 0.2, CELLULAR_JITTER)
    }

    pub fn nr_5g() -> Self {
        Self::builtin_unchecked("5G", 100.0, 17.0, 0.2, CELLULAR_JITTER)
    }

    /// The five built-in configurations, PLC generations first.
    pub fn builtins() -> Vec<Self> {
        vec![
            Self::evolve10(),
            Self::evolve100(),
            Self::evolve1g(),
            Self::lte_4g(),
            Self::nr_5g(),
        ]
    }

    /// Looks up a built-in profile by name, ignoring case.
    pub fn builtin(name: &str) -> Option<Self> {
        Self::builtins()
            .into_iter()
            .find(|p| p.name.eq_ignore_ascii_case(name.trim()))
    }

    /// Round-trip propagation delay without jitter.
    pub fn base_rtt_ms(&self) -> f64 {
        2.0 * self.one_way_latency_ms
    }

    pub fn is_lossy(&self) -> bool {
        self.plr_percent > 0.0
    }

    fn builtin_unchecked(name: &str, rate: f64, latency: f64, plr: f64, jitter: f64) -> Self {
        Self {
            name: name.to_string(),
            rate_mbps: rate,
            one_way_latency_ms: latency,
            plr_percent: plr,
            jitter_fraction: jitter,
        }
    }
}

impl fmt::Display for LinkProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} ({} Mbps, {} ms, {}% loss)",
            self.name, self.rate_mbps, self.one_way_latency_ms, self.plr_percent
        )
    }
}

#[derive(Debug, Deserialize)]
struct ProfileFile {
    #[serde(default, rename = "profile")]
    profiles: Vec<LinkProfile>,
}

/// Parses profiles from a TOML document made of `[[profile]]` tables.
pub fn load_profiles(text: &str) -> Result<Vec<LinkProfile>, LinkError> {
    let file: ProfileFile =
        toml::from_str(text).map_err(|e| LinkError::Config(e.to_string()))?;
    for p in &file.profiles {
        p.validate()?;
    }
    Ok(file.profiles)
}

/// Resolves a profile name against `extra` first, then the built-ins.
pub fn resolve_profile(name: &str, extra: &[LinkProfile]) -> Option<LinkProfile> {
    extra
        .iter()
        .find(|p| p.name.eq_ignore_ascii_case(name.trim()))
        .cloned()
        .or_else(|| LinkProfile::builtin(name))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportKind {
    Ideal,
    #[serde(rename = "loss", alias = "loss_throttled")]
    LossThrottled,
}

impl TransportKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TransportKind::Ideal => "ideal",
            TransportKind::LossThrottled => "loss",
        }
    }
}

impl fmt::Display for TransportKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TransportKind {
    type Err = LinkError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ideal" => Ok(TransportKind::Ideal),
            "loss" | "loss_throttled" | "loss-throttled" => Ok(TransportKind::LossThrottled),
            other => Err(LinkError::Config(format!("unknown transport `{other}`"))),
        }
    }
}

pub const DEFAULT_MSS_BYTES: u32 = 1460;

/// How loss translates into delivered throughput.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransportModel {
    pub kind: TransportKind,
    pub mss_bytes: u32,
}

impl TransportModel {
    pub fn new(kind: TransportKind, mss_bytes: u32) -> Result<Self, LinkError> {
        if mss_bytes == 0 {
            return Err(LinkError::Config("mss_bytes must be > 0".into()));
        }
        Ok(Self { kind, mss_bytes })
    }

    pub fn ideal() -> Self {
        Self {
            kind: TransportKind::Ideal,
            mss_bytes: DEFAULT_MSS_BYTES,
        }
    }

    pub fn loss_throttled() -> Self {
        Self {
            kind: TransportKind::LossThrottled,
            mss_bytes: DEFAULT_MSS_BYTES,
        }
    }
}

impl From<TransportKind> for TransportModel {
    fn from(kind: TransportKind) -> Self {
        Self {
            kind,
            mss_bytes: DEFAULT_MSS_BYTES,
        }
    }
}

impl Default for TransportModel {
    fn default() -> Self {
        Self::ideal()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_follow_the_reference_table() {
        let expect = [
            ("EVolve10", 10.0, 2.0, 0.0),
            ("EVolve100", 100.0, 2.0, 0.0),
            ("EVolve1G", 1000.0, 2.0, 0.0),
            ("4G", 30.0, 36.0, 0.2),
            ("5G", 100.0, 17.0, 0.2),
        ];
        for (p, (name, rate, lat, plr)) in LinkProfile::builtins().iter().zip(expect) {
            assert_eq!(p.name, name);
            assert_eq!(p.rate_mbps, rate);
            assert_eq!(p.one_way_latency_ms, lat);
            assert_eq!(p.plr_percent, plr);
            p.validate().unwrap();
        }
    }

    #[test]
    fn lookup_is_case_insensitive() {
        for n in ["evolve10", "EVOLVE100", "evolve1g", "4g", "5G"] {
            assert!(LinkProfile::builtin(n).is_some(), "{n}");
        }
        assert!(LinkProfile::builtin("6g").is_none());
    }

    #[test]
    fn rejects_out_of_range_fields() {
        assert!(LinkProfile::new("x", 0.0, 1.0, 0.0, 0.0).is_err());
        assert!(LinkProfile::new("x", 1.0, -1.0, 0.0, 0.0).is_err());
        assert!(LinkProfile::new("x", 1.0, 1.0, 100.0, 0.0).is_err());
        assert!(LinkProfile::new("x", 1.0, 1.0, 0.0, 1.0).is_err());
        assert!(LinkProfile::new("x", 1.0, 0.0, 99.9, 0.99).is_ok());
        assert!(TransportModel::new(TransportKind::Ideal, 0).is_err());
    }

    #[test]
    fn loads_profiles_from_toml() {
        let text = r#"
            [[profile]]
            name = "lab-plc"
            rate_mbps = 200
            one_way_latency_ms = 1.5
            plr_percent = 0
            jitter_fraction = 0.02

            [[profile]]
            name = "sat"
            rate_mbps = 20
            one_way_latency_ms = 300
            plr_percent = 1.0
        "#;
        let profiles = load_profiles(text).unwrap();
        assert_eq!(profiles.len(), 2);
        assert_eq!(profiles[1].jitter_fraction, 0.0);
        assert_eq!(resolve_profile("LAB-PLC", &profiles).unwrap().rate_mbps, 200.0);
        assert_eq!(resolve_profile("5g", &profiles).unwrap().name, "5G");

        let bad = "[[profile]]\nname = \"x\"\nrate_mbps = -1\none_way_latency_ms = 1\nplr_percent = 0\n";
        assert!(load_profiles(bad).is_err());
    }

    #[test]
    fn transport_names_parse() {
        assert_eq!("ideal".parse::<TransportKind>().unwrap(), TransportKind::Ideal);
        assert_eq!("loss".parse::<TransportKind>().unwrap(), TransportKind::LossThrottled);
        assert!("tcp".parse::<TransportKind>().is_err());
    }
}
