//! Per-component linear performance profiles.
//!
//! Latency of component `x` for a message of `s` bytes is
//! `base_us + s · per_byte_us`. CPU is stored per message, in CPU-seconds,
//! so the load at `r` requests/second is `r · (base_cpu_s + s · per_byte_cpu_s)`
//! virtual cores and is proportional to rate by construction.

mod db;
mod fit;
mod speedup;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::ProxyMode;

pub use db::{ComponentProfile, Platform, ProfileDb, ProfileSet, DEFAULT_SPLIT_THRESHOLD_BYTES};
pub use fit::{
    derive_filter_profile, fit_cpu_profile, fit_latency_profile, least_squares, CpuFit,
    DerivedFilter, FitNote, LatencyFit, LinearFit, A3_TOLERANCE,
};
pub use speedup::{apply_speedup, ProfileEdit, SpeedupEdit, SpeedupProfile};

#[derive(Debug, thiserror::Error)]
pub enum ProfileError {
    #[error("insufficient samples for {context}: need at least 2 distinct message sizes, got {distinct_sizes}")]
    InsufficientSamples { context: String, distinct_sizes: usize },
    #[error("degenerate fit for {context}: message sizes have no spread")]
    DegenerateFit { context: String },
    #[error("sample at {size_bytes} B has request rate 0; per-message CPU is undefined")]
    ZeroRate { size_bytes: u64 },
    #[error("sample grids differ: {0}")]
    MismatchedSampleGrid(String),
    #[error("speedup targets {kind} in {mode} mode, which the profile DB does not contain")]
    UnknownComponent { kind: ComponentKind, mode: String },
    #[error("invalid profile: {0}")]
    Invalid(String),
    #[error("profile DB parse error at {path}: {message}")]
    Parse { path: String, message: String },
}

/// Filter identity. Configuration variants of one filter (e.g. local vs
/// global rate limiting) are distinct components.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterKey {
    pub name: String,
    pub variant: String,
}

impl FilterKey {
    pub fn new(name: impl Into<String>, variant: impl Into<String>) -> Self {
        FilterKey { name: name.into(), variant: variant.into() }
    }
}

impl fmt::Display for FilterKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.name, self.variant)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ComponentKind {
    Ipc,
    Read,
    Write,
    Notification,
    ProtocolParsing,
    ProtocolOther,
    Filter(FilterKey),
}

impl ComponentKind {
    /// Datapath components in reporting order, excluding filters.
    pub const BASE: [ComponentKind; 6] = [
        ComponentKind::Ipc,
        ComponentKind::Read,
        ComponentKind::Write,
        ComponentKind::Notification,
        ComponentKind::ProtocolParsing,
        ComponentKind::ProtocolOther,
    ];

    pub fn filter(name: impl Into<String>, variant: impl Into<String>) -> Self {
        ComponentKind::Filter(FilterKey::new(name, variant))
    }

    pub fn is_filter(&self) -> bool {
        matches!(self, ComponentKind::Filter(_))
    }

    /// The `kind` tag used in JSON documents.
    pub fn tag(&self) -> &'static str {
        match self {
            ComponentKind::Ipc => "ipc",
            ComponentKind::Read => "read",
            ComponentKind::Write => "write",
            ComponentKind::Notification => "notification",
            ComponentKind::ProtocolParsing => "protocol_parsing",
            ComponentKind::ProtocolOther => "protocol_other",
            ComponentKind::Filter(_) => "filter",
        }
    }

    /// Builds a kind from the `kind` / `filter_name` / `filter_variant`
    /// triple used in profile DB and speedup files.
    pub fn from_parts(
        tag: &str,
        filter_name: Option<&str>,
        filter_variant: Option<&str>,
    ) -> Result<Self, String> {
        if tag == "filter" {
            return match (filter_name, filter_variant) {
                (Some(name), Some(variant)) if !name.is_empty() && !variant.is_empty() => {
                    Ok(ComponentKind::filter(name, variant))
                }
                _ => Err("filter entries need non-empty filter_name and filter_variant".into()),
            };
        }
        if filter_name.is_some() || filter_variant.is_some() {
            return Err(format!("filter_name/filter_variant given for non-filter kind {tag:?}"));
        }
        match tag {
            "ipc" => Ok(ComponentKind::Ipc),
            "read" => Ok(ComponentKind::Read),
            "write" => Ok(ComponentKind::Write),
            "notification" => Ok(ComponentKind::Notification),
            "protocol_parsing" => Ok(ComponentKind::ProtocolParsing),
            "protocol_other" => Ok(ComponentKind::ProtocolOther),
            other => Err(format!("unknown component kind {other:?}")),
        }
    }

    pub fn filter_key(&self) -> Option<&FilterKey> {
        match self {
            ComponentKind::Filter(key) => Some(key),
            _ => None,
        }
    }
}

/// `ipc`, `read`, ..., or `filter:<name>/<variant>`.
impl fmt::Display for ComponentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ComponentKind::Filter(key) => write!(f, "filter:{key}"),
            other => f.write_str(other.tag()),
        }
    }
}

impl FromStr for ComponentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.strip_prefix("filter:") {
            Some(rest) => {
                let (name, variant) = rest
                    .split_once('/')
                    .ok_or_else(|| format!("filter component {s:?} must be filter:<name>/<variant>"))?;
                ComponentKind::from_parts("filter", Some(name), Some(variant))
            }
            None => ComponentKind::from_parts(s, None, None),
        }
    }
}

impl Serialize for ComponentKind {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ComponentKind {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyProfile {
    pub base_us: f64,
    pub per_byte_us: f64,
}

impl LatencyProfile {
    pub const ZERO: LatencyProfile = LatencyProfile { base_us: 0.0, per_byte_us: 0.0 };

    pub fn new(base_us: f64, per_byte_us: f64) -> Self {
        LatencyProfile { base_us, per_byte_us }
    }

    pub fn eval(&self, size_bytes: u64) -> f64 {
        eval_latency(self, size_bytes)
    }

    fn check(&self) -> Result<(), String> {
        check_coefficient("base_us", self.base_us)?;
        check_coefficient("per_byte_us", self.per_byte_us)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CpuProfile {
    pub base_cpu_s: f64,
    pub per_byte_cpu_s: f64,
}

impl CpuProfile {
    pub const ZERO: CpuProfile = CpuProfile { base_cpu_s: 0.0, per_byte_cpu_s: 0.0 };

    pub fn new(base_cpu_s: f64, per_byte_cpu_s: f64) -> Self {
        CpuProfile { base_cpu_s, per_byte_cpu_s }
    }

    /// CPU-seconds consumed by one message of `size_bytes`.
    pub fn per_message(&self, size_bytes: u64) -> f64 {
        self.base_cpu_s + size_bytes as f64 * self.per_byte_cpu_s
    }

    pub fn eval(&self, size_bytes: u64, rate_rps: f64) -> f64 {
        eval_cpu(self, size_bytes, rate_rps)
    }

    fn check(&self) -> Result<(), String> {
        check_coefficient("base_cpu_s", self.base_cpu_s)?;
        check_coefficient("per_byte_cpu_s", self.per_byte_cpu_s)
    }
}

fn check_coefficient(name: &str, value: f64) -> Result<(), String> {
    if !value.is_finite() || value < 0.0 {
        return Err(format!("{name} must be finite and >= 0, got {value}"));
    }
    Ok(())
}

/// Latency in microseconds for one message.
pub fn eval_latency(profile: &LatencyProfile, size_bytes: u64) -> f64 {
    profile.base_us + size_bytes as f64 * profile.per_byte_us
}

/// CPU load in virtual cores at `rate_rps` messages per second.
pub fn eval_cpu(profile: &CpuProfile, size_bytes: u64, rate_rps: f64) -> f64 {
    rate_rps * profile.per_message(size_bytes)
}

/// One measured operating point of a component (or of a whole sidecar, when
/// used for filter derivation).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementSample {
    pub component: ComponentKind,
    pub proxy_mode: ProxyMode,
    pub message_size_bytes: u64,
    pub request_rate_rps: f64,
    pub latency_us: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cpu_cores: Option<f64>,
}

impl MeasurementSample {
    pub fn new(
        component: ComponentKind,
        proxy_mode: ProxyMode,
        message_size_bytes: u64,
        request_rate_rps: f64,
        latency_us: f64,
        cpu_cores: Option<f64>,
    ) -> Self {
        MeasurementSample {
            component,
            proxy_mode,
            message_size_bytes,
            request_rate_rps,
            latency_us,
            cpu_cores,
        }
    }

    pub fn check(&self) -> Result<(), String> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.request_rate_rps) || !ok(self.latency_us) || !self.cpu_cores.is_none_or(ok) {
            return Err(format!(
                "sample for {} at {} B has negative or non-finite fields",
                self.component, self.message_size_bytes
            ));
        }
        if self.cpu_cores.is_some() && self.request_rate_rps == 0.0 {
            return Err(format!(
                "sample for {} at {} B reports CPU at request rate 0",
                self.component, self.message_size_bytes
            ));
        }
        Ok(())
    }

    /// Parses a JSON array of samples.
    pub fn parse_list(document: &str) -> Result<Vec<MeasurementSample>, ProfileError> {
        let de = &mut serde_json::Deserializer::from_str(document);
        let samples: Vec<MeasurementSample> =
            serde_path_to_error::deserialize(de).map_err(|e| ProfileError::Parse {
                path: e.path().to_string(),
                message: e.inner().to_string(),
            })?;
        for (i, sample) in samples.iter().enumerate() {
            sample.check().map_err(|message| ProfileError::Parse { path: format!("[{i}]"), message })?;
        }
        Ok(samples)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn latency_examples() {
        assert_eq!(eval_latency(&LatencyProfile::new(12.75, 0.0), 100), 12.75);
        assert_eq!(eval_latency(&LatencyProfile::new(10.0, 0.002), 0), 10.0);
        assert!((eval_latency(&LatencyProfile::new(10.0, 0.002), 1000) - 12.0).abs() < 1e-12);
    }

    #[test]
    fn cpu_examples() {
        let ipc_http = CpuProfile::new(1.7e-5, 0.0);
        assert!((eval_cpu(&ipc_http, 100, 30_000.0) - 0.51).abs() < 1e-12);
        assert_eq!(eval_cpu(&CpuProfile::new(3.0, 1.0), 4096, 0.0), 0.0);
        assert!((eval_cpu(&CpuProfile::new(1e-5, 1e-8), 1000, 10_000.0) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn kind_text_round_trip() {
        for kind in ComponentKind::BASE.iter().cloned().chain([ComponentKind::filter("tap", "file")]) {
            let text = kind.to_string();
            assert_eq!(text.parse::<ComponentKind>().unwrap(), kind);
        }
        assert!("filter:tap".parse::<ComponentKind>().is_err());
        assert!("mysql".parse::<ComponentKind>().is_err());
        assert!(ComponentKind::from_parts("ipc", Some("x"), None).is_err());
    }

    #[test]
    fn sample_list_rejects_unknown_fields_and_zero_rate_cpu() {
        let bad = r#"[{"component":"ipc","proxy_mode":"tcp","message_size_bytes":100,
            "request_rate_rps":1.0,"latency_us":1.0,"cpu_cores":0.1,"extra":1}]"#;
        assert!(matches!(MeasurementSample::parse_list(bad), Err(ProfileError::Parse { .. })));
        let zero = r#"[{"component":"ipc","proxy_mode":"tcp","message_size_bytes":100,
            "request_rate_rps":0.0,"latency_us":1.0,"cpu_cores":0.1}]"#;
        assert!(matches!(MeasurementSample::parse_list(zero), Err(ProfileError::Parse { .. })));
    }

    // Dyadic coefficients and bounded sizes keep every product and sum exact.
    fn dyadic_latency() -> impl Strategy<Value = LatencyProfile> {
        (0u32..1 << 20, 0u32..1 << 12).prop_map(|(b, l)| {
            LatencyProfile::new(b as f64 / 1024.0, l as f64 / (1u64 << 20) as f64)
        })
    }

    proptest! {
        #[test]
        fn latency_is_affine_exactly(p in dyadic_latency(), a in 0u64..1 << 20, b in 0u64..1 << 20) {
            prop_assert_eq!(eval_latency(&p, a + b) - eval_latency(&p, a), b as f64 * p.per_byte_us);
        }

        #[test]
        fn cpu_is_rate_proportional_exactly(
            base in 0.0f64..1e-3,
            slope in 0.0f64..1e-6,
            size in 0u64..65_536,
            rate in 0.0f64..1e6,
        ) {
            let p = CpuProfile::new(base, slope);
            prop_assert_eq!(eval_cpu(&p, size, 2.0 * rate), 2.0 * eval_cpu(&p, size, rate));
        }

        #[test]
        fn latency_is_affine_within_rounding(
            base in 0.0f64..1e3,
            slope in 0.0f64..1.0,
            a in 0u64..1 << 20,
            b in 0u64..1 << 20,
        ) {
            let p = LatencyProfile::new(base, slope);
            let lhs = eval_latency(&p, a + b) - eval_latency(&p, a);
            let rhs = b as f64 * slope;
            prop_assert!((lhs - rhs).abs() <= 1e-12 * eval_latency(&p, a + b).max(1.0));
        }
    }
}
