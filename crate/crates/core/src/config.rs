//! Sidecar configurations and whole-sidecar overhead.
//!
//! A sidecar's overhead is the sum of the overheads of the components its
//! configuration exercises. Every component sees the same message size and
//! rate; rate changes inside the chain (dropped or rate-limited messages) are
//! not modelled.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::profile::{ComponentKind, FilterKey, ProfileDb};
use crate::sum::exact_sum;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProxyMode {
    Tcp,
    Http,
    Grpc,
}

impl ProxyMode {
    pub const ALL: [ProxyMode; 3] = [ProxyMode::Tcp, ProxyMode::Http, ProxyMode::Grpc];

    pub fn as_str(self) -> &'static str {
        match self {
            ProxyMode::Tcp => "tcp",
            ProxyMode::Http => "http",
            ProxyMode::Grpc => "grpc",
        }
    }

    pub fn parses_protocol(self) -> bool {
        self != ProxyMode::Tcp
    }
}

impl fmt::Display for ProxyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProxyMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tcp" => Ok(ProxyMode::Tcp),
            "http" => Ok(ProxyMode::Http),
            "grpc" => Ok(ProxyMode::Grpc),
            other => Err(format!("unknown proxy mode {other:?} (expected tcp, http or grpc)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSpec {
    pub name: String,
    pub variant: String,
}

impl FilterSpec {
    pub fn new(name: impl Into<String>, variant: impl Into<String>) -> Self {
        FilterSpec { name: name.into(), variant: variant.into() }
    }

    pub fn component(&self) -> ComponentKind {
        ComponentKind::Filter(FilterKey::new(self.name.clone(), self.variant.clone()))
    }

    /// Filters that can drop or throttle messages, so downstream components
    /// would really see a lower rate than modelled.
    pub fn alters_rate(&self) -> bool {
        matches!(self.name.as_str(), "fault_injection" | "rate_limit")
    }
}

/// `name:variant`
impl FromStr for FilterSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            Some((name, variant)) if !name.is_empty() && !variant.is_empty() => Ok(FilterSpec::new(name, variant)),
            _ => Err(format!("filter {s:?} must be written name:variant")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SidecarConfig {
    pub mode: ProxyMode,
    #[serde(default)]
    pub filters: Vec<FilterSpec>,
}

impl SidecarConfig {
    pub fn new(mode: ProxyMode) -> Self {
        SidecarConfig { mode, filters: Vec::new() }
    }

    pub fn with_filter(mut self, name: impl Into<String>, variant: impl Into<String>) -> Self {
        self.filters.push(FilterSpec::new(name, variant));
        self
    }
}

pub(crate) fn base_components(mode: ProxyMode) -> &'static [ComponentKind] {
    const TCP: [ComponentKind; 5] = [
        ComponentKind::Ipc,
        ComponentKind::Read,
        ComponentKind::Write,
        ComponentKind::Notification,
        ComponentKind::ProtocolOther,
    ];
    if mode.parses_protocol() {
        &ComponentKind::BASE
    } else {
        &TCP
    }
}

/// Components a message crosses in one sidecar: the base datapath for the
/// mode, then the filters in chain order.
pub fn components_for_config(cfg: &SidecarConfig) -> Vec<ComponentKind> {
    base_components(cfg.mode)
        .iter()
        .cloned()
        .chain(cfg.filters.iter().map(FilterSpec::component))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("no profile for {component} in {mode} mode on platform {platform:?}")]
pub struct MissingProfile {
    pub platform: String,
    pub component: ComponentKind,
    pub mode: ProxyMode,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComponentCharge {
    pub component: ComponentKind,
    pub latency_us: f64,
    pub cpu_cores: f64,
}

/// Per-component overhead of one sidecar traversal (inbound plus outbound).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SidecarCost {
    pub latency_us: f64,
    pub cpu_cores: f64,
    pub components: Vec<ComponentCharge>,
}

impl SidecarCost {
    fn from_components(components: Vec<ComponentCharge>) -> Self {
        SidecarCost {
            latency_us: exact_sum(components.iter().map(|c| c.latency_us)),
            cpu_cores: exact_sum(components.iter().map(|c| c.cpu_cores)),
            components,
        }
    }
}

/// Overhead of every component of `cfg` for messages of `size_bytes` at
/// `rate_rps`, in chain order. Totals are correctly rounded sums, so they do
/// not depend on filter order.
pub fn sidecar_breakdown(
    db: &ProfileDb,
    cfg: &SidecarConfig,
    size_bytes: u64,
    rate_rps: f64,
) -> Result<SidecarCost, MissingProfile> {
    sidecar_breakdown_with(db, cfg, |profile| {
        (profile.latency.eval(size_bytes), profile.cpu.eval(size_bytes, rate_rps))
    })
}

/// Like [`sidecar_breakdown`] with a caller-supplied evaluation of each
/// component's `(latency_us, cpu_cores)`.
pub(crate) fn sidecar_breakdown_with<F>(
    db: &ProfileDb,
    cfg: &SidecarConfig,
    eval: F,
) -> Result<SidecarCost, MissingProfile>
where
    F: Fn(&crate::profile::ComponentProfile) -> (f64, f64),
{
    let components = components_for_config(cfg)
        .into_iter()
        .map(|kind| {
            let profile = db.lookup(&kind, cfg.mode).ok_or_else(|| MissingProfile {
                platform: db.platform().id.clone(),
                component: kind.clone(),
                mode: cfg.mode,
            })?;
            let (latency_us, cpu_cores) = eval(profile);
            Ok(ComponentCharge { component: kind, latency_us, cpu_cores })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SidecarCost::from_components(components))
}

pub fn sidecar_latency(db: &ProfileDb, cfg: &SidecarConfig, size_bytes: u64) -> Result<f64, MissingProfile> {
    sidecar_breakdown(db, cfg, size_bytes, 0.0).map(|c| c.latency_us)
}

pub fn sidecar_cpu(db: &ProfileDb, cfg: &SidecarConfig, size_bytes: u64, rate_rps: f64) -> Result<f64, MissingProfile> {
    sidecar_breakdown(db, cfg, size_bytes, rate_rps).map(|c| c.cpu_cores)
}
