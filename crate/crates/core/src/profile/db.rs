use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{ComponentKind, CpuProfile, LatencyProfile, ProfileError};
use crate::config::ProxyMode;

/// Messages above this size are usually split by the datapath.
pub const DEFAULT_SPLIT_THRESHOLD_BYTES: u64 = 4096;

const REFERENCE_DB: &str = include_str!("../../data/reference_profiles.json");

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Platform {
    pub id: String,
    pub description: String,
}

impl Platform {
    pub fn new(id: impl Into<String>, description: impl Into<String>) -> Self {
        Platform { id: id.into(), description: description.into() }
    }
}

/// Latency and CPU profile of one component, valid for the listed proxy modes.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentProfile {
    pub kind: ComponentKind,
    pub latency: LatencyProfile,
    pub cpu: CpuProfile,
    pub proxy_modes: BTreeSet<ProxyMode>,
}

impl ComponentProfile {
    pub fn new(
        kind: ComponentKind,
        latency: LatencyProfile,
        cpu: CpuProfile,
        proxy_modes: impl IntoIterator<Item = ProxyMode>,
    ) -> Self {
        ComponentProfile { kind, latency, cpu, proxy_modes: proxy_modes.into_iter().collect() }
    }

    pub fn applies_to(&self, mode: ProxyMode) -> bool {
        self.proxy_modes.contains(&mode)
    }

    fn check(&self) -> Result<(), String> {
        if self.proxy_modes.is_empty() {
            return Err(format!("{}: proxy_modes is empty", self.kind));
        }
        if self.kind == ComponentKind::ProtocolParsing && self.applies_to(ProxyMode::Tcp) {
            return Err("protocol_parsing cannot apply to tcp mode".into());
        }
        self.latency.check().map_err(|e| format!("{}: {e}", self.kind))?;
        self.cpu.check().map_err(|e| format!("{}: {e}", self.kind))
    }
}

/// Profiles of every component measured on one platform.
///
/// Entries may each cover several proxy modes; no two entries may cover the
/// same `(kind, mode)` pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ProfileDb {
    platform: Platform,
    split_threshold_bytes: u64,
    entries: Vec<ComponentProfile>,
}

impl ProfileDb {
    pub fn new(
        platform: Platform,
        split_threshold_bytes: u64,
        entries: Vec<ComponentProfile>,
    ) -> Result<Self, ProfileError> {
        if platform.id.is_empty() {
            return Err(ProfileError::Invalid("platform id must be non-empty".into()));
        }
        if split_threshold_bytes == 0 {
            return Err(ProfileError::Invalid("split_threshold_bytes must be >= 1".into()));
        }
        let mut seen = BTreeSet::new();
        for entry in &entries {
            entry.check().map_err(ProfileError::Invalid)?;
            for &mode in &entry.proxy_modes {
                if !seen.insert((entry.kind.clone(), mode)) {
                    return Err(ProfileError::Invalid(format!(
                        "duplicate profile for {} in {mode} mode",
                        entry.kind
                    )));
                }
            }
        }
        Ok(ProfileDb { platform, split_threshold_bytes, entries })
    }

    /// The bundled reference profiles: the measured single-sidecar
    /// breakdown at 100 B / 30K rps plus five HTTP filters.
    pub fn reference() -> Self {
        Self::from_json(REFERENCE_DB).expect("bundled reference profile DB is valid")
    }

    pub fn platform(&self) -> &Platform {
        &self.platform
    }

    pub fn split_threshold_bytes(&self) -> u64 {
        self.split_threshold_bytes
    }

    pub fn entries(&self) -> &[ComponentProfile] {
        &self.entries
    }

    pub fn lookup(&self, kind: &ComponentKind, mode: ProxyMode) -> Option<&ComponentProfile> {
        self.entries.iter().find(|e| &e.kind == kind && e.applies_to(mode))
    }

    pub(crate) fn entries_mut(&mut self) -> &mut Vec<ComponentProfile> {
        &mut self.entries
    }

    /// Base datapath components of `mode` that have no profile.
    pub fn missing_base_components(&self, mode: ProxyMode) -> Vec<ComponentKind> {
        crate::config::base_components(mode)
            .iter()
            .filter(|kind| self.lookup(kind, mode).is_none())
            .cloned()
            .collect()
    }

    pub fn is_complete(&self, mode: ProxyMode) -> bool {
        self.missing_base_components(mode).is_empty()
    }

    pub fn from_json(document: &str) -> Result<Self, ProfileError> {
        let de = &mut serde_json::Deserializer::from_str(document);
        let raw: RawDb = serde_path_to_error::deserialize(de).map_err(|e| ProfileError::Parse {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        let mut entries = Vec::with_capacity(raw.entries.len());
        for (i, e) in raw.entries.into_iter().enumerate() {
            let kind = ComponentKind::from_parts(&e.kind, e.filter_name.as_deref(), e.filter_variant.as_deref())
                .map_err(|message| ProfileError::Parse { path: format!("entries[{i}]"), message })?;
            entries.push(ComponentProfile::new(kind, e.latency, e.cpu, e.proxy_modes));
        }
        ProfileDb::new(raw.platform, raw.split_threshold_bytes, entries)
    }

    pub fn to_json(&self) -> String {
        let raw = RawDb {
            platform: self.platform.clone(),
            split_threshold_bytes: self.split_threshold_bytes,
            entries: self
                .entries
                .iter()
                .map(|e| RawEntry {
                    kind: e.kind.tag().to_string(),
                    filter_name: e.kind.filter_key().map(|k| k.name.clone()),
                    filter_variant: e.kind.filter_key().map(|k| k.variant.clone()),
                    proxy_modes: e.proxy_modes.iter().copied().collect(),
                    latency: e.latency,
                    cpu: e.cpu,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&raw).expect("profile DB serializes")
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDb {
    platform: Platform,
    #[serde(default = "default_split_threshold")]
    split_threshold_bytes: u64,
    entries: Vec<RawEntry>,
}

fn default_split_threshold() -> u64 {
    DEFAULT_SPLIT_THRESHOLD_BYTES
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    filter_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    filter_variant: Option<String>,
    proxy_modes: Vec<ProxyMode>,
    latency: LatencyProfile,
    cpu: CpuProfile,
}

/// Profile DBs keyed by platform id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProfileSet {
    dbs: BTreeMap<String, ProfileDb>,
}

impl ProfileSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn single(db: ProfileDb) -> Self {
        let mut set = Self::new();
        set.dbs.insert(db.platform.id.clone(), db);
        set
    }

    /// Adds a DB; fails if its platform id is already present.
    pub fn insert(&mut self, db: ProfileDb) -> Result<(), ProfileError> {
        let id = db.platform.id.clone();
        if self.dbs.contains_key(&id) {
            return Err(ProfileError::Invalid(format!("platform {id:?} loaded twice")));
        }
        self.dbs.insert(id, db);
        Ok(())
    }

    pub fn get(&self, platform_id: &str) -> Option<&ProfileDb> {
        self.dbs.get(platform_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ProfileDb> {
        self.dbs.values()
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = &mut ProfileDb> {
        self.dbs.values_mut()
    }

    pub fn len(&self) -> usize {
        self.dbs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dbs.is_empty()
    }
}

impl FromIterator<ProfileDb> for ProfileSet {
    /// Later DBs with a duplicate platform id replace earlier ones.
    fn from_iter<I: IntoIterator<Item = ProfileDb>>(iter: I) -> Self {
        ProfileSet { dbs: iter.into_iter().map(|db| (db.platform.id.clone(), db)).collect() }
    }
}
