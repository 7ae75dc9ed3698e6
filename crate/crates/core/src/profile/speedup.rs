use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{ComponentKind, ComponentProfile, CpuProfile, LatencyProfile, ProfileDb, ProfileError};
use crate::config::ProxyMode;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ProfileEdit {
    ReplaceWith { latency: LatencyProfile, cpu: CpuProfile },
    Scale { latency_factor: f64, cpu_factor: f64 },
}

impl ProfileEdit {
    fn apply(&self, latency: LatencyProfile, cpu: CpuProfile) -> (LatencyProfile, CpuProfile) {
        match *self {
            ProfileEdit::ReplaceWith { latency, cpu } => (latency, cpu),
            ProfileEdit::Scale { latency_factor, cpu_factor } => (
                LatencyProfile::new(latency.base_us * latency_factor, latency.per_byte_us * latency_factor),
                CpuProfile::new(cpu.base_cpu_s * cpu_factor, cpu.per_byte_cpu_s * cpu_factor),
            ),
        }
    }
}

/// One edit of a speedup profile. `proxy_modes: None` targets every mode
/// the component has a profile for.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeedupEdit {
    pub kind: ComponentKind,
    pub proxy_modes: Option<BTreeSet<ProxyMode>>,
    pub edit: ProfileEdit,
}

/// A set of profile edits describing a datapath optimization, e.g. Unix
/// domain sockets replacing loopback TCP for the sidecar/application hop.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SpeedupProfile {
    pub name: String,
    pub edits: Vec<SpeedupEdit>,
}

impl SpeedupProfile {
    pub fn new(name: impl Into<String>) -> Self {
        SpeedupProfile { name: name.into(), edits: Vec::new() }
    }

    pub fn scale(
        mut self,
        kind: ComponentKind,
        modes: impl IntoIterator<Item = ProxyMode>,
        latency_factor: f64,
        cpu_factor: f64,
    ) -> Self {
        self.edits.push(SpeedupEdit {
            kind,
            proxy_modes: scope(modes),
            edit: ProfileEdit::Scale { latency_factor, cpu_factor },
        });
        self
    }

    pub fn replace(
        mut self,
        kind: ComponentKind,
        modes: impl IntoIterator<Item = ProxyMode>,
        latency: LatencyProfile,
        cpu: CpuProfile,
    ) -> Self {
        self.edits.push(SpeedupEdit { kind, proxy_modes: scope(modes), edit: ProfileEdit::ReplaceWith { latency, cpu } });
        self
    }

    pub fn check(&self) -> Result<(), ProfileError> {
        for e in &self.edits {
            match e.edit {
                ProfileEdit::Scale { latency_factor, cpu_factor } => {
                    for f in [latency_factor, cpu_factor] {
                        if !(f > 0.0 && f.is_finite()) {
                            return Err(ProfileError::Invalid(format!(
                                "scale factors for {} must be finite and > 0, got {f}",
                                e.kind
                            )));
                        }
                    }
                }
                ProfileEdit::ReplaceWith { latency, cpu } => {
                    latency.check().and_then(|_| cpu.check()).map_err(ProfileError::Invalid)?;
                }
            }
            if e.proxy_modes.as_ref().is_some_and(|m| m.is_empty()) {
                return Err(ProfileError::Invalid(format!("edit for {} has an empty proxy_modes list", e.kind)));
            }
        }
        Ok(())
    }

    pub fn from_json(document: &str) -> Result<Self, ProfileError> {
        let de = &mut serde_json::Deserializer::from_str(document);
        let raw: RawSpeedup = serde_path_to_error::deserialize(de).map_err(|e| ProfileError::Parse {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        let mut edits = Vec::with_capacity(raw.edits.len());
        for (i, e) in raw.edits.into_iter().enumerate() {
            let path = format!("edits[{i}]");
            let kind = ComponentKind::from_parts(&e.kind, e.filter_name.as_deref(), e.filter_variant.as_deref())
                .map_err(|message| ProfileError::Parse { path: path.clone(), message })?;
            let edit = match (e.scale, e.replace_with) {
                (Some(s), None) => ProfileEdit::Scale { latency_factor: s.latency_factor, cpu_factor: s.cpu_factor },
                (None, Some(r)) => ProfileEdit::ReplaceWith { latency: r.latency, cpu: r.cpu },
                _ => {
                    return Err(ProfileError::Parse {
                        path,
                        message: "exactly one of `scale` or `replace_with` is required".into(),
                    })
                }
            };
            edits.push(SpeedupEdit { kind, proxy_modes: e.proxy_modes.map(|m| m.into_iter().collect()), edit });
        }
        let profile = SpeedupProfile { name: raw.name, edits };
        profile.check()?;
        Ok(profile)
    }

    pub fn to_json(&self) -> String {
        let raw = RawSpeedup {
            name: self.name.clone(),
            edits: self
                .edits
                .iter()
                .map(|e| {
                    let (scale, replace_with) = match e.edit {
                        ProfileEdit::Scale { latency_factor, cpu_factor } => {
                            (Some(RawScale { latency_factor, cpu_factor }), None)
                        }
                        ProfileEdit::ReplaceWith { latency, cpu } => (None, Some(RawReplace { latency, cpu })),
                    };
                    RawEdit {
                        kind: e.kind.tag().to_string(),
                        filter_name: e.kind.filter_key().map(|k| k.name.clone()),
                        filter_variant: e.kind.filter_key().map(|k| k.variant.clone()),
                        proxy_modes: e.proxy_modes.as_ref().map(|m| m.iter().copied().collect()),
                        scale,
                        replace_with,
                    }
                })
                .collect(),
        };
        serde_json::to_string_pretty(&raw).expect("speedup profile serializes")
    }
}

fn scope(modes: impl IntoIterator<Item = ProxyMode>) -> Option<BTreeSet<ProxyMode>> {
    let set: BTreeSet<_> = modes.into_iter().collect();
    (!set.is_empty()).then_some(set)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpeedup {
    #[serde(default)]
    name: String,
    edits: Vec<RawEdit>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEdit {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    filter_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    filter_variant: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    proxy_modes: Option<Vec<ProxyMode>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scale: Option<RawScale>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    replace_with: Option<RawReplace>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScale {
    latency_factor: f64,
    cpu_factor: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawReplace {
    latency: LatencyProfile,
    cpu: CpuProfile,
}

/// Returns a copy of `db` with every edit applied. The input is untouched.
///
/// An entry shared by several modes is split when an edit targets only
/// some of them.
pub fn apply_speedup(db: &ProfileDb, speedup: &SpeedupProfile) -> Result<ProfileDb, ProfileError> {
    speedup.check()?;
    let mut out = db.clone();
    for edit in &speedup.edits {
        apply_edit(&mut out, edit)?;
    }
    Ok(out)
}

fn apply_edit(db: &mut ProfileDb, edit: &SpeedupEdit) -> Result<(), ProfileError> {
    let present: BTreeSet<ProxyMode> = db
        .entries()
        .iter()
        .filter(|e| e.kind == edit.kind)
        .flat_map(|e| e.proxy_modes.iter().copied())
        .collect();
    let targets = match &edit.proxy_modes {
        Some(modes) => {
            if let Some(missing) = modes.iter().find(|m| !present.contains(m)) {
                return Err(ProfileError::UnknownComponent { kind: edit.kind.clone(), mode: missing.to_string() });
            }
            modes.clone()
        }
        None if present.is_empty() => {
            return Err(ProfileError::UnknownComponent { kind: edit.kind.clone(), mode: "any".into() });
        }
        None => present,
    };

    let entries = db.entries_mut();
    let mut i = 0;
    while i < entries.len() {
        let entry = &mut entries[i];
        if entry.kind != edit.kind || entry.proxy_modes.is_disjoint(&targets) {
            i += 1;
            continue;
        }
        let (latency, cpu) = edit.edit.apply(entry.latency, entry.cpu);
        if entry.proxy_modes.is_subset(&targets) {
            entry.latency = latency;
            entry.cpu = cpu;
            i += 1;
        } else {
            let edited: BTreeSet<_> = entry.proxy_modes.intersection(&targets).copied().collect();
            entry.proxy_modes.retain(|m| !edited.contains(m));
            let split = ComponentProfile::new(edit.kind.clone(), latency, cpu, edited);
            entries.insert(i + 1, split);
            i += 2;
        }
    }
    Ok(())
}
