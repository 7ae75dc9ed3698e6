use std::path::Path;

use serde::Deserialize;

use super::{parse_acg, read_file, AcgError, AnnotatedCallGraph};
use crate::sum::exact_sum;

/// Allowed deviation of the probability sum from 1.
pub const PROBABILITY_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleMember {
    pub label: String,
    pub graph: AnnotatedCallGraph,
    pub probability: f64,
}

impl EnsembleMember {
    pub fn new(label: impl Into<String>, graph: AnnotatedCallGraph, probability: f64) -> Self {
        EnsembleMember { label: label.into(), graph, probability }
    }
}

/// Alternative call graphs for one request type (cache hit vs miss, load
/// balanced paths) weighted by how often each occurs.
#[derive(Clone, Debug, PartialEq)]
pub struct AcgEnsemble {
    members: Vec<EnsembleMember>,
}

impl AcgEnsemble {
    pub fn new(members: Vec<EnsembleMember>) -> Result<Self, AcgError> {
        if members.is_empty() {
            return Err(AcgError::Ensemble("ensemble has no members".into()));
        }
        for m in &members {
            if !(m.probability > 0.0 && m.probability.is_finite()) {
                return Err(AcgError::Ensemble(format!("member {:?} has probability {}", m.label, m.probability)));
            }
        }
        let total = exact_sum(members.iter().map(|m| m.probability));
        if (total - 1.0).abs() > PROBABILITY_TOLERANCE {
            return Err(AcgError::Ensemble(format!("probabilities sum to {total}, not 1")));
        }
        Ok(AcgEnsemble { members })
    }

    /// A single graph with probability 1.
    pub fn single(label: impl Into<String>, graph: AnnotatedCallGraph) -> Self {
        AcgEnsemble { members: vec![EnsembleMember::new(label, graph, 1.0)] }
    }

    pub fn members(&self) -> &[EnsembleMember] {
        &self.members
    }

    /// Loads `[{"acg": <path>, "probability": p}, ...]`. Relative ACG paths
    /// resolve against the ensemble file's directory.
    pub fn load(path: &Path) -> Result<Self, AcgError> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Entry {
            acg: String,
            probability: f64,
        }

        let document = read_file(path)?;
        let de = &mut serde_json::Deserializer::from_str(&document);
        let entries: Vec<Entry> = serde_path_to_error::deserialize(de).map_err(AcgError::from_json)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut members = Vec::with_capacity(entries.len());
        for entry in entries {
            let acg_path = base.join(&entry.acg);
            let graph = parse_acg(&read_file(&acg_path)?)?;
            members.push(EnsembleMember::new(entry.acg, graph, entry.probability));
        }
        AcgEnsemble::new(members)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph() -> AnnotatedCallGraph {
        parse_acg(include_str!("../../tests/fixtures/bookinfo.acg.json")).unwrap()
    }

    #[test]
    fn probabilities_must_sum_to_one() {
        let ok = AcgEnsemble::new(vec![EnsembleMember::new("hit", graph(), 0.9), EnsembleMember::new("miss", graph(), 0.1)]);
        assert!(ok.is_ok());
        let short = AcgEnsemble::new(vec![EnsembleMember::new("a", graph(), 0.5), EnsembleMember::new("b", graph(), 0.4)]);
        assert!(matches!(short, Err(AcgError::Ensemble(_))));
        let zero = AcgEnsemble::new(vec![EnsembleMember::new("a", graph(), 1.0), EnsembleMember::new("b", graph(), 0.0)]);
        assert!(zero.is_err());
        assert!(AcgEnsemble::new(vec![]).is_err());
    }

    #[test]
    fn thirds_sum_within_tolerance() {
        let third = 1.0 / 3.0;
        let members = (0..3).map(|i| EnsembleMember::new(i.to_string(), graph(), third)).collect();
        assert!(AcgEnsemble::new(members).is_ok());
    }
}
