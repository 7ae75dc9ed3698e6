//! Annotated call graphs.
//!
//! An ACG lists service instances (each with a platform and a sidecar
//! configuration) and a DAG of invocations. Each invocation carries the
//! caller, the callee, the message size and the message rate; an edge
//! `[a, b]` means invocation `b` is issued after `a`.

mod ensemble;
mod ingest;

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::config::SidecarConfig;

pub use ensemble::{AcgEnsemble, EnsembleMember, PROBABILITY_TOLERANCE};
pub use ingest::{group_traces, ingest_trace, ingest_traces, read_trace_csv, IngestDefaults, IngestedTrace, TraceRow};

#[derive(Debug, thiserror::Error)]
pub enum AcgError {
    #[error("parse error at {path} (line {line}, column {column}): {message}")]
    Parse { path: String, line: usize, column: usize, message: String },
    #[error("invalid call graph: {}", join(.0))]
    Validation(Vec<Violation>),
    #[error("trace {0:?} has no rows")]
    EmptyTrace(String),
    #[error("trace error: {0}")]
    Trace(String),
    #[error("invalid ensemble: {0}")]
    Ensemble(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

fn join(violations: &[Violation]) -> String {
    violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

impl AcgError {
    pub(crate) fn from_json(e: serde_path_to_error::Error<serde_json::Error>) -> Self {
        AcgError::Parse {
            path: e.path().to_string(),
            line: e.inner().line(),
            column: e.inner().column(),
            message: e.inner().to_string(),
        }
    }
}

fn default_meshed() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceInstance {
    pub id: String,
    pub platform: String,
    pub config: SidecarConfig,
    /// `false` for services outside the mesh, which have no sidecar.
    #[serde(default = "default_meshed")]
    pub meshed: bool,
}

impl ServiceInstance {
    pub fn new(id: impl Into<String>, platform: impl Into<String>, config: SidecarConfig) -> Self {
        ServiceInstance { id: id.into(), platform: platform.into(), config, meshed: true }
    }

    pub fn unmeshed(mut self) -> Self {
        self.meshed = false;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Invocation {
    pub id: String,
    /// `None` when called from outside the application.
    #[serde(default)]
    pub caller: Option<String>,
    pub callee: String,
    pub size_bytes: u64,
    pub rate_rps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_size_bytes: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub app_latency_us: Option<f64>,
}

impl Invocation {
    pub fn new(
        id: impl Into<String>,
        caller: Option<&str>,
        callee: impl Into<String>,
        size_bytes: u64,
        rate_rps: f64,
    ) -> Self {
        Invocation {
            id: id.into(),
            caller: caller.map(str::to_string),
            callee: callee.into(),
            size_bytes,
            rate_rps,
            response_size_bytes: None,
            app_latency_us: None,
        }
    }

    pub fn response_size(&self) -> u64 {
        self.response_size_bytes.unwrap_or(self.size_bytes)
    }

    pub fn app_latency(&self) -> f64 {
        self.app_latency_us.unwrap_or(0.0)
    }
}

/// The on-disk form of an ACG. May be invalid; see [`validate`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CallGraphSpec {
    pub services: Vec<ServiceInstance>,
    pub invocations: Vec<Invocation>,
    #[serde(default)]
    pub edges: Vec<(String, String)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    EmptyId { entity: &'static str, index: usize },
    DuplicateService { id: String },
    DuplicateInvocation { id: String },
    DanglingReference { from: String, missing: String },
    InvalidRate { invocation: String },
    InvalidAppLatency { invocation: String },
    Cycle { invocations: Vec<String> },
    NoRoot,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyId { entity, index } => write!(f, "{entity} #{index} has an empty id"),
            Violation::DuplicateService { id } => write!(f, "service {id:?} declared more than once"),
            Violation::DuplicateInvocation { id } => write!(f, "invocation {id:?} declared more than once"),
            Violation::DanglingReference { from, missing } => write!(f, "{from} references undeclared {missing:?}"),
            Violation::InvalidRate { invocation } => {
                write!(f, "invocation {invocation:?} must have a finite rate_rps > 0")
            }
            Violation::InvalidAppLatency { invocation } => {
                write!(f, "invocation {invocation:?} must have a finite app_latency_us >= 0")
            }
            Violation::Cycle { invocations } => write!(f, "invoked-after cycle through {}", invocations.join(", ")),
            Violation::NoRoot => f.write_str("no root invocation"),
        }
    }
}

/// Checks every structural invariant of an ACG. Returns an empty list when
/// the graph is valid.
pub fn validate(spec: &CallGraphSpec) -> Vec<Violation> {
    let mut out = Vec::new();

    let mut services = HashSet::new();
    for (index, s) in spec.services.iter().enumerate() {
        if s.id.is_empty() {
            out.push(Violation::EmptyId { entity: "service", index });
        } else if !services.insert(s.id.as_str()) {
            out.push(Violation::DuplicateService { id: s.id.clone() });
        }
    }

    let mut invocations = HashSet::new();
    for (index, inv) in spec.invocations.iter().enumerate() {
        if inv.id.is_empty() {
            out.push(Violation::EmptyId { entity: "invocation", index });
        } else if !invocations.insert(inv.id.as_str()) {
            out.push(Violation::DuplicateInvocation { id: inv.id.clone() });
        }
        let from = format!("invocation {:?}", inv.id);
        for name in inv.caller.iter().chain([&inv.callee]) {
            if !services.contains(name.as_str()) {
                out.push(Violation::DanglingReference { from: from.clone(), missing: name.clone() });
            }
        }
        if !(inv.rate_rps > 0.0 && inv.rate_rps.is_finite()) {
            out.push(Violation::InvalidRate { invocation: inv.id.clone() });
        }
        if inv.app_latency_us.is_some_and(|l| !(l >= 0.0 && l.is_finite())) {
            out.push(Violation::InvalidAppLatency { invocation: inv.id.clone() });
        }
    }

    let mut dangling_edge = false;
    for (a, b) in &spec.edges {
        for end in [a, b] {
            if !invocations.contains(end.as_str()) {
                dangling_edge = true;
                out.push(Violation::DanglingReference { from: format!("edge [{a:?}, {b:?}]"), missing: end.clone() });
            }
        }
    }

    if spec.invocations.is_empty() {
        out.push(Violation::NoRoot);
    } else if !dangling_edge {
        let index = index_invocations(&spec.invocations);
        let (succ, pred) = adjacency(spec, &index);
        let (order, _) = topological_order(&succ, &pred);
        if order.len() < spec.invocations.len() {
            let placed: HashSet<usize> = order.into_iter().collect();
            let cyclic = (0..spec.invocations.len())
                .filter(|i| !placed.contains(i))
                .map(|i| spec.invocations[i].id.clone())
                .collect();
            out.push(Violation::Cycle { invocations: cyclic });
        }
    }
    out
}

fn index_invocations(invocations: &[Invocation]) -> HashMap<&str, usize> {
    let mut index = HashMap::with_capacity(invocations.len());
    for (i, inv) in invocations.iter().enumerate() {
        index.entry(inv.id.as_str()).or_insert(i);
    }
    index
}

type Adjacency = Vec<Vec<usize>>;

fn adjacency(spec: &CallGraphSpec, index: &HashMap<&str, usize>) -> (Adjacency, Adjacency) {
    let n = spec.invocations.len();
    let mut edges = BTreeSet::new();
    for (a, b) in &spec.edges {
        if let (Some(&a), Some(&b)) = (index.get(a.as_str()), index.get(b.as_str())) {
            edges.insert((a, b));
        }
    }
    let mut succ = vec![Vec::new(); n];
    let mut pred = vec![Vec::new(); n];
    for (a, b) in edges {
        succ[a].push(b);
        pred[b].push(a);
    }
    (succ, pred)
}

/// Kahn's algorithm, always taking the lowest ready index. Returns the
/// order (shorter than `n` when there is a cycle) and the roots.
fn topological_order(succ: &Adjacency, pred: &Adjacency) -> (Vec<usize>, Vec<usize>) {
    let mut indegree: Vec<usize> = pred.iter().map(Vec::len).collect();
    let roots: Vec<usize> = (0..succ.len()).filter(|&i| indegree[i] == 0).collect();
    let mut ready: BinaryHeap<Reverse<usize>> = roots.iter().map(|&i| Reverse(i)).collect();
    let mut order = Vec::with_capacity(succ.len());
    while let Some(Reverse(i)) = ready.pop() {
        order.push(i);
        for &j in &succ[i] {
            indegree[j] -= 1;
            if indegree[j] == 0 {
                ready.push(Reverse(j));
            }
        }
    }
    (order, roots)
}

/// A validated call graph with resolved indices. Immutable.
#[derive(Clone, Debug)]
pub struct AnnotatedCallGraph {
    spec: CallGraphSpec,
    services: HashMap<String, usize>,
    successors: Adjacency,
    predecessors: Adjacency,
    topo_order: Vec<usize>,
    roots: Vec<usize>,
}

impl PartialEq for AnnotatedCallGraph {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
    }
}

impl AnnotatedCallGraph {
    pub fn new(spec: CallGraphSpec) -> Result<Self, AcgError> {
        let violations = validate(&spec);
        if !violations.is_empty() {
            return Err(AcgError::Validation(violations));
        }
        let index = index_invocations(&spec.invocations);
        let (successors, predecessors) = adjacency(&spec, &index);
        let (topo_order, roots) = topological_order(&successors, &predecessors);
        let services = spec.services.iter().enumerate().map(|(i, s)| (s.id.clone(), i)).collect();
        Ok(AnnotatedCallGraph { spec, services, successors, predecessors, topo_order, roots })
    }

    pub fn spec(&self) -> &CallGraphSpec {
        &self.spec
    }

    pub fn into_spec(self) -> CallGraphSpec {
        self.spec
    }

    pub fn services(&self) -> &[ServiceInstance] {
        &self.spec.services
    }

    pub fn invocations(&self) -> &[Invocation] {
        &self.spec.invocations
    }

    pub fn edges(&self) -> &[(String, String)] {
        &self.spec.edges
    }

    pub fn service(&self, id: &str) -> Option<&ServiceInstance> {
        self.services.get(id).map(|&i| &self.spec.services[i])
    }

    /// Indices of invocations issued after invocation `i`, ascending.
    pub fn successors(&self, i: usize) -> &[usize] {
        &self.successors[i]
    }

    pub fn predecessors(&self, i: usize) -> &[usize] {
        &self.predecessors[i]
    }

    pub fn topological_order(&self) -> &[usize] {
        &self.topo_order
    }

    /// Invocations with no predecessor.
    pub fn roots(&self) -> &[usize] {
        &self.roots
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.spec).expect("call graph serializes")
    }
}

/// Parses and validates an ACG JSON document.
pub fn parse_acg(document: &str) -> Result<AnnotatedCallGraph, AcgError> {
    let de = &mut serde_json::Deserializer::from_str(document);
    let spec: CallGraphSpec = serde_path_to_error::deserialize(de).map_err(AcgError::from_json)?;
    AnnotatedCallGraph::new(spec)
}

pub(crate) fn read_file(path: &std::path::Path) -> Result<String, AcgError> {
    std::fs::read_to_string(path).map_err(|e| AcgError::Io { path: path.display().to_string(), message: e.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ProxyMode;

    const BOOKINFO: &str = include_str!("../../tests/fixtures/bookinfo.acg.json");

    fn svc(id: &str) -> ServiceInstance {
        ServiceInstance::new(id, "p", SidecarConfig::new(ProxyMode::Http))
    }

    fn two_node(edges: Vec<(&str, &str)>) -> CallGraphSpec {
        CallGraphSpec {
            services: vec![svc("x"), svc("y")],
            invocations: vec![Invocation::new("A", Some("x"), "y", 100, 1.0), Invocation::new("B", Some("y"), "x", 100, 1.0)],
            edges: edges.into_iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
        }
    }

    #[test]
    fn bookinfo_is_valid() {
        let g = parse_acg(BOOKINFO).unwrap();
        assert_eq!(g.services().len(), 5);
        assert_eq!(g.invocations().len(), 5);
        assert_eq!(g.roots().len(), 1);
        assert!(validate(g.spec()).is_empty());
        assert!(g.service("frontend").is_some());
    }

    #[test]
    fn two_cycle_is_one_violation() {
        let v = validate(&two_node(vec![("A", "B"), ("B", "A")]));
        assert_eq!(v, vec![Violation::Cycle { invocations: vec!["A".into(), "B".into()] }]);
    }

    #[test]
    fn self_loop_is_a_cycle() {
        let v = validate(&two_node(vec![("A", "A")]));
        assert_eq!(v, vec![Violation::Cycle { invocations: vec!["A".into()] }]);
    }

    #[test]
    fn dangling_references() {
        let mut spec = two_node(vec![("A", "Z")]);
        spec.invocations[1].callee = "ghost".into();
        let v = validate(&spec);
        assert!(v.contains(&Violation::DanglingReference { from: "invocation \"B\"".into(), missing: "ghost".into() }));
        assert!(v.iter().any(|x| matches!(x, Violation::DanglingReference { missing, .. } if missing == "Z")));
    }

    #[test]
    fn empty_invocations_have_no_root() {
        let err = parse_acg(r#"{"services":[],"invocations":[],"edges":[]}"#).unwrap_err();
        match err {
            AcgError::Validation(v) => assert_eq!(v, vec![Violation::NoRoot]),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn malformed_json_reports_position() {
        match parse_acg("{\"services\": [}").unwrap_err() {
            AcgError::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("{other}"),
        }
        let doc = r#"{"services":[],"invocations":[{"id":"a","callee":"b","size_bytes":"big","rate_rps":1}]}"#;
        match parse_acg(doc).unwrap_err() {
            AcgError::Parse { path, .. } => assert_eq!(path, "invocations[0].size_bytes"),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn rejects_bad_rates_and_duplicates() {
        let mut spec = two_node(vec![]);
        spec.invocations[0].rate_rps = 0.0;
        spec.invocations[1].id = "A".into();
        spec.invocations[1].app_latency_us = Some(-1.0);
        spec.services.push(svc("x"));
        let v = validate(&spec);
        assert!(v.contains(&Violation::InvalidRate { invocation: "A".into() }));
        assert!(v.contains(&Violation::DuplicateInvocation { id: "A".into() }));
        assert!(v.contains(&Violation::DuplicateService { id: "x".into() }));
        assert!(v.contains(&Violation::InvalidAppLatency { invocation: "A".into() }));
    }

    #[test]
    fn serialization_round_trips() {
        let g = parse_acg(BOOKINFO).unwrap();
        assert_eq!(parse_acg(&g.to_json()).unwrap(), g);
    }
}
