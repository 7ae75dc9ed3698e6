//! End-to-end overhead prediction for call graphs.
//!
//! Each invocation is charged one traversal of the caller's sidecar and one
//! of the callee's (a traversal covers inbound plus outbound processing, so
//! the round trip is covered). CPU overhead is the sum over invocations;
//! latency overhead is the weight of the heaviest root-to-leaf path of the
//! invocation DAG.

mod whatif;

use std::cmp::Ordering;

use serde::Serialize;

use crate::acg::{AcgEnsemble, AnnotatedCallGraph, Invocation, ServiceInstance};
use crate::config::{sidecar_breakdown, sidecar_breakdown_with, ComponentCharge, MissingProfile, ProxyMode, SidecarCost};
use crate::exec::Execution;
use crate::profile::{ProfileError, ProfileSet};
use crate::sum::exact_sum;

pub use whatif::{whatif, ComponentDelta, WhatIfReport};

#[derive(Debug, thiserror::Error)]
pub enum PredictError {
    #[error(transparent)]
    MissingProfile(#[from] MissingProfile),
    #[error("service {service:?} runs on platform {platform:?}, which has no profile DB")]
    UnknownPlatform { service: String, platform: String },
    #[error(transparent)]
    Speedup(#[from] ProfileError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PredictOptions {
    /// Charge each sidecar the mean of its request-size and response-size
    /// cost when an invocation declares a distinct response size. Off by
    /// default: only the request size is used.
    pub mean_request_response: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Caller,
    Callee,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SidecarCharge {
    pub service: String,
    pub role: Role,
    pub platform: String,
    pub mode: ProxyMode,
    pub latency_us: f64,
    pub cpu_cores: f64,
    pub components: Vec<ComponentCharge>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InvocationOverhead {
    pub invocation: String,
    pub caller: Option<String>,
    pub callee: String,
    pub size_bytes: u64,
    pub rate_rps: f64,
    /// Sum of every sidecar component latency plus `app_latency_us`.
    pub latency_us: f64,
    pub cpu_cores: f64,
    pub app_latency_us: f64,
    pub sidecars: Vec<SidecarCharge>,
}

impl InvocationOverhead {
    pub fn charges(&self) -> impl Iterator<Item = &ComponentCharge> {
        self.sidecars.iter().flat_map(|s| s.components.iter())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PredictionReport {
    pub latency_overhead_us: f64,
    pub cpu_overhead_cores: f64,
    pub critical_path: Vec<String>,
    pub per_invocation: Vec<InvocationOverhead>,
    pub warnings: Vec<String>,
}

impl PredictionReport {
    pub fn invocation(&self, id: &str) -> Option<&InvocationOverhead> {
        self.per_invocation.iter().find(|i| i.invocation == id)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MemberReport {
    pub label: String,
    pub probability: f64,
    pub report: PredictionReport,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnsembleReport {
    pub latency_overhead_us: f64,
    pub cpu_overhead_cores: f64,
    pub members: Vec<MemberReport>,
    pub warnings: Vec<String>,
}

/// What to predict: one call graph or a weighted ensemble.
#[derive(Clone, Copy, Debug)]
pub enum Workload<'a> {
    Graph(&'a AnnotatedCallGraph),
    Ensemble(&'a AcgEnsemble),
}

impl Workload<'_> {
    pub(crate) fn graphs(&self) -> Vec<&AnnotatedCallGraph> {
        match self {
            Workload::Graph(g) => vec![g],
            Workload::Ensemble(e) => e.members().iter().map(|m| &m.graph).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Prediction {
    Single(PredictionReport),
    Ensemble(EnsembleReport),
}

impl Prediction {
    pub fn latency_overhead_us(&self) -> f64 {
        match self {
            Prediction::Single(r) => r.latency_overhead_us,
            Prediction::Ensemble(r) => r.latency_overhead_us,
        }
    }

    pub fn cpu_overhead_cores(&self) -> f64 {
        match self {
            Prediction::Single(r) => r.cpu_overhead_cores,
            Prediction::Ensemble(r) => r.cpu_overhead_cores,
        }
    }

    pub fn warnings(&self) -> &[String] {
        match self {
            Prediction::Single(r) => &r.warnings,
            Prediction::Ensemble(r) => &r.warnings,
        }
    }
}

fn push_unique(warnings: &mut Vec<String>, w: String) {
    if !warnings.contains(&w) {
        warnings.push(w);
    }
}

fn charge_sidecar(
    service: &ServiceInstance,
    role: Role,
    inv: &Invocation,
    dbs: &ProfileSet,
    opts: PredictOptions,
    warnings: &mut Vec<String>,
) -> Result<Option<SidecarCharge>, PredictError> {
    if !service.meshed {
        return Ok(None);
    }
    let db = dbs.get(&service.platform).ok_or_else(|| PredictError::UnknownPlatform {
        service: service.id.clone(),
        platform: service.platform.clone(),
    })?;
    let cfg = &service.config;
    if let Some(component) = db.missing_base_components(cfg.mode).into_iter().next() {
        return Err(MissingProfile { platform: db.platform().id.clone(), component, mode: cfg.mode }.into());
    }

    let (size, response) = (inv.size_bytes, inv.response_size());
    let rate = inv.rate_rps;
    let blended = opts.mean_request_response && response != size;
    let cost: SidecarCost = if blended {
        sidecar_breakdown_with(db, cfg, |p| {
            (
                (p.latency.eval(size) + p.latency.eval(response)) / 2.0,
                (p.cpu.eval(size, rate) + p.cpu.eval(response, rate)) / 2.0,
            )
        })?
    } else {
        sidecar_breakdown(db, cfg, size, rate)?
    };

    let threshold = db.split_threshold_bytes();
    let largest = if blended { size.max(response) } else { size };
    if largest > threshold {
        push_unique(
            warnings,
            format!(
                "invocation {}: {largest} B exceeds the {threshold} B split threshold of platform {}; overhead is underestimated",
                inv.id,
                db.platform().id
            ),
        );
    }
    for f in cfg.filters.iter().filter(|f| f.alters_rate()) {
        push_unique(
            warnings,
            format!(
                "service {}: filter {}:{} may drop or throttle messages; all components are modelled at the full rate",
                service.id, f.name, f.variant
            ),
        );
    }

    Ok(Some(SidecarCharge {
        service: service.id.clone(),
        role,
        platform: service.platform.clone(),
        mode: cfg.mode,
        latency_us: cost.latency_us,
        cpu_cores: cost.cpu_cores,
        components: cost.components,
    }))
}

fn overhead_with_warnings(
    inv: &Invocation,
    g: &AnnotatedCallGraph,
    dbs: &ProfileSet,
    opts: PredictOptions,
    warnings: &mut Vec<String>,
) -> Result<InvocationOverhead, PredictError> {
    let mut sidecars = Vec::with_capacity(2);
    let caller = inv.caller.as_deref().and_then(|id| g.service(id));
    if let Some(caller) = caller {
        sidecars.extend(charge_sidecar(caller, Role::Caller, inv, dbs, opts, warnings)?);
    }
    let callee = g.service(&inv.callee).expect("validated graph resolves callees");
    sidecars.extend(charge_sidecar(callee, Role::Callee, inv, dbs, opts, warnings)?);

    let app = inv.app_latency();
    let charges = || sidecars.iter().flat_map(|s| s.components.iter());
    Ok(InvocationOverhead {
        invocation: inv.id.clone(),
        caller: inv.caller.clone(),
        callee: inv.callee.clone(),
        size_bytes: inv.size_bytes,
        rate_rps: inv.rate_rps,
        latency_us: exact_sum(charges().map(|c| c.latency_us).chain([app])),
        cpu_cores: exact_sum(charges().map(|c| c.cpu_cores)),
        app_latency_us: app,
        sidecars,
    })
}

/// Overhead of one invocation: the caller's and the callee's sidecar
/// traversal (zero for unmeshed or external endpoints) plus any declared
/// application latency.
pub fn invocation_overhead(
    inv: &Invocation,
    g: &AnnotatedCallGraph,
    dbs: &ProfileSet,
    opts: PredictOptions,
) -> Result<InvocationOverhead, PredictError> {
    overhead_with_warnings(inv, g, dbs, opts, &mut Vec::new())
}

/// Heaviest root-to-leaf path under node weights, summing left to right.
/// Ties go to the lexicographically smallest sequence of invocation ids.
pub(crate) fn critical_path(g: &AnnotatedCallGraph, weights: &[f64]) -> (f64, Vec<usize>) {
    let n = weights.len();
    let ids: Vec<&str> = g.invocations().iter().map(|i| i.id.as_str()).collect();
    let mut best = vec![0.0f64; n];
    let mut prev: Vec<Option<usize>> = vec![None; n];

    let path_to = |prev: &[Option<usize>], mut v: usize| {
        let mut path = vec![v];
        while let Some(p) = prev[v] {
            path.push(p);
            v = p;
        }
        path.reverse();
        path
    };
    let lex = |a: &[usize], b: &[usize]| a.iter().map(|&i| ids[i]).cmp(b.iter().map(|&i| ids[i]));

    for &v in g.topological_order() {
        let mut choice: Option<usize> = None;
        for &p in g.predecessors(v) {
            choice = match choice {
                None => Some(p),
                Some(c) => match best[p].total_cmp(&best[c]) {
                    Ordering::Greater => Some(p),
                    Ordering::Less => Some(c),
                    Ordering::Equal => {
                        let mut via_p = path_to(&prev, p);
                        via_p.push(v);
                        let mut via_c = path_to(&prev, c);
                        via_c.push(v);
                        if lex(&via_p, &via_c) == Ordering::Less {
                            Some(p)
                        } else {
                            Some(c)
                        }
                    }
                },
            };
        }
        prev[v] = choice;
        best[v] = choice.map_or(0.0, |p| best[p]) + weights[v];
    }

    let mut end: Option<(usize, Vec<usize>)> = None;
    for v in (0..n).filter(|&v| g.successors(v).is_empty()) {
        let take = match &end {
            None => true,
            Some((e, e_path)) => match best[v].total_cmp(&best[*e]) {
                Ordering::Greater => true,
                Ordering::Less => false,
                Ordering::Equal => lex(&path_to(&prev, v), e_path) == Ordering::Less,
            },
        };
        if take {
            end = Some((v, path_to(&prev, v)));
        }
    }
    let (leaf, path) = end.expect("a non-empty DAG has a leaf");
    (best[leaf], path)
}

/// Predicts latency (critical path) and CPU (sum) overhead of one ACG.
pub fn predict(g: &AnnotatedCallGraph, dbs: &ProfileSet, opts: PredictOptions) -> Result<PredictionReport, PredictError> {
    let mut warnings = Vec::new();
    let per_invocation = g
        .invocations()
        .iter()
        .map(|inv| overhead_with_warnings(inv, g, dbs, opts, &mut warnings))
        .collect::<Result<Vec<_>, _>>()?;

    let weights: Vec<f64> = per_invocation.iter().map(|o| o.latency_us).collect();
    let (latency, path) = critical_path(g, &weights);
    Ok(PredictionReport {
        latency_overhead_us: latency,
        cpu_overhead_cores: exact_sum(per_invocation.iter().map(|o| o.cpu_cores)),
        critical_path: path.into_iter().map(|i| g.invocations()[i].id.clone()).collect(),
        per_invocation,
        warnings,
    })
}

/// Predicts every graph independently; output order matches input order.
pub fn predict_many(
    graphs: &[AnnotatedCallGraph],
    dbs: &ProfileSet,
    opts: PredictOptions,
    exec: Execution,
) -> Result<Vec<PredictionReport>, PredictError> {
    exec.try_map(graphs, |g| predict(g, dbs, opts))
}

/// Probability-weighted average over the ensemble members.
pub fn predict_ensemble(
    ensemble: &AcgEnsemble,
    dbs: &ProfileSet,
    opts: PredictOptions,
    exec: Execution,
) -> Result<EnsembleReport, PredictError> {
    let reports = exec.try_map(ensemble.members(), |m| predict(&m.graph, dbs, opts))?;
    let members: Vec<MemberReport> = ensemble
        .members()
        .iter()
        .zip(reports)
        .map(|(m, report)| MemberReport { label: m.label.clone(), probability: m.probability, report })
        .collect();
    let mut warnings = Vec::new();
    for m in &members {
        for w in &m.report.warnings {
            push_unique(&mut warnings, format!("{}: {w}", m.label));
        }
    }
    Ok(EnsembleReport {
        latency_overhead_us: exact_sum(members.iter().map(|m| m.probability * m.report.latency_overhead_us)),
        cpu_overhead_cores: exact_sum(members.iter().map(|m| m.probability * m.report.cpu_overhead_cores)),
        members,
        warnings,
    })
}

pub fn predict_workload(
    workload: Workload<'_>,
    dbs: &ProfileSet,
    opts: PredictOptions,
    exec: Execution,
) -> Result<Prediction, PredictError> {
    match workload {
        Workload::Graph(g) => predict(g, dbs, opts).map(Prediction::Single),
        Workload::Ensemble(e) => predict_ensemble(e, dbs, opts, exec).map(Prediction::Ensemble),
    }
}

#[cfg(test)]
mod tests;
