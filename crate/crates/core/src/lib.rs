//! Component-level performance model for service-mesh sidecars.
//!
//! A sidecar's datapath is split into independently profiled components
//! (IPC, read, write, notification, protocol parsing, other userspace work,
//! and filters). Each component carries a linear latency profile
//! (`L + s·l` microseconds per message) and a linear CPU profile
//! (`r·(C + s·c)` virtual cores). Sidecar overhead is the sum over the
//! components its configuration exercises, and application overhead is
//! derived from an annotated call graph: CPU is summed over all invocations
//! and latency is the weight of the critical path through the invocation DAG.
//!
//! ```
//! use meshinsight::{ProfileDb, ProxyMode, SidecarConfig, sidecar_latency};
//!
//! let db = ProfileDb::reference();
//! let http = SidecarConfig::new(ProxyMode::Http);
//! let us = sidecar_latency(&db, &http, 100).unwrap();
//! assert!((us - 167.25).abs() < 1e-9);
//! ```

pub mod acg;
pub mod cli;
pub mod config;
pub mod exec;
pub mod oracle;
pub mod predict;
pub mod profile;
pub mod render;
pub mod sum;

pub use acg::{
    AcgEnsemble, AcgError, AnnotatedCallGraph, CallGraphSpec, EnsembleMember, Invocation,
    ServiceInstance, TraceRow, Violation,
};
pub use config::{
    components_for_config, sidecar_breakdown, sidecar_cpu, sidecar_latency, ComponentCharge,
    FilterSpec, MissingProfile, ProxyMode, SidecarConfig, SidecarCost,
};
pub use exec::Execution;
pub use predict::{
    invocation_overhead, predict, predict_ensemble, predict_many, predict_workload, whatif,
    ComponentDelta, EnsembleReport, InvocationOverhead, MemberReport, PredictError,
    PredictOptions, Prediction, PredictionReport, Role, SidecarCharge, WhatIfReport, Workload,
};
pub use profile::{
    apply_speedup, derive_filter_profile, eval_cpu, eval_latency, fit_cpu_profile,
    fit_latency_profile, ComponentKind, ComponentProfile, CpuProfile, FilterKey, LatencyProfile,
    MeasurementSample, Platform, ProfileDb, ProfileError, ProfileSet, SpeedupProfile,
};
