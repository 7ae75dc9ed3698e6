//! Building ACGs from RPC-level trace records.
//!
//! Traces carry who called whom and when, but no message sizes or rates;
//! those come from [`IngestDefaults`]. Invocation order is inferred by
//! interval containment: row `B` is issued after row `A` when `B`'s caller is
//! `A`'s callee and `B` starts inside `A`'s response window.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use super::{AcgError, AnnotatedCallGraph, CallGraphSpec, Invocation, ServiceInstance};
use crate::config::SidecarConfig;
use crate::exec::Execution;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub trace_id: String,
    pub caller: String,
    pub callee: String,
    pub start_timestamp_us: f64,
    pub response_time_us: f64,
}

impl TraceRow {
    pub fn new(trace_id: &str, caller: &str, callee: &str, start_timestamp_us: f64, response_time_us: f64) -> Self {
        TraceRow {
            trace_id: trace_id.into(),
            caller: caller.into(),
            callee: callee.into(),
            start_timestamp_us,
            response_time_us,
        }
    }

    fn end(&self) -> f64 {
        self.start_timestamp_us + self.response_time_us
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IngestDefaults {
    pub size_bytes: u64,
    pub rate_rps: f64,
    pub platform: String,
    pub config: SidecarConfig,
}

impl IngestDefaults {
    /// 100-byte messages at 30K requests/second.
    pub fn new(platform: impl Into<String>, config: SidecarConfig) -> Self {
        IngestDefaults { size_bytes: 100, rate_rps: 30_000.0, platform: platform.into(), config }
    }
}

#[derive(Clone, Debug)]
pub struct IngestedTrace {
    pub trace_id: String,
    pub graph: AnnotatedCallGraph,
    pub warnings: Vec<String>,
}

/// Reads `trace_id,caller,callee,start_timestamp_us,response_time_us` rows.
pub fn read_trace_csv<R: Read>(reader: R) -> Result<Vec<TraceRow>, AcgError> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = csv.headers().map_err(|e| AcgError::Trace(e.to_string()))?.clone();
    const EXPECTED: [&str; 5] = ["trace_id", "caller", "callee", "start_timestamp_us", "response_time_us"];
    if headers.iter().ne(EXPECTED) {
        return Err(AcgError::Trace(format!("expected header {}", EXPECTED.join(","))));
    }
    csv.deserialize()
        .map(|row| {
            row.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line() as usize);
                AcgError::Parse { path: "trace".into(), line, column: 0, message: e.to_string() }
            })
        })
        .collect()
}

/// Splits rows by trace id, keeping traces in order of first appearance.
pub fn group_traces(rows: &[TraceRow]) -> Vec<(String, Vec<TraceRow>)> {
    let mut order: Vec<(String, Vec<TraceRow>)> = Vec::new();
    let mut slot: HashMap<&str, usize> = HashMap::new();
    for row in rows {
        let i = *slot.entry(row.trace_id.as_str()).or_insert_with(|| {
            order.push((row.trace_id.clone(), Vec::new()));
            order.len() - 1
        });
        order[i].1.push(row.clone());
    }
    order
}

/// Ingests every trace in `rows`, one ACG per trace id.
pub fn ingest_traces(rows: &[TraceRow], defaults: &IngestDefaults, exec: Execution) -> Result<Vec<IngestedTrace>, AcgError> {
    let traces = group_traces(rows);
    exec.try_map(&traces, |(_, rows)| ingest_trace(rows, defaults))
}

// Parents sort before children: earlier start first, and for equal starts
// the enclosing (longer) call first.
fn row_order(a: &TraceRow, b: &TraceRow) -> Ordering {
    a.start_timestamp_us
        .total_cmp(&b.start_timestamp_us)
        .then(b.response_time_us.total_cmp(&a.response_time_us))
        .then_with(|| a.caller.cmp(&b.caller))
        .then_with(|| a.callee.cmp(&b.callee))
}

/// Builds the ACG for the rows of a single trace.
pub fn ingest_trace(rows: &[TraceRow], defaults: &IngestDefaults) -> Result<IngestedTrace, AcgError> {
    let Some(first) = rows.first() else {
        return Err(AcgError::EmptyTrace(String::new()));
    };
    let trace_id = first.trace_id.clone();
    for row in rows {
        if row.trace_id != trace_id {
            return Err(AcgError::Trace(format!("rows from traces {trace_id:?} and {:?} mixed", row.trace_id)));
        }
        if row.caller.is_empty() || row.callee.is_empty() {
            return Err(AcgError::Trace(format!("trace {trace_id:?} has a row with an empty service name")));
        }
        if !row.start_timestamp_us.is_finite() || !(row.response_time_us >= 0.0 && row.response_time_us.is_finite()) {
            return Err(AcgError::Trace(format!(
                "trace {trace_id:?}: {} -> {} needs a finite start and response_time_us >= 0",
                row.caller, row.callee
            )));
        }
    }

    let mut sorted: Vec<&TraceRow> = rows.iter().collect();
    sorted.sort_by(|a, b| row_order(a, b));

    let width = (sorted.len() - 1).to_string().len();
    let ids: Vec<String> = (0..sorted.len()).map(|i| format!("i{i:0width$}")).collect();

    let mut services: Vec<ServiceInstance> = Vec::new();
    for row in &sorted {
        for name in [&row.caller, &row.callee] {
            if !services.iter().any(|s| &s.id == name) {
                services.push(ServiceInstance::new(name.clone(), defaults.platform.clone(), defaults.config.clone()));
            }
        }
    }

    let invocations = sorted
        .iter()
        .zip(&ids)
        .map(|(row, id)| Invocation::new(id.clone(), Some(&row.caller), row.callee.clone(), defaults.size_bytes, defaults.rate_rps))
        .collect();

    let mut edges = Vec::new();
    let mut warnings = Vec::new();
    for (j, child) in sorted.iter().enumerate() {
        // Candidates precede the child in sorted order, so edges never form a cycle.
        let parents: Vec<usize> = (0..j)
            .filter(|&i| {
                let p = sorted[i];
                p.callee == child.caller
                    && p.start_timestamp_us <= child.start_timestamp_us
                    && child.start_timestamp_us < p.end()
            })
            .collect();
        let Some(&parent) = parents.first() else { continue };
        if parents.len() > 1 {
            let names: Vec<&str> = parents.iter().map(|&i| ids[i].as_str()).collect();
            warnings.push(format!(
                "trace {trace_id:?}: {} ({} -> {}) nests in {} candidate parents [{}]; chose {}",
                ids[j],
                child.caller,
                child.callee,
                parents.len(),
                names.join(", "),
                ids[parent]
            ));
        }
        edges.push((ids[parent].clone(), ids[j].clone()));
    }
    for w in &warnings {
        log::warn!("{w}");
    }

    let graph = AnnotatedCallGraph::new(CallGraphSpec { services, invocations, edges })?;
    Ok(IngestedTrace { trace_id, graph, warnings })
}
