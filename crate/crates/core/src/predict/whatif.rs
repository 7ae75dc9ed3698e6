use std::collections::BTreeMap;

use serde::Serialize;

use super::{predict_workload, PredictError, Prediction, PredictionReport, PredictOptions, Workload};
use crate::exec::Execution;
use crate::profile::{apply_speedup, ComponentKind, ProfileSet, SpeedupProfile};
use crate::sum::exact_sum;

/// Change attributed to one component, or to `"application"` for declared
/// app latency. Latency is counted along each report's critical path, CPU
/// over every invocation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComponentDelta {
    pub component: String,
    pub baseline_latency_us: f64,
    pub optimized_latency_us: f64,
    pub latency_delta_us: f64,
    pub baseline_cpu_cores: f64,
    pub optimized_cpu_cores: f64,
    pub cpu_delta_cores: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WhatIfReport {
    pub speedup: String,
    pub baseline: Prediction,
    pub optimized: Prediction,
    pub latency_delta_us: f64,
    pub cpu_delta_cores: f64,
    pub attribution: Vec<ComponentDelta>,
    pub notices: Vec<String>,
}

const APPLICATION: &str = "application";

#[derive(Default)]
struct Buckets {
    latency: BTreeMap<ComponentKind, Vec<f64>>,
    cpu: BTreeMap<ComponentKind, Vec<f64>>,
    app: Vec<f64>,
}

impl Buckets {
    fn add(&mut self, report: &PredictionReport, weight: f64) {
        let on_path = |id: &String| report.critical_path.contains(id);
        for inv in &report.per_invocation {
            let critical = on_path(&inv.invocation);
            for c in inv.charges() {
                if critical {
                    self.latency.entry(c.component.clone()).or_default().push(weight * c.latency_us);
                }
                self.cpu.entry(c.component.clone()).or_default().push(weight * c.cpu_cores);
            }
            if critical {
                self.app.push(weight * inv.app_latency_us);
            }
        }
    }

    fn of(prediction: &Prediction) -> Self {
        let mut b = Buckets::default();
        match prediction {
            Prediction::Single(r) => b.add(r, 1.0),
            Prediction::Ensemble(e) => e.members.iter().for_each(|m| b.add(&m.report, m.probability)),
        }
        b
    }

    fn latency_of(&self, kind: &ComponentKind) -> f64 {
        self.latency.get(kind).map_or(0.0, |v| exact_sum(v.iter().copied()))
    }

    fn cpu_of(&self, kind: &ComponentKind) -> f64 {
        self.cpu.get(kind).map_or(0.0, |v| exact_sum(v.iter().copied()))
    }
}

fn attribute(baseline: &Prediction, optimized: &Prediction) -> Vec<ComponentDelta> {
    let (b, o) = (Buckets::of(baseline), Buckets::of(optimized));
    let mut kinds: Vec<&ComponentKind> = b.cpu.keys().chain(o.cpu.keys()).collect();
    kinds.sort();
    kinds.dedup();

    let row = |component: String, bl: f64, ol: f64, bc: f64, oc: f64| ComponentDelta {
        component,
        baseline_latency_us: bl,
        optimized_latency_us: ol,
        latency_delta_us: ol - bl,
        baseline_cpu_cores: bc,
        optimized_cpu_cores: oc,
        cpu_delta_cores: oc - bc,
    };
    let mut out: Vec<ComponentDelta> = kinds
        .into_iter()
        .map(|k| row(k.to_string(), b.latency_of(k), o.latency_of(k), b.cpu_of(k), o.cpu_of(k)))
        .collect();
    let (ba, oa) = (exact_sum(b.app.iter().copied()), exact_sum(o.app.iter().copied()));
    if ba != 0.0 || oa != 0.0 {
        out.push(row(APPLICATION.into(), ba, oa, 0.0, 0.0));
    }
    out
}

/// Predicts `workload` on `dbs` and on `dbs` with `speedup` applied to every
/// platform the workload runs on, and reports the difference.
pub fn whatif(
    workload: Workload<'_>,
    dbs: &ProfileSet,
    speedup: &SpeedupProfile,
    opts: PredictOptions,
    exec: Execution,
) -> Result<WhatIfReport, PredictError> {
    let baseline = predict_workload(workload, dbs, opts, exec)?;

    let graphs = workload.graphs();
    let mut optimized_dbs = dbs.clone();
    for db in optimized_dbs.iter_mut() {
        let id = db.platform().id.as_str();
        let used = graphs.iter().any(|g| g.services().iter().any(|s| s.meshed && s.platform == id));
        if used {
            *db = apply_speedup(db, speedup)?;
        }
    }
    let optimized = predict_workload(workload, &optimized_dbs, opts, exec)?;

    let mut notices = Vec::new();
    for edit in &speedup.edits {
        let exercised = graphs.iter().any(|g| {
            g.services().iter().any(|s| {
                s.meshed
                    && edit.proxy_modes.as_ref().is_none_or(|m| m.contains(&s.config.mode))
                    && crate::config::components_for_config(&s.config).contains(&edit.kind)
            })
        });
        if !exercised {
            let scope = match &edit.proxy_modes {
                None => "any mode".to_string(),
                Some(m) => m.iter().map(|m| m.as_str()).collect::<Vec<_>>().join("+"),
            };
            notices.push(format!("edit of {} ({scope}) touches no sidecar in this workload", edit.kind));
        }
    }

    Ok(WhatIfReport {
        speedup: speedup.name.clone(),
        latency_delta_us: optimized.latency_overhead_us() - baseline.latency_overhead_us(),
        cpu_delta_cores: optimized.cpu_overhead_cores() - baseline.cpu_overhead_cores(),
        attribution: attribute(&baseline, &optimized),
        baseline,
        optimized,
        notices,
    })
}
