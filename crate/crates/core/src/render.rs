//! Text, CSV and JSON views of reports.
//!
//! Tables round microseconds to 2 decimals and cores to 3. JSON and CSV keep
//! full precision; CSV rows re-sum to the JSON per-invocation totals.

use std::fmt::Write as _;

use serde::Serialize;

use crate::config::{ProxyMode, SidecarCost};
use crate::predict::{EnsembleReport, Prediction, PredictionReport, WhatIfReport};
use crate::profile::ProfileDb;

pub fn us(x: f64) -> String {
    format!("{x:.2}")
}

pub fn cores(x: f64) -> String {
    format!("{x:.3}")
}

/// Whole-percent share of `part` in `total`, or `-` when the total is 0.
pub fn share(part: f64, total: f64) -> String {
    if total == 0.0 {
        "-".to_string()
    } else {
        format!("{:.0}%", 100.0 * part / total)
    }
}

/// Pretty JSON with a trailing newline. Field order follows the struct
/// declarations, so output is stable.
pub fn json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports always serialize");
    s.push('\n');
    s
}

/// Column-aligned plain text table. The first column is left-aligned, the
/// rest right-aligned.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table { header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn row<S: Into<String>>(&mut self, cells: impl IntoIterator<Item = S>) {
        self.rows.push(cells.into_iter().map(Into::into).collect());
    }

    pub fn render(&self) -> String {
        let cols = self.header.len();
        let mut width = vec![0; cols];
        for r in std::iter::once(&self.header).chain(&self.rows) {
            for (w, c) in width.iter_mut().zip(r) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut out = String::new();
        for r in std::iter::once(&self.header).chain(&self.rows) {
            let mut line = String::new();
            for (i, (c, w)) in r.iter().zip(&width).enumerate() {
                if i > 0 {
                    line.push_str("  ");
                }
                if i == 0 {
                    let _ = write!(line, "{c:<w$}");
                } else {
                    let _ = write!(line, "{c:>w$}");
                }
            }
            out.push_str(line.trim_end());
            out.push('\n');
        }
        out
    }
}

fn report_table(r: &PredictionReport, out: &mut String) {
    let _ = writeln!(out, "latency overhead: {} us", us(r.latency_overhead_us));
    let _ = writeln!(out, "cpu overhead:     {} cores", cores(r.cpu_overhead_cores));
    let _ = writeln!(out, "critical path:    {}", r.critical_path.join(" -> "));
    out.push('\n');
    let mut t = Table::new(["invocation", "caller", "callee", "size_B", "rate_rps", "latency_us", "cpu_cores", "critical"]);
    for o in &r.per_invocation {
        t.row([
            o.invocation.clone(),
            o.caller.clone().unwrap_or_else(|| "-".into()),
            o.callee.clone(),
            o.size_bytes.to_string(),
            format!("{}", o.rate_rps),
            us(o.latency_us),
            cores(o.cpu_cores),
            if r.critical_path.contains(&o.invocation) { "*".into() } else { String::new() },
        ]);
    }
    out.push_str(&t.render());
}

fn ensemble_table(e: &EnsembleReport, out: &mut String) {
    let _ = writeln!(out, "expected latency overhead: {} us", us(e.latency_overhead_us));
    let _ = writeln!(out, "expected cpu overhead:     {} cores", cores(e.cpu_overhead_cores));
    for m in &e.members {
        let _ = writeln!(out, "\n== {} (p = {}) ==", m.label, m.probability);
        report_table(&m.report, out);
    }
}

pub fn prediction_table(p: &Prediction) -> String {
    let mut out = String::new();
    match p {
        Prediction::Single(r) => report_table(r, &mut out),
        Prediction::Ensemble(e) => ensemble_table(e, &mut out),
    }
    out
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::Writer::from_writer(Vec::new())
}

fn csv_finish(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv output is UTF-8")
}

fn report_csv(r: &PredictionReport, prefix: &str, w: &mut csv::Writer<Vec<u8>>) {
    for o in &r.per_invocation {
        let id = format!("{prefix}{}", o.invocation);
        for c in o.charges() {
            let component = c.component.to_string();
            let fields = [id.as_str(), component.as_str(), &c.latency_us.to_string(), &c.cpu_cores.to_string()];
            w.write_record(fields).expect("in-memory writer");
        }
        if o.app_latency_us != 0.0 {
            w.write_record([id.as_str(), "application", &o.app_latency_us.to_string(), "0"]).expect("in-memory writer");
        }
    }
}

/// One `(invocation, component, latency_us, cpu_cores)` row per sidecar
/// component charge, plus an `application` row for declared app latency.
/// Ensemble rows prefix the invocation with `<member>::`.
pub fn prediction_csv(p: &Prediction) -> String {
    let mut w = csv_writer();
    w.write_record(["invocation", "component", "latency_us", "cpu_cores"]).expect("in-memory writer");
    match p {
        Prediction::Single(r) => report_csv(r, "", &mut w),
        Prediction::Ensemble(e) => {
            for m in &e.members {
                report_csv(&m.report, &format!("{}::", m.label), &mut w);
            }
        }
    }
    csv_finish(w)
}

pub fn whatif_table(r: &WhatIfReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "speedup: {}", r.speedup);
    let _ = writeln!(
        out,
        "latency overhead: {} -> {} us ({} us)",
        us(r.baseline.latency_overhead_us()),
        us(r.optimized.latency_overhead_us()),
        us(r.latency_delta_us)
    );
    let _ = writeln!(
        out,
        "cpu overhead:     {} -> {} cores ({} cores)",
        cores(r.baseline.cpu_overhead_cores()),
        cores(r.optimized.cpu_overhead_cores()),
        cores(r.cpu_delta_cores)
    );
    out.push('\n');
    let mut t = Table::new(["component", "latency_us", "optimized", "delta", "cpu_cores", "optimized", "delta"]);
    for a in &r.attribution {
        t.row([
            a.component.clone(),
            us(a.baseline_latency_us),
            us(a.optimized_latency_us),
            us(a.latency_delta_us),
            cores(a.baseline_cpu_cores),
            cores(a.optimized_cpu_cores),
            cores(a.cpu_delta_cores),
        ]);
    }
    out.push_str(&t.render());
    out
}

pub fn whatif_csv(r: &WhatIfReport) -> String {
    let mut w = csv_writer();
    w.write_record(["component", "latency_delta_us", "cpu_delta_cores"]).expect("in-memory writer");
    for a in &r.attribution {
        w.write_record([a.component.as_str(), &a.latency_delta_us.to_string(), &a.cpu_delta_cores.to_string()])
            .expect("in-memory writer");
    }
    csv_finish(w)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComponentShare {
    pub component: String,
    pub latency_us: f64,
    /// Fraction of the sidecar's latency; `None` when the total is 0.
    pub latency_share: Option<f64>,
    pub cpu_cores: f64,
    pub cpu_share: Option<f64>,
}

/// Per-component view of one sidecar traversal.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SidecarBreakdown {
    pub label: String,
    pub mode: ProxyMode,
    pub size_bytes: u64,
    pub rate_rps: f64,
    pub latency_us: f64,
    pub cpu_cores: f64,
    pub components: Vec<ComponentShare>,
}

impl SidecarBreakdown {
    pub fn new(label: impl Into<String>, mode: ProxyMode, size_bytes: u64, rate_rps: f64, cost: &SidecarCost) -> Self {
        let frac = |part: f64, total: f64| (total != 0.0).then(|| part / total);
        SidecarBreakdown {
            label: label.into(),
            mode,
            size_bytes,
            rate_rps,
            latency_us: cost.latency_us,
            cpu_cores: cost.cpu_cores,
            components: cost
                .components
                .iter()
                .map(|c| ComponentShare {
                    component: c.component.to_string(),
                    latency_us: c.latency_us,
                    latency_share: frac(c.latency_us, cost.latency_us),
                    cpu_cores: c.cpu_cores,
                    cpu_share: frac(c.cpu_cores, cost.cpu_cores),
                })
                .collect(),
        }
    }
}

/// `value (share)` cells per component, with a total row.
pub fn breakdown_table(sections: &[SidecarBreakdown]) -> String {
    let mut out = String::new();
    for (i, b) in sections.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "{} [{}, {} B, {} rps]", b.label, b.mode, b.size_bytes, b.rate_rps);
        let mut t = Table::new(["component", "latency_us", "cpu_cores"]);
        for c in &b.components {
            t.row([
                c.component.clone(),
                format!("{} ({})", us(c.latency_us), share(c.latency_us, b.latency_us)),
                format!("{} ({})", cores(c.cpu_cores), share(c.cpu_cores, b.cpu_cores)),
            ]);
        }
        t.row(["total".to_string(), us(b.latency_us), cores(b.cpu_cores)]);
        out.push_str(&t.render());
    }
    out
}

pub fn breakdown_csv(sections: &[SidecarBreakdown]) -> String {
    let mut w = csv_writer();
    w.write_record(["sidecar", "component", "latency_us", "cpu_cores"]).expect("in-memory writer");
    for b in sections {
        for c in &b.components {
            w.write_record([b.label.as_str(), &c.component, &c.latency_us.to_string(), &c.cpu_cores.to_string()])
                .expect("in-memory writer");
        }
    }
    csv_finish(w)
}

/// Coefficients of every DB entry. CPU is shown per message in microseconds
/// of CPU time.
pub fn db_table(db: &ProfileDb) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "platform: {}", db.platform().id);
    if !db.platform().description.is_empty() {
        let _ = writeln!(out, "          {}", db.platform().description);
    }
    let _ = writeln!(out, "split threshold: {} B", db.split_threshold_bytes());
    out.push('\n');
    let mut t = Table::new(["component", "modes", "L_us", "l_us_per_B", "C_cpu_us", "c_cpu_us_per_B"]);
    for e in db.entries() {
        let modes: Vec<&str> = e.proxy_modes.iter().map(|m| m.as_str()).collect();
        t.row([
            e.kind.to_string(),
            modes.join(","),
            format!("{:.4}", e.latency.base_us),
            format!("{:.3e}", e.latency.per_byte_us),
            format!("{:.4}", e.cpu.base_cpu_s * 1e6),
            format!("{:.3e}", e.cpu.per_byte_cpu_s * 1e6),
        ]);
    }
    out.push_str(&t.render());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{sidecar_breakdown, SidecarConfig};

    #[test]
    fn http_breakdown_reproduces_reference_shares() {
        let db = ProfileDb::reference();
        let cost = sidecar_breakdown(&db, &SidecarConfig::new(ProxyMode::Http), 100, 30_000.0).unwrap();
        let b = SidecarBreakdown::new("http", ProxyMode::Http, 100, 30_000.0, &cost);
        let table = breakdown_table(&[b]);
        assert!(table.contains("117.35 (70%)"), "{table}");
        assert!(table.contains("6.000 (62%)"), "{table}");
    }

    #[test]
    fn zero_rate_shares_are_dashes() {
        let db = ProfileDb::reference();
        let cost = sidecar_breakdown(&db, &SidecarConfig::new(ProxyMode::Tcp), 100, 0.0).unwrap();
        let b = SidecarBreakdown::new("tcp", ProxyMode::Tcp, 100, 0.0, &cost);
        assert!(b.components.iter().all(|c| c.cpu_share.is_none() && c.cpu_cores == 0.0));
        assert!(breakdown_table(&[b]).contains("0.000 (-)"));
    }

    #[test]
    fn table_aligns_columns() {
        let mut t = Table::new(["a", "bb"]);
        t.row(["long", "1"]);
        assert_eq!(t.render(), "a     bb\nlong   1\n");
    }

    #[test]
    fn share_rounds_to_whole_percent() {
        assert_eq!(share(13.22, 38.53), "34%");
        assert_eq!(share(1.0, 0.0), "-");
    }
}
