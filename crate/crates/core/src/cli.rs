//! The `meshinsight` command line.
//!
//! Exit codes: 0 success, 1 output failure, 2 unreadable or malformed
//! input, 3 too few samples to fit, 4 invalid call graph or ensemble,
//! 5 missing profile or unknown platform, 6 speedup targets an unknown
//! component. Failures print exactly one line starting with `error:` on
//! standard error; warnings go to standard error prefixed `warning:`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::acg::{
    group_traces, ingest_trace, parse_acg, read_trace_csv, AcgEnsemble, AcgError, AnnotatedCallGraph,
    IngestDefaults, IngestedTrace,
};
use crate::config::{sidecar_breakdown, FilterSpec, ProxyMode, SidecarConfig};
use crate::exec::Execution;
use crate::predict::{predict_workload, whatif, PredictError, PredictOptions, Prediction, Workload};
use crate::profile::{
    fit_cpu_profile, fit_latency_profile, ComponentKind, ComponentProfile, CpuProfile, FitNote, MeasurementSample,
    Platform, ProfileDb, ProfileError, ProfileSet, SpeedupProfile, DEFAULT_SPLIT_THRESHOLD_BYTES,
};
use crate::render::{self, SidecarBreakdown, Table};

#[derive(Debug, Parser)]
#[command(name = "meshinsight", version, about = "Predict service-mesh sidecar latency and CPU overhead")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit component profiles from measurement samples and write a profile DB.
    Fit(FitArgs),
    /// Print a profile DB.
    Show(ShowArgs),
    /// Predict end-to-end overhead of a call graph, ensemble or trace file.
    Predict(PredictArgs),
    /// Per-component overhead of each sidecar traversal.
    Breakdown(BreakdownArgs),
    /// Compare overhead before and after a speedup profile.
    Whatif(WhatIfArgs),
    /// Convert a trace CSV into call graph JSON.
    Ingest(IngestArgs),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Json,
    Table,
    Csv,
}

#[derive(Debug, Args)]
pub struct DbArgs {
    /// Profile DB file; repeat for several platforms. Defaults to the
    /// bundled reference DB.
    #[arg(long = "db", env = "MESHINSIGHT_DB")]
    pub db: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
    /// Evaluate graphs one at a time instead of on the thread pool.
    #[arg(long)]
    pub sequential: bool,
    /// Charge each sidecar the mean of request- and response-size costs.
    #[arg(long)]
    pub mean_response: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub samples: PathBuf,
    #[arg(long)]
    pub platform: String,
    #[arg(long, default_value = "")]
    pub description: String,
    #[arg(long, default_value_t = DEFAULT_SPLIT_THRESHOLD_BYTES)]
    pub split_threshold: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ShowArgs {
    #[command(flatten)]
    pub db: DbArgs,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

/// Settings applied to every service of an ingested trace.
#[derive(Debug, Args)]
pub struct TraceDefaultArgs {
    /// Message size assumed for every traced call.
    #[arg(long, default_value_t = 100)]
    pub size: u64,
    /// Request rate assumed for every traced call.
    #[arg(long, default_value_t = 30_000.0)]
    pub rate: f64,
    /// Proxy mode of every traced service.
    #[arg(long, default_value = "http")]
    pub mode: ProxyMode,
    /// Filter (`name:variant`) enabled on every traced service; repeatable.
    #[arg(long = "filter")]
    pub filters: Vec<FilterSpec>,
    /// Platform of every traced service. Defaults to the platform of the
    /// only loaded DB.
    #[arg(long)]
    pub platform: Option<String>,
    /// Only this trace id; output is then a single report or graph.
    #[arg(long)]
    pub trace_id: Option<String>,
}

#[derive(Debug, Args)]
#[group(id = "input", required = true, multiple = false)]
pub struct InputArgs {
    #[arg(long, group = "input")]
    pub acg: Option<PathBuf>,
    #[arg(long, group = "input")]
    pub ensemble: Option<PathBuf>,
    #[arg(long, group = "input")]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub db: DbArgs,
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub trace: TraceDefaultArgs,
}

#[derive(Debug, Args)]
pub struct BreakdownArgs {
    /// Break down every sidecar traversal of this call graph.
    #[arg(long, conflicts_with = "mode")]
    pub acg: Option<PathBuf>,
    /// Break down a single sidecar of this mode instead.
    #[arg(long)]
    pub mode: Option<ProxyMode>,
    /// Filter for `--mode`; repeatable.
    #[arg(long = "filter", requires = "mode")]
    pub filters: Vec<FilterSpec>,
    /// Platform for `--mode`. Defaults to the only loaded DB.
    #[arg(long, requires = "mode")]
    pub platform: Option<String>,
    /// Message size; overrides the graph's sizes. Default 100 with `--mode`.
    #[arg(long)]
    pub size: Option<u64>,
    /// Request rate, may be 0; overrides the graph's rates. Default 30000
    /// with `--mode`.
    #[arg(long)]
    pub rate: Option<f64>,
    #[command(flatten)]
    pub db: DbArgs,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct WhatIfArgs {
    #[arg(long, required_unless_present = "ensemble", conflicts_with = "ensemble")]
    pub acg: Option<PathBuf>,
    #[arg(long)]
    pub ensemble: Option<PathBuf>,
    #[arg(long)]
    pub speedup: PathBuf,
    #[command(flatten)]
    pub db: DbArgs,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[command(flatten)]
    pub defaults: TraceDefaultArgs,
    #[command(flatten)]
    pub db: DbArgs,
    /// Write `<trace_id>.acg.json` files here instead of printing JSON.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// An error with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> Self {
        CliError { code, message: message.into() }
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::new(2, format!("{}: {e}", path.display()))
    }
}

impl From<ProfileError> for CliError {
    fn from(e: ProfileError) -> Self {
        let code = match e {
            ProfileError::InsufficientSamples { .. } | ProfileError::DegenerateFit { .. } => 3,
            ProfileError::UnknownComponent { .. } => 6,
            _ => 2,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<AcgError> for CliError {
    fn from(e: AcgError) -> Self {
        let code = match e {
            AcgError::Validation(_) | AcgError::Ensemble(_) => 4,
            _ => 2,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<PredictError> for CliError {
    fn from(e: PredictError) -> Self {
        match e {
            PredictError::MissingProfile(_) | PredictError::UnknownPlatform { .. } => CliError::new(5, e.to_string()),
            PredictError::Speedup(inner) => inner.into(),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

struct Io<'a> {
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
}

impl Io<'_> {
    fn emit(&mut self, text: &str) -> CliResult<()> {
        self.out.write_all(text.as_bytes()).map_err(|e| CliError::new(1, format!("writing output: {e}")))
    }

    fn warn(&mut self, message: &str) {
        let _ = writeln!(self.err, "warning: {}", one_line(message));
    }
}

fn one_line(s: &str) -> String {
    s.lines().collect::<Vec<_>>().join("; ")
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = err.write_all(text.as_bytes());
                2
            } else {
                let _ = out.write_all(text.as_bytes());
                0
            };
        }
    };
    let mut io = Io { out, err };
    match dispatch(cli.command, &mut io) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(io.err, "error: {}", one_line(&e.message));
            e.code
        }
    }
}

fn dispatch(command: Command, io: &mut Io<'_>) -> CliResult<()> {
    match command {
        Command::Fit(a) => cmd_fit(a, io),
        Command::Show(a) => cmd_show(a, io),
        Command::Predict(a) => cmd_predict(a, io),
        Command::Breakdown(a) => cmd_breakdown(a, io),
        Command::Whatif(a) => cmd_whatif(a, io),
        Command::Ingest(a) => cmd_ingest(a, io),
    }
}

fn read(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn load_dbs(args: &DbArgs) -> CliResult<ProfileSet> {
    if args.db.is_empty() {
        return Ok(ProfileSet::single(ProfileDb::reference()));
    }
    let mut set = ProfileSet::new();
    for path in &args.db {
        let db = ProfileDb::from_json(&read(path)?).map_err(|e| match e {
            ProfileError::Parse { path: at, message } => {
                CliError::new(2, format!("{}: parse error at {at}: {message}", path.display()))
            }
            other => CliError::new(2, format!("{}: {other}", path.display())),
        })?;
        set.insert(db)?;
    }
    Ok(set)
}

fn default_platform(explicit: Option<&str>, dbs: &ProfileSet) -> CliResult<String> {
    if let Some(p) = explicit {
        return Ok(p.to_string());
    }
    match dbs.len() {
        1 => Ok(dbs.iter().next().expect("one DB").platform().id.clone()),
        _ => Err(CliError::new(2, "several profile DBs loaded; pass --platform")),
    }
}

fn load_acg(path: &Path) -> CliResult<AnnotatedCallGraph> {
    parse_acg(&read(path)?).map_err(|e| match e {
        AcgError::Parse { path: at, line, column, message } => CliError::new(
            2,
            format!("{}: parse error at {at} (line {line}, column {column}): {message}", path.display()),
        ),
        other => other.into(),
    })
}

fn execution(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::default()
    }
}

// ---- fit ----

/// Averages samples sharing a message size.
fn merge_duplicates(samples: Vec<MeasurementSample>, io: &mut Io<'_>) -> Vec<MeasurementSample> {
    let mut by_size: BTreeMap<u64, Vec<MeasurementSample>> = BTreeMap::new();
    for s in samples {
        by_size.entry(s.message_size_bytes).or_default().push(s);
    }
    by_size
        .into_values()
        .map(|group| {
            if group.len() == 1 {
                return group.into_iter().next().expect("one sample");
            }
            let first = &group[0];
            io.warn(&format!(
                "{} ({}) has {} samples at {} B; averaging them",
                first.component,
                first.proxy_mode,
                group.len(),
                first.message_size_bytes
            ));
            let n = group.len() as f64;
            let latency = group.iter().map(|s| s.latency_us).sum::<f64>() / n;
            let rate = group.iter().map(|s| s.request_rate_rps).sum::<f64>() / n;
            let per_message: Vec<f64> =
                group.iter().filter_map(|s| s.cpu_cores.map(|c| c / s.request_rate_rps)).collect();
            let cpu = (!per_message.is_empty())
                .then(|| per_message.iter().sum::<f64>() / per_message.len() as f64 * rate);
            MeasurementSample::new(first.component.clone(), first.proxy_mode, first.message_size_bytes, rate, latency, cpu)
        })
        .collect()
}

fn cmd_fit(a: FitArgs, io: &mut Io<'_>) -> CliResult<()> {
    let samples = MeasurementSample::parse_list(&read(&a.samples)?).map_err(|e| match e {
        ProfileError::Parse { path, message } => {
            CliError::new(2, format!("{}: parse error at {path}: {message}", a.samples.display()))
        }
        other => other.into(),
    })?;
    if samples.is_empty() {
        return Err(CliError::new(3, format!("{}: no samples", a.samples.display())));
    }

    let mut groups: BTreeMap<(ComponentKind, ProxyMode), Vec<MeasurementSample>> = BTreeMap::new();
    for s in samples {
        groups.entry((s.component.clone(), s.proxy_mode)).or_default().push(s);
    }

    let mut entries = Vec::new();
    let mut table = Table::new(["component", "mode", "L_us", "l_us_per_B", "C_cpu_us", "c_cpu_us_per_B", "max_resid_us"]);
    for ((kind, mode), group) in groups {
        let group = merge_duplicates(group, io);
        let latency = fit_latency_profile(&group)?;
        let has_cpu = group.iter().any(|s| s.cpu_cores.is_some());
        let (cpu, mut notes) = if has_cpu {
            let fit = fit_cpu_profile(&group)?;
            (fit.profile, fit.notes)
        } else {
            (CpuProfile::default(), vec![FitNote::CpuUnavailable { context: format!("{kind} ({mode})") }])
        };
        notes.splice(0..0, latency.notes.iter().cloned());
        for n in &notes {
            io.warn(&n.to_string());
        }
        table.row([
            kind.to_string(),
            mode.to_string(),
            format!("{:.4}", latency.profile.base_us),
            format!("{:.3e}", latency.profile.per_byte_us),
            format!("{:.4}", cpu.base_cpu_s * 1e6),
            format!("{:.3e}", cpu.per_byte_cpu_s * 1e6),
            format!("{:.3e}", latency.max_abs_residual_us),
        ]);
        entries.push(ComponentProfile::new(kind, latency.profile, cpu, [mode]));
    }

    let db = ProfileDb::new(Platform::new(a.platform, a.description), a.split_threshold, entries)?;
    for mode in ProxyMode::ALL {
        let missing = db.missing_base_components(mode);
        let present = db.entries().iter().any(|e| e.applies_to(mode));
        if present && !missing.is_empty() {
            let names: Vec<String> = missing.iter().map(ToString::to_string).collect();
            io.warn(&format!("{mode} mode lacks profiles for {}", names.join(", ")));
        }
    }
    std::fs::write(&a.out, db.to_json()).map_err(|e| CliError::io(&a.out, e))?;
    io.emit(&table.render())
}

// ---- show ----

fn cmd_show(a: ShowArgs, io: &mut Io<'_>) -> CliResult<()> {
    let dbs = load_dbs(&a.db)?;
    let text = match a.format {
        Format::Json => {
            let docs: Vec<serde_json::Value> = dbs
                .iter()
                .map(|db| serde_json::from_str(&db.to_json()).expect("DB JSON round-trips"))
                .collect();
            if docs.len() == 1 {
                render::json(&docs[0])
            } else {
                render::json(&docs)
            }
        }
        Format::Table => dbs.iter().map(render::db_table).collect::<Vec<_>>().join("\n"),
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let header = ["platform", "component", "modes", "base_us", "per_byte_us", "base_cpu_s", "per_byte_cpu_s"];
            w.write_record(header).expect("in-memory writer");
            for db in dbs.iter() {
                for e in db.entries() {
                    let modes: Vec<&str> = e.proxy_modes.iter().map(|m| m.as_str()).collect();
                    w.write_record([
                        db.platform().id.clone(),
                        e.kind.to_string(),
                        modes.join("+"),
                        e.latency.base_us.to_string(),
                        e.latency.per_byte_us.to_string(),
                        e.cpu.base_cpu_s.to_string(),
                        e.cpu.per_byte_cpu_s.to_string(),
                    ])
                    .expect("in-memory writer");
                }
            }
            String::from_utf8(w.into_inner().expect("in-memory writer")).expect("UTF-8")
        }
    };
    io.emit(&text)
}

// ---- predict ----

fn ingest_file(path: &Path, t: &TraceDefaultArgs, dbs: &ProfileSet) -> CliResult<Vec<IngestedTrace>> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let rows = read_trace_csv(file).map_err(|e| match e {
        AcgError::Parse { line, message, .. } => {
            CliError::new(2, format!("{}: line {line}: {message}", path.display()))
        }
        other => CliError::new(2, format!("{}: {other}", path.display())),
    })?;
    let mut config = SidecarConfig::new(t.mode);
    config.filters = t.filters.clone();
    let mut defaults = IngestDefaults::new(default_platform(t.platform.as_deref(), dbs)?, config);
    defaults.size_bytes = t.size;
    defaults.rate_rps = t.rate;

    let mut traces = group_traces(&rows);
    if let Some(id) = &t.trace_id {
        traces.retain(|(tid, _)| tid == id);
        if traces.is_empty() {
            return Err(CliError::new(2, format!("{}: no trace with id {id:?}", path.display())));
        }
    }
    if traces.is_empty() {
        return Err(CliError::new(2, format!("{}: no trace rows", path.display())));
    }
    let mut out = Vec::with_capacity(traces.len());
    for (_, rows) in &traces {
        out.push(ingest_trace(rows, &defaults)?);
    }
    Ok(out)
}

#[derive(Serialize)]
struct TracePrediction<'a> {
    trace_id: &'a str,
    report: &'a Prediction,
}

fn emit_prediction(p: &Prediction, format: Format, io: &mut Io<'_>) -> CliResult<()> {
    for w in p.warnings() {
        io.warn(w);
    }
    let text = match format {
        Format::Json => render::json(p),
        Format::Table => render::prediction_table(p),
        Format::Csv => render::prediction_csv(p),
    };
    io.emit(&text)
}

fn cmd_predict(a: PredictArgs, io: &mut Io<'_>) -> CliResult<()> {
    let dbs = load_dbs(&a.db)?;
    let opts = PredictOptions { mean_request_response: a.run.mean_response };
    let exec = execution(a.run.sequential);

    if let Some(path) = &a.input.acg {
        let g = load_acg(path)?;
        let p = predict_workload(Workload::Graph(&g), &dbs, opts, exec)?;
        return emit_prediction(&p, a.run.format, io);
    }
    if let Some(path) = &a.input.ensemble {
        let e = AcgEnsemble::load(path)?;
        let p = predict_workload(Workload::Ensemble(&e), &dbs, opts, exec)?;
        return emit_prediction(&p, a.run.format, io);
    }

    let path = a.input.trace.as_ref().expect("clap requires one input");
    let traces = ingest_file(path, &a.trace, &dbs)?;
    for t in &traces {
        for w in &t.warnings {
            io.warn(w);
        }
    }
    if a.trace.trace_id.is_some() {
        let p = predict_workload(Workload::Graph(&traces[0].graph), &dbs, opts, exec)?;
        return emit_prediction(&p, a.run.format, io);
    }

    let graphs: Vec<AnnotatedCallGraph> = traces.iter().map(|t| t.graph.clone()).collect();
    let reports: Vec<Prediction> = crate::predict::predict_many(&graphs, &dbs, opts, exec)?
        .into_iter()
        .map(Prediction::Single)
        .collect();
    for (t, p) in traces.iter().zip(&reports) {
        for w in p.warnings() {
            io.warn(&format!("trace {}: {w}", t.trace_id));
        }
    }
    let text = match a.run.format {
        Format::Json => {
            let rows: Vec<TracePrediction<'_>> = traces
                .iter()
                .zip(&reports)
                .map(|(t, p)| TracePrediction { trace_id: &t.trace_id, report: p })
                .collect();
            render::json(&rows)
        }
        Format::Table => traces
            .iter()
            .zip(&reports)
            .map(|(t, p)| format!("== trace {} ==\n{}", t.trace_id, render::prediction_table(p)))
            .collect::<Vec<_>>()
            .join("\n"),
        Format::Csv => {
            let mut out = String::from("trace_id,invocation,component,latency_us,cpu_cores\n");
            for (t, p) in traces.iter().zip(&reports) {
                let body = render::prediction_csv(p);
                let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
                let mut r = csv::Reader::from_reader(body.as_bytes());
                for rec in r.records() {
                    let rec = rec.expect("own CSV parses");
                    let mut fields = vec![t.trace_id.as_str()];
                    fields.extend(rec.iter());
                    w.write_record(&fields).expect("in-memory writer");
                }
                out.push_str(&String::from_utf8(w.into_inner().expect("in-memory writer")).expect("UTF-8"));
            }
            out
        }
    };
    io.emit(&text)
}

// ---- breakdown ----

fn cmd_breakdown(a: BreakdownArgs, io: &mut Io<'_>) -> CliResult<()> {
    let dbs = load_dbs(&a.db)?;
    if let Some(rate) = a.rate {
        if !(rate >= 0.0 && rate.is_finite()) {
            return Err(CliError::new(2, "--rate must be a finite number >= 0"));
        }
    }
    let lookup = |platform: &str, service: &str| {
        dbs.get(platform).ok_or_else(|| {
            CliError::from(PredictError::UnknownPlatform { service: service.into(), platform: platform.into() })
        })
    };

    let mut sections = Vec::new();
    if let Some(mode) = a.mode {
        let platform = default_platform(a.platform.as_deref(), &dbs)?;
        let db = lookup(&platform, "--mode")?;
        let mut cfg = SidecarConfig::new(mode);
        cfg.filters = a.filters.clone();
        let (size, rate) = (a.size.unwrap_or(100), a.rate.unwrap_or(30_000.0));
        let cost = sidecar_breakdown(db, &cfg, size, rate).map_err(PredictError::from)?;
        if size > db.split_threshold_bytes() {
            io.warn(&format!("{size} B exceeds the {} B split threshold; overhead is underestimated", db.split_threshold_bytes()));
        }
        sections.push(SidecarBreakdown::new(format!("{mode} sidecar"), mode, size, rate, &cost));
    } else {
        let path = a.acg.as_ref().ok_or_else(|| CliError::new(2, "pass --acg or --mode"))?;
        let g = load_acg(path)?;
        for inv in g.invocations() {
            let size = a.size.unwrap_or(inv.size_bytes);
            let rate = a.rate.unwrap_or(inv.rate_rps);
            let endpoints = [(inv.caller.as_deref(), "caller"), (Some(inv.callee.as_str()), "callee")];
            for (id, role) in endpoints {
                let Some(svc) = id.and_then(|id| g.service(id)) else { continue };
                if !svc.meshed {
                    continue;
                }
                let db = lookup(&svc.platform, &svc.id)?;
                let cost = sidecar_breakdown(db, &svc.config, size, rate).map_err(PredictError::from)?;
                let label = format!("{} {role} {}", inv.id, svc.id);
                sections.push(SidecarBreakdown::new(label, svc.config.mode, size, rate, &cost));
            }
        }
    }

    let text = match a.format {
        Format::Json => render::json(&sections),
        Format::Table => render::breakdown_table(&sections),
        Format::Csv => render::breakdown_csv(&sections),
    };
    io.emit(&text)
}

// ---- whatif ----

fn cmd_whatif(a: WhatIfArgs, io: &mut Io<'_>) -> CliResult<()> {
    let dbs = load_dbs(&a.db)?;
    let speedup = SpeedupProfile::from_json(&read(&a.speedup)?).map_err(|e| match e {
        ProfileError::Parse { path, message } => {
            CliError::new(2, format!("{}: parse error at {path}: {message}", a.speedup.display()))
        }
        other => other.into(),
    })?;
    let opts = PredictOptions { mean_request_response: a.run.mean_response };
    let exec = execution(a.run.sequential);

    let graph;
    let ensemble;
    let workload = if let Some(path) = &a.acg {
        graph = load_acg(path)?;
        Workload::Graph(&graph)
    } else {
        ensemble = AcgEnsemble::load(a.ensemble.as_ref().expect("clap requires one input"))?;
        Workload::Ensemble(&ensemble)
    };
    let report = whatif(workload, &dbs, &speedup, opts, exec)?;
    for w in report.baseline.warnings() {
        io.warn(w);
    }
    for n in &report.notices {
        io.warn(n);
    }
    let text = match a.run.format {
        Format::Json => render::json(&report),
        Format::Table => render::whatif_table(&report),
        Format::Csv => render::whatif_csv(&report),
    };
    io.emit(&text)
}

// ---- ingest ----

#[derive(Serialize)]
struct TraceGraph<'a> {
    trace_id: &'a str,
    acg: &'a crate::acg::CallGraphSpec,
}

fn cmd_ingest(a: IngestArgs, io: &mut Io<'_>) -> CliResult<()> {
    let dbs = if a.defaults.platform.is_some() { ProfileSet::new() } else { load_dbs(&a.db)? };
    let traces = ingest_file(&a.trace, &a.defaults, &dbs)?;
    for t in &traces {
        for w in &t.warnings {
            io.warn(w);
        }
    }
    if let Some(dir) = &a.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let mut listing = String::new();
        for t in &traces {
            let path = dir.join(format!("{}.acg.json", t.trace_id));
            std::fs::write(&path, t.graph.to_json()).map_err(|e| CliError::io(&path, e))?;
            listing.push_str(&format!("{}\n", path.display()));
        }
        return io.emit(&listing);
    }
    if a.defaults.trace_id.is_some() {
        return io.emit(&traces[0].graph.to_json());
    }
    let rows: Vec<TraceGraph<'_>> =
        traces.iter().map(|t| TraceGraph { trace_id: &t.trace_id, acg: t.graph.spec() }).collect();
    io.emit(&render::json(&rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run(std::iter::once("meshinsight").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn breakdown_of_single_tcp_sidecar() {
        let (code, out, err) = run_args(&["breakdown", "--mode", "tcp", "--format", "table"]);
        assert_eq!(code, 0, "{err}");
        assert!(out.contains("13.22 (34%)"), "{out}");
    }

    #[test]
    fn missing_input_is_a_usage_error() {
        let (code, _, err) = run_args(&["predict"]);
        assert_eq!(code, 2);
        assert_eq!(err.lines().filter(|l| l.starts_with("error:")).count(), 1, "{err}");
    }

    #[test]
    fn help_goes_to_stdout() {
        let (code, out, _) = run_args(&["--help"]);
        assert_eq!(code, 0);
        assert!(out.contains("predict"));
    }

    #[test]
    fn exit_codes_follow_error_kind() {
        assert_eq!(CliError::from(ProfileError::InsufficientSamples { context: "x".into(), distinct_sizes: 1 }).code, 3);
        assert_eq!(CliError::from(AcgError::Validation(vec![])).code, 4);
        let unknown = ProfileError::UnknownComponent { kind: ComponentKind::Ipc, mode: "tcp".into() };
        assert_eq!(CliError::from(PredictError::Speedup(unknown)).code, 6);
        let platform = PredictError::UnknownPlatform { service: "s".into(), platform: "p".into() };
        assert_eq!(CliError::from(platform).code, 5);
    }
}
