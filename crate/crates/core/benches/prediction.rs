use std::collections::BTreeMap;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use meshinsight::acg::{ingest_traces, IngestDefaults, TraceRow};
use meshinsight::oracle::{enumerate_critical_path, generate_random_acg, RandomSpec};
use meshinsight::{predict, predict_many, AnnotatedCallGraph, Execution, PredictOptions, ProfileDb, ProfileSet, ProxyMode, SidecarConfig};

const PLATFORM: &str = "reference-xeon6142-envoy1.21";

fn graphs(count: u64, max_invocations: usize) -> Vec<AnnotatedCallGraph> {
    (0..count)
        .map(|seed| generate_random_acg(&RandomSpec::new(seed, max_invocations, PLATFORM)).unwrap())
        .collect()
}

fn modes() -> [(&'static str, Execution); 2] {
    [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)]
}

fn batch_prediction(c: &mut Criterion) {
    let dbs = ProfileSet::single(ProfileDb::reference());
    let opts = PredictOptions::default();
    let mut group = c.benchmark_group("predict_many");
    for (count, size) in [(256u64, 12usize), (1024, 64), (64, 512)] {
        let batch = graphs(count, size);
        group.throughput(Throughput::Elements(count));
        for (name, exec) in modes() {
            group.bench_with_input(BenchmarkId::new(name, format!("{count}x{size}")), &batch, |b, batch| {
                b.iter(|| predict_many(black_box(batch), &dbs, opts, exec).unwrap())
            });
        }
    }
    group.finish();
}

fn oracle_sweep(c: &mut Criterion) {
    let dbs = ProfileSet::single(ProfileDb::reference());
    let opts = PredictOptions::default();
    let batch = graphs(512, 12);
    let check = |g: &AnnotatedCallGraph| {
        let r = predict(g, &dbs, opts).unwrap();
        let weights: BTreeMap<String, f64> =
            r.per_invocation.iter().map(|o| (o.invocation.clone(), o.latency_us)).collect();
        enumerate_critical_path(g, &weights).unwrap().0 == r.latency_overhead_us
    };
    let mut group = c.benchmark_group("oracle_sweep");
    group.throughput(Throughput::Elements(batch.len() as u64));
    for (name, exec) in modes() {
        group.bench_function(name, |b| b.iter(|| exec.map(black_box(&batch), check)));
    }
    group.finish();
}

fn trace_ingestion(c: &mut Criterion) {
    let mut rows = Vec::new();
    for t in 0..2000 {
        let id = format!("t{t}");
        rows.push(TraceRow::new(&id, "gateway", "frontend", 0.0, 1000.0));
        for k in 0..20 {
            let start = 10.0 + 40.0 * k as f64;
            rows.push(TraceRow::new(&id, "frontend", &format!("svc{}", k % 7), start, 30.0));
            rows.push(TraceRow::new(&id, &format!("svc{}", k % 7), "cache", start + 5.0, 10.0));
        }
    }
    let defaults = IngestDefaults::new(PLATFORM, SidecarConfig::new(ProxyMode::Grpc));
    let mut group = c.benchmark_group("ingest_traces");
    group.throughput(Throughput::Elements(2000));
    for (name, exec) in modes() {
        group.bench_function(name, |b| b.iter(|| ingest_traces(black_box(&rows), &defaults, exec).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, batch_prediction, oracle_sweep, trace_ingestion);
criterion_main!(benches);
