use std::collections::BTreeMap;

use proptest::prelude::*;

use super::*;
use crate::acg::{parse_acg, CallGraphSpec, EnsembleMember};
use crate::oracle::{enumerate_critical_path, generate_random_acg, RandomSpec};
use crate::profile::{ComponentKind, ProfileDb, SpeedupProfile};

const PLATFORM: &str = "reference-xeon6142-envoy1.21";

fn dbs() -> ProfileSet {
    ProfileSet::single(ProfileDb::reference())
}

fn opts() -> PredictOptions {
    PredictOptions::default()
}

fn svc(id: &str, mode: ProxyMode) -> ServiceInstance {
    ServiceInstance::new(id, PLATFORM, crate::config::SidecarConfig::new(mode))
}

fn chain(n: usize, mode: ProxyMode) -> AnnotatedCallGraph {
    let services = (0..=n).map(|k| svc(&format!("s{k}"), mode)).collect();
    let invocations = (0..n)
        .map(|k| Invocation::new(format!("c{k}"), Some(&format!("s{k}")), format!("s{}", k + 1), 100, 1000.0))
        .collect();
    let edges = (1..n).map(|k| (format!("c{}", k - 1), format!("c{k}"))).collect();
    AnnotatedCallGraph::new(CallGraphSpec { services, invocations, edges }).unwrap()
}

fn bookinfo() -> AnnotatedCallGraph {
    parse_acg(include_str!("../../tests/fixtures/bookinfo.acg.json")).unwrap()
}

#[test]
fn both_endpoints_tcp_charge_two_sidecars() {
    let g = chain(1, ProxyMode::Tcp);
    let o = invocation_overhead(&g.invocations()[0], &g, &dbs(), opts()).unwrap();
    assert!((o.latency_us - 77.06).abs() < 1e-9);
    assert_eq!(o.sidecars.len(), 2);
    assert_eq!(o.sidecars[0].role, Role::Caller);
}

#[test]
fn external_caller_charges_only_the_callee() {
    let g = bookinfo();
    let o = invocation_overhead(&g.invocations()[0], &g, &dbs(), opts()).unwrap();
    assert!((o.latency_us - 167.25).abs() < 1e-9, "{}", o.latency_us);
    assert_eq!(o.sidecars.len(), 1);
}

#[test]
fn unmeshed_endpoints_cost_nothing() {
    let services = vec![svc("a", ProxyMode::Http).unmeshed(), svc("b", ProxyMode::Http).unmeshed()];
    let g = AnnotatedCallGraph::new(CallGraphSpec {
        services,
        invocations: vec![Invocation::new("x", Some("a"), "b", 100, 10.0)],
        edges: vec![],
    })
    .unwrap();
    let r = predict(&g, &dbs(), opts()).unwrap();
    assert_eq!((r.latency_overhead_us, r.cpu_overhead_cores), (0.0, 0.0));
}

#[test]
fn invocation_latency_is_its_breakdown_plus_app_latency() {
    let mut spec = chain(1, ProxyMode::Grpc).into_spec();
    spec.invocations[0].app_latency_us = Some(12.5);
    let g = AnnotatedCallGraph::new(spec).unwrap();
    let o = invocation_overhead(&g.invocations()[0], &g, &dbs(), opts()).unwrap();
    let parts = o.charges().map(|c| c.latency_us).chain([o.app_latency_us]);
    assert_eq!(o.latency_us, exact_sum(parts));
    assert_eq!(o.app_latency_us, 12.5);
}

#[test]
fn bookinfo_critical_path_runs_through_reviews() {
    let r = predict(&bookinfo(), &dbs(), opts()).unwrap();
    assert_eq!(r.critical_path, ["1-client-frontend", "2-frontend-product", "3-product-reviews", "4-reviews-ratings"]);
    assert_eq!(r.per_invocation.len(), 5);
    let path_sum = exact_sum(r.critical_path.iter().map(|id| r.invocation(id).unwrap().latency_us));
    assert!((r.latency_overhead_us - path_sum).abs() < 1e-9);
    assert_eq!(r.cpu_overhead_cores, exact_sum(r.per_invocation.iter().map(|o| o.cpu_cores)));
}

#[test]
fn parallel_children_take_heavier_branch() {
    let services = vec![svc("p", ProxyMode::Tcp), svc("light", ProxyMode::Tcp), svc("heavy", ProxyMode::Grpc)];
    let inv = |id: &str, callee: &str| Invocation::new(id, Some("p"), callee, 100, 10.0);
    let g = AnnotatedCallGraph::new(CallGraphSpec {
        services,
        invocations: vec![
            Invocation::new("root", None, "p", 100, 10.0),
            inv("to-light", "light"),
            inv("to-heavy", "heavy"),
        ],
        edges: vec![("root".into(), "to-light".into()), ("root".into(), "to-heavy".into())],
    })
    .unwrap();
    let r = predict(&g, &dbs(), opts()).unwrap();
    assert_eq!(r.critical_path, ["root", "to-heavy"]);
    assert_eq!(r.cpu_overhead_cores, exact_sum(r.per_invocation.iter().map(|o| o.cpu_cores)));
}

#[test]
fn unknown_platform_is_reported() {
    let mut spec = chain(1, ProxyMode::Tcp).into_spec();
    spec.services[1].platform = "mars".into();
    let g = AnnotatedCallGraph::new(spec).unwrap();
    let err = predict(&g, &dbs(), opts()).unwrap_err();
    assert!(matches!(&err, PredictError::UnknownPlatform { platform, .. } if platform == "mars"));
}

#[test]
fn missing_filter_profile_is_reported() {
    let mut spec = chain(1, ProxyMode::Tcp).into_spec();
    spec.services[0].config = spec.services[0].config.clone().with_filter("lua", "noop");
    let g = AnnotatedCallGraph::new(spec).unwrap();
    assert!(matches!(predict(&g, &dbs(), opts()), Err(PredictError::MissingProfile(_))));
}

#[test]
fn large_messages_and_rate_filters_warn() {
    let mut spec = chain(1, ProxyMode::Http).into_spec();
    spec.invocations[0].size_bytes = 8192;
    spec.services[1].config = spec.services[1].config.clone().with_filter("rate_limit", "local");
    let r = predict(&AnnotatedCallGraph::new(spec).unwrap(), &dbs(), opts()).unwrap();
    assert_eq!(r.warnings.len(), 2, "{:?}", r.warnings);
    assert!(r.warnings[0].contains("split threshold"));
    assert!(r.warnings[1].contains("rate_limit"));
}

#[test]
fn response_mean_is_opt_in() {
    let mut spec = chain(1, ProxyMode::Tcp).into_spec();
    spec.invocations[0].response_size_bytes = Some(100);
    let same = AnnotatedCallGraph::new(spec.clone()).unwrap();
    let on = PredictOptions { mean_request_response: true };
    assert_eq!(predict(&same, &dbs(), on).unwrap(), predict(&same, &dbs(), opts()).unwrap());

    let mut db = ProfileDb::reference();
    for e in db.entries_mut() {
        e.latency.per_byte_us = 0.01;
    }
    let sized = ProfileSet::single(db);
    spec.invocations[0].response_size_bytes = Some(300);
    let g = AnnotatedCallGraph::new(spec).unwrap();
    let off = predict(&g, &sized, opts()).unwrap().latency_overhead_us;
    let mean = predict(&g, &sized, on).unwrap().latency_overhead_us;
    // Five TCP components, two sidecars, 100 extra bytes on average.
    assert!((mean - off - 2.0 * 5.0 * 0.01 * 100.0).abs() < 1e-9);
}

#[test]
fn ensemble_weights_members() {
    let one = chain(1, ProxyMode::Tcp);
    let two = chain(2, ProxyMode::Tcp);
    let e = AcgEnsemble::new(vec![EnsembleMember::new("hit", one.clone(), 0.9), EnsembleMember::new("miss", two.clone(), 0.1)])
        .unwrap();
    let r = predict_ensemble(&e, &dbs(), opts(), Execution::Sequential).unwrap();
    let (a, b) = (predict(&one, &dbs(), opts()).unwrap(), predict(&two, &dbs(), opts()).unwrap());
    let hand = 0.9 * a.latency_overhead_us + 0.1 * b.latency_overhead_us;
    assert!((r.latency_overhead_us - hand).abs() < 1e-9);
    assert_eq!(r.members[1].report, b);

    let single = predict_ensemble(&AcgEnsemble::single("only", one.clone()), &dbs(), opts(), Execution::default()).unwrap();
    assert_eq!(single.latency_overhead_us, a.latency_overhead_us);
    assert_eq!(single.cpu_overhead_cores, a.cpu_overhead_cores);
}

#[test]
fn halving_ipc_on_a_tcp_chain() {
    for n in 1..=6 {
        let g = chain(n, ProxyMode::Tcp);
        let sp = SpeedupProfile::new("uds").scale(ComponentKind::Ipc, [], 0.5, 1.0);
        let w = whatif(Workload::Graph(&g), &dbs(), &sp, opts(), Execution::Sequential).unwrap();
        let expected = -(n as f64) * 2.0 * 5.795;
        assert!((w.latency_delta_us - expected).abs() < 1e-9, "n={n}: {}", w.latency_delta_us);
        assert_eq!(w.cpu_delta_cores, 0.0);
        for a in &w.attribution {
            if a.component != "ipc" {
                assert_eq!(a.latency_delta_us, 0.0, "{}", a.component);
            }
        }
    }
}

#[test]
fn unused_edit_yields_zero_delta_and_notice() {
    let g = chain(3, ProxyMode::Tcp);
    let sp = SpeedupProfile::new("parse").scale(ComponentKind::ProtocolParsing, [ProxyMode::Http], 0.5, 0.5);
    let w = whatif(Workload::Graph(&g), &dbs(), &sp, opts(), Execution::Sequential).unwrap();
    assert_eq!((w.latency_delta_us, w.cpu_delta_cores), (0.0, 0.0));
    assert_eq!(w.notices.len(), 1);
    assert_eq!(w.baseline, w.optimized);
}

#[test]
fn whatif_rejects_edits_of_absent_components() {
    let g = chain(1, ProxyMode::Tcp);
    let sp = SpeedupProfile::new("x").scale(ComponentKind::filter("nope", "v"), [], 0.5, 0.5);
    let err = whatif(Workload::Graph(&g), &dbs(), &sp, opts(), Execution::Sequential).unwrap_err();
    assert!(matches!(err, PredictError::Speedup(crate::profile::ProfileError::UnknownComponent { .. })));
}

#[test]
fn predict_many_matches_sequential() {
    let graphs: Vec<_> = (0..32).map(|s| generate_random_acg(&RandomSpec::new(s, 12, PLATFORM)).unwrap()).collect();
    let a = predict_many(&graphs, &dbs(), opts(), Execution::Sequential).unwrap();
    let b = predict_many(&graphs, &dbs(), opts(), Execution::default()).unwrap();
    assert_eq!(a, b);
}

fn weights(r: &PredictionReport) -> BTreeMap<String, f64> {
    r.per_invocation.iter().map(|o| (o.invocation.clone(), o.latency_us)).collect()
}

#[test]
fn matches_enumeration_on_quantized_weights() {
    // Coarse integer weights force many ties through the tie-break.
    for seed in 0..300 {
        let g = generate_random_acg(&RandomSpec { edge_density: 0.5, ..RandomSpec::new(seed, 10, PLATFORM) }).unwrap();
        let w: Vec<f64> = (0..g.invocations().len()).map(|i| ((i * 7 + seed as usize) % 3) as f64).collect();
        let (dp_w, dp_path) = critical_path(&g, &w);
        let map = g.invocations().iter().zip(&w).map(|(i, &x)| (i.id.clone(), x)).collect();
        let (or_w, or_path) = enumerate_critical_path(&g, &map).unwrap();
        let dp_ids: Vec<String> = dp_path.iter().map(|&i| g.invocations()[i].id.clone()).collect();
        assert_eq!((dp_w, dp_ids), (or_w, or_path), "seed {seed}");
    }
}

proptest! {
    #[test]
    fn critical_path_matches_enumeration(seed in any::<u64>()) {
        let g = generate_random_acg(&RandomSpec::new(seed, 12, PLATFORM)).unwrap();
        let r = predict(&g, &dbs(), opts()).unwrap();
        let (w, path) = enumerate_critical_path(&g, &weights(&r)).unwrap();
        prop_assert_eq!(r.latency_overhead_us, w);
        prop_assert_eq!(r.critical_path, path);
    }

    #[test]
    fn relabeling_and_edge_order_do_not_change_cpu(seed in any::<u64>()) {
        let g = generate_random_acg(&RandomSpec::new(seed, 12, PLATFORM)).unwrap();
        let base = predict(&g, &dbs(), opts()).unwrap();
        let mut spec = g.into_spec();
        spec.edges.reverse();
        spec.invocations.reverse();
        let rename = |id: &str| format!("r-{id}");
        for inv in &mut spec.invocations {
            inv.id = rename(&inv.id);
        }
        for (a, b) in &mut spec.edges {
            *a = rename(a);
            *b = rename(b);
        }
        let other = predict(&AnnotatedCallGraph::new(spec).unwrap(), &dbs(), opts()).unwrap();
        prop_assert_eq!(base.cpu_overhead_cores, other.cpu_overhead_cores);
        prop_assert_eq!(base.latency_overhead_us, other.latency_overhead_us);
    }

    #[test]
    fn growing_size_or_rate_never_lowers_overhead(seed in any::<u64>(), pick in any::<prop::sample::Index>(), extra in 1u64..4000, factor in 1.0f64..4.0) {
        let mut db = ProfileDb::reference();
        for e in db.entries_mut() {
            e.latency.per_byte_us = 0.002;
            e.cpu.per_byte_cpu_s = 1e-9;
        }
        let dbs = ProfileSet::single(db);
        let g = generate_random_acg(&RandomSpec::new(seed, 12, PLATFORM)).unwrap();
        let base = predict(&g, &dbs, opts()).unwrap();
        let mut spec = g.into_spec();
        let k = pick.index(spec.invocations.len());
        spec.invocations[k].size_bytes += extra;
        spec.invocations[k].rate_rps *= factor;
        let bigger = predict(&AnnotatedCallGraph::new(spec).unwrap(), &dbs, opts()).unwrap();
        prop_assert!(bigger.latency_overhead_us >= base.latency_overhead_us);
        prop_assert!(bigger.cpu_overhead_cores >= base.cpu_overhead_cores);
    }

    #[test]
    fn halving_all_latency_halves_every_invocation(seed in any::<u64>()) {
        let g = generate_random_acg(&RandomSpec::new(seed, 12, PLATFORM)).unwrap();
        let mut sp = SpeedupProfile::new("half");
        for e in ProfileDb::reference().entries() {
            if !sp.edits.iter().any(|x| x.kind == e.kind) {
                sp = sp.scale(e.kind.clone(), [], 0.5, 1.0);
            }
        }
        let w = whatif(Workload::Graph(&g), &dbs(), &sp, opts(), Execution::Sequential).unwrap();
        let (Prediction::Single(b), Prediction::Single(o)) = (&w.baseline, &w.optimized) else { unreachable!() };
        for (x, y) in b.per_invocation.iter().zip(&o.per_invocation) {
            prop_assert_eq!(y.latency_us, 0.5 * x.latency_us);
        }
        prop_assert_eq!(&b.critical_path, &o.critical_path);
        prop_assert_eq!(w.latency_delta_us, o.latency_overhead_us - b.latency_overhead_us);
    }
}
