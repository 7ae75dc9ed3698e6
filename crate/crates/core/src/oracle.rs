//! Brute-force reference implementations and seeded generators for tests.
//!
//! The algorithms here deliberately differ from the production ones: path
//! enumeration instead of a topological DP, and a two-pass closed form
//! instead of the streaming fitter.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acg::{AnnotatedCallGraph, CallGraphSpec, Invocation, ServiceInstance};
use crate::config::{ProxyMode, SidecarConfig};

/// Largest graph [`enumerate_critical_path`] accepts.
pub const ENUMERATION_LIMIT: usize = 20;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error("graph has {0} invocations, enumeration is limited to {ENUMERATION_LIMIT}")]
    TooLarge(usize),
    #[error("fewer than two distinct x values")]
    Degenerate,
    #[error("no weight for invocation {0:?}")]
    MissingWeight(String),
    #[error("invalid random spec: {0}")]
    InvalidSpec(String),
}

/// Walks every root-to-leaf path and keeps the heaviest, summing weights
/// left to right. Equal weights resolve to the lexicographically smallest
/// id sequence.
pub fn enumerate_critical_path(
    g: &AnnotatedCallGraph,
    weights: &BTreeMap<String, f64>,
) -> Result<(f64, Vec<String>), OracleError> {
    let invocations = g.invocations();
    if invocations.len() > ENUMERATION_LIMIT {
        return Err(OracleError::TooLarge(invocations.len()));
    }
    let mut children: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    let mut has_parent: BTreeMap<&str, bool> = BTreeMap::new();
    for inv in invocations {
        if !weights.contains_key(&inv.id) {
            return Err(OracleError::MissingWeight(inv.id.clone()));
        }
        children.entry(&inv.id).or_default();
        has_parent.entry(&inv.id).or_insert(false);
    }
    for (from, to) in g.edges() {
        children.get_mut(from.as_str()).expect("validated edge").push(to);
        has_parent.insert(to, true);
    }

    let mut paths: Vec<Vec<&str>> = Vec::new();
    let mut stack: Vec<Vec<&str>> =
        invocations.iter().filter(|i| !has_parent[i.id.as_str()]).map(|i| vec![i.id.as_str()]).collect();
    while let Some(path) = stack.pop() {
        let last = *path.last().expect("non-empty");
        let next = &children[last];
        if next.is_empty() {
            paths.push(path);
            continue;
        }
        for &c in next {
            let mut extended = path.clone();
            extended.push(c);
            stack.push(extended);
        }
    }

    let mut best: Option<(f64, Vec<&str>)> = None;
    for path in paths {
        let mut total = 0.0;
        for id in &path {
            total += weights[*id];
        }
        let better = match &best {
            None => true,
            Some((w, p)) => total > *w || (total == *w && path < *p),
        };
        if better {
            best = Some((total, path));
        }
    }
    let (w, p) = best.expect("a validated graph has at least one root-to-leaf path");
    Ok((w, p.into_iter().map(String::from).collect()))
}

/// Ordinary least squares from the normal equations, computed with plain
/// two-pass sums.
pub fn ols_oracle(points: &[(f64, f64)]) -> Result<(f64, f64), OracleError> {
    if points.len() < 2 {
        return Err(OracleError::Degenerate);
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_x) * (p.0 - mean_x)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    if sxx == 0.0 {
        return Err(OracleError::Degenerate);
    }
    let slope = sxy / sxx;
    Ok((mean_y - slope * mean_x, slope))
}

/// Parameters for [`generate_random_acg`]. Ranges are inclusive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomSpec {
    pub seed: u64,
    pub min_invocations: usize,
    pub max_invocations: usize,
    /// Probability of an edge between each ordered pair of invocations.
    pub edge_density: f64,
    pub min_size_bytes: u64,
    pub max_size_bytes: u64,
    pub min_rate_rps: f64,
    pub max_rate_rps: f64,
    /// Relative weights of TCP, HTTP and gRPC services.
    pub mode_mix: [u32; 3],
    pub platform: String,
    /// Number of services invocations are drawn between.
    #[serde(default = "default_services")]
    pub services: usize,
}

fn default_services() -> usize {
    6
}

impl RandomSpec {
    pub fn new(seed: u64, max_invocations: usize, platform: impl Into<String>) -> Self {
        RandomSpec {
            seed,
            min_invocations: 1,
            max_invocations,
            edge_density: 0.3,
            min_size_bytes: 64,
            max_size_bytes: 4096,
            min_rate_rps: 100.0,
            max_rate_rps: 30_000.0,
            mode_mix: [1, 1, 1],
            platform: platform.into(),
            services: default_services(),
        }
    }

    pub fn check(&self) -> Result<(), OracleError> {
        let bad = |m: &str| Err(OracleError::InvalidSpec(m.into()));
        if self.min_invocations == 0 || self.min_invocations > self.max_invocations {
            return bad("need 1 <= min_invocations <= max_invocations");
        }
        if !(0.0..=1.0).contains(&self.edge_density) {
            return bad("edge_density must lie in [0, 1]");
        }
        if self.min_size_bytes > self.max_size_bytes {
            return bad("min_size_bytes exceeds max_size_bytes");
        }
        if !(self.min_rate_rps > 0.0 && self.min_rate_rps <= self.max_rate_rps && self.max_rate_rps.is_finite()) {
            return bad("need 0 < min_rate_rps <= max_rate_rps");
        }
        if self.mode_mix.iter().all(|&w| w == 0) {
            return bad("mode_mix has no positive weight");
        }
        if self.services == 0 {
            return bad("services must be positive");
        }
        Ok(())
    }
}

/// Builds a random valid ACG. Edges only run from a lower to a higher
/// position of a hidden order, so the result is acyclic; invocation ids are
/// shuffled so that order is not visible in them.
pub fn generate_random_acg(spec: &RandomSpec) -> Result<AnnotatedCallGraph, OracleError> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = rng.random_range(spec.min_invocations..=spec.max_invocations);

    let total_mix: u32 = spec.mode_mix.iter().sum();
    let services: Vec<ServiceInstance> = (0..spec.services)
        .map(|k| {
            let mut pick = rng.random_range(0..total_mix);
            let mut mode = ProxyMode::Tcp;
            for (m, &w) in ProxyMode::ALL.iter().zip(&spec.mode_mix) {
                if pick < w {
                    mode = *m;
                    break;
                }
                pick -= w;
            }
            ServiceInstance::new(format!("svc{k}"), spec.platform.clone(), SidecarConfig::new(mode))
        })
        .collect();

    let mut labels: Vec<usize> = (0..n).collect();
    labels.shuffle(&mut rng);
    let width = n.to_string().len();
    let ids: Vec<String> = labels.iter().map(|l| format!("n{l:0width$}")).collect();

    let invocations = ids
        .iter()
        .map(|id| {
            let caller = rng.random_range(0..spec.services);
            let callee = rng.random_range(0..spec.services);
            let size = rng.random_range(spec.min_size_bytes..=spec.max_size_bytes);
            let rate = rng.random_range(spec.min_rate_rps..=spec.max_rate_rps);
            Invocation::new(id.clone(), Some(&services[caller].id), services[callee].id.clone(), size, rate)
        })
        .collect();

    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(spec.edge_density) {
                edges.push((ids[i].clone(), ids[j].clone()));
            }
        }
    }
    edges.shuffle(&mut rng);

    let g = AnnotatedCallGraph::new(CallGraphSpec { services, invocations, edges })
        .expect("generator only emits valid graphs");
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acg::parse_acg;

    fn unit_weights(g: &AnnotatedCallGraph) -> BTreeMap<String, f64> {
        g.invocations().iter().map(|i| (i.id.clone(), 1.0)).collect()
    }

    #[test]
    fn bookinfo_unit_weights_take_the_ratings_branch() {
        let g = parse_acg(include_str!("../tests/fixtures/bookinfo.acg.json")).unwrap();
        let (w, path) = enumerate_critical_path(&g, &unit_weights(&g)).unwrap();
        assert_eq!(w, 4.0);
        assert_eq!(path, ["1-client-frontend", "2-frontend-product", "3-product-reviews", "4-reviews-ratings"]);
    }

    #[test]
    fn diamond_goes_through_heavier_branch() {
        let spec = RandomSpec::new(0, 1, "p");
        let svc = ServiceInstance::new("s", "p", SidecarConfig::new(ProxyMode::Tcp));
        let inv = |id: &str| Invocation::new(id, Some("s"), "s", 100, 1.0);
        let e = |a: &str, b: &str| (a.to_string(), b.to_string());
        let g = AnnotatedCallGraph::new(CallGraphSpec {
            services: vec![svc],
            invocations: vec![inv("a"), inv("b"), inv("c"), inv("d")],
            edges: vec![e("a", "b"), e("a", "c"), e("b", "d"), e("c", "d")],
        })
        .unwrap();
        let weights = [("a", 1.0), ("b", 5.0), ("c", 3.0), ("d", 1.0)].map(|(k, v)| (k.to_string(), v)).into();
        assert_eq!(enumerate_critical_path(&g, &weights).unwrap(), (7.0, vec!["a".into(), "b".into(), "d".into()]));
        assert!(spec.check().is_ok());
    }

    #[test]
    fn ties_prefer_smaller_id_sequence() {
        let svc = ServiceInstance::new("s", "p", SidecarConfig::new(ProxyMode::Tcp));
        let inv = |id: &str| Invocation::new(id, Some("s"), "s", 100, 1.0);
        let g = AnnotatedCallGraph::new(CallGraphSpec {
            services: vec![svc],
            invocations: vec![inv("z"), inv("b"), inv("a")],
            edges: vec![("z".into(), "b".into())],
        })
        .unwrap();
        let weights = [("z", 1.0), ("b", 1.0), ("a", 2.0)].map(|(k, v)| (k.to_string(), v)).into();
        assert_eq!(enumerate_critical_path(&g, &weights).unwrap(), (2.0, vec!["a".to_string()]));
    }

    #[test]
    fn ols_oracle_examples() {
        assert_eq!(ols_oracle(&[(0.0, 1.0), (1.0, 3.0)]).unwrap(), (1.0, 2.0));
        let eps = 0.25;
        let noisy = [(1.0, 3.0 + eps), (2.0, 5.0), (3.0, 7.0), (4.0, 9.0), (5.0, 11.0 + eps)];
        let (_, slope) = ols_oracle(&noisy).unwrap();
        assert!((slope - 2.0).abs() < 1e-12);
        let grid: Vec<(f64, f64)> = [100.0, 1024.0, 2048.0, 3072.0, 4096.0].iter().map(|&x| (x, 10.0 + 0.002 * x)).collect();
        let (a, b) = ols_oracle(&grid).unwrap();
        assert!((a - 10.0).abs() < 1e-9 && (b - 0.002).abs() < 1e-12);
        assert_eq!(ols_oracle(&[(1.0, 1.0), (1.0, 2.0)]), Err(OracleError::Degenerate));
        assert_eq!(ols_oracle(&[(1.0, 1.0)]), Err(OracleError::Degenerate));
    }

    #[test]
    fn generator_is_deterministic_and_valid() {
        let one = RandomSpec { min_invocations: 1, max_invocations: 1, ..RandomSpec::new(42, 1, "p") };
        assert_eq!(generate_random_acg(&one).unwrap().invocations().len(), 1);
        for seed in 0..200 {
            let spec = RandomSpec::new(seed, 12, "p");
            let a = generate_random_acg(&spec).unwrap();
            let b = generate_random_acg(&spec).unwrap();
            assert_eq!(a.to_json(), b.to_json());
            assert!(crate::acg::validate(a.spec()).is_empty());
            assert!(a.invocations().len() <= 12);
        }
    }

    #[test]
    fn random_spec_round_trips_and_rejects_nonsense() {
        let spec = RandomSpec::new(7, 12, "p");
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<RandomSpec>(&text).unwrap(), spec);
        let bad = RandomSpec { edge_density: 1.5, ..spec.clone() };
        assert!(matches!(generate_random_acg(&bad), Err(OracleError::InvalidSpec(_))));
        let too_big = RandomSpec { min_invocations: 21, max_invocations: 21, edge_density: 0.0, ..spec };
        let g = generate_random_acg(&too_big).unwrap();
        assert_eq!(enumerate_critical_path(&g, &unit_weights(&g)), Err(OracleError::TooLarge(21)));
    }
}
