//! Cross-checks of the core algorithms against independently coded oracles:
//! exhaustive path enumeration vs the makespan DP, recursive rate
//! recomputation vs the propagation pass, and a literal enumeration of all
//! placements vs the brute-force search.

mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use edgesched::model::{
    longest_path_latency, propagate_rates, DataflowSpec, DataflowVertex, RatedDataflow,
    topo_set_order,
};
use edgesched::placement::{self, Mapping, PlacementState};
use edgesched::resources::{build_pool, PoolConfig, ResourceClass, ResourceId, ResourcePool};
use edgesched::schedulers::{brute_force_place, estimate_penalty, topset_place};

/// Builds a layered DAG: consecutive layers fully wired, sources in the first
/// layer, sinks in the last.
fn layered_spec(id: &str, widths: &[usize], types: &[&str], input_rate: f64) -> DataflowSpec {
    let mut vertices = Vec::new();
    let mut layers: Vec<Vec<String>> = Vec::new();
    let mut ti = 0;
    for (li, &w) in widths.iter().enumerate() {
        let mut layer = Vec::new();
        for i in 0..w {
            let name = format!("l{li}v{i}");
            let qt = if li == 0 {
                "source".to_string()
            } else if li == widths.len() - 1 {
                "sink".to_string()
            } else {
                let t = types[ti % types.len()].to_string();
                ti += 1;
                t
            };
            vertices.push(DataflowVertex { id: name.clone(), query_type: qt });
            layer.push(name);
        }
        layers.push(layer);
    }
    let mut edges = Vec::new();
    for w in layers.windows(2) {
        for a in &w[0] {
            for b in &w[1] {
                edges.push((a.clone(), b.clone()));
            }
        }
    }
    DataflowSpec { id: id.into(), vertices, edges, input_rate }
}

/// All source-to-sink paths by DFS over the raw edge list.
fn all_paths(spec: &DataflowSpec) -> Vec<Vec<String>> {
    let mut succs: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    let mut has_in: BTreeMap<&str, bool> = BTreeMap::new();
    for v in &spec.vertices {
        succs.entry(v.id.as_str()).or_default();
        has_in.insert(v.id.as_str(), false);
    }
    for (from, to) in &spec.edges {
        succs.get_mut(from.as_str()).unwrap().push(to);
        has_in.insert(to, true);
    }
    let mut paths = Vec::new();
    let mut stack: Vec<Vec<&str>> = has_in
        .iter()
        .filter(|(_, &p)| !p)
        .map(|(&v, _)| vec![v])
        .collect();
    while let Some(path) = stack.pop() {
        let last = *path.last().unwrap();
        if succs[last].is_empty() {
            paths.push(path.iter().map(|s| s.to_string()).collect());
            continue;
        }
        for &next in &succs[last] {
            let mut p = path.clone();
            p.push(next);
            stack.push(p);
        }
    }
    paths
}

/// Latency of one explicit path: every non-sink vertex contributes its
/// class latency plus the link cost of the hop it feeds.
fn path_latency(
    rated: &RatedDataflow,
    path: &[String],
    assignments: &BTreeMap<String, ResourceId>,
    pool: &ResourcePool,
) -> f64 {
    let mut total = 0.0;
    for i in 0..path.len() - 1 {
        let v = &path[i];
        let qt = &rated
            .spec
            .vertices
            .iter()
            .find(|x| &x.id == v)
            .unwrap()
            .query_type;
        let res = assignments[v];
        let class = pool.class_of(res).unwrap();
        total += pool.catalog.latency(qt, class).unwrap();
        let next = assignments[&path[i + 1]];
        if res != next {
            let delta = pool.catalog.event_size(qt).unwrap();
            total += pool.network.latency(res, next) + delta / pool.network.bandwidth(res, next);
        }
    }
    total
}

fn tiny_pool(seed: u64) -> (PoolConfig, ResourcePool) {
    let cfg = PoolConfig::tiny();
    let pool = build_pool(&cfg, seed).unwrap();
    (cfg, pool)
}

#[test]
fn makespan_dp_matches_path_enumeration() {
    let (cfg, pool) = tiny_pool(17);
    let types = ["filter-a", "seq-b", "pattern-c", "agg-sliding-a"];
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for case in 0..40 {
        let widths: Vec<usize> = (0..rng.random_range(3..=5usize))
            .map(|i| if i == 0 { rng.random_range(1..=2) } else { rng.random_range(1..=3) })
            .collect();
        let spec = layered_spec(&format!("d{case}"), &widths, &types, 100.0);
        let rated = propagate_rates(&spec, &cfg.catalog).unwrap();
        // Random class-respecting assignment.
        let topo = spec.topology().unwrap();
        let mut assignments = BTreeMap::new();
        for (vi, v) in spec.vertices.iter().enumerate() {
            let res = if topo.preds[vi].is_empty() {
                ResourceId(rng.random_range(0..3)) // edges
            } else if topo.succs[vi].is_empty() {
                ResourceId(rng.random_range(3..5)) // cloud
            } else {
                ResourceId(rng.random_range(0..5))
            };
            assignments.insert(v.id.clone(), res);
        }
        let dp = longest_path_latency(&rated, &assignments, &pool).unwrap();
        let brute = all_paths(&spec)
            .iter()
            .map(|p| path_latency(&rated, p, &assignments, &pool))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(
            (dp - brute).abs() < 1e-12,
            "case {case}: dp {dp} != enumerated {brute}"
        );
    }
}

#[test]
fn rate_propagation_matches_recursive_recompute() {
    let (cfg, pool) = tiny_pool(5);
    let types = ["filter-b", "seq-a", "agg-batch-c", "pattern-a", "filter-e"];
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for case in 0..30 {
        let widths: Vec<usize> = (0..rng.random_range(3..=6usize))
            .map(|_| rng.random_range(1..=3usize))
            .collect();
        let spec = layered_spec(&format!("r{case}"), &widths, &types, 100.0);
        let rated = propagate_rates(&spec, &cfg.catalog).unwrap();
        // Any complete class-legal mapping satisfies the audit's C1 lookups.
        let topo = spec.topology().unwrap();
        let mut assignments = BTreeMap::new();
        for (vi, v) in spec.vertices.iter().enumerate() {
            let res = if topo.succs[vi].is_empty() { ResourceId(3) } else { ResourceId(0) };
            assignments.insert(v.id.clone(), res);
        }
        let mut state = PlacementState::new();
        state
            .insert(rated.clone(), Mapping { dataflow: spec.id.clone(), assignments })
            .unwrap();
        // The audit recomputes rates recursively; if its C2 verdict matches
        // the library on both an honest and a corrupted rate, propagation and
        // recursion agree. Direct comparison is simpler:
        for v in &spec.vertices {
            // Sources consume nothing; the library reports their in-rate as 0.
            if !rated.spec.edges.iter().any(|(_, to)| to == &v.id) {
                assert_eq!(rated.in_rate(&v.id), 0.0);
                continue;
            }
            let recursive = common_rate(&state, &pool, &spec.id, &v.id);
            assert!(
                (rated.in_rate(&v.id) - recursive).abs() < 1e-9,
                "case {case}, vertex {}: {} vs {recursive}",
                v.id,
                rated.in_rate(&v.id)
            );
        }
    }
}

/// Recursive in-rate via the shared audit helper's logic, re-derived here to
/// keep the oracle visible at the call site.
fn common_rate(state: &PlacementState, pool: &ResourcePool, dag: &str, vertex: &str) -> f64 {
    fn go(spec: &DataflowSpec, pool: &ResourcePool, v: &str, share: f64) -> f64 {
        let preds: Vec<&str> = spec
            .edges
            .iter()
            .filter(|(_, to)| to == v)
            .map(|(from, _)| from.as_str())
            .collect();
        if preds.is_empty() {
            return share;
        }
        preds
            .iter()
            .map(|p| {
                let qt = &spec.vertices.iter().find(|x| x.id == *p).unwrap().query_type;
                go(spec, pool, p, share) * pool.catalog.selectivity(qt).unwrap()
            })
            .sum()
    }
    let rated = &state.dataflows[dag];
    let n_sources = rated
        .spec
        .vertices
        .iter()
        .filter(|v| !rated.spec.edges.iter().any(|(_, to)| to == &v.id))
        .count();
    go(&rated.spec, pool, vertex, rated.spec.input_rate / n_sources as f64)
}

#[test]
fn brute_force_matches_literal_enumeration() {
    // The brute-force search evaluates chromosomes through the GA instance;
    // this oracle re-enumerates with the placement-level objective/validate
    // pair so the two evaluation paths check each other.
    let (cfg, pool) = tiny_pool(23);
    let types = ["filter-c", "agg-sliding-b"];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..10 {
        let widths = vec![1, rng.random_range(1..=2usize), 1];
        let spec = layered_spec(&format!("b{case}"), &widths, &types, 100.0);
        let rated = propagate_rates(&spec, &cfg.catalog).unwrap();
        let n = spec.vertices.len();

        let mut best: Option<f64> = None;
        let mut genes = vec![0u32; n];
        'outer: loop {
            let mut assignments = BTreeMap::new();
            for (v, &g) in spec.vertices.iter().zip(&genes) {
                assignments.insert(v.id.clone(), ResourceId(g));
            }
            let mut state = PlacementState::new();
            state
                .insert(rated.clone(), Mapping { dataflow: spec.id.clone(), assignments })
                .unwrap();
            if placement::validate(&state, &pool).unwrap().all_ok() {
                let obj = placement::objective(&state, &pool).unwrap();
                if best.is_none_or(|b| obj < b) {
                    best = Some(obj);
                }
            }
            let mut i = n;
            loop {
                if i == 0 {
                    break 'outer;
                }
                i -= 1;
                genes[i] += 1;
                if genes[i] < 5 {
                    break;
                }
                genes[i] = 0;
            }
        }

        let result = brute_force_place(std::slice::from_ref(&rated), &pool);
        match best {
            Some(expected) => {
                let (obj, _) = result.unwrap();
                assert!(
                    (obj - expected).abs() < 1e-12,
                    "case {case}: brute {obj} vs literal {expected}"
                );
            }
            None => assert!(result.is_err(), "case {case}: literal found nothing"),
        }
    }
}

#[test]
fn audit_agrees_with_library_validation_on_scheduler_output() {
    let (cfg, pool) = tiny_pool(29);
    let types = ["filter-a", "seq-c", "agg-batch-a"];
    let mut state = PlacementState::new();
    for i in 0..3 {
        let spec = layered_spec(&format!("s{i}"), &[1, 2, 1], &types, 100.0);
        let rated = propagate_rates(&spec, &cfg.catalog).unwrap();
        let r = topset_place(&state, &pool, &rated, i % 2 == 0).unwrap();
        assert!(r.accepted);
        state.insert(rated, r.mappings[0].clone()).unwrap();
    }
    assert!(placement::validate(&state, &pool).unwrap().all_ok());
    assert!(common::audit(&state, &pool).is_empty());

    // Corrupt the state: drag a sink onto an edge; both checkers must object.
    let key = state.mappings.keys().next().unwrap().clone();
    let mapping = state.mappings.get_mut(&key).unwrap();
    let sink = mapping
        .assignments
        .iter()
        .find(|(_, r)| pool.class_of(**r).unwrap() == ResourceClass::Cloud)
        .map(|(v, _)| v.clone())
        .unwrap();
    mapping.assignments.insert(sink, ResourceId(0));
    assert!(!placement::validate(&state, &pool).unwrap().all_ok());
    assert!(!common::audit(&state, &pool).is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn topo_sets_partition_and_respect_precedence(
        widths in proptest::collection::vec(1usize..=3, 3..=6),
    ) {
        let spec = layered_spec("p", &widths, &["filter-a", "seq-a"], 100.0);
        let order = topo_set_order(&spec).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        let mut level = BTreeMap::new();
        for (si, set) in order.sets.iter().enumerate() {
            for v in set {
                prop_assert!(seen.insert(v.clone()), "vertex {v} in two sets");
                level.insert(v.clone(), si);
            }
        }
        prop_assert_eq!(seen.len(), spec.vertices.len());
        for (from, to) in &spec.edges {
            prop_assert!(level[from] < level[to], "{from} not before {to}");
        }
    }

    #[test]
    fn propagation_is_deterministic_and_positive(
        widths in proptest::collection::vec(1usize..=3, 3..=5),
        rate in 1.0f64..1000.0,
    ) {
        let cfg = PoolConfig::tiny();
        let spec = layered_spec("q", &widths, &["filter-b", "pattern-a"], rate);
        let a = propagate_rates(&spec, &cfg.catalog).unwrap();
        let b = propagate_rates(&spec, &cfg.catalog).unwrap();
        for v in &spec.vertices {
            prop_assert_eq!(a.in_rate(&v.id), b.in_rate(&v.id));
            prop_assert!(a.out_rate(&v.id) > 0.0);
            if spec.edges.iter().any(|(_, to)| to == &v.id) {
                prop_assert!(a.in_rate(&v.id) > 0.0);
            }
        }
    }

    #[test]
    fn collocation_penalty_is_never_negative(seed in 0u64..500) {
        let (cfg, pool) = tiny_pool(seed);
        let mut state = PlacementState::new();
        let spec = layered_spec("x", &[1, 2, 1], &["filter-d", "seq-b"], 100.0);
        let rated = propagate_rates(&spec, &cfg.catalog).unwrap();
        let r = topset_place(&state, &pool, &rated, false).unwrap();
        prop_assert!(r.accepted);
        state.insert(rated, r.mappings[0].clone()).unwrap();
        for res in &pool.resources {
            prop_assert!(estimate_penalty(res.id, &state, &pool).unwrap() >= 0.0);
        }
    }

    #[test]
    fn sampled_network_is_symmetric(seed in 0u64..500) {
        let (_, pool) = tiny_pool(seed);
        for a in 0..pool.len() as u32 {
            for b in 0..pool.len() as u32 {
                let (ra, rb) = (ResourceId(a), ResourceId(b));
                prop_assert_eq!(pool.network.latency(ra, rb), pool.network.latency(rb, ra));
                prop_assert_eq!(pool.network.bandwidth(ra, rb), pool.network.bandwidth(rb, ra));
            }
        }
    }
}
