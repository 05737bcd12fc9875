//! An independently written constraint checker used to cross-examine
//! placement states produced by the schedulers. It deliberately avoids the
//! library's own validation helpers: rates are recomputed recursively, the
//! parallelism table is read with a linear scan, and grouping is done by
//! walking the raw mappings.

use std::collections::{BTreeMap, HashMap};

use edgesched::model::RatedDataflow;
use edgesched::placement::PlacementState;
use edgesched::resources::{ResourceClass, ResourceId, ResourcePool};

/// Recomputes per-vertex input rates by memoized recursion over the edge
/// list, without using the library's rate propagation.
fn recompute_in_rates(rated: &RatedDataflow, pool: &ResourcePool) -> HashMap<String, f64> {
    let spec = &rated.spec;
    let mut preds: HashMap<&str, Vec<&str>> = HashMap::new();
    let mut has_pred: HashMap<&str, bool> = HashMap::new();
    for v in &spec.vertices {
        preds.entry(v.id.as_str()).or_default();
        has_pred.insert(v.id.as_str(), false);
    }
    for (from, to) in &spec.edges {
        preds.entry(to.as_str()).or_default().push(from.as_str());
        has_pred.insert(to.as_str(), true);
    }
    let n_sources = has_pred.values().filter(|&&p| !p).count().max(1);
    let source_share = spec.input_rate / n_sources as f64;

    let selectivity: HashMap<&str, f64> = spec
        .vertices
        .iter()
        .map(|v| {
            let s = pool
                .catalog
                .selectivity(&v.query_type)
                .expect("catalog covers placed query types");
            (v.id.as_str(), s)
        })
        .collect();

    fn in_rate<'a>(
        v: &'a str,
        preds: &HashMap<&'a str, Vec<&'a str>>,
        selectivity: &HashMap<&'a str, f64>,
        source_share: f64,
        memo: &mut HashMap<&'a str, f64>,
    ) -> f64 {
        if let Some(&r) = memo.get(v) {
            return r;
        }
        let ps = &preds[v];
        let r = if ps.is_empty() {
            source_share
        } else {
            ps.iter()
                .map(|p| {
                    in_rate(p, preds, selectivity, source_share, memo) * selectivity[p]
                })
                .sum()
        };
        memo.insert(v, r);
        r
    }

    let mut memo = HashMap::new();
    spec.vertices
        .iter()
        .map(|v| {
            (
                v.id.clone(),
                in_rate(v.id.as_str(), &preds, &selectivity, source_share, &mut memo),
            )
        })
        .collect()
}

fn pi_of(pool: &ResourcePool, m: u32) -> f64 {
    let mut pi = 0.0;
    for &(row_m, value) in &pool.parallelism_table {
        if m >= row_m {
            pi = value;
        }
    }
    pi
}

struct Hosted {
    dataflow: String,
    vertex: String,
    query_type: String,
    in_rate: f64,
    is_source: bool,
}

/// Returns a human-readable message per violated constraint instance; an
/// empty vector means the state satisfies all three constraints.
pub fn audit(state: &PlacementState, pool: &ResourcePool) -> Vec<String> {
    let mut problems = Vec::new();
    let mut hosted: BTreeMap<ResourceId, Vec<Hosted>> = BTreeMap::new();

    for (df_id, mapping) in &state.mappings {
        let rated = match state.dataflows.get(df_id) {
            Some(r) => r,
            None => {
                problems.push(format!("mapping for {df_id} has no registered dataflow"));
                continue;
            }
        };
        let rates = recompute_in_rates(rated, pool);
        let mut has_out: HashMap<&str, bool> = HashMap::new();
        let mut has_in: HashMap<&str, bool> = HashMap::new();
        for (from, to) in &rated.spec.edges {
            has_out.insert(from.as_str(), true);
            has_in.insert(to.as_str(), true);
        }
        for v in &rated.spec.vertices {
            let Some(&res) = mapping.assignments.get(&v.id) else {
                problems.push(format!("{df_id}/{} is unmapped", v.id));
                continue;
            };
            let class = match pool.resource(res) {
                Ok(r) => r.class,
                Err(_) => {
                    problems.push(format!("{df_id}/{} maps to unknown resource", v.id));
                    continue;
                }
            };
            let is_source = !has_in.get(v.id.as_str()).copied().unwrap_or(false);
            let is_sink = !has_out.get(v.id.as_str()).copied().unwrap_or(false);
            if is_source && class != ResourceClass::Edge {
                problems.push(format!("C1: source {df_id}/{} not on an edge", v.id));
            }
            if is_sink && class != ResourceClass::Cloud {
                problems.push(format!("C1: sink {df_id}/{} not on a cloud VM", v.id));
            }
            hosted.entry(res).or_default().push(Hosted {
                dataflow: df_id.clone(),
                vertex: v.id.clone(),
                query_type: v.query_type.clone(),
                in_rate: rates[&v.id],
                is_source,
            });
        }
    }

    for (res, queries) in &hosted {
        let resource = pool.resource(*res).expect("checked above");
        let non_source: Vec<&Hosted> = queries.iter().filter(|q| !q.is_source).collect();
        let m = non_source.len() as u32;
        if m > 0 {
            let sum_lambda: f64 = non_source
                .iter()
                .map(|q| {
                    pool.catalog
                        .latency(&q.query_type, resource.class)
                        .expect("catalog covers placed query types")
                })
                .sum();
            if sum_lambda > 0.0 {
                let bound = (1.0 + pool.pi_sign * pi_of(pool, m)) / sum_lambda;
                for q in &non_source {
                    if q.in_rate >= bound {
                        problems.push(format!(
                            "C2: {}/{} rate {:.3} e/s >= bound {:.3} e/s on {res}",
                            q.dataflow, q.vertex, q.in_rate, bound
                        ));
                    }
                }
            }
        }
        if let Some(batt) = &resource.battery {
            let mut incr = 0.0;
            for q in &non_source {
                incr += q.in_rate
                    * pool
                        .catalog
                        .energy(&q.query_type, resource.class)
                        .expect("catalog covers placed query types");
            }
            let drain = batt.recharge_interval_sec * (batt.base_load_ma / 3600.0 + incr);
            if drain > batt.capacity_mah {
                problems.push(format!(
                    "C3: {res} drains {drain:.2} mAh > capacity {} mAh",
                    batt.capacity_mah
                ));
            }
        }
    }

    problems
}
