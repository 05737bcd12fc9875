//! TopSet and TopSet/P: place an arriving dataflow by visiting its
//! topological sets in order and greedily assigning each query to the valid
//! resource minimizing the critical-path cost up to that query.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::error::Result;
use crate::model::{self, RatedDataflow};
use crate::placement::{self, resource_load_index, Mapping, PlacementState, ResourceAgg};
use crate::resources::{ResourceClass, ResourceId, ResourcePool};
use crate::schedulers::ScheduleResult;

/// Estimated critical-path increase suffered by the queries already on
/// `resource` if one more non-source query joins it. Uses the effective
/// latency model lambda_eff = lambda * m / (1 + pi(m)): the contribution of
/// every collocated query grows by the same factor, so the sum reduces to
/// sum_lambda * (m_new/f(m_new) - m_old/f(m_old)), floored at zero.
pub fn estimate_penalty(
    resource: ResourceId,
    state: &PlacementState,
    pool: &ResourcePool,
) -> Result<f64> {
    let index = resource_load_index(state, pool)?;
    let agg = index.get(&resource).copied().unwrap_or_default();
    penalty_from_agg(&agg, pool)
}

fn penalty_from_agg(agg: &ResourceAgg, pool: &ResourcePool) -> Result<f64> {
    if agg.m == 0 {
        return Ok(0.0);
    }
    let m_old = agg.m;
    let m_new = m_old + 1;
    let factor = m_new as f64 / pool.pi_factor(m_new)? - m_old as f64 / pool.pi_factor(m_old)?;
    Ok((agg.sum_lambda * factor).max(0.0))
}

struct Candidate {
    cost: f64,
    class: ResourceClass,
    id: ResourceId,
}

impl Candidate {
    /// Smaller cost wins; ties prefer edge over cloud, then the lowest id.
    fn better_than(&self, other: &Candidate) -> bool {
        if self.cost != other.cost {
            return self.cost < other.cost;
        }
        let rank = |c: ResourceClass| if c == ResourceClass::Edge { 0 } else { 1 };
        (rank(self.class), self.id) < (rank(other.class), other.id)
    }
}

/// Checks constraints 2 and 3 for adding one query (of the given latency,
/// rate and energy profile) to a resource currently carrying `agg`.
fn feasible_addition(
    pool: &ResourcePool,
    resource: ResourceId,
    agg: &ResourceAgg,
    is_source: bool,
    lambda: f64,
    in_rate: f64,
    energy: f64,
) -> Result<bool> {
    let res = pool.resource(resource)?;
    if !is_source {
        let m = agg.m + 1;
        let sum_lambda = agg.sum_lambda + lambda;
        if sum_lambda > 0.0 {
            let bound = pool.pi_factor(m)? / sum_lambda * (1.0 - placement::FEASIBILITY_MARGIN);
            if in_rate >= bound || (agg.m > 0 && agg.max_in_rate >= bound) {
                return Ok(false);
            }
        }
    }
    if let Some(batt) = &res.battery {
        let incr = agg.energy_rate + if is_source { 0.0 } else { in_rate * energy };
        let drain = batt.recharge_interval_sec * (batt.base_load_ma / 3600.0 + incr)
            * (1.0 + placement::FEASIBILITY_MARGIN);
        if drain > batt.capacity_mah {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Places `new_dag` without touching any existing assignment. Returns a
/// rejected result if some query has no constraint-valid resource.
pub fn topset_place(
    state: &PlacementState,
    pool: &ResourcePool,
    new_dag: &RatedDataflow,
    penalty_mode: bool,
) -> Result<ScheduleResult> {
    let start = Instant::now();
    let spec = &new_dag.spec;
    let topo = spec.topology()?;
    let order = model::topo_set_order(spec)?;

    // Existing load per resource; updated tentatively as we assign.
    let mut load = resource_load_index(state, pool)?;

    let mut assignments: BTreeMap<String, ResourceId> = BTreeMap::new();
    // Critical-path cost from the sources up to and including each placed
    // vertex of the new dataflow.
    let mut path_cost: BTreeMap<usize, f64> = BTreeMap::new();
    let mut candidates_evaluated = 0u64;

    for set in &order.sets {
        // Within a set, visit queries in decreasing reference (edge-class)
        // latency; ties by vertex id.
        let mut members: Vec<usize> = set.iter().map(|id| topo.index[id]).collect();
        let key = |v: usize| -> Result<f64> {
            pool.catalog
                .latency(&spec.vertices[v].query_type, ResourceClass::Edge)
        };
        let mut keyed: Vec<(f64, usize)> = Vec::with_capacity(members.len());
        for v in members.drain(..) {
            keyed.push((key(v)?, v));
        }
        keyed.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap()
                .then_with(|| spec.vertices[a.1].id.cmp(&spec.vertices[b.1].id))
        });

        for (_, v) in keyed {
            let vtx = &spec.vertices[v];
            let qt = &vtx.query_type;
            let is_source = topo.preds[v].is_empty();
            let is_sink = topo.succs[v].is_empty();
            let in_rate = new_dag.in_rate(&vtx.id);

            let mut best: Option<Candidate> = None;
            for res in &pool.resources {
                match (is_source, is_sink, res.class) {
                    (true, _, ResourceClass::Cloud) => continue,
                    (_, true, ResourceClass::Edge) => continue,
                    _ => {}
                }
                candidates_evaluated += 1;
                let lambda = pool.catalog.latency(qt, res.class)?;
                let energy = pool.catalog.energy(qt, res.class)?;
                let agg = load.get(&res.id).copied().unwrap_or_default();
                if !feasible_addition(pool, res.id, &agg, is_source, lambda, in_rate, energy)? {
                    continue;
                }
                let mut cost = lambda;
                for &p in &topo.preds[v] {
                    let p_res = assignments[&spec.vertices[p].id];
                    let delta = pool.catalog.event_size(&spec.vertices[p].query_type)?;
                    let hop = path_cost[&p] + pool.link_cost(p_res, res.id, delta)?;
                    if hop + lambda > cost {
                        cost = hop + lambda;
                    }
                }
                if penalty_mode && !is_source {
                    cost += penalty_from_agg(&agg, pool)?;
                }
                let cand = Candidate {
                    cost,
                    class: res.class,
                    id: res.id,
                };
                if best.as_ref().is_none_or(|b| cand.better_than(b)) {
                    best = Some(cand);
                }
            }

            let Some(chosen) = best else {
                let mut diag = BTreeMap::new();
                diag.insert("candidates_evaluated".into(), candidates_evaluated as f64);
                return Ok(ScheduleResult::rejected(
                    start.elapsed().as_secs_f64(),
                    diag,
                ));
            };

            // Commit the tentative assignment.
            let lambda = pool.catalog.latency(qt, pool.class_of(chosen.id)?)?;
            let energy = pool.catalog.energy(qt, pool.class_of(chosen.id)?)?;
            if !is_source {
                let agg = load.entry(chosen.id).or_default();
                agg.m += 1;
                agg.sum_lambda += lambda;
                agg.max_in_rate = agg.max_in_rate.max(in_rate);
                agg.energy_rate += in_rate * energy;
            }
            // Strip any penalty component: downstream costs accumulate the
            // pure critical-path value.
            let mut pure = lambda;
            for &p in &topo.preds[v] {
                let p_res = assignments[&spec.vertices[p].id];
                let delta = pool.catalog.event_size(&spec.vertices[p].query_type)?;
                let hop = path_cost[&p] + pool.link_cost(p_res, chosen.id, delta)?;
                if hop + lambda > pure {
                    pure = hop + lambda;
                }
            }
            path_cost.insert(v, pure);
            assignments.insert(vtx.id.clone(), chosen.id);
        }
    }

    let mut diag = BTreeMap::new();
    diag.insert("candidates_evaluated".into(), candidates_evaluated as f64);
    Ok(ScheduleResult {
        accepted: true,
        mappings: vec![Mapping {
            dataflow: spec.id.clone(),
            assignments,
        }],
        planning_time_sec: start.elapsed().as_secs_f64(),
        diagnostics: diag,
    })
}
