//! Post-placement rebalancing: bounded local moves along critical paths that
//! strictly reduce the makespan objective. At most one vertex move and one
//! edge collapse per dataflow per pass.

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{enumerate_critical_path, longest_path_latency, RatedDataflow};
use crate::placement::{
    objective, per_resource_load, resource_load_index, PlacementState, ResourceAgg,
    FEASIBILITY_MARGIN,
};
use crate::resources::{ResourceClass, ResourceId, ResourcePool};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RebalanceMode {
    None,
    Vertex,
    Edge,
    VertexEdge,
}

impl RebalanceMode {
    pub fn name(self) -> &'static str {
        match self {
            RebalanceMode::None => "none",
            RebalanceMode::Vertex => "vertex",
            RebalanceMode::Edge => "edge",
            RebalanceMode::VertexEdge => "vertex+edge",
        }
    }
}

impl FromStr for RebalanceMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<RebalanceMode> {
        match s {
            "none" => Ok(RebalanceMode::None),
            "vertex" => Ok(RebalanceMode::Vertex),
            "edge" => Ok(RebalanceMode::Edge),
            "vertex+edge" => Ok(RebalanceMode::VertexEdge),
            other => Err(Error::Config(format!("unknown rebalance mode: {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Move {
    pub dataflow: String,
    pub vertex: String,
    pub from: ResourceId,
    pub to: ResourceId,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RebalancePlan {
    pub moves: Vec<Move>,
    pub objective_before: f64,
    pub objective_after: f64,
}

/// Whether placing one more query (λ on the target class, input rate ω,
/// per-event energy ε) onto a resource keeps that resource's capacity and
/// battery constraints satisfied. Sources add no load and always fit.
fn addition_ok(
    pool: &ResourcePool,
    res: ResourceId,
    agg: &ResourceAgg,
    lambda: f64,
    in_rate: f64,
    energy: f64,
    is_source: bool,
) -> Result<bool> {
    if !is_source {
        let sum = agg.sum_lambda + lambda;
        if sum > 0.0 {
            let bound = pool.pi_factor(agg.m + 1)? / sum * (1.0 - FEASIBILITY_MARGIN);
            if in_rate >= bound || (agg.m > 0 && agg.max_in_rate >= bound) {
                return Ok(false);
            }
        }
    }
    if let Some(batt) = &pool.resource(res)?.battery {
        let add_energy = if is_source { 0.0 } else { in_rate * energy };
        let incr = agg.energy_rate + add_energy;
        let drain = batt.recharge_interval_sec * (batt.base_load_ma / 3600.0 + incr)
            * (1.0 + FEASIBILITY_MARGIN);
        if drain > batt.capacity_mah {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Removing a query can tighten the capacity bound for the queries left
/// behind: with one collocation fewer, pi_factor(m - 1) / (sum - lambda) may
/// fall below a survivor's input rate. Checked before committing any move.
fn removal_ok(
    state: &PlacementState,
    pool: &ResourcePool,
    from: ResourceId,
    dag: &str,
    vertex: &str,
) -> Result<bool> {
    let loads = per_resource_load(state)?;
    let Some(queries) = loads.get(&from) else { return Ok(true) };
    let class = pool.class_of(from)?;
    let mut m = 0u32;
    let mut sum_lambda = 0.0;
    let mut max_rate = 0.0f64;
    for q in queries {
        if q.is_source || (q.dataflow == dag && q.vertex == vertex) {
            continue;
        }
        m += 1;
        sum_lambda += pool.catalog.latency(&q.query_type, class)?;
        max_rate = max_rate.max(q.in_rate);
    }
    if m == 0 || sum_lambda <= 0.0 {
        return Ok(true);
    }
    let bound = pool.pi_factor(m)? / sum_lambda * (1.0 - FEASIBILITY_MARGIN);
    Ok(max_rate < bound)
}

struct VertexInfo {
    is_source: bool,
    is_sink: bool,
    lambda_by_class: [f64; 2],
    energy_by_class: [f64; 2],
    in_rate: f64,
}

fn vertex_info(rated: &RatedDataflow, vertex: &str, pool: &ResourcePool) -> Result<VertexInfo> {
    let topo = rated.spec.topology()?;
    let vi = *topo.index.get(vertex).ok_or_else(|| Error::InvalidSpec {
        dataflow: rated.spec.id.clone(),
        detail: format!("unknown vertex {vertex}"),
    })?;
    let qt = &rated.spec.vertices[vi].query_type;
    Ok(VertexInfo {
        is_source: topo.preds[vi].is_empty(),
        is_sink: topo.succs[vi].is_empty(),
        lambda_by_class: [
            pool.catalog.latency(qt, ResourceClass::Edge)?,
            pool.catalog.latency(qt, ResourceClass::Cloud)?,
        ],
        energy_by_class: [
            pool.catalog.energy(qt, ResourceClass::Edge)?,
            pool.catalog.energy(qt, ResourceClass::Cloud)?,
        ],
        in_rate: rated.in_rate(vertex),
    })
}

fn class_idx(class: ResourceClass) -> usize {
    match class {
        ResourceClass::Edge => 0,
        ResourceClass::Cloud => 1,
    }
}

fn class_allowed(info: &VertexInfo, class: ResourceClass) -> bool {
    if info.is_source {
        class == ResourceClass::Edge
    } else if info.is_sink {
        class == ResourceClass::Cloud
    } else {
        true
    }
}

/// Best strictly-improving relocation of `vertex` within its dataflow; returns
/// the target resource and the makespan delta, or `None` when every
/// alternative is worse or infeasible.
fn best_relocation(
    rated: &RatedDataflow,
    assignments: &BTreeMap<String, ResourceId>,
    vertex: &str,
    pool: &ResourcePool,
    loads: &BTreeMap<ResourceId, ResourceAgg>,
    current_makespan: f64,
) -> Result<Option<(ResourceId, f64)>> {
    let info = vertex_info(rated, vertex, pool)?;
    let from = assignments[vertex];
    let mut best: Option<(ResourceId, f64)> = None;
    for res in &pool.resources {
        if res.id == from || !class_allowed(&info, res.class) {
            continue;
        }
        let agg = loads.get(&res.id).copied().unwrap_or_default();
        let ci = class_idx(res.class);
        if !addition_ok(
            pool,
            res.id,
            &agg,
            info.lambda_by_class[ci],
            info.in_rate,
            info.energy_by_class[ci],
            info.is_source,
        )? {
            continue;
        }
        let mut trial = assignments.clone();
        trial.insert(vertex.to_string(), res.id);
        let delta = longest_path_latency(rated, &trial, pool)? - current_makespan;
        if delta < -1e-12 && best.as_ref().is_none_or(|(_, d)| delta < *d) {
            best = Some((res.id, delta));
        }
    }
    Ok(best)
}

fn apply_move(state: &mut PlacementState, mv: &Move) {
    let mapping = state.mappings.get_mut(&mv.dataflow).expect("dataflow present");
    mapping.assignments.insert(mv.vertex.clone(), mv.to);
}

fn dags_by_makespan(state: &PlacementState, pool: &ResourcePool) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::with_capacity(state.dataflows.len());
    for (id, rated) in &state.dataflows {
        let mk = longest_path_latency(rated, &state.mappings[id].assignments, pool)?;
        out.push((id.clone(), mk));
    }
    out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    Ok(out)
}

/// One vertex-rebalance pass: for each dataflow (worst makespan first), moves
/// the highest-latency query on its critical path to the resource that best
/// reduces its makespan, at most one move per dataflow.
pub fn vertex_rebalance(state: &mut PlacementState, pool: &ResourcePool) -> Result<RebalancePlan> {
    let objective_before = objective(state, pool)?;
    let mut moves = Vec::new();
    for (dag_id, makespan) in dags_by_makespan(state, pool)? {
        let rated = state.dataflows[&dag_id].clone();
        let assignments = state.mappings[&dag_id].assignments.clone();
        let (path, _) = enumerate_critical_path(&rated, &assignments, pool)?;

        // Pick the costliest query on the path; the sink's latency is not
        // part of the makespan, so sinks are never candidates.
        let mut pick: Option<(&str, f64)> = None;
        for v in &path {
            let info = vertex_info(&rated, v, pool)?;
            if info.is_sink {
                continue;
            }
            let class = pool.class_of(assignments[v])?;
            let lambda = info.lambda_by_class[class_idx(class)];
            if pick.as_ref().is_none_or(|(_, l)| lambda > *l) {
                pick = Some((v, lambda));
            }
        }
        let Some((vertex, _)) = pick else { continue };
        let vertex = vertex.to_string();
        if !removal_ok(state, pool, assignments[&vertex], &dag_id, &vertex)? {
            continue;
        }

        let loads = resource_load_index(state, pool)?;
        if let Some((to, _)) = best_relocation(&rated, &assignments, &vertex, pool, &loads, makespan)? {
            let mv = Move {
                dataflow: dag_id.clone(),
                from: assignments[&vertex],
                vertex,
                to,
            };
            apply_move(state, &mv);
            moves.push(mv);
        }
    }
    let objective_after = objective(state, pool)?;
    Ok(RebalancePlan {
        moves,
        objective_before,
        objective_after,
    })
}

/// One edge-rebalance pass: for each dataflow (worst makespan first), finds
/// the costliest inter-resource hop on its critical path and tries to collapse
/// it by pulling either endpoint onto the other's resource.
pub fn edge_rebalance(state: &mut PlacementState, pool: &ResourcePool) -> Result<RebalancePlan> {
    let objective_before = objective(state, pool)?;
    let mut moves = Vec::new();
    for (dag_id, makespan) in dags_by_makespan(state, pool)? {
        let rated = state.dataflows[&dag_id].clone();
        let assignments = state.mappings[&dag_id].assignments.clone();
        let (path, _) = enumerate_critical_path(&rated, &assignments, pool)?;

        // Costliest hop between distinct resources along the path.
        let mut hop: Option<(usize, f64)> = None;
        for i in 0..path.len().saturating_sub(1) {
            let (a, b) = (assignments[&path[i]], assignments[&path[i + 1]]);
            if a == b {
                continue;
            }
            let qt = &rated
                .spec
                .vertices
                .iter()
                .find(|v| v.id == path[i])
                .expect("path vertex exists")
                .query_type;
            let cost = pool.link_cost(a, b, pool.catalog.event_size(qt)?)?;
            if hop.as_ref().is_none_or(|(_, c)| cost > *c) {
                hop = Some((i, cost));
            }
        }
        let Some((i, _)) = hop else { continue };

        let loads = resource_load_index(state, pool)?;
        let mut best: Option<Move> = None;
        let mut best_delta = -1e-12;
        // Try moving the tail onto the head's resource and vice versa.
        for (mover, target_vertex) in [(&path[i], &path[i + 1]), (&path[i + 1], &path[i])] {
            let info = vertex_info(&rated, mover, pool)?;
            let to = assignments[target_vertex];
            let class = pool.class_of(to)?;
            if !class_allowed(&info, class) {
                continue;
            }
            if !removal_ok(state, pool, assignments[mover], &dag_id, mover)? {
                continue;
            }
            let agg = loads.get(&to).copied().unwrap_or_default();
            let ci = class_idx(class);
            if !addition_ok(
                pool,
                to,
                &agg,
                info.lambda_by_class[ci],
                info.in_rate,
                info.energy_by_class[ci],
                info.is_source,
            )? {
                continue;
            }
            let mut trial = assignments.clone();
            trial.insert(mover.clone(), to);
            let delta = longest_path_latency(&rated, &trial, pool)? - makespan;
            if delta < best_delta {
                best_delta = delta;
                best = Some(Move {
                    dataflow: dag_id.clone(),
                    vertex: mover.clone(),
                    from: assignments[mover],
                    to,
                });
            }
        }
        if let Some(mv) = best {
            apply_move(state, &mv);
            moves.push(mv);
        }
    }
    let objective_after = objective(state, pool)?;
    Ok(RebalancePlan {
        moves,
        objective_before,
        objective_after,
    })
}

/// Relocates queries left over the capacity bound by a departure: when a
/// collocated query leaves, pi_factor(m) shrinks faster than the latency sum
/// for cheap leavers, and a survivor's bound can drop below its input rate.
/// Each violating query is moved to the feasible resource that least hurts
/// its dataflow's makespan; moves are not improvement-gated.
pub fn repair_capacity(state: &mut PlacementState, pool: &ResourcePool) -> Result<Vec<Move>> {
    let mut moves = Vec::new();
    let budget = state.mappings.values().map(|m| m.assignments.len()).sum::<usize>();
    for _ in 0..budget.max(1) {
        let report = crate::placement::check_constraint2(state, pool)?;
        let Some(v) = report.violations.first() else { break };
        let rated = state.dataflows[&v.dataflow].clone();
        let assignments = state.mappings[&v.dataflow].assignments.clone();
        let info = vertex_info(&rated, &v.subject, pool)?;
        let from = assignments[&v.subject];
        let current = longest_path_latency(&rated, &assignments, pool)?;
        let loads = resource_load_index(state, pool)?;
        let mut best: Option<(ResourceId, f64)> = None;
        for res in &pool.resources {
            if res.id == from || !class_allowed(&info, res.class) {
                continue;
            }
            let agg = loads.get(&res.id).copied().unwrap_or_default();
            let ci = class_idx(res.class);
            if !addition_ok(
                pool,
                res.id,
                &agg,
                info.lambda_by_class[ci],
                info.in_rate,
                info.energy_by_class[ci],
                info.is_source,
            )? {
                continue;
            }
            let mut trial = assignments.clone();
            trial.insert(v.subject.clone(), res.id);
            let delta = longest_path_latency(&rated, &trial, pool)? - current;
            if best.as_ref().is_none_or(|(_, d)| delta < *d) {
                best = Some((res.id, delta));
            }
        }
        // No feasible home: leave the violation for the caller's validator.
        let Some((to, _)) = best else { break };
        let mv = Move {
            dataflow: v.dataflow.clone(),
            vertex: v.subject.clone(),
            from,
            to,
        };
        apply_move(state, &mv);
        moves.push(mv);
    }
    Ok(moves)
}

/// Vertex pass followed by an edge pass over the updated state.
pub fn combined_rebalance(state: &mut PlacementState, pool: &ResourcePool) -> Result<RebalancePlan> {
    let first = vertex_rebalance(state, pool)?;
    let second = edge_rebalance(state, pool)?;
    let mut moves = first.moves;
    moves.extend(second.moves);
    Ok(RebalancePlan {
        moves,
        objective_before: first.objective_before,
        objective_after: second.objective_after,
    })
}

/// Dispatch over [`RebalanceMode`]; `None` is a no-op with an empty plan.
pub fn rebalance(
    state: &mut PlacementState,
    pool: &ResourcePool,
    mode: RebalanceMode,
) -> Result<RebalancePlan> {
    match mode {
        RebalanceMode::None => {
            let obj = objective(state, pool)?;
            Ok(RebalancePlan {
                moves: Vec::new(),
                objective_before: obj,
                objective_after: obj,
            })
        }
        RebalanceMode::Vertex => vertex_rebalance(state, pool),
        RebalanceMode::Edge => edge_rebalance(state, pool),
        RebalanceMode::VertexEdge => combined_rebalance(state, pool),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{propagate_rates, DataflowSpec, DataflowVertex};
    use crate::placement::{self, Mapping};
    use crate::resources::{build_pool, PoolConfig};

    fn chain(id: &str, mids: &[&str]) -> DataflowSpec {
        let mut vertices = vec![DataflowVertex { id: "src".into(), query_type: "source".into() }];
        for (i, qt) in mids.iter().enumerate() {
            vertices.push(DataflowVertex { id: format!("q{i}"), query_type: (*qt).into() });
        }
        vertices.push(DataflowVertex { id: "snk".into(), query_type: "sink".into() });
        let edges = vertices
            .windows(2)
            .map(|w| (w[0].id.clone(), w[1].id.clone()))
            .collect();
        DataflowSpec { id: id.into(), vertices, edges, input_rate: 100.0 }
    }

    /// Spread each query of a chain onto its own resource: source and q0 on
    /// separate edges, q1 and sink on separate cloud VMs.
    fn spread_state(pool: &ResourcePool, cfg: &PoolConfig) -> PlacementState {
        let rated = propagate_rates(&chain("a", &["filter-a", "seq-a"]), &cfg.catalog).unwrap();
        let mut assignments = BTreeMap::new();
        assignments.insert("src".into(), ResourceId(0));
        assignments.insert("q0".into(), ResourceId(1));
        assignments.insert("q1".into(), ResourceId(3));
        assignments.insert("snk".into(), ResourceId(4));
        let mut state = PlacementState::new();
        state
            .insert(rated, Mapping { dataflow: "a".into(), assignments })
            .unwrap();
        assert!(placement::validate(&state, pool).unwrap().all_ok());
        state
    }

    #[test]
    fn edge_pass_collapses_costliest_hop() {
        let cfg = PoolConfig::tiny();
        let pool = build_pool(&cfg, 3).unwrap();
        let mut state = spread_state(&pool, &cfg);
        let plan = edge_rebalance(&mut state, &pool).unwrap();
        assert!(!plan.moves.is_empty());
        assert!(plan.objective_after < plan.objective_before);
        assert!(placement::validate(&state, &pool).unwrap().all_ok());
    }

    #[test]
    fn passes_never_increase_objective() {
        let cfg = PoolConfig::tiny();
        let pool = build_pool(&cfg, 3).unwrap();
        for mode in [
            RebalanceMode::None,
            RebalanceMode::Vertex,
            RebalanceMode::Edge,
            RebalanceMode::VertexEdge,
        ] {
            let mut state = spread_state(&pool, &cfg);
            let plan = rebalance(&mut state, &pool, mode).unwrap();
            assert!(
                plan.objective_after <= plan.objective_before + 1e-12,
                "{} increased the objective",
                mode.name()
            );
            assert!(placement::validate(&state, &pool).unwrap().all_ok());
            let limit = match mode {
                RebalanceMode::VertexEdge => 2,
                _ => 1,
            };
            assert!(plan.moves.len() <= limit * state.dataflows.len());
        }
    }

    #[test]
    fn endpoint_classes_are_preserved() {
        let cfg = PoolConfig::tiny();
        let pool = build_pool(&cfg, 3).unwrap();
        let mut state = spread_state(&pool, &cfg);
        combined_rebalance(&mut state, &pool).unwrap();
        let src = state.assignment("a", "src").unwrap();
        let snk = state.assignment("a", "snk").unwrap();
        assert_eq!(pool.class_of(src).unwrap(), ResourceClass::Edge);
        assert_eq!(pool.class_of(snk).unwrap(), ResourceClass::Cloud);
    }

    #[test]
    fn repair_is_a_no_op_on_valid_states() {
        let cfg = PoolConfig::tiny();
        let pool = build_pool(&cfg, 3).unwrap();
        let mut state = spread_state(&pool, &cfg);
        assert!(repair_capacity(&mut state, &pool).unwrap().is_empty());
    }

    #[test]
    fn repair_relocates_survivor_after_departure() {
        // Two collocated queries: bound 1.2 / 0.011 = 109.1 e/s, both fit.
        // When the cheap one leaves, the bound tightens to 1 / 0.01 = 100 e/s
        // and the survivor sits exactly on it.
        let mut cfg = PoolConfig::tiny();
        cfg.catalog.profiles.get_mut("filter-a").unwrap().edge.latency_sec_per_event = 0.01;
        cfg.catalog.profiles.get_mut("seq-a").unwrap().edge.latency_sec_per_event = 0.001;
        let pool = build_pool(&cfg, 3).unwrap();
        let mut state = PlacementState::new();
        for (id, qt, src_res) in [("a", "filter-a", 0u32), ("b", "seq-a", 2)] {
            let rated = propagate_rates(&chain(id, &[qt]), &cfg.catalog).unwrap();
            let mut assignments = BTreeMap::new();
            assignments.insert("src".into(), ResourceId(src_res));
            assignments.insert("q0".into(), ResourceId(1));
            assignments.insert("snk".into(), ResourceId(3));
            state
                .insert(rated, Mapping { dataflow: id.into(), assignments })
                .unwrap();
        }
        assert!(placement::validate(&state, &pool).unwrap().all_ok());

        assert!(state.remove("b"));
        assert!(!placement::validate(&state, &pool).unwrap().all_ok());
        let moves = repair_capacity(&mut state, &pool).unwrap();
        assert_eq!(moves.len(), 1);
        assert_eq!(moves[0].vertex, "q0");
        assert!(placement::validate(&state, &pool).unwrap().all_ok());
    }

    #[test]
    fn mode_parsing_round_trips() {
        for mode in [
            RebalanceMode::None,
            RebalanceMode::Vertex,
            RebalanceMode::Edge,
            RebalanceMode::VertexEdge,
        ] {
            assert_eq!(mode.name().parse::<RebalanceMode>().unwrap(), mode);
        }
        assert!("both".parse::<RebalanceMode>().is_err());
    }
}
