//! Query-to-resource mappings, the three placement constraints, and the
//! makespan / objective / migration / stabilization evaluators.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, DataflowId, RatedDataflow, VertexId};
use crate::resources::{ResourceClass, ResourceId, ResourcePool};

/// Resource assignment for one dataflow.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mapping {
    pub dataflow: DataflowId,
    pub assignments: BTreeMap<VertexId, ResourceId>,
}

/// Active dataflows and their mappings at one control interval.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PlacementState {
    pub dataflows: BTreeMap<DataflowId, RatedDataflow>,
    pub mappings: BTreeMap<DataflowId, Mapping>,
}

impl PlacementState {
    pub fn new() -> PlacementState {
        PlacementState::default()
    }

    pub fn insert(&mut self, rated: RatedDataflow, mapping: Mapping) -> Result<()> {
        if rated.spec.id != mapping.dataflow {
            return Err(Error::Domain(format!(
                "mapping for `{}` paired with dataflow `{}`",
                mapping.dataflow, rated.spec.id
            )));
        }
        for v in &rated.spec.vertices {
            if !mapping.assignments.contains_key(&v.id) {
                return Err(Error::IncompleteMapping {
                    dataflow: rated.spec.id.clone(),
                    vertex: v.id.clone(),
                });
            }
        }
        self.dataflows.insert(rated.spec.id.clone(), rated);
        self.mappings.insert(mapping.dataflow.clone(), mapping);
        Ok(())
    }

    pub fn remove(&mut self, id: &str) -> bool {
        let a = self.dataflows.remove(id).is_some();
        let b = self.mappings.remove(id).is_some();
        a || b
    }

    pub fn is_empty(&self) -> bool {
        self.dataflows.is_empty()
    }

    pub fn total_vertices(&self) -> usize {
        self.dataflows.values().map(|d| d.spec.vertices.len()).sum()
    }

    pub fn assignment(&self, dataflow: &str, vertex: &str) -> Option<ResourceId> {
        self.mappings
            .get(dataflow)
            .and_then(|m| m.assignments.get(vertex))
            .copied()
    }
}

/// One query as seen by a resource it is mapped to.
#[derive(Debug, Clone)]
pub struct LoadedQuery {
    pub dataflow: DataflowId,
    pub vertex: VertexId,
    pub query_type: String,
    pub in_rate: f64,
    pub is_source: bool,
    pub is_sink: bool,
}

/// Groups mapped queries by resource.
pub fn per_resource_load(state: &PlacementState) -> Result<BTreeMap<ResourceId, Vec<LoadedQuery>>> {
    let mut out: BTreeMap<ResourceId, Vec<LoadedQuery>> = BTreeMap::new();
    for (id, rated) in &state.dataflows {
        let mapping = state.mappings.get(id).ok_or_else(|| Error::Domain(format!(
            "dataflow `{id}` has no mapping in state"
        )))?;
        let topo = rated.spec.topology()?;
        for (i, v) in rated.spec.vertices.iter().enumerate() {
            let res = *mapping
                .assignments
                .get(&v.id)
                .ok_or_else(|| Error::IncompleteMapping {
                    dataflow: id.clone(),
                    vertex: v.id.clone(),
                })?;
            out.entry(res).or_default().push(LoadedQuery {
                dataflow: id.clone(),
                vertex: v.id.clone(),
                query_type: v.query_type.clone(),
                in_rate: rated.in_rate(&v.id),
                is_source: topo.preds[i].is_empty(),
                is_sink: topo.succs[i].is_empty(),
            });
        }
    }
    Ok(out)
}

/// Relative slack schedulers apply when granting feasibility, so rounding
/// differences between their incremental aggregates and the validator's
/// fresh sums can never admit a state the validator rejects.
pub const FEASIBILITY_MARGIN: f64 = 1e-9;

/// Aggregate view of the non-source load on a resource, used by schedulers
/// for O(1) candidate feasibility checks.
#[derive(Debug, Clone, Copy, Default)]
pub struct ResourceAgg {
    /// Number of collocated non-source queries.
    pub m: u32,
    /// Sum of their exclusive latencies on this resource's class.
    pub sum_lambda: f64,
    /// Largest input rate among them.
    pub max_in_rate: f64,
    /// Sum of in_rate * incremental energy (edge resources).
    pub energy_rate: f64,
}

pub fn resource_load_index(
    state: &PlacementState,
    pool: &ResourcePool,
) -> Result<BTreeMap<ResourceId, ResourceAgg>> {
    let mut out: BTreeMap<ResourceId, ResourceAgg> = BTreeMap::new();
    for (res, queries) in per_resource_load(state)? {
        let class = pool.class_of(res)?;
        let agg = out.entry(res).or_default();
        for q in queries {
            if q.is_source {
                continue;
            }
            agg.m += 1;
            agg.sum_lambda += pool.catalog.latency(&q.query_type, class)?;
            agg.max_in_rate = agg.max_in_rate.max(q.in_rate);
            agg.energy_rate += q.in_rate * pool.catalog.energy(&q.query_type, class)?;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Violation {
    pub constraint: u8,
    pub dataflow: DataflowId,
    pub subject: String,
    pub detail: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub c1_ok: bool,
    pub c2_ok: bool,
    pub c3_ok: bool,
    pub violations: Vec<Violation>,
}

impl ConstraintReport {
    pub fn all_ok(&self) -> bool {
        self.c1_ok && self.c2_ok && self.c3_ok
    }

    fn from_violations(violations: Vec<Violation>) -> ConstraintReport {
        ConstraintReport {
            c1_ok: !violations.iter().any(|v| v.constraint == 1),
            c2_ok: !violations.iter().any(|v| v.constraint == 2),
            c3_ok: !violations.iter().any(|v| v.constraint == 3),
            violations,
        }
    }
}

/// Constraint 1: sources on edges, sinks on the cloud.
pub fn check_constraint1(state: &PlacementState, pool: &ResourcePool) -> Result<ConstraintReport> {
    let mut violations = Vec::new();
    for (res, queries) in per_resource_load(state)? {
        let class = pool.class_of(res)?;
        for q in queries {
            if q.is_source && class != ResourceClass::Edge {
                violations.push(Violation {
                    constraint: 1,
                    dataflow: q.dataflow.clone(),
                    subject: q.vertex.clone(),
                    detail: format!("source vertex on cloud resource {res}"),
                });
            }
            if q.is_sink && class != ResourceClass::Cloud {
                violations.push(Violation {
                    constraint: 1,
                    dataflow: q.dataflow.clone(),
                    subject: q.vertex.clone(),
                    detail: format!("sink vertex on edge resource {res}"),
                });
            }
        }
    }
    Ok(ConstraintReport::from_violations(violations))
}

/// Constraint 2: with m collocated non-source queries of latencies
/// lambda_j on a resource, every such query's input rate must stay below
/// (1 + pi(m)) / sum(lambda_j).
pub fn check_constraint2(state: &PlacementState, pool: &ResourcePool) -> Result<ConstraintReport> {
    let mut violations = Vec::new();
    for (res, queries) in per_resource_load(state)? {
        let class = pool.class_of(res)?;
        let shared: Vec<&LoadedQuery> = queries.iter().filter(|q| !q.is_source).collect();
        if shared.is_empty() {
            continue;
        }
        let m = shared.len() as u32;
        let mut sum_lambda = 0.0;
        for q in &shared {
            sum_lambda += pool.catalog.latency(&q.query_type, class)?;
        }
        if sum_lambda <= 0.0 {
            continue;
        }
        let bound = pool.pi_factor(m)? / sum_lambda;
        for q in shared {
            if q.in_rate >= bound {
                violations.push(Violation {
                    constraint: 2,
                    dataflow: q.dataflow.clone(),
                    subject: q.vertex.clone(),
                    detail: format!(
                        "in rate {} e/s >= capacity bound {:.4} e/s on {res} (m={m})",
                        q.in_rate, bound
                    ),
                });
            }
        }
    }
    Ok(ConstraintReport::from_violations(violations))
}

/// Constraint 3: an edge device's battery must outlast its recharge interval:
/// tau * (kappa/3600 + sum(omega_in * epsilon)) <= C. The base load kappa is
/// given in mA and converted to mAh per second so all terms are in mAh.
pub fn check_constraint3(state: &PlacementState, pool: &ResourcePool) -> Result<ConstraintReport> {
    let mut violations = Vec::new();
    let loads = per_resource_load(state)?;
    for resource in &pool.resources {
        let Some(batt) = &resource.battery else { continue };
        // Only resources actually hosting queries are placement concerns.
        let Some(queries) = loads.get(&resource.id) else { continue };
        let mut incr = 0.0;
        for q in queries {
            if q.is_source {
                continue;
            }
            incr += q.in_rate * pool.catalog.energy(&q.query_type, resource.class)?;
        }
        let drain = batt.recharge_interval_sec * (batt.base_load_ma / 3600.0 + incr);
        if drain > batt.capacity_mah {
            violations.push(Violation {
                constraint: 3,
                dataflow: String::new(),
                subject: resource.id.to_string(),
                detail: format!(
                    "drain {drain:.2} mAh over recharge interval exceeds capacity {} mAh",
                    batt.capacity_mah
                ),
            });
        }
    }
    Ok(ConstraintReport::from_violations(violations))
}

/// All three constraints combined.
pub fn validate(state: &PlacementState, pool: &ResourcePool) -> Result<ConstraintReport> {
    let mut violations = check_constraint1(state, pool)?.violations;
    violations.extend(check_constraint2(state, pool)?.violations);
    violations.extend(check_constraint3(state, pool)?.violations);
    Ok(ConstraintReport::from_violations(violations))
}

/// Makespan of one placed dataflow.
pub fn makespan(rated: &RatedDataflow, mapping: &Mapping, pool: &ResourcePool) -> Result<f64> {
    model::longest_path_latency(rated, &mapping.assignments, pool)
}

/// Sum of makespans over all active dataflows.
pub fn objective(state: &PlacementState, pool: &ResourcePool) -> Result<f64> {
    let mut total = 0.0;
    for (id, rated) in &state.dataflows {
        let mapping = state
            .mappings
            .get(id)
            .ok_or_else(|| Error::Domain(format!("dataflow `{id}` has no mapping")))?;
        total += makespan(rated, mapping, pool)?;
    }
    Ok(total)
}

/// Number of vertices present in both states whose resource differs.
/// Arriving or departing dataflows contribute no migrations.
pub fn count_migrations(before: &PlacementState, after: &PlacementState) -> usize {
    let mut count = 0;
    for (id, m_before) in &before.mappings {
        let Some(m_after) = after.mappings.get(id) else { continue };
        for (vertex, res) in &m_before.assignments {
            if let Some(new_res) = m_after.assignments.get(vertex) {
                if new_res != res {
                    count += 1;
                }
            }
        }
    }
    count
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stabilization {
    /// Maximum per-vertex stabilization time, seconds; zero when nothing
    /// migrated.
    pub psi_bar_sec: f64,
    /// Vertices whose new resource cannot keep up with the input rate; their
    /// psi is reported as the configured cap.
    pub warnings: Vec<String>,
}

/// Stabilization after migrations: each migrated vertex buffers
/// q = omega_in * eta events and drains them at 1/lambda_new - omega_in,
/// using the exclusive latency on its new resource.
pub fn stabilization_time(
    before: &PlacementState,
    after: &PlacementState,
    pool: &ResourcePool,
    migration_cost_sec: f64,
    psi_max_sec: f64,
) -> Result<Stabilization> {
    let mut psi_bar = 0.0f64;
    let mut warnings = Vec::new();
    for (id, m_before) in &before.mappings {
        let Some(m_after) = after.mappings.get(id) else { continue };
        let Some(rated) = after.dataflows.get(id) else { continue };
        for (vertex, res) in &m_before.assignments {
            let Some(&new_res) = m_after.assignments.get(vertex) else { continue };
            if new_res == *res {
                continue;
            }
            let qt = rated
                .spec
                .vertices
                .iter()
                .find(|v| &v.id == vertex)
                .map(|v| v.query_type.clone())
                .ok_or_else(|| Error::Domain(format!("vertex `{vertex}` missing from spec")))?;
            let omega = rated.in_rate(vertex);
            let lambda_new = pool.catalog.latency(&qt, pool.class_of(new_res)?)?;
            let buffered = omega * migration_cost_sec;
            let psi = if lambda_new <= 0.0 {
                0.0 // infinite service rate drains instantly
            } else {
                let headroom = 1.0 / lambda_new - omega;
                if headroom <= 0.0 {
                    warnings.push(format!(
                        "{id}/{vertex}: rate {omega} e/s not sustainable on {new_res}; psi capped at {psi_max_sec}s"
                    ));
                    psi_max_sec
                } else {
                    buffered / headroom
                }
            };
            psi_bar = psi_bar.max(psi);
        }
    }
    Ok(Stabilization {
        psi_bar_sec: psi_bar,
        warnings,
    })
}
