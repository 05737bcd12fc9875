//! Control-interval simulator: replays a workload script against a strategy
//! and records per-interval placement metrics into a reproducible trace.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{longest_path_latency, propagate_rates, RatedDataflow};
use crate::placement::{
    count_migrations, objective, stabilization_time, validate, PlacementState,
};
use crate::rebalance::{rebalance, RebalanceMode};
use crate::resources::{build_pool, PoolConfig, ResourceClass, ResourcePool};
use crate::schedulers::{
    ga_incremental, ga_place, topset_place, GaInstance, GaParams, ScheduleResult, Strategy,
};
use crate::workload::{utilization, Activity, DagPool, WorkloadScript};

pub const TRACE_CSV_HEADER: &str =
    "t,activity,accepted,objective_s,planning_s,migrations,stabilization_s,utilization";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub pool_config: PoolConfig,
    pub strategy: Strategy,
    pub rebalance: RebalanceMode,
    /// Downtime per migrated operator while its state moves, seconds.
    pub migration_cost_sec: f64,
    /// Cap reported for operators whose new resource cannot keep up.
    pub psi_max_sec: f64,
    pub ga: GaParams,
    pub horizon: usize,
    pub seed: u64,
    /// Also embed the full placement state after every interval (large).
    pub record_states: bool,
}

impl ScenarioConfig {
    pub fn new(pool_config: PoolConfig, strategy: Strategy, rebalance: RebalanceMode) -> Self {
        ScenarioConfig {
            pool_config,
            strategy,
            rebalance,
            migration_cost_sec: 1.0,
            psi_max_sec: 60.0,
            ga: GaParams::default(),
            horizon: 100,
            seed: 0,
            record_states: false,
        }
    }

    /// Stable digest of the canonical JSON form, identifying the scenario.
    pub fn hash(&self) -> Result<String> {
        let json = serde_json::to_vec(self)?;
        Ok(hex(&Sha256::digest(&json)))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntervalRecord {
    pub t: usize,
    /// "arrive:<instance>", "depart:<instance>", or "none".
    pub activity: String,
    pub accepted: bool,
    pub objective_sec: f64,
    pub planning_sec: f64,
    pub migrations: usize,
    pub stabilization_sec: f64,
    pub utilization: f64,
    pub per_dag_makespans: BTreeMap<String, f64>,
    pub rebalance_moves: usize,
    pub objective_before_rebalance: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub median: f64,
    pub p99: f64,
    pub max: f64,
}

impl MetricSummary {
    fn of(values: &[f64]) -> MetricSummary {
        if values.is_empty() {
            return MetricSummary::default();
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q = |p: f64| sorted[(p * (sorted.len() - 1) as f64).round() as usize];
        MetricSummary {
            mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
            median: q(0.5),
            p99: q(0.99),
            max: *sorted.last().unwrap(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceSummary {
    pub objective: MetricSummary,
    pub planning: MetricSummary,
    pub migrations: MetricSummary,
    pub stabilization: MetricSummary,
    pub utilization: MetricSummary,
    pub arrivals: usize,
    pub rejections: usize,
    pub departures: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimTrace {
    pub config: ScenarioConfig,
    pub config_hash: String,
    pub pool_seed: u64,
    pub workload_seed: u64,
    pub strategy: String,
    pub rebalance: String,
    pub records: Vec<IntervalRecord>,
    pub summary: TraceSummary,
    pub final_state: PlacementState,
    /// Per-interval state snapshots when `record_states` is on.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub states: Vec<PlacementState>,
}

fn schedule_arrival(
    state: &PlacementState,
    pool: &ResourcePool,
    rated: &RatedDataflow,
    strategy: Strategy,
    ga: &GaParams,
) -> Result<(ScheduleResult, Option<Vec<RatedDataflow>>)> {
    match strategy {
        Strategy::Topset => Ok((topset_place(state, pool, rated, false)?, None)),
        Strategy::TopsetP => Ok((topset_place(state, pool, rated, true)?, None)),
        Strategy::Gai => Ok((ga_incremental(state, pool, rated, ga)?, None)),
        Strategy::Gag => {
            let mut dags: Vec<RatedDataflow> = state.dataflows.values().cloned().collect();
            dags.push(rated.clone());
            dags.sort_by(|a, b| a.spec.id.cmp(&b.spec.id));
            let instance = GaInstance::new(pool, &dags, None)?;
            Ok((ga_place(&instance, ga)?, Some(dags)))
        }
    }
}

/// Replaces the whole state with the global mappings returned by GAG.
fn rebuild_state(dags: Vec<RatedDataflow>, result: &ScheduleResult) -> Result<PlacementState> {
    let mut next = PlacementState::new();
    for (rated, mapping) in dags.into_iter().zip(result.mappings.iter().cloned()) {
        next.insert(rated, mapping)?;
    }
    Ok(next)
}

pub fn run_scenario(
    config: &ScenarioConfig,
    dag_pool: &DagPool,
    script: &WorkloadScript,
) -> Result<SimTrace> {
    config.pool_config.validate()?;
    config.ga.validate()?;
    let pool = build_pool(&config.pool_config, config.seed)?;
    let horizon = config.horizon.min(script.activities.len());

    let mut state = PlacementState::new();
    let mut records = Vec::with_capacity(horizon);
    let mut states = Vec::new();
    let mut arrivals = 0usize;
    let mut rejections = 0usize;
    let mut departures = 0usize;

    for t in 0..horizon {
        let prev = state.clone();
        let mut ga = config.ga.clone();
        ga.seed = config.ga.seed.wrapping_add(t as u64);

        let clock = Instant::now();
        let (activity, accepted) = match &script.activities[t] {
            Activity::Arrive { instance, spec } => {
                arrivals += 1;
                let spec = dag_pool.spec(spec)?;
                let rated = propagate_rates(spec, &pool.catalog)?.with_id(instance);
                let (result, gag_dags) =
                    schedule_arrival(&state, &pool, &rated, config.strategy, &ga)?;
                if result.accepted {
                    match gag_dags {
                        Some(dags) => state = rebuild_state(dags, &result)?,
                        None => state.insert(rated, result.mappings[0].clone())?,
                    }
                } else {
                    rejections += 1;
                }
                (format!("arrive:{instance}"), result.accepted)
            }
            Activity::Depart { instance } => {
                departures += 1;
                // The instance is absent when its arrival was rejected; the
                // scripted departure is then a no-op.
                let removed = state.remove(instance);
                // GAG re-solves globally on departures too.
                if removed && config.strategy == Strategy::Gag && !state.is_empty() {
                    let dags: Vec<RatedDataflow> = state.dataflows.values().cloned().collect();
                    let instance = GaInstance::new(&pool, &dags, None)?;
                    let result = ga_place(&instance, &ga)?;
                    if result.accepted {
                        state = rebuild_state(dags, &result)?;
                    }
                }
                if removed {
                    // A departure can tighten the capacity bound for queries
                    // collocated with the leaver; relocate any left over it.
                    crate::rebalance::repair_capacity(&mut state, &pool)?;
                }
                (format!("depart:{instance}"), true)
            }
            Activity::None => ("none".to_string(), true),
        };

        // GAG already re-places everything; local passes apply to the rest.
        let objective_before_rebalance = objective(&state, &pool)?;
        let plan = if config.strategy == Strategy::Gag {
            rebalance(&mut state, &pool, RebalanceMode::None)?
        } else {
            rebalance(&mut state, &pool, config.rebalance)?
        };
        let planning_sec = clock.elapsed().as_secs_f64();

        let migrations = count_migrations(&prev, &state);
        let stab = stabilization_time(
            &prev,
            &state,
            &pool,
            config.migration_cost_sec,
            config.psi_max_sec,
        )?;

        let mut per_dag_makespans = BTreeMap::new();
        for (id, rated) in &state.dataflows {
            let mk = longest_path_latency(rated, &state.mappings[id].assignments, &pool)?;
            per_dag_makespans.insert(id.clone(), mk);
        }

        records.push(IntervalRecord {
            t,
            activity,
            accepted,
            objective_sec: plan.objective_after,
            planning_sec,
            migrations,
            stabilization_sec: stab.psi_bar_sec,
            utilization: utilization(&state, &pool),
            per_dag_makespans,
            rebalance_moves: plan.moves.len(),
            objective_before_rebalance,
        });
        if config.record_states {
            states.push(state.clone());
        }
    }

    let collect = |f: fn(&IntervalRecord) -> f64| -> Vec<f64> { records.iter().map(f).collect() };
    let summary = TraceSummary {
        objective: MetricSummary::of(&collect(|r| r.objective_sec)),
        planning: MetricSummary::of(&collect(|r| r.planning_sec)),
        migrations: MetricSummary::of(&collect(|r| r.migrations as f64)),
        stabilization: MetricSummary::of(&collect(|r| r.stabilization_sec)),
        utilization: MetricSummary::of(&collect(|r| r.utilization)),
        arrivals,
        rejections,
        departures,
    };

    Ok(SimTrace {
        config: config.clone(),
        config_hash: config.hash()?,
        pool_seed: dag_pool.seed,
        workload_seed: script.seed,
        strategy: config.strategy.name().to_string(),
        rebalance: config.rebalance.name().to_string(),
        records,
        summary,
        final_state: state,
        states,
    })
}

/// Re-validates the final state embedded in a trace against a pool rebuilt
/// from the embedded config, returning the violations found.
pub fn audit_trace(trace: &SimTrace) -> Result<crate::placement::ConstraintReport> {
    let pool = build_pool(&trace.config.pool_config, trace.config.seed)?;
    validate(&trace.final_state, &pool)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareRow {
    pub t: usize,
    pub objective_a: f64,
    pub objective_b: f64,
    pub delta: f64,
    /// (a - b) / a; positive when b improves on a.
    pub relative_improvement: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<CompareRow>,
    pub max_relative_improvement: f64,
    pub mean_relative_improvement: f64,
}

/// Interval-by-interval objective comparison of two traces over the same
/// pool and workload. Refuses traces with mismatched provenance.
pub fn compare_runs(a: &SimTrace, b: &SimTrace) -> Result<Comparison> {
    if a.pool_seed != b.pool_seed || a.workload_seed != b.workload_seed {
        return Err(Error::Provenance(format!(
            "traces come from different inputs (pool {} vs {}, workload {} vs {})",
            a.pool_seed, b.pool_seed, a.workload_seed, b.workload_seed
        )));
    }
    if a.records.len() != b.records.len() {
        return Err(Error::Provenance(format!(
            "traces cover different horizons ({} vs {})",
            a.records.len(),
            b.records.len()
        )));
    }
    let mut rows = Vec::with_capacity(a.records.len());
    for (ra, rb) in a.records.iter().zip(&b.records) {
        let (oa, ob) = (ra.objective_sec, rb.objective_sec);
        let rel = if oa.abs() > f64::EPSILON { (oa - ob) / oa } else { 0.0 };
        rows.push(CompareRow {
            t: ra.t,
            objective_a: oa,
            objective_b: ob,
            delta: oa - ob,
            relative_improvement: rel,
        });
    }
    let max = if rows.is_empty() {
        0.0
    } else {
        rows.iter().map(|r| r.relative_improvement).fold(f64::NEG_INFINITY, f64::max)
    };
    let mean = rows.iter().map(|r| r.relative_improvement).sum::<f64>() / rows.len().max(1) as f64;
    Ok(Comparison {
        rows,
        max_relative_improvement: max,
        mean_relative_improvement: mean,
    })
}

/// Idealized lower-anchor baselines. Both place every query on its own
/// exclusive resource and pay a single uplink hop, priced at the cheapest
/// edge-to-cloud latency and fastest edge-to-cloud bandwidth found anywhere
/// in the pool; capacity and battery limits are not modeled.
fn baseline_makespan(rated: &RatedDataflow, pool: &ResourcePool, edge_only: bool) -> Result<f64> {
    let topo = rated.spec.topology()?;
    let catalog = &pool.catalog;
    let (mut min_lat, mut max_bw) = (f64::INFINITY, 0.0f64);
    for e in &pool.resources {
        if e.class != ResourceClass::Edge {
            continue;
        }
        for c in &pool.resources {
            if c.class != ResourceClass::Cloud {
                continue;
            }
            min_lat = min_lat.min(pool.network.latency(e.id, c.id));
            max_bw = max_bw.max(pool.network.bandwidth(e.id, c.id));
        }
    }
    if !min_lat.is_finite() || max_bw <= 0.0 {
        return Err(Error::Domain("pool has no edge-to-cloud link".into()));
    }
    let n = topo.ids.len();
    let mut best = vec![0.0f64; n];
    for &v in topo.topo.iter().rev() {
        if topo.succs[v].is_empty() {
            continue;
        }
        let qt = &rated.spec.vertices[v].query_type;
        let is_source = topo.preds[v].is_empty();
        let class = if edge_only || is_source {
            ResourceClass::Edge
        } else {
            ResourceClass::Cloud
        };
        let lambda = catalog.latency(qt, class)?;
        let delta = catalog.event_size(qt)?;
        let mut m = f64::NEG_INFINITY;
        for &s in &topo.succs[v] {
            // Edge-only pays one uplink hop into the sink; cloud-only pays
            // one hop right after each source. Everything else is local.
            let crosses = if edge_only {
                topo.succs[s].is_empty()
            } else {
                is_source
            };
            let link = if crosses { min_lat + delta / max_bw } else { 0.0 };
            let c = lambda + link + best[s];
            if c > m {
                m = c;
            }
        }
        best[v] = m;
    }
    let mut out = 0.0f64;
    for v in 0..n {
        if topo.preds[v].is_empty() && best[v] > out {
            out = best[v];
        }
    }
    Ok(out)
}

/// Makespan with every non-sink query on an exclusive fictitious edge device,
/// paying the cheapest edge-to-cloud hop once, into the sink.
pub fn baseline_edge_only(rated: &RatedDataflow, pool: &ResourcePool) -> Result<f64> {
    baseline_makespan(rated, pool, true)
}

/// Makespan with every non-source query on an exclusive cloud VM, paying the
/// cheapest edge-to-cloud hop once, right after each source.
pub fn baseline_cloud_only(rated: &RatedDataflow, pool: &ResourcePool) -> Result<f64> {
    baseline_makespan(rated, pool, false)
}

/// Writes the per-interval records as CSV with a pinned column set.
pub fn write_csv<W: Write>(trace: &SimTrace, mut w: W) -> Result<()> {
    writeln!(w, "{TRACE_CSV_HEADER}")?;
    for r in &trace.records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.t,
            r.activity,
            r.accepted,
            r.objective_sec,
            r.planning_sec,
            r.migrations,
            r.stabilization_sec,
            r.utilization
        )?;
    }
    Ok(())
}
