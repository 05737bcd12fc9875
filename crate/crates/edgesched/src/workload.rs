//! Workload machinery: a reusable pool of randomly generated dataflow shapes,
//! and interval scripts that add/remove instances of them under either a
//! random-walk utilization controller or a Poisson arrival process.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{propagate_rates, DataflowSpec, DataflowVertex};
use crate::placement::PlacementState;
use crate::resources::{build_pool, PoolConfig, ResourcePool};
use crate::schedulers::topset_place;

pub const MIN_DAG_SIZE: usize = 4;
pub const MAX_DAG_SIZE: usize = 50;
pub const MAX_FAN_OUT: usize = 5;
pub const DEFAULT_INPUT_RATE: f64 = 100.0;

/// A fixed set of dataflow shapes that workloads draw instances from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DagPool {
    pub dataflows: Vec<DataflowSpec>,
    pub seed: u64,
}

impl DagPool {
    pub fn spec(&self, id: &str) -> Result<&DataflowSpec> {
        self.dataflows
            .iter()
            .find(|d| d.id == id)
            .ok_or_else(|| Error::Generation(format!("unknown pool dataflow {id}")))
    }

    /// Distinct sizes mapped to the indices of dataflows with that size.
    pub fn size_index(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, d) in self.dataflows.iter().enumerate() {
            out.entry(d.vertices.len()).or_default().push(i);
        }
        out
    }
}

/// Generates one layered random DAG with `n` vertices.
fn random_dag(rng: &mut ChaCha8Rng, id: &str, n: usize, operator_types: &[String]) -> DataflowSpec {
    let n_src = rng.random_range(1..=4.min(n.saturating_sub(2)).max(1));
    let n_snk = rng.random_range(1..=3.min(n - n_src - 1).max(1));
    let n_mid = n - n_src - n_snk;

    // Layer widths for the middle vertices.
    let mut layers: Vec<Vec<String>> = Vec::new();
    let sources: Vec<String> = (0..n_src).map(|i| format!("src{i}")).collect();
    layers.push(sources.clone());
    let mut remaining = n_mid;
    let mut mid_names = Vec::new();
    while remaining > 0 {
        let width = rng.random_range(1..=4.min(remaining));
        let layer: Vec<String> = (0..width)
            .map(|i| format!("v{}", mid_names.len() + i))
            .collect();
        mid_names.extend(layer.iter().cloned());
        layers.push(layer);
        remaining -= width;
    }
    let sinks: Vec<String> = (0..n_snk).map(|i| format!("snk{i}")).collect();
    layers.push(sinks.clone());

    let mut edges: Vec<(String, String)> = Vec::new();
    let mut out_degree: BTreeMap<String, usize> = BTreeMap::new();
    for li in 1..layers.len() {
        let prev = layers[li - 1].clone();
        for child in &layers[li] {
            let want = rng.random_range(1..=3.min(prev.len()));
            let mut parents: Vec<&String> = prev
                .iter()
                .filter(|p| out_degree.get(*p).copied().unwrap_or(0) < MAX_FAN_OUT)
                .collect();
            if parents.is_empty() {
                // Every previous-layer vertex is saturated; take the least
                // loaded one anyway (cannot happen with layer width <= 4).
                parents = prev.iter().collect();
            }
            for _ in 0..want.min(parents.len()) {
                let idx = rng.random_range(0..parents.len());
                let p = parents.swap_remove(idx);
                edges.push((p.clone(), child.clone()));
                *out_degree.entry(p.clone()).or_default() += 1;
            }
        }
        // Previous-layer vertices that attracted no child feed a random
        // vertex of this layer, so only sinks terminate paths.
        for p in &prev {
            if out_degree.get(p).copied().unwrap_or(0) == 0 {
                let child = layers[li][rng.random_range(0..layers[li].len())].clone();
                edges.push((p.clone(), child));
                *out_degree.entry(p.clone()).or_default() += 1;
            }
        }
    }

    let mut vertices = Vec::with_capacity(n);
    for s in &sources {
        vertices.push(DataflowVertex { id: s.clone(), query_type: "source".into() });
    }
    for m in &mid_names {
        let qt = operator_types.choose(rng).expect("catalog has operator types");
        vertices.push(DataflowVertex { id: m.clone(), query_type: qt.clone() });
    }
    for s in &sinks {
        vertices.push(DataflowVertex { id: s.clone(), query_type: "sink".into() });
    }

    DataflowSpec {
        id: id.into(),
        vertices,
        edges,
        input_rate: DEFAULT_INPUT_RATE,
    }
}

/// Generates `count` dataflow shapes with sizes uniform in
/// [`MIN_DAG_SIZE`, `MAX_DAG_SIZE`], rejecting any shape that cannot be placed
/// alone on an empty reference pool built from `config`.
pub fn generate_pool(count: usize, seed: u64, config: &PoolConfig) -> Result<DagPool> {
    config.validate()?;
    let reference = build_pool(config, seed)?;
    let operator_types = config.catalog.operator_type_ids();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dataflows = Vec::with_capacity(count);
    for i in 0..count {
        let mut placed = false;
        for _attempt in 0..200 {
            let n = rng.random_range(MIN_DAG_SIZE..=MAX_DAG_SIZE);
            let id = format!("dag-{i:03}-n{n}");
            let spec = random_dag(&mut rng, &id, n, &operator_types);
            if spec.validate(&config.catalog).is_err() {
                continue;
            }
            let rated = propagate_rates(&spec, &config.catalog)?;
            let empty = PlacementState::new();
            if topset_place(&empty, &reference, &rated, false)?.accepted {
                dataflows.push(spec);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Generation(format!(
                "could not generate a feasible dataflow after 200 attempts (index {i})"
            )));
        }
    }
    Ok(DagPool { dataflows, seed })
}

/// Mean number of placed queries per resource.
pub fn utilization(state: &PlacementState, pool: &ResourcePool) -> f64 {
    if pool.is_empty() {
        return 0.0;
    }
    state.total_vertices() as f64 / pool.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Activity {
    Arrive { instance: String, spec: String },
    Depart { instance: String },
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum WorkloadModel {
    /// Oscillates utilization inside `target ± band` by alternating growth
    /// and shrink phases.
    RandomWalk { target: f64, band: f64 },
    /// `warmup` consecutive arrivals, then strict arrive/depart alternation.
    Poisson { lambda: f64, warmup: usize },
}

/// Hysteresis step of the random-walk controller: keep adding until the
/// utilization crosses the upper bound, then keep removing until it falls
/// below the lower bound. Returns the updated phase and whether to add.
pub fn next_activity_rw(util: f64, target: f64, band: f64, growing: bool) -> (bool, bool) {
    let growing = if growing {
        util < target + band
    } else {
        util <= target - band
    };
    (growing, growing)
}

/// Samples from a Poisson(lambda) truncated to `[min, max]` by rejection.
pub fn sample_truncated_poisson(
    rng: &mut ChaCha8Rng,
    lambda: f64,
    min: usize,
    max: usize,
) -> usize {
    let dist = rand_distr::Poisson::new(lambda).expect("positive lambda");
    loop {
        let k: f64 = rng.sample(dist);
        let k = k as usize;
        if (min..=max).contains(&k) {
            return k;
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkloadScript {
    pub model: WorkloadModel,
    pub seed: u64,
    pub horizon: usize,
    /// One activity per control interval, `activities[t]` happening at `t`.
    pub activities: Vec<Activity>,
}

struct ActiveInstance {
    instance: String,
    size: usize,
}

/// Picks a dataflow index for an arrival: a size drawn from the model's size
/// distribution, then uniform among pool shapes of the nearest present size.
fn pick_arrival(
    rng: &mut ChaCha8Rng,
    sizes: &BTreeMap<usize, Vec<usize>>,
    model: &WorkloadModel,
) -> usize {
    let wanted = match model {
        WorkloadModel::RandomWalk { .. } => {
            // Weight each distinct size s by 1/s: small dataflows dominate.
            let keys: Vec<usize> = sizes.keys().copied().collect();
            let weights: Vec<f64> = keys.iter().map(|&s| 1.0 / s as f64).collect();
            let total: f64 = weights.iter().sum();
            let mut x = rng.random_range(0.0..total);
            let mut chosen = keys[keys.len() - 1];
            for (k, w) in keys.iter().zip(&weights) {
                if x < *w {
                    chosen = *k;
                    break;
                }
                x -= w;
            }
            chosen
        }
        WorkloadModel::Poisson { lambda, .. } => {
            sample_truncated_poisson(rng, *lambda, MIN_DAG_SIZE, MAX_DAG_SIZE)
        }
    };
    let nearest = sizes
        .keys()
        .min_by_key(|&&s| (s.abs_diff(wanted), s))
        .copied()
        .expect("pool is non-empty");
    let bucket = &sizes[&nearest];
    bucket[rng.random_range(0..bucket.len())]
}

/// Picks the instance to depart: sample a size from the arrival distribution
/// up to 100 times looking for an active match, else take the closest active.
fn pick_departure(
    rng: &mut ChaCha8Rng,
    active: &[ActiveInstance],
    sizes: &BTreeMap<usize, Vec<usize>>,
    model: &WorkloadModel,
    pool: &DagPool,
) -> usize {
    debug_assert!(!active.is_empty());
    for _ in 0..100 {
        let want = pool.dataflows[pick_arrival(rng, sizes, model)].vertices.len();
        if let Some(i) = active.iter().position(|a| a.size == want) {
            return i;
        }
    }
    let want = pool.dataflows[pick_arrival(rng, sizes, model)].vertices.len();
    active
        .iter()
        .enumerate()
        .min_by_key(|(_, a)| a.size.abs_diff(want))
        .map(|(i, _)| i)
        .expect("active set checked non-empty")
}

/// Unrolls `horizon` control intervals of the model into a concrete script.
/// `resource_count` converts placed-query counts into utilization.
pub fn generate_workload(
    pool: &DagPool,
    model: WorkloadModel,
    horizon: usize,
    seed: u64,
    resource_count: usize,
) -> Result<WorkloadScript> {
    if pool.dataflows.is_empty() {
        return Err(Error::Generation("empty dataflow pool".into()));
    }
    if resource_count == 0 {
        return Err(Error::Generation("resource count must be positive".into()));
    }
    match model {
        WorkloadModel::RandomWalk { target, band } => {
            if !(target > 0.0 && band > 0.0 && band < target) {
                return Err(Error::Generation(
                    "random walk requires 0 < band < target".into(),
                ));
            }
        }
        WorkloadModel::Poisson { lambda, .. } => {
            if lambda <= 0.0 {
                return Err(Error::Generation("poisson lambda must be positive".into()));
            }
        }
    }

    let sizes = pool.size_index();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut active: Vec<ActiveInstance> = Vec::new();
    let mut activities = Vec::with_capacity(horizon);
    let mut total_queries = 0usize;
    let mut growing = true;

    for t in 0..horizon {
        let add = match model {
            WorkloadModel::RandomWalk { target, band } => {
                let util = total_queries as f64 / resource_count as f64;
                let (g, add) = next_activity_rw(util, target, band, growing);
                growing = g;
                add
            }
            WorkloadModel::Poisson { warmup, .. } => {
                // Warmup arrivals, then alternation starting with a departure.
                t < warmup || (t - warmup) % 2 == 1
            }
        };
        let add = add || active.is_empty();
        if add {
            let di = pick_arrival(&mut rng, &sizes, &model);
            let spec = &pool.dataflows[di];
            let instance = format!("{}@{t}", spec.id);
            active.push(ActiveInstance {
                instance: instance.clone(),
                size: spec.vertices.len(),
            });
            total_queries += spec.vertices.len();
            activities.push(Activity::Arrive {
                instance,
                spec: spec.id.clone(),
            });
        } else {
            let i = pick_departure(&mut rng, &active, &sizes, &model, pool);
            let gone = active.swap_remove(i);
            total_queries -= gone.size;
            activities.push(Activity::Depart {
                instance: gone.instance,
            });
        }
    }

    Ok(WorkloadScript {
        model,
        seed,
        horizon,
        activities,
    })
}
