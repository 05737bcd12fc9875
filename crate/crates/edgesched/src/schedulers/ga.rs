//! Genetic-algorithm placement: a chromosome is one resource index per query,
//! fitness is the placement objective plus a penalty per constraint
//! violation. GAI runs over a single arriving dataflow against residual
//! capacities; GAG re-places every active dataflow against full capacities.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::RatedDataflow;
use crate::par;
use crate::placement::{resource_load_index, Mapping, PlacementState, ResourceAgg, FEASIBILITY_MARGIN};
use crate::resources::{ResourceClass, ResourceId, ResourcePool};
use crate::schedulers::ScheduleResult;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaParams {
    pub population_size: usize,
    pub max_generations: usize,
    pub crossover_rate: f64,
    /// Per-gene probability of a uniform resample.
    pub mutation_rate: f64,
    pub elite_count: usize,
    /// Stop when the best fitness has not improved over this trailing
    /// fraction of the generations run so far.
    pub no_improvement_window_fraction: f64,
    /// Penalty per violation, as a multiple of the generation-0 objective
    /// scale.
    pub penalty_weight: f64,
    pub seed: u64,
}

impl Default for GaParams {
    fn default() -> GaParams {
        GaParams {
            population_size: 100,
            max_generations: 500,
            crossover_rate: 0.8,
            mutation_rate: 0.02,
            elite_count: 2,
            no_improvement_window_fraction: 0.5,
            penalty_weight: 10.0,
            seed: 0,
        }
    }
}

impl GaParams {
    pub fn validate(&self) -> Result<()> {
        if self.population_size == 0 || self.max_generations == 0 {
            return Err(Error::Config("GA sizes must be positive".into()));
        }
        for (name, r) in [
            ("crossover_rate", self.crossover_rate),
            ("mutation_rate", self.mutation_rate),
            ("no_improvement_window_fraction", self.no_improvement_window_fraction),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("{name} must lie in [0,1]")));
            }
        }
        if self.elite_count >= self.population_size {
            return Err(Error::Config("elite_count must be below population_size".into()));
        }
        Ok(())
    }
}

/// One query slot in the flattened chromosome.
struct Slot {
    dag: usize,
    vertex: usize,
}

/// Per-vertex data precomputed for fast fitness evaluation.
struct VertexMeta {
    id: String,
    lambda: [f64; 2],
    energy: [f64; 2],
    event_size: f64,
    in_rate: f64,
    is_source: bool,
    is_sink: bool,
}

struct DagShape {
    id: String,
    vertices: Vec<VertexMeta>,
    succs: Vec<Vec<usize>>,
    /// Reverse topological order.
    rev_topo: Vec<usize>,
    sources: Vec<usize>,
}

/// A GA search instance: the dataflows being placed, the pool, and the
/// residual per-resource load left by queries that stay put.
pub struct GaInstance<'a> {
    pool: &'a ResourcePool,
    dags: Vec<DagShape>,
    slots: Vec<Slot>,
    residual: BTreeMap<ResourceId, ResourceAgg>,
}

/// Objective and violation count for one chromosome.
#[derive(Debug, Clone, Copy)]
pub struct Eval {
    pub objective: f64,
    pub violations: u32,
}

impl Eval {
    pub fn is_valid(&self) -> bool {
        self.violations == 0
    }
}

fn class_idx(class: ResourceClass) -> usize {
    match class {
        ResourceClass::Edge => 0,
        ResourceClass::Cloud => 1,
    }
}

impl<'a> GaInstance<'a> {
    /// `base` supplies residual capacity accounting (GAI); pass `None` for a
    /// fresh global placement.
    pub fn new(
        pool: &'a ResourcePool,
        dags: &[RatedDataflow],
        base: Option<&PlacementState>,
    ) -> Result<GaInstance<'a>> {
        let mut shapes = Vec::with_capacity(dags.len());
        let mut slots = Vec::new();
        for (di, rated) in dags.iter().enumerate() {
            let topo = rated.spec.topology()?;
            let mut vertices = Vec::with_capacity(topo.ids.len());
            for (vi, v) in rated.spec.vertices.iter().enumerate() {
                let qt = &v.query_type;
                vertices.push(VertexMeta {
                    id: v.id.clone(),
                    lambda: [
                        pool.catalog.latency(qt, ResourceClass::Edge)?,
                        pool.catalog.latency(qt, ResourceClass::Cloud)?,
                    ],
                    energy: [
                        pool.catalog.energy(qt, ResourceClass::Edge)?,
                        pool.catalog.energy(qt, ResourceClass::Cloud)?,
                    ],
                    event_size: pool.catalog.event_size(qt)?,
                    in_rate: rated.in_rate(&v.id),
                    is_source: topo.preds[vi].is_empty(),
                    is_sink: topo.succs[vi].is_empty(),
                });
                slots.push(Slot { dag: di, vertex: vi });
            }
            let rev_topo: Vec<usize> = topo.topo.iter().rev().copied().collect();
            let sources = (0..vertices.len()).filter(|&v| vertices[v].is_source).collect();
            shapes.push(DagShape {
                id: rated.spec.id.clone(),
                vertices,
                succs: topo.succs,
                rev_topo,
                sources,
            });
        }
        let residual = match base {
            Some(state) => resource_load_index(state, pool)?,
            None => BTreeMap::new(),
        };
        Ok(GaInstance {
            pool,
            dags: shapes,
            slots,
            residual,
        })
    }

    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }

    pub fn resource_count(&self) -> usize {
        self.pool.len()
    }

    /// Evaluates one chromosome: the sum of dataflow makespans plus the
    /// number of constraint violations it would introduce.
    pub fn evaluate(&self, genes: &[u32]) -> Eval {
        debug_assert_eq!(genes.len(), self.slots.len());
        let pool = self.pool;
        let mut violations = 0u32;

        // Group resource loads added by this chromosome.
        #[derive(Default, Clone)]
        struct Added {
            m: u32,
            sum_lambda: f64,
            rates: Vec<f64>,
            energy_rate: f64,
        }
        let mut added: BTreeMap<u32, Added> = BTreeMap::new();
        let mut source_touched: std::collections::BTreeSet<u32> = std::collections::BTreeSet::new();

        let mut slot_res: Vec<ResourceId> = Vec::with_capacity(genes.len());
        for (slot, &g) in self.slots.iter().zip(genes) {
            let res = &pool.resources[g as usize];
            slot_res.push(res.id);
            let meta = &self.dags[slot.dag].vertices[slot.vertex];
            // Constraint 1.
            if meta.is_source && res.class != ResourceClass::Edge {
                violations += 1;
            }
            if meta.is_sink && res.class != ResourceClass::Cloud {
                violations += 1;
            }
            if meta.is_source {
                if res.battery.is_some() {
                    source_touched.insert(g);
                }
            } else {
                let ci = class_idx(res.class);
                let a = added.entry(g).or_default();
                a.m += 1;
                a.sum_lambda += meta.lambda[ci];
                a.rates.push(meta.in_rate);
                a.energy_rate += meta.in_rate * meta.energy[ci];
            }
        }

        // Constraints 2 and 3 on every touched resource, combined with the
        // residual load from retained dataflows.
        for (&g, a) in &added {
            let res = &pool.resources[g as usize];
            let base = self.residual.get(&res.id).copied().unwrap_or_default();
            let m = base.m + a.m;
            let sum_lambda = base.sum_lambda + a.sum_lambda;
            if sum_lambda > 0.0 {
                let bound = pool.pi_factor(m).unwrap_or(1.0) / sum_lambda
                    * (1.0 - FEASIBILITY_MARGIN);
                for &r in &a.rates {
                    if r >= bound {
                        violations += 1;
                    }
                }
                if base.m > 0 && base.max_in_rate >= bound {
                    violations += 1;
                }
            }
            if let Some(batt) = &res.battery {
                let incr = base.energy_rate + a.energy_rate;
                let drain = batt.recharge_interval_sec * (batt.base_load_ma / 3600.0 + incr)
                    * (1.0 + FEASIBILITY_MARGIN);
                if drain > batt.capacity_mah {
                    violations += 1;
                }
            }
        }
        // Edges hosting only sources still burn their base load.
        for g in source_touched {
            if added.contains_key(&g) {
                continue;
            }
            let res = &pool.resources[g as usize];
            if let Some(batt) = &res.battery {
                let base = self.residual.get(&res.id).copied().unwrap_or_default();
                let drain = batt.recharge_interval_sec
                    * (batt.base_load_ma / 3600.0 + base.energy_rate);
                if drain > batt.capacity_mah {
                    violations += 1;
                }
            }
        }

        // Sum of makespans via the longest-path DP on each dataflow.
        let mut slot_base = 0usize;
        let mut objective = 0.0;
        for shape in &self.dags {
            let n = shape.vertices.len();
            let mut best = vec![0.0f64; n];
            for &v in &shape.rev_topo {
                if shape.succs[v].is_empty() {
                    continue;
                }
                let meta = &shape.vertices[v];
                let rv = slot_res[slot_base + v];
                let lambda = meta.lambda[class_idx(pool.resources[rv.0 as usize].class)];
                let mut m = f64::NEG_INFINITY;
                for &s in &shape.succs[v] {
                    let rs = slot_res[slot_base + s];
                    let link = if rv == rs {
                        0.0
                    } else {
                        pool.network.latency(rv, rs) + meta.event_size / pool.network.bandwidth(rv, rs)
                    };
                    let c = lambda + link + best[s];
                    if c > m {
                        m = c;
                    }
                }
                best[v] = m;
            }
            let mk = shape
                .sources
                .iter()
                .map(|&s| best[s])
                .fold(0.0f64, f64::max);
            objective += mk;
            slot_base += n;
        }

        Eval {
            objective,
            violations,
        }
    }

    /// Converts a chromosome into per-dataflow mappings.
    pub fn genes_to_mappings(&self, genes: &[u32]) -> Vec<Mapping> {
        let mut out: Vec<Mapping> = self
            .dags
            .iter()
            .map(|d| Mapping {
                dataflow: d.id.clone(),
                assignments: BTreeMap::new(),
            })
            .collect();
        for (slot, &g) in self.slots.iter().zip(genes) {
            let meta = &self.dags[slot.dag].vertices[slot.vertex];
            out[slot.dag]
                .assignments
                .insert(meta.id.clone(), ResourceId(g));
        }
        out
    }
}

/// Order-preserving fitness evaluation of a whole population; parallel when
/// the `parallel` feature is enabled.
pub fn evaluate_population(instance: &GaInstance, population: &[Vec<u32>]) -> Vec<Eval> {
    par::map_collect(population, |genes| instance.evaluate(genes))
}

/// Sequential twin of [`evaluate_population`], for benchmarking the two paths
/// against each other.
pub fn evaluate_population_seq(instance: &GaInstance, population: &[Vec<u32>]) -> Vec<Eval> {
    par::map_collect_seq(population, |genes| instance.evaluate(genes))
}

fn tournament(rng: &mut ChaCha8Rng, fitness: &[f64], k: usize) -> usize {
    let mut best = rng.random_range(0..fitness.len());
    for _ in 1..k {
        let c = rng.random_range(0..fitness.len());
        if fitness[c] < fitness[best] {
            best = c;
        }
    }
    best
}

/// Runs the GA over an instance and returns the best valid mapping set ever
/// seen, or a rejection if no valid chromosome was encountered.
pub fn ga_place(instance: &GaInstance, params: &GaParams) -> Result<ScheduleResult> {
    params.validate()?;
    let start = Instant::now();
    let n_genes = instance.slot_count();
    let n_res = instance.resource_count() as u32;
    if n_genes == 0 {
        return Err(Error::Domain("GA instance has no queries".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let mut population: Vec<Vec<u32>> = (0..params.population_size)
        .map(|_| (0..n_genes).map(|_| rng.random_range(0..n_res)).collect())
        .collect();
    let mut evals = evaluate_population(instance, &population);
    let scale = evals.iter().map(|e| e.objective).sum::<f64>() / evals.len() as f64;
    let weight = params.penalty_weight * scale.max(1e-9);
    let fitness_of = |e: &Eval| e.objective + weight * e.violations as f64;

    let mut fitness: Vec<f64> = evals.iter().map(fitness_of).collect();
    let mut best_fitness = f64::INFINITY;
    let mut best_valid: Option<(f64, Vec<u32>)> = None;
    let mut last_improvement = 0usize;
    let mut evaluations = population.len() as u64;
    let mut generations = 1usize;

    let absorb = |gen: usize,
                      population: &[Vec<u32>],
                      evals: &[Eval],
                      fitness: &[f64],
                      best_fitness: &mut f64,
                      best_valid: &mut Option<(f64, Vec<u32>)>,
                      last_improvement: &mut usize| {
        for i in 0..population.len() {
            if fitness[i] < *best_fitness {
                *best_fitness = fitness[i];
                *last_improvement = gen;
            }
            if evals[i].is_valid()
                && best_valid
                    .as_ref()
                    .is_none_or(|(obj, _)| evals[i].objective < *obj)
            {
                *best_valid = Some((evals[i].objective, population[i].clone()));
            }
        }
    };
    absorb(
        0,
        &population,
        &evals,
        &fitness,
        &mut best_fitness,
        &mut best_valid,
        &mut last_improvement,
    );

    for gen in 1..params.max_generations {
        // Elitism: keep the best few chromosomes verbatim.
        let mut order: Vec<usize> = (0..population.len()).collect();
        order.sort_by(|&a, &b| fitness[a].partial_cmp(&fitness[b]).unwrap());
        let mut next: Vec<Vec<u32>> = order
            .iter()
            .take(params.elite_count)
            .map(|&i| population[i].clone())
            .collect();

        while next.len() < params.population_size {
            let p1 = tournament(&mut rng, &fitness, 3);
            let p2 = tournament(&mut rng, &fitness, 3);
            let (mut c1, mut c2) = if n_genes >= 2 && rng.random_bool(params.crossover_rate) {
                let cut = rng.random_range(1..n_genes);
                let mut a = population[p1][..cut].to_vec();
                a.extend_from_slice(&population[p2][cut..]);
                let mut b = population[p2][..cut].to_vec();
                b.extend_from_slice(&population[p1][cut..]);
                (a, b)
            } else {
                (population[p1].clone(), population[p2].clone())
            };
            for child in [&mut c1, &mut c2] {
                for gene in child.iter_mut() {
                    if rng.random_bool(params.mutation_rate) {
                        *gene = rng.random_range(0..n_res);
                    }
                }
            }
            next.push(c1);
            if next.len() < params.population_size {
                next.push(c2);
            }
        }

        population = next;
        evals = evaluate_population(instance, &population);
        fitness = evals.iter().map(fitness_of).collect();
        evaluations += population.len() as u64;
        generations = gen + 1;
        absorb(
            gen,
            &population,
            &evals,
            &fitness,
            &mut best_fitness,
            &mut best_valid,
            &mut last_improvement,
        );

        // Stagnation: no improvement over the trailing window.
        let window = ((gen as f64) * params.no_improvement_window_fraction).ceil() as usize;
        if window >= 5 && gen - last_improvement >= window {
            break;
        }
    }

    let planning = start.elapsed().as_secs_f64();
    let mut diag = BTreeMap::new();
    diag.insert("generations".into(), generations as f64);
    diag.insert("evaluations".into(), evaluations as f64);
    diag.insert("penalty_weight".into(), weight);
    match best_valid {
        Some((obj, genes)) => {
            diag.insert("best_objective".into(), obj);
            Ok(ScheduleResult {
                accepted: true,
                mappings: instance.genes_to_mappings(&genes),
                planning_time_sec: planning,
                diagnostics: diag,
            })
        }
        None => Ok(ScheduleResult::rejected(planning, diag)),
    }
}

/// GA over just the arriving dataflow, against capacities reduced by every
/// retained query. Prior mappings are never touched.
pub fn ga_incremental(
    state: &PlacementState,
    pool: &ResourcePool,
    new_dag: &RatedDataflow,
    params: &GaParams,
) -> Result<ScheduleResult> {
    let instance = GaInstance::new(pool, std::slice::from_ref(new_dag), Some(state))?;
    ga_place(&instance, params)
}

/// GA over every active dataflow as one global placement against full
/// capacities. On success the returned mappings replace the whole set.
pub fn ga_global(
    state: &PlacementState,
    pool: &ResourcePool,
    params: &GaParams,
) -> Result<ScheduleResult> {
    let dags: Vec<RatedDataflow> = state.dataflows.values().cloned().collect();
    if dags.is_empty() {
        return Err(Error::Domain("GAG requires at least one active dataflow".into()));
    }
    let instance = GaInstance::new(pool, &dags, None)?;
    ga_place(&instance, params)
}
