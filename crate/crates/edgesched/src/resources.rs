//! Edge/cloud resource pools: compute latency profiles, parallelism overhead,
//! pairwise network model, and battery parameters for edge devices.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{QueryKind, QueryType, QueryTypeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResourceClass {
    Edge,
    Cloud,
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct ResourceId(pub u32);

impl std::fmt::Display for ResourceId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "r{}", self.0)
    }
}

/// Battery parameters; present on edge devices only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Battery {
    /// Capacity of a fully charged battery, mAh.
    pub capacity_mah: f64,
    /// Base load drawn with no queries running, mA.
    pub base_load_ma: f64,
    /// Time to fully recharge, seconds.
    pub recharge_interval_sec: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Resource {
    pub id: ResourceId,
    pub class: ResourceClass,
    pub battery: Option<Battery>,
}

/// Per-class-pair network distribution parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinkDistribution {
    pub latency_mean_sec: f64,
    pub latency_stddev_sec: f64,
    pub bandwidth_mean_bps: f64,
    pub bandwidth_stddev_bps: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub edge_edge: LinkDistribution,
    pub edge_cloud: LinkDistribution,
    pub cloud_cloud: LinkDistribution,
    /// When true, one draw per unordered pair is mirrored in both directions.
    pub symmetric: bool,
}

impl NetworkConfig {
    pub fn for_pair(&self, a: ResourceClass, b: ResourceClass) -> &LinkDistribution {
        use ResourceClass::*;
        match (a, b) {
            (Edge, Edge) => &self.edge_edge,
            (Cloud, Cloud) => &self.cloud_cloud,
            _ => &self.edge_cloud,
        }
    }
}

/// Pairwise latency/bandwidth, sampled once at pool construction and fixed
/// for the run.
#[derive(Debug, Clone)]
pub struct NetworkModel {
    n: usize,
    latency_sec: Vec<f64>,
    bandwidth_bps: Vec<f64>,
}

impl NetworkModel {
    pub fn latency(&self, from: ResourceId, to: ResourceId) -> f64 {
        self.latency_sec[from.0 as usize * self.n + to.0 as usize]
    }
    pub fn bandwidth(&self, from: ResourceId, to: ResourceId) -> f64 {
        self.bandwidth_bps[from.0 as usize * self.n + to.0 as usize]
    }
}

/// Per (query type, resource class) profile coefficients.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileEntry {
    /// Time to process one event on an exclusive resource, seconds.
    pub latency_sec_per_event: f64,
    /// Incremental battery drain per processed event, mAh.
    pub incr_energy_mah_per_event: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassProfiles {
    pub edge: ProfileEntry,
    pub cloud: ProfileEntry,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileCatalog {
    pub types: BTreeMap<QueryTypeId, QueryType>,
    pub profiles: BTreeMap<QueryTypeId, ClassProfiles>,
}

impl ProfileCatalog {
    pub fn query_type(&self, id: &str) -> Result<&QueryType> {
        self.types.get(id).ok_or_else(|| Error::ProfileNotFound {
            query_type: id.to_string(),
        })
    }

    pub fn profile(&self, id: &str, class: ResourceClass) -> Result<&ProfileEntry> {
        let p = self.profiles.get(id).ok_or_else(|| Error::ProfileNotFound {
            query_type: id.to_string(),
        })?;
        Ok(match class {
            ResourceClass::Edge => &p.edge,
            ResourceClass::Cloud => &p.cloud,
        })
    }

    pub fn latency(&self, id: &str, class: ResourceClass) -> Result<f64> {
        Ok(self.profile(id, class)?.latency_sec_per_event)
    }

    pub fn energy(&self, id: &str, class: ResourceClass) -> Result<f64> {
        Ok(self.profile(id, class)?.incr_energy_mah_per_event)
    }

    pub fn selectivity(&self, id: &str) -> Result<f64> {
        Ok(self.query_type(id)?.selectivity)
    }

    pub fn event_size(&self, id: &str) -> Result<f64> {
        Ok(self.query_type(id)?.event_size_bytes)
    }

    /// Ids of the placeable operator types (everything except source/sink),
    /// in sorted order.
    pub fn operator_type_ids(&self) -> Vec<QueryTypeId> {
        self.types
            .values()
            .filter(|t| !t.kind.is_source() && !t.kind.is_sink())
            .map(|t| t.id.clone())
            .collect()
    }

    /// Non-fatal catalog oddities, e.g. an edge profile faster than cloud.
    pub fn sanity_warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (id, p) in &self.profiles {
            if p.edge.latency_sec_per_event < p.cloud.latency_sec_per_event {
                out.push(format!(
                    "type `{id}`: edge latency {} is below cloud latency {}",
                    p.edge.latency_sec_per_event, p.cloud.latency_sec_per_event
                ));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoolConfig {
    pub edge_count: u32,
    pub cloud_count: u32,
    pub battery: Battery,
    pub network: NetworkConfig,
    /// (m, pi(m)) rows; the last row extends to all larger m.
    pub parallelism_table: Vec<(u32, f64)>,
    /// The capacity bound multiplies by (1 + pi_sign * pi(m)); the sign is
    /// configurable because the source formula and its prose disagree on
    /// whether the overhead raises or lowers the bound.
    pub pi_sign: f64,
    pub catalog: ProfileCatalog,
}

fn default_network() -> NetworkConfig {
    NetworkConfig {
        edge_edge: LinkDistribution {
            latency_mean_sec: 0.002,
            latency_stddev_sec: 0.0005,
            bandwidth_mean_bps: 1.0e7,
            bandwidth_stddev_bps: 1.0e6,
        },
        edge_cloud: LinkDistribution {
            latency_mean_sec: 0.060,
            latency_stddev_sec: 0.005,
            bandwidth_mean_bps: 1.0e6,
            bandwidth_stddev_bps: 1.0e5,
        },
        cloud_cloud: LinkDistribution {
            latency_mean_sec: 0.001,
            latency_stddev_sec: 0.0002,
            bandwidth_mean_bps: 1.0e8,
            bandwidth_stddev_bps: 1.0e7,
        },
        symmetric: true,
    }
}

fn default_battery() -> Battery {
    Battery {
        capacity_mah: 2000.0,
        base_load_ma: 50.0,
        recharge_interval_sec: 3600.0,
    }
}

impl PoolConfig {
    fn with_counts(edge_count: u32, cloud_count: u32) -> PoolConfig {
        PoolConfig {
            edge_count,
            cloud_count,
            battery: default_battery(),
            network: default_network(),
            parallelism_table: vec![(1, 0.0), (2, 0.2), (3, 0.35), (4, 0.5)],
            pi_sign: 1.0,
            catalog: default_catalog(),
        }
    }

    /// 96 edge devices + 4 cloud VMs.
    pub fn small() -> PoolConfig {
        PoolConfig::with_counts(96, 4)
    }

    /// 960 edge devices + 40 cloud VMs.
    pub fn large() -> PoolConfig {
        PoolConfig::with_counts(960, 40)
    }

    /// 3 edge + 2 cloud; used for exhaustive-oracle instances and tests.
    pub fn tiny() -> PoolConfig {
        PoolConfig::with_counts(3, 2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.edge_count == 0 || self.cloud_count == 0 {
            return Err(Error::Config("resource counts must be positive".into()));
        }
        if self.battery.capacity_mah <= 0.0
            || self.battery.base_load_ma < 0.0
            || self.battery.recharge_interval_sec <= 0.0
        {
            return Err(Error::Config("invalid battery parameters".into()));
        }
        match self.parallelism_table.first() {
            Some(&(1, v)) if v == 0.0 => {}
            _ => {
                return Err(Error::Config(
                    "parallelism table must start with (1, 0.0)".into(),
                ))
            }
        }
        let mut non_decreasing_m = 0;
        for w in self.parallelism_table.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::Config("parallelism table m values must increase".into()));
            }
            if w[1].1 < w[0].1 {
                non_decreasing_m += 1;
            }
        }
        if non_decreasing_m > 0 {
            // Left open deliberately: a decreasing table is odd but not fatal.
            eprintln!("warning: parallelism table is not non-decreasing");
        }
        for (id, t) in &self.catalog.types {
            if t.event_size_bytes <= 0.0 {
                return Err(Error::Config(format!("type `{id}`: event size must be positive")));
            }
            if !t.kind.is_sink() && t.selectivity <= 0.0 {
                return Err(Error::Config(format!("type `{id}`: selectivity must be positive")));
            }
            let prof = self
                .catalog
                .profiles
                .get(id)
                .ok_or_else(|| Error::Config(format!("type `{id}` has no profile entries")))?;
            if !t.kind.is_source()
                && (prof.edge.latency_sec_per_event <= 0.0 || prof.cloud.latency_sec_per_event <= 0.0)
            {
                return Err(Error::Config(format!("type `{id}`: latency must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ResourcePool {
    pub resources: Vec<Resource>,
    pub network: NetworkModel,
    pub catalog: ProfileCatalog,
    pub parallelism_table: Vec<(u32, f64)>,
    pub pi_sign: f64,
    /// The distribution parameters the network was sampled from; the
    /// idealized baselines reuse the means.
    pub net_config: NetworkConfig,
}

impl ResourcePool {
    pub fn len(&self) -> usize {
        self.resources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.resources.is_empty()
    }

    pub fn resource(&self, id: ResourceId) -> Result<&Resource> {
        self.resources
            .get(id.0 as usize)
            .ok_or(Error::ResourceNotFound(id.0))
    }

    pub fn class_of(&self, id: ResourceId) -> Result<ResourceClass> {
        Ok(self.resource(id)?.class)
    }

    pub fn edge_count(&self) -> usize {
        self.resources
            .iter()
            .filter(|r| r.class == ResourceClass::Edge)
            .count()
    }

    pub fn cloud_count(&self) -> usize {
        self.len() - self.edge_count()
    }

    /// Parallelism overhead pi(m); m beyond the table returns the last entry.
    pub fn parallelism_overhead(&self, m: u32) -> Result<f64> {
        if m == 0 {
            return Err(Error::Domain("parallelism overhead undefined for m=0".into()));
        }
        let mut value = 0.0;
        for &(row_m, pi) in &self.parallelism_table {
            if row_m <= m {
                value = pi;
            } else {
                break;
            }
        }
        Ok(value)
    }

    /// The (1 + pi_sign * pi(m)) factor from the capacity bound.
    pub fn pi_factor(&self, m: u32) -> Result<f64> {
        Ok(1.0 + self.pi_sign * self.parallelism_overhead(m)?)
    }

    /// Transfer time for one event of `event_size_bytes` between two
    /// resources: l + delta/beta, or zero when co-located.
    pub fn link_cost(&self, from: ResourceId, to: ResourceId, event_size_bytes: f64) -> Result<f64> {
        self.resource(from)?;
        self.resource(to)?;
        if from == to {
            return Ok(0.0);
        }
        Ok(self.network.latency(from, to) + event_size_bytes / self.network.bandwidth(from, to))
    }
}

fn sample_positive<R: Rng>(rng: &mut R, mean: f64, stddev: f64, strictly: bool) -> f64 {
    if stddev == 0.0 {
        return mean;
    }
    let dist = Normal::new(mean, stddev).expect("finite stddev");
    loop {
        let x = dist.sample(rng);
        if x > 0.0 || (!strictly && x == 0.0) {
            return x;
        }
    }
}

/// Builds a pool deterministically from (config, seed): resources are laid
/// out edges-first, and per-pair network samples come from a seeded RNG.
pub fn build_pool(config: &PoolConfig, seed: u64) -> Result<ResourcePool> {
    config.validate()?;
    let n = (config.edge_count + config.cloud_count) as usize;
    let mut resources = Vec::with_capacity(n);
    for i in 0..config.edge_count {
        resources.push(Resource {
            id: ResourceId(i),
            class: ResourceClass::Edge,
            battery: Some(config.battery.clone()),
        });
    }
    for i in 0..config.cloud_count {
        resources.push(Resource {
            id: ResourceId(config.edge_count + i),
            class: ResourceClass::Cloud,
            battery: None,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut latency = vec![0.0f64; n * n];
    let mut bandwidth = vec![f64::INFINITY; n * n];
    for a in 0..n {
        for b in (a + 1)..n {
            let dist = config.network.for_pair(resources[a].class, resources[b].class);
            let lat = sample_positive(&mut rng, dist.latency_mean_sec, dist.latency_stddev_sec, false);
            let bw = sample_positive(&mut rng, dist.bandwidth_mean_bps, dist.bandwidth_stddev_bps, true);
            latency[a * n + b] = lat;
            bandwidth[a * n + b] = bw;
            if config.network.symmetric {
                latency[b * n + a] = lat;
                bandwidth[b * n + a] = bw;
            } else {
                latency[b * n + a] =
                    sample_positive(&mut rng, dist.latency_mean_sec, dist.latency_stddev_sec, false);
                bandwidth[b * n + a] =
                    sample_positive(&mut rng, dist.bandwidth_mean_bps, dist.bandwidth_stddev_bps, true);
            }
        }
    }

    Ok(ResourcePool {
        resources,
        network: NetworkModel {
            n,
            latency_sec: latency,
            bandwidth_bps: bandwidth,
        },
        catalog: config.catalog.clone(),
        parallelism_table: config.parallelism_table.clone(),
        pi_sign: config.pi_sign,
        net_config: config.network.clone(),
    })
}

/// The synthetic profile catalog: 21 operator types spanning the five CEP
/// query kinds, plus the source and sink conventions (source latency 0,
/// cloud latency one third of edge latency).
pub fn default_catalog() -> ProfileCatalog {
    // (id, kind, selectivity, event bytes, edge latency ms, energy mAh/event)
    use QueryKind::*;
    let rows: [(&str, QueryKind, f64, f64, f64, f64); 21] = [
        ("filter-a", Filter, 0.50, 96.0, 1.2, 2.0e-5),
        ("filter-b", Filter, 0.30, 128.0, 1.5, 2.5e-5),
        ("filter-c", Filter, 0.70, 96.0, 1.1, 2.0e-5),
        ("filter-d", Filter, 0.90, 64.0, 1.0, 1.8e-5),
        ("filter-e", Filter, 0.10, 128.0, 1.8, 2.8e-5),
        ("seq-a", Sequence, 0.20, 160.0, 2.4, 3.5e-5),
        ("seq-b", Sequence, 0.35, 192.0, 3.0, 4.0e-5),
        ("seq-c", Sequence, 0.50, 224.0, 3.6, 4.5e-5),
        ("seq-d", Sequence, 0.15, 256.0, 4.2, 5.0e-5),
        ("pattern-a", Pattern, 0.05, 192.0, 4.8, 5.5e-5),
        ("pattern-b", Pattern, 0.12, 224.0, 5.6, 6.0e-5),
        ("pattern-c", Pattern, 0.08, 256.0, 6.4, 6.5e-5),
        ("pattern-d", Pattern, 0.20, 320.0, 7.2, 7.0e-5),
        ("agg-sliding-a", SlidingAggregate, 1.00, 128.0, 2.0, 3.0e-5),
        ("agg-sliding-b", SlidingAggregate, 1.00, 160.0, 2.6, 3.5e-5),
        ("agg-sliding-c", SlidingAggregate, 0.80, 192.0, 3.2, 4.0e-5),
        ("agg-sliding-d", SlidingAggregate, 1.20, 256.0, 3.8, 4.5e-5),
        ("agg-batch-a", BatchAggregate, 0.10, 64.0, 2.2, 3.0e-5),
        ("agg-batch-b", BatchAggregate, 0.20, 96.0, 2.8, 3.5e-5),
        ("agg-batch-c", BatchAggregate, 0.25, 128.0, 3.4, 4.0e-5),
        ("agg-batch-d", BatchAggregate, 0.05, 128.0, 4.0, 4.5e-5),
    ];

    let mut types = BTreeMap::new();
    let mut profiles = BTreeMap::new();
    let mut add = |id: &str, kind: QueryKind, sel: f64, bytes: f64, edge_ms: f64, energy: f64| {
        types.insert(
            id.to_string(),
            QueryType {
                id: id.to_string(),
                kind,
                selectivity: sel,
                event_size_bytes: bytes,
            },
        );
        profiles.insert(
            id.to_string(),
            ClassProfiles {
                edge: ProfileEntry {
                    latency_sec_per_event: edge_ms * 1e-3,
                    incr_energy_mah_per_event: energy,
                },
                cloud: ProfileEntry {
                    latency_sec_per_event: edge_ms * 1e-3 / 3.0,
                    incr_energy_mah_per_event: 0.0,
                },
            },
        );
    };
    for (id, kind, sel, bytes, ms, energy) in rows {
        add(id, kind, sel, bytes, ms, energy);
    }
    // Source queries are dummy inputs: zero compute, zero energy.
    add("source", Source, 1.0, 128.0, 0.0, 0.0);
    add("sink", Sink, 1.0, 64.0, 0.9, 1.5e-5);
    ProfileCatalog { types, profiles }
}
