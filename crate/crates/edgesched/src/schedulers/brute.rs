//! Exhaustive placement search over tiny instances, used as the optimality
//! reference for the heuristics. Guarded by hard size limits: the search is
//! |R|^n and is only meant for single-digit query counts.

use crate::error::{Error, Result};
use crate::model::RatedDataflow;
use crate::par;
use crate::placement::Mapping;
use crate::resources::ResourcePool;
use crate::schedulers::ga::GaInstance;

const MAX_QUERIES: usize = 8;
const MAX_RESOURCES: usize = 5;

/// Finds the minimum-objective constraint-valid placement of `dags` on an
/// otherwise empty pool by enumerating every assignment.
pub fn brute_force_place(
    dags: &[RatedDataflow],
    pool: &ResourcePool,
) -> Result<(f64, Vec<Mapping>)> {
    let instance = GaInstance::new(pool, dags, None)?;
    let n = instance.slot_count();
    let r = instance.resource_count();
    if n > MAX_QUERIES || r > MAX_RESOURCES {
        return Err(Error::OracleGuard(format!(
            "brute force limited to {MAX_QUERIES} queries on {MAX_RESOURCES} resources, got {n} on {r}"
        )));
    }
    if n == 0 {
        return Err(Error::Domain("no queries to place".into()));
    }

    // Parallelise over the first gene; each worker runs an odometer over the
    // remaining genes and keeps its lexicographically-first best.
    let firsts: Vec<u32> = (0..r as u32).collect();
    let partial = par::map_collect(&firsts, |&first| {
        let mut genes = vec![0u32; n];
        genes[0] = first;
        let mut best: Option<(f64, Vec<u32>)> = None;
        loop {
            let eval = instance.evaluate(&genes);
            if eval.violations == 0
                && best.as_ref().is_none_or(|(obj, _)| eval.objective < *obj)
            {
                best = Some((eval.objective, genes.clone()));
            }
            // Advance the odometer over genes[1..].
            let mut i = n - 1;
            loop {
                if i == 0 {
                    return best;
                }
                genes[i] += 1;
                if (genes[i] as usize) < r {
                    break;
                }
                genes[i] = 0;
                i -= 1;
            }
        }
    });

    let best = partial
        .into_iter()
        .flatten()
        .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then_with(|| a.1.cmp(&b.1)));
    match best {
        Some((obj, genes)) => Ok((obj, instance.genes_to_mappings(&genes))),
        None => Err(Error::NoValidPlacement),
    }
}
