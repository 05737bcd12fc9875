//! Placement strategies: TopSet / TopSet/P list heuristics, incremental and
//! global GA meta-heuristics, and the exhaustive brute-force oracle.

mod brute;
mod ga;
mod topset;

pub use brute::brute_force_place;
pub use ga::{evaluate_population, evaluate_population_seq, ga_global, ga_incremental, ga_place, GaInstance, GaParams};
pub use topset::{estimate_penalty, topset_place};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::placement::Mapping;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Topset,
    TopsetP,
    Gai,
    Gag,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Topset => "topset",
            Strategy::TopsetP => "topset-p",
            Strategy::Gai => "gai",
            Strategy::Gag => "gag",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "topset" => Ok(Strategy::Topset),
            "topset-p" => Ok(Strategy::TopsetP),
            "gai" => Ok(Strategy::Gai),
            "gag" => Ok(Strategy::Gag),
            other => Err(format!(
                "unknown strategy `{other}` (expected topset, topset-p, gai, gag)"
            )),
        }
    }
}

/// Outcome of one scheduling attempt. A rejected result leaves the caller's
/// state untouched.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleResult {
    pub accepted: bool,
    /// One mapping for arrival strategies; the full replacement set for GAG.
    pub mappings: Vec<Mapping>,
    pub planning_time_sec: f64,
    pub diagnostics: BTreeMap<String, f64>,
}

impl ScheduleResult {
    pub fn rejected(planning_time_sec: f64, diagnostics: BTreeMap<String, f64>) -> ScheduleResult {
        ScheduleResult {
            accepted: false,
            mappings: Vec::new(),
            planning_time_sec,
            diagnostics,
        }
    }
}
