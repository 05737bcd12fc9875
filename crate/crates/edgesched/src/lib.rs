//! Scheduling of dynamic CEP analytic dataflows across edge and cloud resources.
//!
//! The library models analytic dataflows as DAGs of CEP queries, places them
//! onto constrained edge devices and cloud VMs, and drives a control-interval
//! simulation in which dataflows arrive and depart over time. Placement
//! strategies (TopSet, TopSet/P, incremental and global GA) minimize the sum
//! of dataflow makespans subject to placement-class, compute-capacity and
//! battery-energy constraints. Rebalance passes migrate critical-path queries
//! to improve an existing placement.
//!
//! With the default `parallel` feature, GA fitness evaluation and the
//! brute-force oracle fan out over rayon; disabling the feature falls back to
//! equivalent sequential loops.

pub mod error;
pub mod model;
pub mod par;
pub mod placement;
pub mod rebalance;
pub mod resources;
pub mod schedulers;
pub mod simulator;
pub mod workload;

pub use error::{Error, Result};
