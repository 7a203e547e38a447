//! Deterministic discrete-event simulator of MapReduce fault recovery.
//!
//! A simulated cluster runs jobs under injected faults while a speculation
//! policy decides which tasks get extra attempts. Two policies are provided:
//! the YARN-style serial speculator and a binocular speculator that also
//! looks at neighboring nodes, launches copies in growing waves and rolls
//! failed maps back to their last spill.

pub mod cluster;
pub mod fault;
pub mod ids;
pub mod mapreduce;
pub mod metrics;
pub mod rng;
pub mod runner;
pub mod scenario;
pub mod sim;
pub mod simulation;
pub mod speculator;
pub mod workload;
