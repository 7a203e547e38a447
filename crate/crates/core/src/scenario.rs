//! TOML scenario files and their expansion into simulation inputs.
//!
//! ```toml
//! [cluster]
//! nodes = 20
//!
//! [[jobs]]
//! input_size = "1GB"
//!
//! [[faults]]
//! at = "map_progress=0.5"
//! kind = "node_fail"
//! target = "busy"
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::ClusterConfig;
use crate::fault::{expand_random_faults, FaultEntry, FaultError, FaultScript, RandomFaultSpec};
use crate::mapreduce::{JobProfile, JobSpec};
use crate::rng::{RngStreams, FAULTS, WORKLOAD};
use crate::simulation::{SimInput, SimSettings};
use crate::speculator::{BaselineConfig, BinoConfig, PolicyKind};
use crate::workload::{generate_workload, WorkloadError, WorkloadSpec};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid scenario: {0}")]
    Parse(String),
    #[error("bad override `{0}`: {1}")]
    Override(String, String),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Fault(#[from] FaultError),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyBlock {
    pub baseline: BaselineConfig,
    pub bino: BinoConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Histogram bin width for the slowdown PDF.
    pub pdf_bin_width: f64,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { pdf_bin_width: 0.25 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub cluster: ClusterConfig,
    pub job_profile: JobProfile,
    pub jobs: Vec<JobSpec>,
    pub workload: Option<WorkloadSpec>,
    pub faults: Vec<FaultEntry>,
    pub random_faults: Option<RandomFaultSpec>,
    pub policy: PolicyBlock,
    pub output: OutputConfig,
    pub sim: SimSettings,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        Self::parse(&std::fs::read_to_string(path)?, &[])
    }

    /// Parses a scenario, first applying `key=value` overrides addressed by
    /// dotted paths such as `policy.bino.coll_multiply`.
    pub fn parse(text: &str, overrides: &[(String, String)]) -> Result<Self, ScenarioError> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| ScenarioError::Parse(e.to_string()))?;
        for (k, v) in overrides {
            set_path(&mut table, k, v)?;
        }
        let s: Scenario = table
            .try_into()
            .map_err(|e: toml::de::Error| ScenarioError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let c = &self.cluster;
        if c.nodes == 0 || c.slots_per_node == 0 || c.heartbeat_interval_ms == 0 {
            return Err(ScenarioError::Invalid("cluster needs nodes, slots and a heartbeat interval".into()));
        }
        if self.jobs.is_empty() && self.workload.is_none() {
            return Err(ScenarioError::Invalid("no [[jobs]] and no [workload]".into()));
        }
        if let Some(w) = &self.workload {
            w.validate()?;
        }
        let p = &self.job_profile;
        if p.split_size == 0 || !(p.map_throughput > 0.0) || !(p.reduce_throughput > 0.0) {
            return Err(ScenarioError::Invalid("job profile sizes and throughputs must be positive".into()));
        }
        if !(0.0..=1.0).contains(&p.reduce_slowstart) {
            return Err(ScenarioError::Invalid("reduce_slowstart must lie in [0, 1]".into()));
        }
        self.policy.baseline.validate().map_err(ScenarioError::Invalid)?;
        self.policy.bino.validate().map_err(ScenarioError::Invalid)?;
        if self.sim.quantum_ms == 0 {
            return Err(ScenarioError::Invalid("quantum_ms must be positive".into()));
        }
        Ok(())
    }

    /// Expands the workload and random faults from their own seed streams.
    pub fn build_input(&self, policy: PolicyKind, seed: u64, trace: bool) -> Result<SimInput, ScenarioError> {
        let streams = RngStreams::new(seed);
        let mut jobs = self.jobs.clone();
        if let Some(w) = &self.workload {
            jobs.extend(generate_workload(w, &mut streams.stream(WORKLOAD))?);
        }
        let mut faults = FaultScript::new(self.faults.clone());
        if let Some(r) = &self.random_faults {
            faults.extend(expand_random_faults(r, self.cluster.nodes, &mut streams.stream(FAULTS))?);
        }
        Ok(SimInput {
            seed,
            cluster: self.cluster.clone(),
            profile: self.job_profile.clone(),
            jobs,
            faults,
            policy,
            baseline: self.policy.baseline.clone(),
            bino: self.policy.bino.clone(),
            settings: self.sim.clone(),
            trace,
        })
    }

    /// Same scenario with every fault removed.
    pub fn fault_free(&self) -> Scenario {
        Scenario {
            faults: Vec::new(),
            random_faults: None,
            ..self.clone()
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_path(table: &mut toml::Table, key: &str, raw: &str) -> Result<(), ScenarioError> {
    let bad = |why: &str| ScenarioError::Override(format!("{key}={raw}"), why.to_string());
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(bad("empty path segment"));
    }
    let (last, parents) = parts.split_last().expect("non-empty");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(bad("path crosses a non-table value")),
        };
    }
    cur.insert(last.to_string(), parse_value(raw));
    Ok(())
}

/// Splits `key=v1,v2,...` into its key and values.
pub fn parse_sweep(arg: &str) -> Result<(String, Vec<String>), ScenarioError> {
    let (k, v) = arg
        .split_once('=')
        .ok_or_else(|| ScenarioError::Override(arg.to_string(), "expected key=v1,v2,...".into()))?;
    let values: Vec<String> = v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
    if k.trim().is_empty() || values.is_empty() {
        return Err(ScenarioError::Override(arg.to_string(), "expected key=v1,v2,...".into()));
    }
    Ok((k.trim().to_string(), values))
}

/// Cross product of sweep axes, in axis order.
pub fn sweep_combinations(axes: &[(String, Vec<String>)]) -> Vec<Vec<(String, String)>> {
    let mut out: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for (k, values) in axes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut c = prefix.clone();
                    c.push((k.clone(), v.clone()));
                    c
                })
            })
            .collect();
    }
    out
}
