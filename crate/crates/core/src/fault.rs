//! Scripted and randomly generated faults.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::ids::{JobId, NodeId};
use crate::sim::SimTime;

#[derive(Debug, Error, PartialEq)]
pub enum FaultError {
    #[error("failure ratio {0} outside [0, 1]")]
    BadRatio(f64),
    #[error("invalid trigger `{0}` (expected ms, `map_progress=<frac>` or `spill=<n>`)")]
    BadTrigger(String),
    #[error("invalid target `{0}`")]
    BadTarget(String),
    #[error("fault window end {end} precedes start {start}")]
    BadWindow { start: u64, end: u64 },
}

/// When a fault entry fires.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Trigger {
    At(SimTime),
    /// Mean map progress of the entry's job reaches the fraction.
    MapProgress(f64),
    /// The targeted map attempt writes this spill.
    Spill(u32),
}

impl FromStr for Trigger {
    type Err = FaultError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Ok(ms) = s.parse::<u64>() {
            return Ok(Trigger::At(SimTime(ms)));
        }
        let bad = || FaultError::BadTrigger(s.to_string());
        let (key, value) = s.split_once('=').ok_or_else(bad)?;
        match key.trim() {
            "map_progress" => {
                let f: f64 = value.trim().parse().map_err(|_| bad())?;
                if !(0.0..=1.0).contains(&f) {
                    return Err(bad());
                }
                Ok(Trigger::MapProgress(f))
            }
            "spill" => Ok(Trigger::Spill(value.trim().parse().map_err(|_| bad())?)),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for Trigger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Trigger::At(t) => write!(f, "{}", t.0),
            Trigger::MapProgress(p) => write!(f, "map_progress={p}"),
            Trigger::Spill(n) => write!(f, "spill={n}"),
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawTrigger {
    Ms(u64),
    Text(String),
}

impl<'de> Deserialize<'de> for Trigger {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match RawTrigger::deserialize(d)? {
            RawTrigger::Ms(ms) => Ok(Trigger::At(SimTime(ms))),
            RawTrigger::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl Serialize for Trigger {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Trigger::At(t) => s.serialize_u64(t.0),
            other => s.serialize_str(&other.to_string()),
        }
    }
}

/// What a fault entry acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Node(NodeId),
    /// Any node, drawn from the faults stream.
    RandomNode,
    /// A node currently hosting running attempts of the entry's job.
    BusyNode,
    Map(u32),
    RandomRunningMap,
    RandomCompletedMap,
}

impl FromStr for Target {
    type Err = FaultError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Ok(n) = s.parse::<u32>() {
            return Ok(Target::Node(NodeId(n)));
        }
        match s {
            "random" => Ok(Target::RandomNode),
            "busy" => Ok(Target::BusyNode),
            "random_running_map" => Ok(Target::RandomRunningMap),
            "random_completed_map" => Ok(Target::RandomCompletedMap),
            _ => {
                if let Some(rest) = s.strip_prefix("node:") {
                    rest.parse()
                        .map(|n| Target::Node(NodeId(n)))
                        .map_err(|_| FaultError::BadTarget(s.to_string()))
                } else if let Some(rest) = s.strip_prefix("map:") {
                    rest.parse()
                        .map(Target::Map)
                        .map_err(|_| FaultError::BadTarget(s.to_string()))
                } else {
                    Err(FaultError::BadTarget(s.to_string()))
                }
            }
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Node(n) => write!(f, "node:{}", n.0),
            Target::RandomNode => f.write_str("random"),
            Target::BusyNode => f.write_str("busy"),
            Target::Map(i) => write!(f, "map:{i}"),
            Target::RandomRunningMap => f.write_str("random_running_map"),
            Target::RandomCompletedMap => f.write_str("random_completed_map"),
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawTarget {
    Id(u32),
    Text(String),
}

impl<'de> Deserialize<'de> for Target {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match RawTarget::deserialize(d)? {
            RawTarget::Id(n) => Ok(Target::Node(NodeId(n))),
            RawTarget::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl Serialize for Target {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FaultKind {
    /// `duration_ms` absent means permanent.
    NodeFail {
        #[serde(default)]
        duration_ms: Option<u64>,
    },
    NodeSlow { factor: f64, duration_ms: u64 },
    MofLoss,
    DiskException,
    NetDelay { factor: f64, duration_ms: u64 },
}

impl FaultKind {
    pub fn name(&self) -> &'static str {
        match self {
            FaultKind::NodeFail { .. } => "node_fail",
            FaultKind::NodeSlow { .. } => "node_slow",
            FaultKind::MofLoss => "mof_loss",
            FaultKind::DiskException => "disk_exception",
            FaultKind::NetDelay { .. } => "net_delay",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultEntry {
    pub at: Trigger,
    #[serde(flatten)]
    pub kind: FaultKind,
    pub target: Target,
    /// Job the trigger and task selectors refer to; absent means a random
    /// running job at activation time.
    #[serde(default)]
    pub job: Option<JobId>,
}

impl fmt::Display for FaultEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at {} target {}", self.kind.name(), self.at, self.target)?;
        if let Some(j) = self.job {
            write!(f, " job {j}")?;
        }
        Ok(())
    }
}

/// Time-ordered fault entries. Non-time triggers sort after timed ones and
/// keep their scripted order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FaultScript {
    pub entries: Vec<FaultEntry>,
}

impl FaultScript {
    pub fn new(mut entries: Vec<FaultEntry>) -> Self {
        entries.sort_by_key(|e| match e.at {
            Trigger::At(t) => (0, t.0),
            _ => (1, 0),
        });
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn extend(&mut self, other: FaultScript) {
        let mut all = std::mem::take(&mut self.entries);
        all.extend(other.entries);
        *self = FaultScript::new(all);
    }
}

/// Parameters for a generated fault mix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RandomFaultSpec {
    /// Node failures plus node delays.
    pub count: u32,
    /// Fraction of `count` that are failures; the rest are delays.
    pub failure_ratio: f64,
    pub window_start_ms: u64,
    pub window_end_ms: u64,
    /// Absent: failures are permanent.
    pub fail_duration_ms: Option<u64>,
    pub slow_factor: f64,
    /// Mean of the Poisson-distributed delay duration.
    pub mean_delay_ms: f64,
    pub disk_exceptions: u32,
    pub mof_losses: u32,
    pub net_delays: u32,
    pub net_delay_factor: f64,
}

impl Default for RandomFaultSpec {
    fn default() -> Self {
        Self {
            count: 0,
            failure_ratio: 0.5,
            window_start_ms: 0,
            window_end_ms: 60_000,
            fail_duration_ms: None,
            slow_factor: 4.0,
            mean_delay_ms: 30_000.0,
            disk_exceptions: 0,
            mof_losses: 0,
            net_delays: 0,
            net_delay_factor: 4.0,
        }
    }
}

/// Expands a random fault mix into a concrete script. Node targets are
/// resolved here, so the script itself is reproducible from the seed.
pub fn expand_random_faults<R: Rng>(
    spec: &RandomFaultSpec,
    nodes: u32,
    rng: &mut R,
) -> Result<FaultScript, FaultError> {
    if !(0.0..=1.0).contains(&spec.failure_ratio) || spec.failure_ratio.is_nan() {
        return Err(FaultError::BadRatio(spec.failure_ratio));
    }
    if spec.window_end_ms < spec.window_start_ms {
        return Err(FaultError::BadWindow {
            start: spec.window_start_ms,
            end: spec.window_end_ms,
        });
    }
    let failures = (spec.failure_ratio * f64::from(spec.count)).round() as u32;
    let mut is_failure: Vec<bool> = (0..spec.count).map(|i| i < failures).collect();
    is_failure.shuffle(rng);

    let delay = Poisson::new(spec.mean_delay_ms.max(1.0)).expect("positive mean");
    let when = |rng: &mut R| -> Trigger {
        Trigger::At(SimTime(rng.random_range(spec.window_start_ms..=spec.window_end_ms)))
    };
    let mut entries = Vec::new();
    for fail in is_failure {
        let at = when(rng);
        let target = Target::Node(NodeId(rng.random_range(0..nodes.max(1))));
        let kind = if fail {
            FaultKind::NodeFail {
                duration_ms: spec.fail_duration_ms,
            }
        } else {
            FaultKind::NodeSlow {
                factor: spec.slow_factor,
                duration_ms: (delay.sample(rng) as u64).max(1),
            }
        };
        entries.push(FaultEntry {
            at,
            kind,
            target,
            job: None,
        });
    }
    for _ in 0..spec.net_delays {
        let at = when(rng);
        let target = Target::Node(NodeId(rng.random_range(0..nodes.max(1))));
        entries.push(FaultEntry {
            at,
            kind: FaultKind::NetDelay {
                factor: spec.net_delay_factor,
                duration_ms: (delay.sample(rng) as u64).max(1),
            },
            target,
            job: None,
        });
    }
    for _ in 0..spec.disk_exceptions {
        entries.push(FaultEntry {
            at: when(rng),
            kind: FaultKind::DiskException,
            target: Target::RandomRunningMap,
            job: None,
        });
    }
    for _ in 0..spec.mof_losses {
        entries.push(FaultEntry {
            at: when(rng),
            kind: FaultKind::MofLoss,
            target: Target::RandomCompletedMap,
            job: None,
        });
    }
    Ok(FaultScript::new(entries))
}
