//! Speculation policies and the directives they hand back to the simulator.

pub mod baseline;
pub mod bino;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cluster::HeartbeatReport;
use crate::ids::{AttemptId, NodeId, TaskId};
use crate::simulation::World;

pub use baseline::{BaselineConfig, BaselineSpeculator};
pub use bino::{BinoConfig, BinoSpeculator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Serial speculation with a fixed delay.
    Yarn,
    /// Neighborhood glance, collective speculation and rollback.
    Bino,
    /// No speculation at all; failed attempts are simply relaunched. Used for
    /// fault-free reference runs.
    Off,
}

impl PolicyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Yarn => "yarn",
            PolicyKind::Bino => "bino",
            PolicyKind::Off => "off",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "yarn" => Ok(PolicyKind::Yarn),
            "bino" => Ok(PolicyKind::Bino),
            "off" => Ok(PolicyKind::Off),
            other => Err(format!("unknown policy `{other}` (expected yarn or bino)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Placement {
    /// Only this node will do; the request waits for a slot there.
    Node(NodeId),
    /// Try these in order, then any node.
    Prefer(Vec<NodeId>),
    Anywhere,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LaunchReason {
    /// First attempt of a task.
    Original,
    /// Replacement for a failed attempt, from scratch.
    Relaunch,
    /// Map re-run after reducers reported its output lost.
    Reexecution,
    /// Extra copy of a running straggler.
    Speculative,
    /// Extra copy of a completed map whose output is at risk.
    CompletedTask,
    /// Replacement on the original node resuming from the last spill.
    RollbackResume,
    /// From-scratch copy racing a rollback resume.
    RollbackFresh,
}

impl LaunchReason {
    /// Launches that add redundancy rather than replace a lost attempt.
    pub fn is_speculative(self) -> bool {
        matches!(
            self,
            LaunchReason::Speculative | LaunchReason::CompletedTask | LaunchReason::RollbackFresh
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LaunchReason::Original => "original",
            LaunchReason::Relaunch => "relaunch",
            LaunchReason::Reexecution => "reexecution",
            LaunchReason::Speculative => "speculative",
            LaunchReason::CompletedTask => "completed_task",
            LaunchReason::RollbackResume => "rollback_resume",
            LaunchReason::RollbackFresh => "rollback_fresh",
        }
    }
}

/// Launch an attempt of `task`, optionally resuming from the spill log of
/// `resume_from`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeculationDecision {
    pub task: TaskId,
    pub placement: Placement,
    pub avoid: Vec<NodeId>,
    pub resume_from: Option<AttemptId>,
    pub reason: LaunchReason,
    /// Running attempts to kill when this one launches, e.g. ones stuck on
    /// a node the policy considers dead. They no longer count towards the
    /// task's running attempts.
    pub abandon: Vec<AttemptId>,
}

impl SpeculationDecision {
    pub fn new(task: TaskId, placement: Placement, reason: LaunchReason) -> Self {
        Self {
            task,
            placement,
            avoid: Vec::new(),
            resume_from: None,
            reason,
            abandon: Vec::new(),
        }
    }

    pub fn avoiding(mut self, nodes: impl IntoIterator<Item = NodeId>) -> Self {
        self.avoid.extend(nodes);
        self.avoid.sort();
        self.avoid.dedup();
        self
    }

    pub fn resuming(mut self, attempt: AttemptId) -> Self {
        self.resume_from = Some(attempt);
        self
    }

    pub fn abandoning(mut self, attempts: impl IntoIterator<Item = AttemptId>) -> Self {
        self.abandon.extend(attempts);
        self
    }
}

/// Why an attempt stopped running without succeeding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureCause {
    DiskException,
    Timeout,
    NodeRestart,
}

/// Hooks the simulator calls; each returns launch directives.
pub trait Speculator {
    fn kind(&self) -> PolicyKind;

    fn on_wakeup(&mut self, world: &World) -> Vec<SpeculationDecision>;

    fn on_heartbeat(&mut self, _world: &World, _report: &HeartbeatReport) -> Vec<SpeculationDecision> {
        Vec::new()
    }

    /// Cadence of `on_progress_check`, if the policy wants one.
    fn progress_check_interval(&self) -> Option<u64> {
        None
    }

    fn on_progress_check(&mut self, _world: &World) -> Vec<SpeculationDecision> {
        Vec::new()
    }

    /// A reducer failed to fetch `map`'s output; `consecutive` counts the
    /// failures since that reducer's last successful fetch of it.
    fn on_fetch_failure(
        &mut self,
        _world: &World,
        _reduce_attempt: AttemptId,
        _map: TaskId,
        _consecutive: u32,
    ) -> Vec<SpeculationDecision> {
        Vec::new()
    }

    /// The attempt has failed and its task has no other running attempt.
    fn on_attempt_failed(
        &mut self,
        world: &World,
        attempt: AttemptId,
        cause: FailureCause,
    ) -> Vec<SpeculationDecision>;

    fn on_launch(&mut self, _world: &World, _attempt: AttemptId, _decision: &SpeculationDecision) {}

    fn report(&self) -> PolicyReport {
        PolicyReport::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Assessment {
    Spatial,
    Temporal,
    Failure,
    FetchFailures,
}

/// A node flagged for a job (or, for failures, for every job on it).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Detection {
    pub at: u64,
    pub node: NodeId,
    pub job: Option<crate::ids::JobId>,
    pub assessment: Assessment,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WaveRecord {
    pub episode: u32,
    /// `None` for the copies placed inside the straggler's neighborhood.
    pub wave: Option<u32>,
    pub at: u64,
    pub planned: u32,
    pub launched: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PolicyReport {
    pub detections: Vec<Detection>,
    pub waves: Vec<WaveRecord>,
}

/// Failed attempts are relaunched from scratch, preferring the job's home
/// node.
pub fn relaunch_from_scratch(world: &World, attempt: AttemptId) -> Vec<SpeculationDecision> {
    let a = world.attempt(attempt);
    let home = world.job(a.task.job).home_node;
    vec![SpeculationDecision::new(
        a.task,
        Placement::Prefer(vec![home]),
        LaunchReason::Relaunch,
    )]
}

pub fn make_policy(
    kind: PolicyKind,
    baseline: &BaselineConfig,
    bino: &BinoConfig,
) -> Box<dyn Speculator + Send> {
    match kind {
        PolicyKind::Yarn => Box::new(BaselineSpeculator::new(baseline.clone())),
        PolicyKind::Off => Box::new(BaselineSpeculator::disabled(baseline.clone())),
        PolicyKind::Bino => Box::new(BinoSpeculator::new(bino.clone())),
    }
}
