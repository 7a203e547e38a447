//! Serial speculation: at most one straggler per job per wakeup, a fixed
//! delay between launches, and a per-job cap on copies in flight.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    relaunch_from_scratch, FailureCause, LaunchReason, Placement, PolicyKind, SpeculationDecision,
    Speculator,
};
use crate::ids::{AttemptId, JobId, TaskId, TaskKind};
use crate::mapreduce::{progress_rate, JobState};
use crate::sim::SimTime;
use crate::simulation::World;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub speculator_interval_ms: u64,
    pub fixed_delay_between_speculations_ms: u64,
    /// Standard deviations below the mean progress rate.
    pub slow_task_threshold: f64,
    pub per_job_concurrent_speculation_cap: u32,
    pub task_timeout_ms: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            speculator_interval_ms: 1000,
            fixed_delay_between_speculations_ms: 15_000,
            slow_task_threshold: 1.0,
            per_job_concurrent_speculation_cap: 1,
            task_timeout_ms: 600_000,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.speculator_interval_ms == 0
            || self.fixed_delay_between_speculations_ms == 0
            || self.task_timeout_ms == 0
        {
            return Err("baseline durations must be positive".into());
        }
        if !(self.slow_task_threshold >= 0.0) {
            return Err("slow_task_threshold must be non-negative".into());
        }
        Ok(())
    }
}

/// One running task's rate as seen by the assessment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskRate {
    pub task: TaskId,
    pub rate: f64,
}

/// Relative margin below which a rate is treated as sitting on the cut.
pub const ROUNDING_MARGIN: f64 = 1e-9;

/// Picks the slowest task whose rate is more than `threshold` population
/// standard deviations below the mean, ties broken by task id.
pub fn pick_straggler(rates: &[TaskRate], threshold: f64) -> Option<TaskId> {
    if rates.len() < 2 {
        return None;
    }
    let n = rates.len() as f64;
    let mean = rates.iter().map(|r| r.rate).sum::<f64>() / n;
    let var = rates.iter().map(|r| (r.rate - mean).powi(2)).sum::<f64>() / n;
    let cut = mean - threshold * var.sqrt();
    rates
        .iter()
        // The margin keeps rounding noise from splitting equal rates.
        .filter(|r| cut - r.rate > ROUNDING_MARGIN * mean.abs())
        .min_by(|a, b| a.rate.total_cmp(&b.rate).then(a.task.cmp(&b.task)))
        .map(|r| r.task)
}

pub struct BaselineSpeculator {
    config: BaselineConfig,
    enabled: bool,
    last_speculation: BTreeMap<JobId, SimTime>,
}

impl BaselineSpeculator {
    pub fn new(config: BaselineConfig) -> Self {
        Self {
            config,
            enabled: true,
            last_speculation: BTreeMap::new(),
        }
    }

    /// Same failure handling, never speculates.
    pub fn disabled(config: BaselineConfig) -> Self {
        Self {
            enabled: false,
            ..Self::new(config)
        }
    }

    fn assess_job(&self, world: &World, job: JobId) -> Option<TaskId> {
        let j = world.job(job);
        let in_flight = world.speculations_in_flight(job);
        if in_flight >= self.config.per_job_concurrent_speculation_cap as usize {
            return None;
        }
        if let Some(last) = self.last_speculation.get(&job) {
            if world.now.since(*last) < self.config.fixed_delay_between_speculations_ms {
                return None;
            }
        }
        let mut picks = Vec::new();
        for kind in [TaskKind::Map, TaskKind::Reduce] {
            let mut rates = Vec::new();
            for t in j.tasks().filter(|t| t.id.kind == kind) {
                let mut running = world.running_attempts(t.id);
                let (Some(a), None) = (running.next(), running.next()) else {
                    continue;
                };
                if world.has_queued(t.id) {
                    continue;
                }
                if let Some(rate) = progress_rate(a) {
                    rates.push(TaskRate { task: t.id, rate });
                }
            }
            if let Some(task) = pick_straggler(&rates, self.config.slow_task_threshold) {
                let rate = rates.iter().find(|r| r.task == task).unwrap().rate;
                picks.push((rate, task));
            }
        }
        picks
            .into_iter()
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .map(|(_, t)| t)
    }
}

impl Speculator for BaselineSpeculator {
    fn kind(&self) -> PolicyKind {
        if self.enabled {
            PolicyKind::Yarn
        } else {
            PolicyKind::Off
        }
    }

    fn on_wakeup(&mut self, world: &World) -> Vec<SpeculationDecision> {
        if !self.enabled {
            return Vec::new();
        }
        let mut out = Vec::new();
        for job in world.jobs.iter().filter(|j| j.state == JobState::Running) {
            if let Some(task) = self.assess_job(world, job.id) {
                let original = world.running_attempts(task).next().map(|a| a.node);
                self.last_speculation.insert(job.id, world.now);
                out.push(
                    SpeculationDecision::new(task, Placement::Anywhere, LaunchReason::Speculative)
                        .avoiding(original),
                );
            }
        }
        out
    }

    fn on_attempt_failed(
        &mut self,
        world: &World,
        attempt: AttemptId,
        _cause: FailureCause,
    ) -> Vec<SpeculationDecision> {
        relaunch_from_scratch(world, attempt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::JobId;

    fn rates(v: &[f64]) -> Vec<TaskRate> {
        v.iter()
            .enumerate()
            .map(|(i, r)| TaskRate {
                task: TaskId::map(JobId(0), i as u32),
                rate: *r,
            })
            .collect()
    }

    #[test]
    fn equal_rates_never_speculate() {
        assert_eq!(pick_straggler(&rates(&[3e-5; 6]), 1.0), None);
    }

    #[test]
    fn only_the_slowest_is_picked() {
        let r = rates(&[3e-5, 3e-5, 3e-5, 3e-5, 1e-6, 2e-6]);
        assert_eq!(pick_straggler(&r, 1.0), Some(TaskId::map(JobId(0), 4)));
    }

    #[test]
    fn single_task_has_no_peers() {
        assert_eq!(pick_straggler(&rates(&[0.0]), 1.0), None);
    }

    #[test]
    fn defaults_validate() {
        assert!(BaselineConfig::default().validate().is_ok());
        let bad = BaselineConfig {
            task_timeout_ms: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
