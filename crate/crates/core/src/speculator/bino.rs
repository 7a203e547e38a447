//! Binocular speculation: neighborhood glance for detection, collective
//! waves for launching copies, and rollback for failed maps.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::{
    Assessment, Detection, FailureCause, LaunchReason, Placement, PolicyKind, PolicyReport,
    SpeculationDecision, Speculator, WaveRecord,
};
use super::baseline::ROUNDING_MARGIN;
use crate::cluster::HeartbeatReport;
use crate::ids::{AttemptId, JobId, NodeId, TaskId, TaskKind};
use crate::mapreduce::{progress_rate, AttemptState, JobState, MofStatus, TaskAttempt, TaskState};
use crate::sim::SimTime;
use crate::simulation::World;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct AssessFlags {
    pub spatial: bool,
    pub temporal: bool,
    pub failure: bool,
}

impl Default for AssessFlags {
    fn default() -> Self {
        Self {
            spatial: true,
            temporal: true,
            failure: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct BinoConfig {
    pub threshold_slowdown: f64,
    /// Length of the lost-responsiveness window.
    pub window_len: usize,
    pub coll_init_num: u32,
    pub coll_multiply: u32,
    pub progress_check_interval_ms: u64,
    pub safety_factor: f64,
    pub speculator_interval_ms: u64,
    /// Leave the assessed node out of its neighborhood's mean and deviation.
    pub spatial_exclude_self: bool,
    pub assess: AssessFlags,
}

impl Default for BinoConfig {
    fn default() -> Self {
        Self {
            threshold_slowdown: 0.1,
            window_len: 4,
            coll_init_num: 1,
            coll_multiply: 2,
            progress_check_interval_ms: 500,
            safety_factor: 1.5,
            speculator_interval_ms: 1000,
            spatial_exclude_self: false,
            assess: AssessFlags::default(),
        }
    }
}

impl BinoConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.threshold_slowdown > 0.0 && self.threshold_slowdown < 1.0) {
            return Err("threshold_slowdown must lie in (0, 1)".into());
        }
        if self.coll_init_num < 1 || self.coll_multiply < 1 {
            return Err("coll_init_num and coll_multiply must be at least 1".into());
        }
        if self.window_len < 1 {
            return Err("window_len must be at least 1".into());
        }
        if self.progress_check_interval_ms == 0 || self.speculator_interval_ms == 0 {
            return Err("bino intervals must be positive".into());
        }
        if !(self.safety_factor > 0.0) {
            return Err("safety_factor must be positive".into());
        }
        Ok(())
    }
}

/// Mean progress rate of one job's attempts on one node.
pub fn node_progress_rate(rates: &[f64]) -> Option<f64> {
    if rates.is_empty() {
        None
    } else {
        Some(rates.iter().sum::<f64>() / rates.len() as f64)
    }
}

/// Mean and population standard deviation.
pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Slow verdict for every member of a neighborhood. Members with no defined
/// rate are never slow; with fewer than two defined rates nobody is. A rate
/// within a relative rounding margin of the cut counts as on it, so equal
/// rates and the two-node `mean - std == min` case are not flagged.
pub fn spatial_assess(rates: &[Option<f64>], exclude_self: bool) -> Vec<bool> {
    let defined: Vec<(usize, f64)> = rates
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.map(|r| (i, r)))
        .collect();
    let mut out = vec![false; rates.len()];
    if defined.len() < 2 {
        return out;
    }
    for &(i, p) in &defined {
        let population: Vec<f64> = defined
            .iter()
            .filter(|(j, _)| !(exclude_self && *j == i))
            .map(|(_, r)| *r)
            .collect();
        let (mean, std) = mean_and_std(&population);
        out[i] = (mean - std) - p > ROUNDING_MARGIN * mean.abs();
    }
    out
}

/// Progress of a node's on-going attempts for one job at a heartbeat.
#[derive(Debug, Clone, PartialEq)]
pub struct ProgressSample {
    pub at: SimTime,
    pub progress: BTreeMap<AttemptId, f64>,
}

/// Change in summed progress per millisecond between two samples, counting
/// only the attempts in `keep`.
pub fn node_progress_change_rate(
    prev: &ProgressSample,
    cur: &ProgressSample,
    keep: &BTreeSet<AttemptId>,
) -> Option<f64> {
    if cur.at <= prev.at {
        return None;
    }
    let sum = |s: &ProgressSample| -> f64 {
        s.progress
            .iter()
            .filter(|(a, _)| keep.contains(a))
            .map(|(_, p)| *p)
            .sum()
    };
    Some((sum(cur) - sum(prev)) / cur.at.since(prev.at) as f64)
}

/// Slow iff the change rate fell below `threshold` times the previous one.
/// Abstains when the previous rate is not positive.
pub fn temporal_assess(prev_delta: f64, cur_delta: f64, threshold: f64) -> Option<bool> {
    if prev_delta <= 0.0 {
        None
    } else {
        Some(cur_delta < threshold * prev_delta)
    }
}

/// Temporal verdict from three consecutive samples, over the attempts
/// present in all of them.
pub fn temporal_from_samples(
    s: [&ProgressSample; 3],
    threshold: f64,
) -> Option<bool> {
    let keep: BTreeSet<AttemptId> = s[0]
        .progress
        .keys()
        .filter(|a| s[1].progress.contains_key(a) && s[2].progress.contains_key(a))
        .copied()
        .collect();
    if keep.is_empty() {
        return None;
    }
    let prev = node_progress_change_rate(s[0], s[1], &keep)?;
    let cur = node_progress_change_rate(s[1], s[2], &keep)?;
    temporal_assess(prev, cur, threshold)
}

pub fn failure_assess(now: SimTime, last_heartbeat: SimTime, threshold_ms: f64) -> bool {
    now.since(last_heartbeat) as f64 > threshold_ms
}

pub fn wave_size(init: u32, mult: u32, wave: u32) -> u64 {
    u64::from(init).saturating_mul(u64::from(mult).saturating_pow(wave))
}

#[derive(Debug, Clone)]
struct Monitor {
    task: TaskId,
    original: Option<AttemptId>,
    copy: Option<AttemptId>,
}

#[derive(Debug, Clone)]
struct Episode {
    id: u32,
    job: JobId,
    origin: NodeId,
    remaining: VecDeque<(TaskId, LaunchReason)>,
    next_wave: u32,
    monitor: Option<Monitor>,
    done: bool,
}

pub struct BinoSpeculator {
    config: BinoConfig,
    suspected: BTreeSet<NodeId>,
    slow: BTreeSet<(NodeId, JobId)>,
    samples: BTreeMap<(NodeId, JobId), VecDeque<ProgressSample>>,
    episodes: Vec<Episode>,
    /// Planned copies not yet launched, mapped to their wave record.
    planned: BTreeMap<TaskId, usize>,
    report: PolicyReport,
}

impl BinoSpeculator {
    pub fn new(config: BinoConfig) -> Self {
        Self {
            config,
            suspected: BTreeSet::new(),
            slow: BTreeSet::new(),
            samples: BTreeMap::new(),
            episodes: Vec::new(),
            planned: BTreeMap::new(),
            report: PolicyReport::default(),
        }
    }

    fn is_bad(&self, node: NodeId, job: JobId) -> bool {
        self.suspected.contains(&node) || self.slow.contains(&(node, job))
    }

    fn in_episode(&self, task: TaskId) -> bool {
        self.planned.contains_key(&task)
            || self
                .episodes
                .iter()
                .any(|e| !e.done && e.remaining.iter().any(|(t, _)| *t == task))
    }

    /// Tasks of `job` that depend on `node` and have no healthy copy.
    fn stragglers(&self, world: &World, node: NodeId, job: JobId, completed_too: bool) -> Vec<(TaskId, LaunchReason)> {
        let j = world.job(job);
        let mut out = Vec::new();
        for t in j.tasks() {
            if self.in_episode(t.id) {
                continue;
            }
            // A queued request waits for the running attempts to end, which
            // never happens on a dead node.
            if world.has_queued(t.id) && !world.running_attempts(t.id).any(|a| a.node == node) {
                continue;
            }
            let mut here = false;
            let mut healthy_elsewhere = false;
            for a in world.running_attempts(t.id) {
                if a.node == node {
                    here = true;
                } else if !self.is_bad(a.node, job) {
                    healthy_elsewhere = true;
                }
            }
            if here && !healthy_elsewhere {
                // A re-run of a finished map is still a re-run.
                let reason = if t.state == TaskState::Succeeded {
                    LaunchReason::CompletedTask
                } else {
                    LaunchReason::Speculative
                };
                out.push((t.id, reason));
                continue;
            }
            if completed_too
                && t.id.kind == TaskKind::Map
                && t.state == TaskState::Succeeded
                && !here
                && !healthy_elsewhere
                && !j.all_reduces_done()
                && !j.reduce_tasks.is_empty()
            {
                let reachable = t.outputs.iter().any(|m| {
                    let mof = &world.mofs[m.0 as usize];
                    mof.status == MofStatus::Available && !self.suspected.contains(&mof.node)
                });
                if !reachable {
                    out.push((t.id, LaunchReason::CompletedTask));
                }
            }
        }
        out
    }

    /// A copy of `task` that gives up on attempts stuck on suspected nodes.
    fn decision(&self, world: &World, task: TaskId, placement: Placement, reason: LaunchReason) -> SpeculationDecision {
        let dead = world
            .running_attempts(task)
            .filter(|a| self.suspected.contains(&a.node))
            .map(|a| a.id);
        SpeculationDecision::new(task, placement, reason).abandoning(dead)
    }

    fn avoid_for(&self, origin: NodeId, job: JobId) -> Vec<NodeId> {
        let mut v: Vec<NodeId> = self.suspected.iter().copied().collect();
        v.extend(self.slow.iter().filter(|(_, j)| *j == job).map(|(n, _)| *n));
        v.push(origin);
        v
    }

    fn start_episode(
        &mut self,
        world: &World,
        job: JobId,
        origin: NodeId,
        stragglers: Vec<(TaskId, LaunchReason)>,
        reserved: &mut BTreeMap<NodeId, u32>,
    ) -> Vec<SpeculationDecision> {
        if stragglers.is_empty() {
            return Vec::new();
        }
        let id = self.episodes.len() as u32;
        let mut remaining: VecDeque<_> = stragglers.into();
        let mut out = Vec::new();

        // Neighbors first, as far as their free slots go.
        let avoid = self.avoid_for(origin, job);
        let members = world.cluster.neighborhood(origin).members.clone();
        let mut placed = 0;
        for n in members {
            if avoid.contains(&n) {
                continue;
            }
            let taken = reserved.entry(n).or_insert(0);
            let free = world.cluster.node(n).free_slots().saturating_sub(*taken);
            for _ in 0..free {
                let Some((task, reason)) = remaining.pop_front() else {
                    break;
                };
                *taken += 1;
                placed += 1;
                out.push(self.decision(world, task, Placement::Node(n), reason));
            }
        }
        if placed > 0 {
            let rec = self.report.waves.len();
            self.report.waves.push(WaveRecord {
                episode: id,
                wave: None,
                at: world.now.0,
                planned: placed,
                launched: 0,
            });
            for d in &out {
                self.planned.insert(d.task, rec);
            }
        }
        let mut ep = Episode {
            id,
            job,
            origin,
            remaining,
            next_wave: 0,
            monitor: None,
            done: false,
        };
        out.extend(self.launch_wave(world, &mut ep));
        self.episodes.push(ep);
        out
    }

    fn launch_wave(&mut self, world: &World, ep: &mut Episode) -> Vec<SpeculationDecision> {
        // Drop entries that no longer need a copy.
        ep.remaining.retain(|(t, reason)| {
            let task = world.task(*t);
            let covered = world.running_attempts(*t).any(|a| !self.is_bad(a.node, ep.job));
            let finished = task.state == TaskState::Succeeded;
            !covered && finished == (*reason == LaunchReason::CompletedTask)
        });
        if ep.remaining.is_empty() {
            ep.done = true;
            ep.monitor = None;
            return Vec::new();
        }
        let size = wave_size(self.config.coll_init_num, self.config.coll_multiply, ep.next_wave)
            .min(ep.remaining.len() as u64) as usize;
        let avoid = self.avoid_for(ep.origin, ep.job);
        let neighborhood = &world.cluster.neighborhood(ep.origin).members;
        let outside: Vec<NodeId> = world
            .cluster
            .nodes
            .iter()
            .map(|n| n.id)
            .filter(|n| !neighborhood.contains(n) && !avoid.contains(n))
            .collect();
        let rec = self.report.waves.len();
        self.report.waves.push(WaveRecord {
            episode: ep.id,
            wave: Some(ep.next_wave),
            at: world.now.0,
            planned: size as u32,
            launched: 0,
        });
        let mut out = Vec::with_capacity(size);
        for _ in 0..size {
            let (task, reason) = ep.remaining.pop_front().expect("sized above");
            self.planned.insert(task, rec);
            out.push(
                self.decision(world, task, Placement::Prefer(outside.clone()), reason)
                    .avoiding(avoid.iter().copied()),
            );
        }
        let first = out[0].task;
        ep.monitor = Some(Monitor {
            task: first,
            original: world.running_attempts(first).next().map(|a| a.id),
            copy: None,
        });
        ep.next_wave += 1;
        out
    }

    fn flag_slow(&mut self, world: &World, node: NodeId, job: JobId, how: Assessment) -> Vec<SpeculationDecision> {
        if self.slow.insert((node, job)) {
            self.report.detections.push(Detection {
                at: world.now.0,
                node,
                job: Some(job),
                assessment: how,
            });
        }
        let stragglers = self.stragglers(world, node, job, false);
        let mut reserved = BTreeMap::new();
        self.start_episode(world, job, node, stragglers, &mut reserved)
    }

    fn failure_pass(&mut self, world: &World) -> Vec<SpeculationDecision> {
        let mut out = Vec::new();
        let mut reserved = BTreeMap::new();
        for node in &world.cluster.nodes {
            if self.suspected.contains(&node.id) {
                continue;
            }
            if !failure_assess(world.now, node.last_heartbeat_at, node.responsiveness.fail_threshold()) {
                continue;
            }
            self.suspected.insert(node.id);
            self.report.detections.push(Detection {
                at: world.now.0,
                node: node.id,
                job: None,
                assessment: Assessment::Failure,
            });
            for job in world.jobs.iter().filter(|j| j.state == JobState::Running) {
                let s = self.stragglers(world, node.id, job.id, true);
                out.extend(self.start_episode(world, job.id, node.id, s, &mut reserved));
            }
        }
        out
    }

    fn spatial_pass(&mut self, world: &World) -> Vec<SpeculationDecision> {
        let mut flagged = Vec::new();
        for job in world.jobs.iter().filter(|j| j.state == JobState::Running) {
            for kind in [TaskKind::Map, TaskKind::Reduce] {
                for nh in &world.cluster.neighborhoods {
                    let members: Vec<NodeId> = nh
                        .members
                        .iter()
                        .copied()
                        .filter(|n| !self.suspected.contains(n))
                        .collect();
                    let rates: Vec<Option<f64>> = members
                        .iter()
                        .map(|n| {
                            let r: Vec<f64> = world
                                .attempts_on(*n)
                                .filter(|a| a.task.job == job.id && a.task.kind == kind && !a.is_blocked())
                                .filter_map(progress_rate)
                                .collect();
                            node_progress_rate(&r)
                        })
                        .collect();
                    let verdicts = spatial_assess(&rates, self.config.spatial_exclude_self);
                    for (i, slow) in verdicts.into_iter().enumerate() {
                        if slow {
                            flagged.push((members[i], job.id));
                        }
                    }
                }
            }
        }
        flagged.dedup();
        let mut out = Vec::new();
        for (node, job) in flagged {
            out.extend(self.flag_slow(world, node, job, Assessment::Spatial));
        }
        out
    }

    fn rate(a: &TaskAttempt) -> f64 {
        progress_rate(a).unwrap_or(0.0)
    }
}

impl Speculator for BinoSpeculator {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Bino
    }

    fn on_wakeup(&mut self, world: &World) -> Vec<SpeculationDecision> {
        let finished: BTreeSet<JobId> = world
            .jobs
            .iter()
            .filter(|j| j.is_finished())
            .map(|j| j.id)
            .collect();
        self.slow.retain(|(_, j)| !finished.contains(j));
        self.samples.retain(|(_, j), _| !finished.contains(j));
        for ep in &mut self.episodes {
            if finished.contains(&ep.job) {
                ep.done = true;
            }
        }
        let mut out = Vec::new();
        if self.config.assess.failure {
            out.extend(self.failure_pass(world));
        }
        if self.config.assess.spatial {
            out.extend(self.spatial_pass(world));
        }
        out
    }

    fn on_heartbeat(&mut self, world: &World, report: &HeartbeatReport) -> Vec<SpeculationDecision> {
        let node = report.node;
        if report.gap_ms > world.cluster.heartbeat_interval() {
            self.suspected.remove(&node);
        }
        if !self.config.assess.temporal {
            return Vec::new();
        }
        let mut by_job: BTreeMap<JobId, Vec<&TaskAttempt>> = BTreeMap::new();
        for id in &report.attempts {
            let a = world.attempt(*id);
            if a.is_running() && !a.is_blocked() {
                by_job.entry(a.task.job).or_default().push(a);
            }
        }
        let mut out = Vec::new();
        for (job, attempts) in by_job {
            let q = self.samples.entry((node, job)).or_default();
            // A reducer that waited on missing input since the last sample
            // says nothing about the node's speed over that interval.
            let since = q.back().map(|s| s.at).unwrap_or(SimTime::ZERO);
            let progress = attempts
                .into_iter()
                .filter(|a| q.is_empty() || !a.blocked_after(since))
                .map(|a| (a.id, a.progress))
                .collect();
            q.push_back(ProgressSample { at: report.at, progress });
            while q.len() > 3 {
                q.pop_front();
            }
            if q.len() < 3 {
                continue;
            }
            let verdict = temporal_from_samples([&q[0], &q[1], &q[2]], self.config.threshold_slowdown);
            if verdict == Some(true) {
                out.extend(self.flag_slow(world, node, job, Assessment::Temporal));
            }
        }
        out
    }

    fn progress_check_interval(&self) -> Option<u64> {
        Some(self.config.progress_check_interval_ms)
    }

    fn on_progress_check(&mut self, world: &World) -> Vec<SpeculationDecision> {
        self.planned.retain(|t, _| world.has_queued(*t));
        let mut out = Vec::new();
        let mut episodes = std::mem::take(&mut self.episodes);
        for ep in episodes.iter_mut().filter(|e| !e.done) {
            if world.job(ep.job).is_finished() {
                ep.done = true;
                continue;
            }
            let Some(m) = &ep.monitor else {
                continue;
            };
            let Some(copy) = m.copy else {
                // Dropped before it could launch: move on to the next wave.
                if !world.has_queued(m.task) {
                    out.extend(self.launch_wave(world, ep));
                }
                continue;
            };
            let copy = world.attempt(copy);
            let original = m.original.map(|a| world.attempt(a));
            let advance = match (copy.state, original) {
                (AttemptState::Succeeded, _) => true,
                (_, Some(o)) if o.state == AttemptState::Succeeded => {
                    // The original won; the node was not as slow as it looked.
                    ep.done = true;
                    ep.monitor = None;
                    false
                }
                (AttemptState::Running, Some(o)) => Self::rate(copy) > Self::rate(o),
                (AttemptState::Running, None) => copy.progress > 0.0,
                _ => true,
            };
            if advance {
                out.extend(self.launch_wave(world, ep));
            }
        }
        // Episodes created while planning above are appended after the old ones.
        episodes.append(&mut self.episodes);
        self.episodes = episodes;
        out
    }

    fn on_fetch_failure(
        &mut self,
        world: &World,
        _reduce_attempt: AttemptId,
        map: TaskId,
        consecutive: u32,
    ) -> Vec<SpeculationDecision> {
        if consecutive != 2 {
            return Vec::new();
        }
        let task = world.task(map);
        if task.state != TaskState::Succeeded
            || world.running_attempts(map).next().is_some()
            || world.has_queued(map)
            || self.in_episode(map)
        {
            return Vec::new();
        }
        let origin = task
            .outputs
            .first()
            .map(|m| world.mofs[m.0 as usize].node)
            .unwrap_or(world.job(map.job).home_node);
        self.report.detections.push(Detection {
            at: world.now.0,
            node: origin,
            job: Some(map.job),
            assessment: Assessment::FetchFailures,
        });
        let mut reserved = BTreeMap::new();
        self.start_episode(world, map.job, origin, vec![(map, LaunchReason::CompletedTask)], &mut reserved)
    }

    fn on_attempt_failed(
        &mut self,
        world: &World,
        attempt: AttemptId,
        _cause: FailureCause,
    ) -> Vec<SpeculationDecision> {
        let a = world.attempt(attempt);
        let job = a.task.job;
        let origin = a.node;
        let origin_ok = !self.is_bad(origin, job) && !world.cluster.node(origin).health.is_failed();
        match a.task.kind {
            TaskKind::Map => {
                let fast = fast_node(world, job, |n| n != origin && !self.is_bad(n, job));
                let fresh_place = Placement::Prefer(fast.into_iter().collect());
                let mut out = Vec::new();
                if origin_ok {
                    let mut resume =
                        SpeculationDecision::new(a.task, Placement::Node(origin), LaunchReason::RollbackResume);
                    if a.spill_log().map(|l| !l.entries.is_empty()).unwrap_or(false) {
                        resume = resume.resuming(attempt);
                    }
                    out.push(resume);
                    out.push(
                        SpeculationDecision::new(a.task, fresh_place, LaunchReason::RollbackFresh)
                            .avoiding(self.avoid_for(origin, job)),
                    );
                } else {
                    out.push(
                        SpeculationDecision::new(a.task, fresh_place, LaunchReason::Relaunch)
                            .avoiding(self.avoid_for(origin, job)),
                    );
                }
                out
            }
            TaskKind::Reduce => {
                let home = world.job(job).home_node;
                let mut avoid: Vec<NodeId> = self.suspected.iter().copied().collect();
                if !origin_ok {
                    avoid.push(origin);
                }
                vec![SpeculationDecision::new(a.task, Placement::Prefer(vec![home]), LaunchReason::Relaunch)
                    .avoiding(avoid)]
            }
        }
    }

    fn on_launch(&mut self, _world: &World, attempt: AttemptId, decision: &SpeculationDecision) {
        if let Some(rec) = self.planned.remove(&decision.task) {
            self.report.waves[rec].launched += 1;
        }
        for ep in self.episodes.iter_mut().filter(|e| !e.done) {
            if let Some(m) = ep.monitor.as_mut() {
                if m.task == decision.task && m.copy.is_none() {
                    m.copy = Some(attempt);
                }
            }
        }
    }

    fn report(&self) -> PolicyReport {
        self.report.clone()
    }
}

/// Node with the highest mean progress rate for `job` among those accepted by
/// `ok`; ties go to the lowest id.
pub fn fast_node(world: &World, job: JobId, ok: impl Fn(NodeId) -> bool) -> Option<NodeId> {
    let mut best: Option<(f64, NodeId)> = None;
    for node in &world.cluster.nodes {
        if !ok(node.id) || node.health.is_failed() {
            continue;
        }
        let rates: Vec<f64> = world
            .attempts_on(node.id)
            .filter(|a| a.task.job == job)
            .filter_map(progress_rate)
            .collect();
        if let Some(p) = node_progress_rate(&rates) {
            if best.map(|(b, _)| p > b).unwrap_or(true) {
                best = Some((p, node.id));
            }
        }
    }
    best.map(|(_, n)| n)
}
