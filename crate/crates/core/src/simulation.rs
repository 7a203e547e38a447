//! Cluster, jobs and policy wired to the event queue.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::{Cluster, ClusterConfig, Health};
use crate::fault::{FaultEntry, FaultKind, FaultScript, Target, Trigger};
use crate::ids::{AttemptId, JobId, NodeId, TaskId, TaskKind};
use crate::mapreduce::{
    advance_map_attempt, advance_reduce_attempt, kill_attempt, route_output, AttemptState,
    FetchSource, Job, JobProfile, JobSpec, JobState, MapOutputFile, MofId, MofStatus, Task,
    TaskAttempt, TaskState,
};
use crate::rng::{RngStreams, FAULTS, PLACEMENT};
use crate::sim::{EventKind, EventQueue, Payload, SimError, SimEvent, SimSummary, SimTime, Trace};
use crate::speculator::{
    make_policy, BaselineConfig, BinoConfig, FailureCause, LaunchReason, Placement, PolicyKind,
    PolicyReport, SpeculationDecision, Speculator,
};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SimSettings {
    /// Granularity of task progress updates.
    pub quantum_ms: u64,
    pub max_events: u64,
    /// Hard stop in virtual time; jobs still running are reported incomplete.
    pub until_ms: u64,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            quantum_ms: 100,
            max_events: 50_000_000,
            until_ms: 86_400_000,
        }
    }
}

/// Everything needed to run one simulation.
#[derive(Debug, Clone)]
pub struct SimInput {
    pub seed: u64,
    pub cluster: ClusterConfig,
    pub profile: JobProfile,
    pub jobs: Vec<JobSpec>,
    pub faults: FaultScript,
    pub policy: PolicyKind,
    pub baseline: BaselineConfig,
    pub bino: BinoConfig,
    pub settings: SimSettings,
    pub trace: bool,
}

#[derive(Debug, Clone)]
pub struct LaunchRequest {
    pub decision: SpeculationDecision,
    pub queued_at: SimTime,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LaunchRecord {
    pub at: u64,
    pub attempt: AttemptId,
    pub task: TaskId,
    pub node: NodeId,
    pub reason: LaunchReason,
    /// Spill index the attempt resumed from.
    pub resumed_from: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FetchFailureRecord {
    pub at: u64,
    pub job: JobId,
    pub reduce: u32,
    pub map: u32,
    pub consecutive: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FaultRecord {
    pub at: u64,
    pub entry: usize,
    pub kind: &'static str,
    pub detail: String,
}

/// Mutable simulation state visible to policies.
#[derive(Debug, Clone)]
pub struct World {
    pub now: SimTime,
    pub cluster: Cluster,
    pub profile: JobProfile,
    pub jobs: Vec<Job>,
    pub attempts: Vec<TaskAttempt>,
    pub mofs: Vec<MapOutputFile>,
    pub running: BTreeSet<AttemptId>,
    pub queues: BTreeMap<JobId, VecDeque<LaunchRequest>>,
    pub task_timeout_ms: u64,
    pub launches: Vec<LaunchRecord>,
    pub fetch_failures: Vec<FetchFailureRecord>,
    pub faults: Vec<FaultRecord>,
    pub warnings: Vec<String>,
}

impl World {
    pub fn job(&self, id: JobId) -> &Job {
        &self.jobs[id.0 as usize]
    }

    pub fn task(&self, id: TaskId) -> &Task {
        self.job(id.job).task(id)
    }

    pub fn attempt(&self, id: AttemptId) -> &TaskAttempt {
        &self.attempts[id.0 as usize]
    }

    pub fn running_attempts(&self, task: TaskId) -> impl Iterator<Item = &TaskAttempt> {
        self.task(task)
            .attempts
            .iter()
            .map(|a| self.attempt(*a))
            .filter(|a| a.is_running())
    }

    pub fn attempts_on(&self, node: NodeId) -> impl Iterator<Item = &TaskAttempt> {
        self.cluster
            .node(node)
            .running_attempts
            .iter()
            .map(|a| self.attempt(*a))
    }

    pub fn has_queued(&self, task: TaskId) -> bool {
        self.queues
            .get(&task.job)
            .map(|q| q.iter().any(|r| r.decision.task == task))
            .unwrap_or(false)
    }

    /// Speculative copies of `job` running or waiting for a container.
    pub fn speculations_in_flight(&self, job: JobId) -> usize {
        let running = self
            .running
            .iter()
            .map(|a| self.attempt(*a))
            .filter(|a| a.task.job == job && a.speculative)
            .count();
        let queued = self
            .queues
            .get(&job)
            .map(|q| q.iter().filter(|r| r.decision.reason.is_speculative()).count())
            .unwrap_or(0);
        running + queued
    }

    /// Where a reducer of `job` would fetch map `map`'s partition right now.
    /// The delay factor is that of the source node only.
    pub fn fetch_source(&self, job: JobId, map: u32) -> FetchSource {
        let task = &self.job(job).map_tasks[map as usize];
        if task.state != TaskState::Succeeded {
            return FetchSource::NotReady;
        }
        let routed = route_output(task, &self.mofs, |n| !self.cluster.node(n).health.is_failed());
        if let Some(mof) = routed {
            let node = self.mofs[mof.0 as usize].node;
            return FetchSource::Available {
                mof,
                delay_factor: self.cluster.node(node).net_delay,
            };
        }
        if self.running_attempts(task.id).next().is_some() {
            FetchSource::NotReady
        } else {
            FetchSource::Lost
        }
    }

    /// Mean map progress of a job: finished maps count fully, others by their
    /// furthest running attempt.
    pub fn map_phase_progress(&self, job: JobId) -> f64 {
        let j = self.job(job);
        let total: f64 = j
            .map_tasks
            .iter()
            .map(|t| {
                if t.state == TaskState::Succeeded {
                    1.0
                } else {
                    self.running_attempts(t.id).map(|a| a.progress).fold(0.0, f64::max)
                }
            })
            .sum();
        total / j.map_tasks.len() as f64
    }

    fn is_active(&self) -> bool {
        self.jobs.iter().any(|j| !j.is_finished())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Event {
    JobArrival(JobId),
    Heartbeat(NodeId),
    Quantum,
    Fault(usize),
    FaultEnd(usize),
    SpeculatorWakeup,
    ProgressCheck,
    FetchRetry { attempt: AttemptId, map: u32 },
    AttemptComplete(AttemptId),
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Event::JobArrival(j) => write!(f, "arrival {j}"),
            Event::Heartbeat(n) => write!(f, "heartbeat {n}"),
            Event::Quantum => f.write_str("quantum"),
            Event::Fault(i) => write!(f, "fault #{i}"),
            Event::FaultEnd(i) => write!(f, "fault-end #{i}"),
            Event::SpeculatorWakeup => f.write_str("wakeup"),
            Event::ProgressCheck => f.write_str("progress-check"),
            Event::FetchRetry { attempt, map } => write!(f, "fetch-retry {attempt} m{map}"),
            Event::AttemptComplete(a) => write!(f, "complete {a}"),
        }
    }
}

impl Payload for Event {
    fn kind(&self) -> EventKind {
        match self {
            Event::JobArrival(_) => EventKind::JobArrival,
            Event::Heartbeat(_) => EventKind::Heartbeat,
            Event::Quantum => EventKind::ProgressQuantum,
            Event::Fault(_) | Event::FaultEnd(_) => EventKind::FaultActivation,
            Event::SpeculatorWakeup | Event::ProgressCheck => EventKind::SpeculatorWakeup,
            Event::FetchRetry { .. } => EventKind::ShuffleFetch,
            Event::AttemptComplete(_) => EventKind::AttemptComplete,
        }
    }
}

pub struct SimOutcome {
    pub world: World,
    pub policy: PolicyKind,
    pub report: PolicyReport,
    pub summary: SimSummary,
    pub trace: Trace,
}

pub struct Simulation {
    world: World,
    policy: Box<dyn Speculator + Send>,
    settings: SimSettings,
    script: FaultScript,
    fired: Vec<bool>,
    /// Disk exceptions waiting for an attempt of the task to reach a spill.
    armed: BTreeMap<TaskId, (usize, u32)>,
    /// Node each node-level fault landed on, for restoring it later.
    fault_nodes: BTreeMap<usize, NodeId>,
    fault_rng: ChaCha8Rng,
    reduces_requested: BTreeSet<JobId>,
    wakeup_interval: u64,
    last_quantum: SimTime,
    sequence: u64,
}

pub fn run(input: &SimInput) -> Result<SimOutcome, SimError> {
    Simulation::new(input).run(input.settings.until_ms, input.trace)
}

impl Simulation {
    pub fn new(input: &SimInput) -> Self {
        let streams = RngStreams::new(input.seed);
        let mut placement = streams.stream(PLACEMENT);
        let nodes = input.cluster.nodes.max(1);
        let mut order: Vec<usize> = (0..input.jobs.len()).collect();
        order.sort_by_key(|&i| (input.jobs[i].arrival_ms, i));
        let jobs: Vec<Job> = order
            .iter()
            .enumerate()
            .map(|(id, &i)| {
                let spec = &input.jobs[i];
                let home = spec
                    .home_node
                    .map(|n| n.min(nodes - 1))
                    .unwrap_or_else(|| placement.random_range(0..nodes));
                Job::new(JobId(id as u32), spec, &input.profile, NodeId(home))
            })
            .collect();
        let (window, safety) = match input.policy {
            PolicyKind::Bino => (input.bino.window_len, input.bino.safety_factor),
            _ => (BinoConfig::default().window_len, BinoConfig::default().safety_factor),
        };
        let world = World {
            now: SimTime::ZERO,
            cluster: Cluster::new(&input.cluster, window.max(1), safety),
            profile: input.profile.clone(),
            jobs,
            attempts: Vec::new(),
            mofs: Vec::new(),
            running: BTreeSet::new(),
            queues: BTreeMap::new(),
            task_timeout_ms: input.baseline.task_timeout_ms,
            launches: Vec::new(),
            fetch_failures: Vec::new(),
            faults: Vec::new(),
            warnings: Vec::new(),
        };
        let wakeup_interval = match input.policy {
            PolicyKind::Bino => input.bino.speculator_interval_ms,
            _ => input.baseline.speculator_interval_ms,
        };
        Self {
            world,
            policy: make_policy(input.policy, &input.baseline, &input.bino),
            settings: input.settings.clone(),
            fired: vec![false; input.faults.len()],
            script: input.faults.clone(),
            armed: BTreeMap::new(),
            fault_nodes: BTreeMap::new(),
            fault_rng: streams.stream(FAULTS),
            reduces_requested: BTreeSet::new(),
            wakeup_interval: wakeup_interval.max(1),
            last_quantum: SimTime::ZERO,
            sequence: 0,
        }
    }

    pub fn run(mut self, until_ms: u64, trace: bool) -> Result<SimOutcome, SimError> {
        let mut queue = EventQueue::new();
        let mut trace = Trace::new(trace);
        self.setup(&mut queue)?;
        let summary = queue.run(
            Some(SimTime(until_ms)),
            self.settings.max_events,
            &mut trace,
            |q, tr, ev| self.handle(q, tr, ev),
        )?;
        let report = self.policy.report();
        Ok(SimOutcome {
            policy: self.policy.kind(),
            world: self.world,
            report,
            summary,
            trace,
        })
    }

    fn setup(&mut self, q: &mut EventQueue<Event>) -> Result<(), SimError> {
        for j in &self.world.jobs {
            q.schedule(j.arrival_time, Event::JobArrival(j.id))?;
        }
        let n = self.world.cluster.nodes.len() as u64;
        let hb = self.world.cluster.heartbeat_interval();
        for i in 0..n {
            q.schedule(SimTime(i * hb / n.max(1)), Event::Heartbeat(NodeId(i as u32)))?;
        }
        q.schedule(SimTime::ZERO, Event::Quantum)?;
        q.schedule(SimTime(self.wakeup_interval), Event::SpeculatorWakeup)?;
        if let Some(p) = self.policy.progress_check_interval() {
            q.schedule(SimTime(p.max(1)), Event::ProgressCheck)?;
        }
        for (i, e) in self.script.entries.clone().iter().enumerate() {
            match e.at {
                Trigger::At(t) => {
                    q.schedule(t, Event::Fault(i))?;
                }
                Trigger::Spill(k) => self.arm_disk_exception(i, e, k),
                Trigger::MapProgress(_) => {}
            }
        }
        Ok(())
    }

    fn arm_disk_exception(&mut self, idx: usize, e: &FaultEntry, spill: u32) {
        let job = e.job.unwrap_or(JobId(0));
        let Some(j) = self.world.jobs.get(job.0 as usize) else {
            self.warn(idx, format!("spill trigger names unknown job {job}"));
            return;
        };
        let maps = j.shape.maps;
        let index = match e.target {
            Target::Map(i) if i < maps => i,
            Target::RandomRunningMap | Target::RandomCompletedMap => self.fault_rng.random_range(0..maps),
            _ => {
                self.warn(idx, format!("spill trigger needs a map target, got {}", e.target));
                return;
            }
        };
        if !matches!(e.kind, FaultKind::DiskException) {
            self.warn(idx, "spill triggers only apply to disk exceptions".into());
            return;
        }
        self.armed.insert(TaskId::map(job, index), (idx, spill));
    }

    fn warn(&mut self, entry: usize, msg: String) {
        self.world.warnings.push(format!("t={} fault #{entry}: {msg}", self.world.now));
    }

    fn handle(&mut self, q: &mut EventQueue<Event>, tr: &mut Trace, ev: SimEvent<Event>) {
        self.world.now = ev.fire_at;
        self.sequence = ev.sequence;
        let warnings = self.world.warnings.len();
        match ev.payload {
            Event::JobArrival(j) => self.on_arrival(j),
            Event::Heartbeat(n) => self.on_heartbeat(q, n),
            Event::Quantum => self.on_quantum(q),
            Event::Fault(i) => self.activate(q, i),
            Event::FaultEnd(i) => self.deactivate(q, i),
            Event::SpeculatorWakeup => {
                let d = self.policy.on_wakeup(&self.world);
                self.enqueue(d);
                if self.world.is_active() {
                    q.schedule_in(self.wakeup_interval, Event::SpeculatorWakeup);
                }
            }
            Event::ProgressCheck => {
                let d = self.policy.on_progress_check(&self.world);
                self.enqueue(d);
                if self.world.is_active() {
                    let p = self.policy.progress_check_interval().unwrap_or(1000).max(1);
                    q.schedule_in(p, Event::ProgressCheck);
                }
            }
            Event::FetchRetry { attempt, map } => self.on_fetch_retry(q, attempt, map),
            Event::AttemptComplete(a) => self.on_complete(a),
        }
        self.try_schedule();
        for w in &self.world.warnings[warnings..] {
            tr.push(self.world.now, self.sequence, "warning", w.clone());
        }
    }

    fn on_arrival(&mut self, job: JobId) {
        let j = &mut self.world.jobs[job.0 as usize];
        j.state = JobState::Running;
        let home = j.home_node;
        let maps: Vec<TaskId> = j.map_tasks.iter().map(|t| t.id).collect();
        self.enqueue(
            maps.into_iter()
                .map(|t| SpeculationDecision::new(t, Placement::Prefer(vec![home]), LaunchReason::Original))
                .collect(),
        );
        self.maybe_request_reduces(job);
    }

    fn maybe_request_reduces(&mut self, job: JobId) {
        if self.reduces_requested.contains(&job) {
            return;
        }
        let j = self.world.job(job);
        let done = j.map_tasks.iter().filter(|t| t.state == TaskState::Succeeded).count() as f64;
        if done < self.world.profile.reduce_slowstart * j.map_tasks.len() as f64 {
            return;
        }
        self.reduces_requested.insert(job);
        let home = j.home_node;
        let reduces: Vec<TaskId> = j.reduce_tasks.iter().map(|t| t.id).collect();
        self.enqueue(
            reduces
                .into_iter()
                .map(|t| SpeculationDecision::new(t, Placement::Prefer(vec![home]), LaunchReason::Original))
                .collect(),
        );
    }

    fn enqueue(&mut self, decisions: Vec<SpeculationDecision>) {
        let now = self.world.now;
        for d in decisions {
            if self.world.job(d.task.job).is_finished() {
                continue;
            }
            self.world.queues.entry(d.task.job).or_default().push_back(LaunchRequest {
                decision: d,
                queued_at: now,
            });
        }
    }

    fn on_heartbeat(&mut self, q: &mut EventQueue<Event>, node: NodeId) {
        let now = self.world.now;
        let Some(report) = self.world.cluster.emit_heartbeat(node, now) else {
            return;
        };
        if report.gap_ms > self.world.cluster.heartbeat_interval() {
            self.world.cluster.record_resumed_node(node, report.gap_ms);
        }
        for a in &report.attempts {
            self.world.attempts[a.0 as usize].last_report_at = now;
        }
        let d = self.policy.on_heartbeat(&self.world, &report);
        self.enqueue(d);
        if self.world.is_active() {
            q.schedule(report.next_at, Event::Heartbeat(node))
                .expect("heartbeat lies in the future");
        }
    }

    fn on_quantum(&mut self, q: &mut EventQueue<Event>) {
        let now = self.world.now;
        let since = self.last_quantum;
        self.last_quantum = now;

        // Fetch sources are taken from the state at the start of the quantum.
        let mut sources: BTreeMap<JobId, Vec<FetchSource>> = BTreeMap::new();
        for id in &self.world.running {
            let a = self.world.attempt(*id);
            if a.task.kind == TaskKind::Reduce && !sources.contains_key(&a.task.job) {
                let maps = self.world.job(a.task.job).shape.maps;
                let v = (0..maps).map(|m| self.world.fetch_source(a.task.job, m)).collect();
                sources.insert(a.task.job, v);
            }
        }

        let mut completed = Vec::new();
        let mut disk_failed = Vec::new();
        let mut fetched = Vec::new();
        let mut failures = Vec::new();
        let running: Vec<AttemptId> = self.world.running.iter().copied().collect();
        for id in running {
            let w = &mut self.world;
            let a = &mut w.attempts[id.0 as usize];
            if !a.is_running() {
                continue;
            }
            // Attempts on dead nodes keep their progress while time moves on.
            a.progressed_at = now;
            let node = w.cluster.node(a.node);
            if node.health.is_failed() {
                continue;
            }
            let slow = node.health.slow_factor();
            let own_delay = node.net_delay;
            let dt = now.since(a.start_time.max(since)) as f64;
            if dt <= 0.0 {
                continue;
            }
            let job = &w.jobs[a.task.job.0 as usize];
            match a.task.kind {
                TaskKind::Map => {
                    let adv = advance_map_attempt(a, dt, slow, &job.shape, now);
                    if adv.disk_failed {
                        disk_failed.push(id);
                    } else if adv.completed {
                        completed.push(id);
                    }
                }
                TaskKind::Reduce => {
                    let src = &sources[&a.task.job];
                    let adv = advance_reduce_attempt(a, dt, slow, &job.shape, now, |m| match src[m as usize] {
                        FetchSource::Available { mof, delay_factor } => FetchSource::Available {
                            mof,
                            delay_factor: delay_factor.max(own_delay),
                        },
                        other => other,
                    });
                    for m in adv.fetched {
                        fetched.push((a.task, m));
                    }
                    for m in adv.fetch_failures {
                        failures.push((id, m));
                    }
                    if adv.completed {
                        completed.push(id);
                    }
                }
            }
        }

        for (task, m) in fetched {
            self.world.jobs[task.job.0 as usize].reset_fetch_failures(task.index, m);
        }
        for id in completed {
            q.schedule_in(0, Event::AttemptComplete(id));
        }
        for id in disk_failed {
            let task = self.world.attempt(id).task;
            if let Some(entry) = self.fired_spill_fault(task) {
                self.log_fault(entry, format!("disk exception on {id} ({task})"));
            }
            self.attempt_failed(id, FailureCause::DiskException);
        }
        for (id, m) in failures {
            if self.world.attempt(id).is_running() {
                self.fetch_failed(q, id, m);
            }
        }
        self.check_timeouts();
        self.check_progress_triggers(q);
        if self.world.is_active() {
            q.schedule_in(self.settings.quantum_ms.max(1), Event::Quantum);
        }
    }

    fn fired_spill_fault(&mut self, task: TaskId) -> Option<usize> {
        let idx = self
            .script
            .entries
            .iter()
            .enumerate()
            .find(|(i, e)| {
                !self.fired[*i]
                    && matches!(e.at, Trigger::Spill(_))
                    && e.job.unwrap_or(JobId(0)) == task.job
            })
            .map(|(i, _)| i)?;
        self.fired[idx] = true;
        Some(idx)
    }

    fn log_fault(&mut self, entry: usize, detail: String) {
        let kind = self.script.entries[entry].kind.name();
        self.world.faults.push(FaultRecord {
            at: self.world.now.0,
            entry,
            kind,
            detail,
        });
    }

    fn check_timeouts(&mut self) {
        let now = self.world.now;
        let timeout = self.world.task_timeout_ms;
        let expired: Vec<AttemptId> = self
            .world
            .running
            .iter()
            .copied()
            .filter(|a| now.since(self.world.attempt(*a).last_report_at) > timeout)
            .collect();
        for id in expired {
            let a = &mut self.world.attempts[id.0 as usize];
            a.state = AttemptState::Failed;
            a.finished_at = Some(now);
            self.attempt_failed(id, FailureCause::Timeout);
        }
    }

    fn check_progress_triggers(&mut self, q: &mut EventQueue<Event>) {
        for i in 0..self.script.entries.len() {
            if self.fired[i] {
                continue;
            }
            let Trigger::MapProgress(f) = self.script.entries[i].at else {
                continue;
            };
            let job = self.script.entries[i].job.unwrap_or(JobId(0));
            let Some(j) = self.world.jobs.get(job.0 as usize) else {
                continue;
            };
            if j.state != JobState::Running {
                continue;
            }
            if self.world.map_phase_progress(job) >= f {
                self.activate(q, i);
            }
        }
    }

    fn on_fetch_retry(&mut self, q: &mut EventQueue<Event>, attempt: AttemptId, map: u32) {
        let a = self.world.attempt(attempt);
        if !a.is_running() {
            return;
        }
        let job = a.task.job;
        match self.world.fetch_source(job, map) {
            FetchSource::Lost => self.fetch_failed(q, attempt, map),
            _ => {
                if let Some(r) = self.world.attempts[attempt.0 as usize].reduce_work_mut() {
                    r.awaiting_retry.remove(&map);
                }
            }
        }
    }

    fn fetch_failed(&mut self, q: &mut EventQueue<Event>, attempt: AttemptId, map: u32) {
        let a = self.world.attempt(attempt);
        let (job, reduce) = (a.task.job, a.task.index);
        let count = self.world.jobs[job.0 as usize].record_fetch_failure(reduce, map);
        self.world.fetch_failures.push(FetchFailureRecord {
            at: self.world.now.0,
            job,
            reduce,
            map,
            consecutive: count,
        });
        q.schedule_in(
            self.world.profile.fetch_retry_interval_ms,
            Event::FetchRetry { attempt, map },
        );
        let map_task = TaskId::map(job, map);
        if count >= self.world.profile.max_fetch_failures
            && self.world.task(map_task).state == TaskState::Succeeded
            && self.world.running_attempts(map_task).next().is_none()
        {
            // The framework declares the map failed and runs it again.
            let j = &mut self.world.jobs[job.0 as usize];
            j.fetch_failures.retain(|(_, m), _| *m != map);
            let t = j.task_mut(map_task);
            t.state = TaskState::Pending;
            let home = j.home_node;
            if let Some(pending) = self.world.queues.get_mut(&job) {
                pending.retain(|r| r.decision.task != map_task);
            }
            self.enqueue(vec![SpeculationDecision::new(
                map_task,
                Placement::Prefer(vec![home]),
                LaunchReason::Reexecution,
            )]);
        }
        let d = self.policy.on_fetch_failure(&self.world, attempt, map_task, count);
        self.enqueue(d);
        self.try_schedule();
    }

    fn on_complete(&mut self, id: AttemptId) {
        let a = self.world.attempt(id);
        if a.state != AttemptState::Succeeded || !self.world.running.contains(&id) {
            return;
        }
        let (task, node) = (a.task, a.node);
        self.world.running.remove(&id);
        self.world.cluster.release(node, id);
        let job = task.job;
        if self.world.job(job).is_finished() {
            return;
        }
        if task.kind == TaskKind::Map {
            let mof = MofId(self.world.mofs.len() as u32);
            let status = if self.world.cluster.node(node).health.is_failed() {
                MofStatus::Lost
            } else {
                MofStatus::Available
            };
            let partitions = self.world.job(job).shape.reduces;
            self.world.mofs.push(MapOutputFile {
                id: mof,
                map: task,
                attempt: id,
                node,
                partitions,
                status,
            });
            self.world.jobs[job.0 as usize].task_mut(task).outputs.push(mof);
        }
        let t = self.world.jobs[job.0 as usize].task_mut(task);
        t.state = TaskState::Succeeded;
        t.succeeded_attempt.get_or_insert(id);
        let others: Vec<AttemptId> = t.attempts.clone();
        for other in others {
            self.kill(other);
        }
        if let Some(pending) = self.world.queues.get_mut(&job) {
            pending.retain(|r| r.decision.task != task);
        }
        self.maybe_request_reduces(job);
        if self.world.job(job).completion_reached() {
            self.finish_job(job, JobState::Done);
        }
    }

    fn kill(&mut self, id: AttemptId) {
        let now = self.world.now;
        let a = &mut self.world.attempts[id.0 as usize];
        if kill_attempt(a, now) {
            let node = a.node;
            self.world.running.remove(&id);
            self.world.cluster.release(node, id);
        }
    }

    fn finish_job(&mut self, job: JobId, state: JobState) {
        let j = &mut self.world.jobs[job.0 as usize];
        j.state = state;
        j.completion_time = Some(self.world.now);
        let attempts: Vec<AttemptId> = j.tasks().flat_map(|t| t.attempts.iter().copied()).collect();
        for a in attempts {
            self.kill(a);
        }
        let mofs = std::mem::take(&mut self.world.mofs);
        self.world.jobs[job.0 as usize].discard_duplicate_outputs(&mofs);
        self.world.mofs = mofs;
        self.world.queues.remove(&job);
    }

    fn attempt_failed(&mut self, id: AttemptId, cause: FailureCause) {
        let a = self.world.attempt(id);
        let (task, node) = (a.task, a.node);
        self.world.running.remove(&id);
        self.world.cluster.release(node, id);
        let job = task.job;
        if self.world.job(job).is_finished() {
            return;
        }
        let max = self.world.profile.max_task_attempts;
        let t = self.world.jobs[job.0 as usize].task_mut(task);
        t.failures += 1;
        if t.failures >= max {
            self.finish_job(job, JobState::Failed);
            return;
        }
        if self.world.running_attempts(task).next().is_some() {
            return;
        }
        let t = self.world.jobs[job.0 as usize].task_mut(task);
        if t.state != TaskState::Succeeded {
            t.state = TaskState::Pending;
        }
        let d = self.policy.on_attempt_failed(&self.world, id, cause);
        self.enqueue(d);
    }

    /// Drops requests that no longer make sense; returns whether `r` is still
    /// wanted.
    fn still_wanted(&self, r: &LaunchRequest) -> bool {
        let d = &r.decision;
        let task = self.world.task(d.task);
        let running = self
            .world
            .running_attempts(d.task)
            .filter(|a| !d.abandon.contains(&a.id))
            .count();
        match d.reason {
            LaunchReason::CompletedTask => {
                task.state == TaskState::Succeeded
                    && running == 0
                    && route_output(task, &self.world.mofs, |n| !self.world.cluster.node(n).health.is_failed()).is_none()
            }
            _ if task.state == TaskState::Succeeded => false,
            LaunchReason::Original
            | LaunchReason::Relaunch
            | LaunchReason::Reexecution
            | LaunchReason::RollbackResume => running == 0,
            LaunchReason::Speculative | LaunchReason::RollbackFresh => running < 2,
        }
    }

    fn placement_for(&self, d: &SpeculationDecision) -> Option<NodeId> {
        let c = &self.world.cluster;
        match &d.placement {
            Placement::Node(n) => {
                let node = c.node(*n);
                (!node.health.is_failed() && node.free_slots() > 0 && !d.avoid.contains(n)).then_some(*n)
            }
            Placement::Prefer(p) => c.find_container(p, &d.avoid),
            Placement::Anywhere => c.find_container(&[], &d.avoid),
        }
    }

    /// Hands free containers to queued requests, one per job per round.
    fn try_schedule(&mut self) {
        loop {
            let mut launched = false;
            let jobs: Vec<JobId> = self
                .world
                .queues
                .iter()
                .filter(|(_, q)| !q.is_empty())
                .map(|(j, _)| *j)
                .collect();
            for job in jobs {
                if self.world.cluster.free_slots() == 0 {
                    return;
                }
                let queue = self.world.queues.remove(&job).unwrap_or_default();
                let mut kept = VecDeque::with_capacity(queue.len());
                let mut pick = None;
                for r in queue {
                    if pick.is_some() {
                        kept.push_back(r);
                        continue;
                    }
                    if !self.still_wanted(&r) {
                        continue;
                    }
                    match self.placement_for(&r.decision) {
                        Some(node) => pick = Some((r, node)),
                        None => kept.push_back(r),
                    }
                }
                self.world.queues.insert(job, kept);
                if let Some((r, node)) = pick {
                    self.launch(r.decision, node);
                    launched = true;
                }
            }
            if !launched {
                return;
            }
        }
    }

    fn launch(&mut self, d: SpeculationDecision, node: NodeId) {
        for a in &d.abandon {
            self.kill(*a);
        }
        let now = self.world.now;
        let id = AttemptId(self.world.attempts.len() as u32);
        let job = self.world.job(d.task.job);
        let mut attempt = match d.task.kind {
            TaskKind::Map => {
                let log = d
                    .resume_from
                    .map(|prev| self.world.attempt(prev))
                    .and_then(|prev| prev.spill_log())
                    .filter(|log| !self.world.cluster.node(log.stored_on).health.is_failed());
                TaskAttempt::new_map(id, d.task, node, now, &job.shape, log)
            }
            TaskKind::Reduce => TaskAttempt::new_reduce(id, d.task, node, now),
        };
        if let Some((_, spill)) = self.armed.remove(&d.task) {
            if let Some(m) = attempt.map_work_mut() {
                m.fail_at_spill = Some(spill);
            }
        }
        attempt.speculative = d.reason.is_speculative();
        let resumed_from = attempt.resume_offset.map(|e| e.index);
        self.world.attempts.push(attempt);
        self.world.running.insert(id);
        self.world.cluster.node_mut(node).running_attempts.insert(id);
        let t = self.world.jobs[d.task.job.0 as usize].task_mut(d.task);
        t.attempts.push(id);
        if t.state != TaskState::Succeeded {
            t.state = TaskState::Running;
        }
        self.world.launches.push(LaunchRecord {
            at: now.0,
            attempt: id,
            task: d.task,
            node,
            reason: d.reason,
            resumed_from,
        });
        self.policy.on_launch(&self.world, id, &d);
    }

    fn pick_job(&mut self, entry: &FaultEntry) -> Option<JobId> {
        if let Some(j) = entry.job {
            return self.world.jobs.get(j.0 as usize).map(|_| j);
        }
        let running: Vec<JobId> = self
            .world
            .jobs
            .iter()
            .filter(|j| j.state == JobState::Running)
            .map(|j| j.id)
            .collect();
        running.choose(&mut self.fault_rng).copied()
    }

    fn resolve_node(&mut self, entry: &FaultEntry) -> Option<NodeId> {
        let nodes = self.world.cluster.nodes.len() as u32;
        match entry.target {
            Target::Node(n) => (n.0 < nodes).then_some(n),
            Target::RandomNode => Some(NodeId(self.fault_rng.random_range(0..nodes))),
            Target::BusyNode => {
                let job = self.pick_job(entry)?;
                let busy: BTreeSet<NodeId> = self
                    .world
                    .running
                    .iter()
                    .map(|a| self.world.attempt(*a))
                    .filter(|a| a.task.job == job)
                    .map(|a| a.node)
                    .filter(|n| !self.world.cluster.node(*n).health.is_failed())
                    .collect();
                let busy: Vec<NodeId> = busy.into_iter().collect();
                busy.choose(&mut self.fault_rng).copied()
            }
            Target::Map(i) => {
                let job = self.pick_job(entry)?;
                let t = self.world.job(job).map_tasks.get(i as usize)?.id;
                self.world.running_attempts(t).next().map(|a| a.node)
            }
            Target::RandomRunningMap | Target::RandomCompletedMap => None,
        }
    }

    fn activate(&mut self, q: &mut EventQueue<Event>, idx: usize) {
        if self.fired[idx] {
            return;
        }
        self.fired[idx] = true;
        let entry = self.script.entries[idx].clone();
        match entry.kind {
            FaultKind::NodeFail { duration_ms } => {
                let Some(node) = self.resolve_node(&entry) else {
                    return self.warn(idx, format!("target {} matched no node", entry.target));
                };
                if self.world.cluster.node(node).health.is_failed() {
                    return self.log_fault(idx, format!("{node} already failed"));
                }
                self.world.cluster.node_mut(node).health = Health::Failed;
                for m in &mut self.world.mofs {
                    if m.node == node {
                        m.status = MofStatus::Lost;
                    }
                }
                self.fault_nodes.insert(idx, node);
                self.log_fault(idx, format!("{node} failed"));
                if let Some(d) = duration_ms {
                    q.schedule_in(d, Event::FaultEnd(idx));
                }
            }
            FaultKind::NodeSlow { factor, duration_ms } => {
                let Some(node) = self.resolve_node(&entry) else {
                    return self.warn(idx, format!("target {} matched no node", entry.target));
                };
                let n = self.world.cluster.node_mut(node);
                if !n.health.is_failed() {
                    n.health = Health::Slow(factor.max(1.0));
                }
                self.fault_nodes.insert(idx, node);
                self.log_fault(idx, format!("{node} slowed x{factor}"));
                q.schedule_in(duration_ms, Event::FaultEnd(idx));
            }
            FaultKind::NetDelay { factor, duration_ms } => {
                let Some(node) = self.resolve_node(&entry) else {
                    return self.warn(idx, format!("target {} matched no node", entry.target));
                };
                self.world.cluster.node_mut(node).net_delay = factor.max(1.0);
                self.fault_nodes.insert(idx, node);
                self.log_fault(idx, format!("{node} network delayed x{factor}"));
                q.schedule_in(duration_ms, Event::FaultEnd(idx));
            }
            FaultKind::MofLoss => self.lose_outputs(idx, &entry),
            FaultKind::DiskException => {
                if let Trigger::Spill(_) = entry.at {
                    return;
                }
                let victim = self.pick_map_attempt(&entry);
                let Some(id) = victim else {
                    return self.warn(idx, format!("target {} matched no running map", entry.target));
                };
                let now = self.world.now;
                let a = &mut self.world.attempts[id.0 as usize];
                a.state = AttemptState::Failed;
                a.finished_at = Some(now);
                let task = a.task;
                self.log_fault(idx, format!("disk exception on {id} ({task})"));
                self.attempt_failed(id, FailureCause::DiskException);
            }
        }
    }

    fn pick_map_attempt(&mut self, entry: &FaultEntry) -> Option<AttemptId> {
        let job = self.pick_job(entry)?;
        match entry.target {
            Target::Map(i) => {
                let t = self.world.job(job).map_tasks.get(i as usize)?.id;
                self.world.running_attempts(t).next().map(|a| a.id)
            }
            _ => {
                let candidates: Vec<AttemptId> = self
                    .world
                    .running
                    .iter()
                    .map(|a| self.world.attempt(*a))
                    .filter(|a| {
                        a.task.job == job
                            && a.task.kind == TaskKind::Map
                            && !self.world.cluster.node(a.node).health.is_failed()
                    })
                    .map(|a| a.id)
                    .collect();
                candidates.choose(&mut self.fault_rng).copied()
            }
        }
    }

    fn lose_outputs(&mut self, idx: usize, entry: &FaultEntry) {
        let victims: Vec<MofId> = match entry.target {
            Target::Node(n) => self
                .world
                .mofs
                .iter()
                .filter(|m| m.node == n && m.status == MofStatus::Available)
                .map(|m| m.id)
                .collect(),
            Target::Map(i) => {
                let Some(job) = self.pick_job(entry) else {
                    return self.warn(idx, "no job for map output loss".into());
                };
                match self.world.job(job).map_tasks.get(i as usize) {
                    Some(t) => t.outputs.clone(),
                    None => Vec::new(),
                }
            }
            _ => {
                let Some(job) = self.pick_job(entry) else {
                    return self.warn(idx, "no job for map output loss".into());
                };
                let done: Vec<TaskId> = self
                    .world
                    .job(job)
                    .map_tasks
                    .iter()
                    .filter(|t| {
                        t.outputs
                            .iter()
                            .any(|m| self.world.mofs[m.0 as usize].status == MofStatus::Available)
                    })
                    .map(|t| t.id)
                    .collect();
                match done.choose(&mut self.fault_rng) {
                    Some(t) => self.world.task(*t).outputs.clone(),
                    None => Vec::new(),
                }
            }
        };
        let victims: Vec<MofId> = victims
            .into_iter()
            .filter(|m| self.world.mofs[m.0 as usize].status == MofStatus::Available)
            .collect();
        if victims.is_empty() {
            return self.warn(idx, format!("target {} matched no available map output", entry.target));
        }
        let mut names = Vec::new();
        for m in victims {
            let mof = &mut self.world.mofs[m.0 as usize];
            mof.status = MofStatus::Lost;
            names.push(mof.map.to_string());
        }
        self.log_fault(idx, format!("lost output of {}", names.join(" ")));
    }

    fn deactivate(&mut self, q: &mut EventQueue<Event>, idx: usize) {
        let Some(node) = self.fault_nodes.get(&idx).copied() else {
            return;
        };
        match self.script.entries[idx].kind {
            FaultKind::NodeFail { .. } => {
                if !self.world.cluster.node(node).health.is_failed() {
                    return;
                }
                self.world.cluster.node_mut(node).health = Health::Healthy;
                let stale: Vec<AttemptId> = self.world.cluster.node(node).running_attempts.iter().copied().collect();
                for id in stale {
                    let now = self.world.now;
                    let a = &mut self.world.attempts[id.0 as usize];
                    a.state = AttemptState::Failed;
                    a.finished_at = Some(now);
                    self.attempt_failed(id, FailureCause::NodeRestart);
                }
                self.log_fault(idx, format!("{node} restored"));
                q.schedule_in(0, Event::Heartbeat(node));
            }
            FaultKind::NodeSlow { .. } => {
                let n = self.world.cluster.node_mut(node);
                if matches!(n.health, Health::Slow(_)) {
                    n.health = Health::Healthy;
                }
            }
            FaultKind::NetDelay { .. } => self.world.cluster.node_mut(node).net_delay = 1.0,
            _ => {}
        }
    }
}
