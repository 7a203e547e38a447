//! Jobs, task attempts, spills, map output files and the shuffle dependency.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::ids::{AttemptId, JobId, NodeId, TaskId, TaskKind};
use crate::sim::SimTime;

/// Share of a reducer's progress score earned during shuffle.
pub const SHUFFLE_WEIGHT: f64 = 2.0 / 3.0;

/// Work this close to done counts as done, so float dust in derived
/// durations cannot cost a whole extra quantum.
const DONE_SLACK_MS: f64 = 1e-6;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct JobProfile {
    pub split_size: u64,
    /// Input bytes per millisecond processed by one map attempt.
    pub map_throughput: f64,
    /// Shuffled bytes per millisecond processed by one reduce attempt.
    pub reduce_throughput: f64,
    /// Used to derive the reducer count when a job does not give one.
    pub reduce_bytes_per_task: u64,
    pub num_spills: u32,
    pub fetch_retry_interval_ms: u64,
    pub max_fetch_failures: u32,
    pub max_task_attempts: u32,
    /// Fraction of a job's maps that must finish before its reducers are requested.
    pub reduce_slowstart: f64,
}

impl Default for JobProfile {
    fn default() -> Self {
        Self {
            split_size: 128 * MIB,
            map_throughput: 4.0 * MIB as f64 / 1000.0,
            reduce_throughput: 32.0 * MIB as f64 / 1000.0,
            reduce_bytes_per_task: GIB,
            num_spills: 5,
            fetch_retry_interval_ms: 3000,
            max_fetch_failures: 4,
            max_task_attempts: 4,
            reduce_slowstart: 1.0,
        }
    }
}

pub const MIB: u64 = 1024 * 1024;
pub const GIB: u64 = 1024 * MIB;

/// Static shape of a job derived from its size and the profile.
#[derive(Debug, Clone, PartialEq)]
pub struct JobShape {
    pub maps: u32,
    pub reduces: u32,
    pub split_bytes: u64,
    pub num_spills: u32,
    pub map_duration_ms: f64,
    pub fetch_ms: f64,
    pub reduce_phase_ms: f64,
}

impl JobShape {
    pub fn new(input_size: u64, maps: Option<u32>, reduces: Option<u32>, profile: &JobProfile) -> Self {
        let maps = maps
            .unwrap_or_else(|| input_size.div_ceil(profile.split_size.max(1)) as u32)
            .max(1);
        let reduces = reduces
            .unwrap_or_else(|| input_size.div_ceil(profile.reduce_bytes_per_task.max(1)) as u32);
        let split_bytes = input_size / u64::from(maps);
        let map_duration_ms = split_bytes as f64 / profile.map_throughput;
        let reduce_total_ms = if reduces == 0 {
            0.0
        } else {
            (input_size / u64::from(reduces)) as f64 / profile.reduce_throughput
        };
        Self {
            maps,
            reduces,
            split_bytes,
            num_spills: profile.num_spills.max(1),
            map_duration_ms,
            fetch_ms: SHUFFLE_WEIGHT * reduce_total_ms / f64::from(maps),
            reduce_phase_ms: (1.0 - SHUFFLE_WEIGHT) * reduce_total_ms,
        }
    }

    pub fn reduce_duration_ms(&self) -> f64 {
        self.fetch_ms * f64::from(self.maps) + self.reduce_phase_ms
    }

    /// Input offset recorded for spill `index`.
    pub fn spill_offset(&self, index: u32) -> u64 {
        self.split_bytes * u64::from(index) / u64::from(self.num_spills)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum JobState {
    Pending,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TaskState {
    Pending,
    Running,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AttemptState {
    Running,
    Succeeded,
    Failed,
    Killed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SpillEntry {
    pub index: u32,
    pub input_offset: u64,
    pub produced_at: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SpillLog {
    pub entries: Vec<SpillEntry>,
    pub stored_on: NodeId,
}

impl SpillLog {
    pub fn new(stored_on: NodeId) -> Self {
        Self {
            entries: Vec::new(),
            stored_on,
        }
    }

    pub fn last(&self) -> Option<SpillEntry> {
        self.entries.last().copied()
    }

    fn append(&mut self, entry: SpillEntry) {
        debug_assert!(self
            .entries
            .last()
            .map(|e| e.input_offset < entry.input_offset)
            .unwrap_or(true));
        self.entries.push(entry);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MapWork {
    /// Nominal milliseconds of work completed.
    pub done_ms: f64,
    pub spill_log: SpillLog,
    /// Scripted disk exception: fail when this spill index is reached.
    pub fail_at_spill: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fetch {
    pub map: u32,
    pub mof: MofId,
    pub remaining_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ReduceWork {
    pub fetched: BTreeSet<u32>,
    pub current: Option<Fetch>,
    /// Maps whose last fetch failed and whose retry is not yet due.
    pub awaiting_retry: BTreeSet<u32>,
    pub reduce_done_ms: f64,
    /// True when the last advance stalled on missing map output.
    pub blocked: bool,
    /// End of the most recent quantum that stalled.
    pub last_blocked_at: Option<SimTime>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum AttemptWork {
    Map(MapWork),
    Reduce(ReduceWork),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskAttempt {
    pub id: AttemptId,
    pub task: TaskId,
    pub node: NodeId,
    pub start_time: SimTime,
    pub progress: f64,
    pub state: AttemptState,
    pub speculative: bool,
    pub resume_offset: Option<SpillEntry>,
    pub last_report_at: SimTime,
    /// Time `progress` was last brought up to date.
    pub progressed_at: SimTime,
    pub finished_at: Option<SimTime>,
    pub work: AttemptWork,
}

impl TaskAttempt {
    pub fn new_map(
        id: AttemptId,
        task: TaskId,
        node: NodeId,
        now: SimTime,
        shape: &JobShape,
        resume_from: Option<&SpillLog>,
    ) -> Self {
        let mut log = SpillLog::new(node);
        let mut resume_offset = None;
        let mut done_ms = 0.0;
        if let Some(prev) = resume_from {
            if let Some(last) = prev.last() {
                log.entries = prev.entries.clone();
                resume_offset = Some(last);
                done_ms = shape.map_duration_ms * f64::from(last.index) / f64::from(shape.num_spills);
            }
        }
        let progress = if shape.map_duration_ms > 0.0 {
            (done_ms / shape.map_duration_ms).min(1.0)
        } else {
            0.0
        };
        Self {
            id,
            task,
            node,
            start_time: now,
            progress,
            state: AttemptState::Running,
            speculative: false,
            resume_offset,
            last_report_at: now,
            progressed_at: now,
            finished_at: None,
            work: AttemptWork::Map(MapWork {
                done_ms,
                spill_log: log,
                fail_at_spill: None,
            }),
        }
    }

    pub fn new_reduce(id: AttemptId, task: TaskId, node: NodeId, now: SimTime) -> Self {
        Self {
            id,
            task,
            node,
            start_time: now,
            progress: 0.0,
            state: AttemptState::Running,
            speculative: false,
            resume_offset: None,
            last_report_at: now,
            progressed_at: now,
            finished_at: None,
            work: AttemptWork::Reduce(ReduceWork::default()),
        }
    }

    pub fn is_running(&self) -> bool {
        self.state == AttemptState::Running
    }

    pub fn running_time(&self, now: SimTime) -> u64 {
        now.since(self.start_time)
    }

    pub fn spill_log(&self) -> Option<&SpillLog> {
        match &self.work {
            AttemptWork::Map(m) => Some(&m.spill_log),
            AttemptWork::Reduce(_) => None,
        }
    }

    pub fn map_work_mut(&mut self) -> Option<&mut MapWork> {
        match &mut self.work {
            AttemptWork::Map(m) => Some(m),
            AttemptWork::Reduce(_) => None,
        }
    }

    pub fn reduce_work(&self) -> Option<&ReduceWork> {
        match &self.work {
            AttemptWork::Reduce(r) => Some(r),
            AttemptWork::Map(_) => None,
        }
    }

    pub fn reduce_work_mut(&mut self) -> Option<&mut ReduceWork> {
        match &mut self.work {
            AttemptWork::Reduce(r) => Some(r),
            AttemptWork::Map(_) => None,
        }
    }

    /// Stalled on shuffle dependencies rather than on its own node.
    pub fn is_blocked(&self) -> bool {
        self.reduce_work().map(|r| r.blocked).unwrap_or(false)
    }

    /// Whether the attempt stalled on missing input at any point after `t`.
    pub fn blocked_after(&self, t: SimTime) -> bool {
        self.reduce_work()
            .and_then(|r| r.last_blocked_at)
            .is_some_and(|b| b > t)
    }
}

/// Progress per millisecond, `ζ / τ`, with `τ` taken at the time the
/// progress was measured. `None` when the attempt has not run yet.
pub fn progress_rate(attempt: &TaskAttempt) -> Option<f64> {
    rate_of(attempt.progress, attempt.progressed_at.since(attempt.start_time))
}

pub fn rate_of(progress: f64, running_ms: u64) -> Option<f64> {
    if running_ms == 0 {
        None
    } else {
        Some(progress / running_ms as f64)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MapAdvance {
    pub spilled: Vec<SpillEntry>,
    pub completed: bool,
    pub disk_failed: bool,
}

/// Moves a running map attempt forward by `dt_ms` of wall time on a node
/// whose slowdown factor is `slow_factor`.
pub fn advance_map_attempt(
    attempt: &mut TaskAttempt,
    dt_ms: f64,
    slow_factor: f64,
    shape: &JobShape,
    now: SimTime,
) -> MapAdvance {
    let mut out = MapAdvance::default();
    if !attempt.is_running() {
        return out;
    }
    let node = attempt.node;
    let work = attempt.map_work_mut().expect("map attempt");
    let total = shape.map_duration_ms;
    let mut target = work.done_ms + dt_ms / slow_factor;
    if target >= total - DONE_SLACK_MS {
        target = total;
    }
    let spill_ms = total / f64::from(shape.num_spills);
    let first = work.spill_log.last().map(|e| e.index + 1).unwrap_or(1);
    // Spill 0 means the disk goes before anything reaches it.
    if work.fail_at_spill == Some(0) && first == 1 {
        target = work.done_ms;
        out.disk_failed = true;
    }
    for index in first..=shape.num_spills {
        if out.disk_failed {
            break;
        }
        let at = spill_ms * f64::from(index);
        let reached = if index == shape.num_spills {
            target >= total
        } else {
            target >= at
        };
        if !reached {
            break;
        }
        let entry = SpillEntry {
            index,
            input_offset: shape.spill_offset(index),
            produced_at: now,
        };
        work.spill_log.append(entry);
        out.spilled.push(entry);
        if work.fail_at_spill == Some(index) {
            target = at.min(total);
            out.disk_failed = true;
            break;
        }
    }
    debug_assert_eq!(work.spill_log.stored_on, node);
    work.done_ms = target;
    attempt.progress = if total > 0.0 { (target / total).min(1.0) } else { 1.0 };
    if out.disk_failed {
        attempt.state = AttemptState::Failed;
        attempt.finished_at = Some(now);
    } else if target >= total {
        attempt.progress = 1.0;
        attempt.state = AttemptState::Succeeded;
        attempt.finished_at = Some(now);
        out.completed = true;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MofId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MofStatus {
    Available,
    Lost,
}

/// Output of one successful map attempt, partitioned per reducer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MapOutputFile {
    pub id: MofId,
    pub map: TaskId,
    pub attempt: AttemptId,
    pub node: NodeId,
    pub partitions: u32,
    pub status: MofStatus,
}

/// What a reducer sees when it looks for one map's partition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FetchSource {
    /// Map output not produced yet (or being regenerated).
    NotReady,
    Available { mof: MofId, delay_factor: f64 },
    /// Map reported complete but no copy is reachable.
    Lost,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReduceAdvance {
    pub fetched: Vec<u32>,
    pub fetch_failures: Vec<u32>,
    pub completed: bool,
}

/// Moves a running reduce attempt forward by `dt_ms`. `source(j)` reports
/// where map `j`'s partition can be fetched from right now.
pub fn advance_reduce_attempt<F>(
    attempt: &mut TaskAttempt,
    dt_ms: f64,
    slow_factor: f64,
    shape: &JobShape,
    now: SimTime,
    mut source: F,
) -> ReduceAdvance
where
    F: FnMut(u32) -> FetchSource,
{
    let mut out = ReduceAdvance::default();
    if !attempt.is_running() {
        return out;
    }
    let work = attempt.reduce_work_mut().expect("reduce attempt");
    let mut budget = dt_ms;
    work.blocked = false;

    // An in-flight fetch whose source disappeared is dropped and counts as a failure.
    if let Some(cur) = &work.current {
        if !matches!(source(cur.map), FetchSource::Available { mof, .. } if mof == cur.mof) {
            let map = cur.map;
            work.current = None;
            work.awaiting_retry.insert(map);
            out.fetch_failures.push(map);
        }
    }

    while budget > 0.0 {
        if let Some(cur) = work.current.as_mut() {
            let delay = match source(cur.map) {
                FetchSource::Available { delay_factor, .. } => delay_factor,
                _ => 1.0,
            };
            let wall_needed = cur.remaining_ms * slow_factor * delay;
            if wall_needed <= budget + DONE_SLACK_MS {
                budget -= wall_needed;
                let map = cur.map;
                work.fetched.insert(map);
                work.current = None;
                out.fetched.push(map);
            } else {
                cur.remaining_ms -= budget / (slow_factor * delay);
                budget = 0.0;
            }
            continue;
        }
        if work.fetched.len() as u32 >= shape.maps {
            let remaining = shape.reduce_phase_ms - work.reduce_done_ms;
            let wall_needed = remaining * slow_factor;
            if wall_needed <= budget + DONE_SLACK_MS {
                work.reduce_done_ms = shape.reduce_phase_ms;
                budget = 0.0;
                out.completed = true;
            } else {
                work.reduce_done_ms += budget / slow_factor;
                budget = 0.0;
            }
            continue;
        }
        // Pick the lowest-index fetchable map; record failures on lost ones.
        let mut next = None;
        for j in 0..shape.maps {
            if work.fetched.contains(&j) || work.awaiting_retry.contains(&j) {
                continue;
            }
            match source(j) {
                FetchSource::Available { mof, .. } => {
                    next = Some((j, mof));
                    break;
                }
                FetchSource::Lost => {
                    work.awaiting_retry.insert(j);
                    out.fetch_failures.push(j);
                }
                FetchSource::NotReady => {}
            }
        }
        match next {
            Some((map, mof)) => {
                work.current = Some(Fetch {
                    map,
                    mof,
                    remaining_ms: shape.fetch_ms,
                });
            }
            None => {
                work.blocked = true;
                work.last_blocked_at = Some(now);
                break;
            }
        }
    }

    attempt.progress = reduce_progress(work, shape);
    if out.completed {
        attempt.progress = 1.0;
        attempt.state = AttemptState::Succeeded;
        attempt.finished_at = Some(now);
    }
    out
}

pub fn reduce_progress(work: &ReduceWork, shape: &JobShape) -> f64 {
    let partial = work
        .current
        .as_ref()
        .map(|c| {
            if shape.fetch_ms > 0.0 {
                1.0 - c.remaining_ms / shape.fetch_ms
            } else {
                0.0
            }
        })
        .unwrap_or(0.0);
    let shuffle = (work.fetched.len() as f64 + partial) / f64::from(shape.maps);
    let reduce = if shape.reduce_phase_ms > 0.0 {
        work.reduce_done_ms / shape.reduce_phase_ms
    } else if work.fetched.len() as u32 >= shape.maps {
        1.0
    } else {
        0.0
    };
    (SHUFFLE_WEIGHT * shuffle + (1.0 - SHUFFLE_WEIGHT) * reduce).clamp(0.0, 1.0)
}

/// Stops a running attempt. Non-running attempts are returned unchanged.
/// The spill log is kept so a later rollback can still use it.
pub fn kill_attempt(attempt: &mut TaskAttempt, now: SimTime) -> bool {
    if !attempt.is_running() {
        return false;
    }
    attempt.state = AttemptState::Killed;
    attempt.finished_at = Some(now);
    true
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Task {
    pub id: TaskId,
    pub state: TaskState,
    pub attempts: Vec<AttemptId>,
    /// Registered map outputs, original first.
    pub outputs: Vec<MofId>,
    pub failures: u32,
    pub succeeded_attempt: Option<AttemptId>,
}

impl Task {
    fn new(id: TaskId) -> Self {
        Self {
            id,
            state: TaskState::Pending,
            attempts: Vec::new(),
            outputs: Vec::new(),
            failures: 0,
            succeeded_attempt: None,
        }
    }
}

/// Picks the copy a reducer should fetch: the first registered output that is
/// available on a live node.
pub fn route_output(
    task: &Task,
    mofs: &[MapOutputFile],
    mut node_ok: impl FnMut(NodeId) -> bool,
) -> Option<MofId> {
    task.outputs
        .iter()
        .map(|id| &mofs[id.0 as usize])
        .find(|m| m.status == MofStatus::Available && node_ok(m.node))
        .map(|m| m.id)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct JobSpec {
    #[serde(deserialize_with = "crate::workload::bytes")]
    pub input_size: u64,
    #[serde(default)]
    pub arrival_ms: u64,
    #[serde(default)]
    pub maps: Option<u32>,
    #[serde(default)]
    pub reduces: Option<u32>,
    /// Node the job's containers are requested on first.
    #[serde(default)]
    pub home_node: Option<u32>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Job {
    pub id: JobId,
    pub input_size: u64,
    pub arrival_time: SimTime,
    pub completion_time: Option<SimTime>,
    pub state: JobState,
    #[serde(skip)]
    pub shape: JobShape,
    pub home_node: NodeId,
    pub map_tasks: Vec<Task>,
    pub reduce_tasks: Vec<Task>,
    /// Consecutive failed fetches per (reduce index, map index).
    pub fetch_failures: BTreeMap<(u32, u32), u32>,
    pub discarded_outputs: u32,
}

impl Job {
    pub fn new(id: JobId, spec: &JobSpec, profile: &JobProfile, home_node: NodeId) -> Self {
        let shape = JobShape::new(spec.input_size, spec.maps, spec.reduces, profile);
        let map_tasks = (0..shape.maps).map(|i| Task::new(TaskId::map(id, i))).collect();
        let reduce_tasks = (0..shape.reduces)
            .map(|i| Task::new(TaskId::reduce(id, i)))
            .collect();
        Self {
            id,
            input_size: spec.input_size,
            arrival_time: SimTime(spec.arrival_ms),
            completion_time: None,
            state: JobState::Pending,
            shape,
            home_node,
            map_tasks,
            reduce_tasks,
            fetch_failures: BTreeMap::new(),
            discarded_outputs: 0,
        }
    }

    pub fn task(&self, id: TaskId) -> &Task {
        match id.kind {
            TaskKind::Map => &self.map_tasks[id.index as usize],
            TaskKind::Reduce => &self.reduce_tasks[id.index as usize],
        }
    }

    pub fn task_mut(&mut self, id: TaskId) -> &mut Task {
        match id.kind {
            TaskKind::Map => &mut self.map_tasks[id.index as usize],
            TaskKind::Reduce => &mut self.reduce_tasks[id.index as usize],
        }
    }

    pub fn tasks(&self) -> impl Iterator<Item = &Task> {
        self.map_tasks.iter().chain(self.reduce_tasks.iter())
    }

    pub fn is_finished(&self) -> bool {
        matches!(self.state, JobState::Done | JobState::Failed)
    }

    pub fn maps_done(&self) -> bool {
        self.map_tasks.iter().all(|t| t.state == TaskState::Succeeded)
    }

    pub fn all_reduces_done(&self) -> bool {
        self.reduce_tasks.iter().all(|t| t.state == TaskState::Succeeded)
    }

    /// Completion condition: every reducer succeeded, or a map-only job has
    /// every map output.
    pub fn completion_reached(&self) -> bool {
        if self.reduce_tasks.is_empty() {
            self.maps_done()
        } else {
            self.all_reduces_done()
        }
    }

    pub fn record_fetch_failure(&mut self, reduce: u32, map: u32) -> u32 {
        let c = self.fetch_failures.entry((reduce, map)).or_insert(0);
        *c += 1;
        *c
    }

    pub fn reset_fetch_failures(&mut self, reduce: u32, map: u32) {
        self.fetch_failures.remove(&(reduce, map));
    }

    pub fn fetch_failure_count(&self, reduce: u32, map: u32) -> u32 {
        self.fetch_failures.get(&(reduce, map)).copied().unwrap_or(0)
    }

    /// Keeps one output per map task and drops the rest.
    pub fn discard_duplicate_outputs(&mut self, mofs: &[MapOutputFile]) {
        for t in &mut self.map_tasks {
            if t.outputs.len() > 1 {
                let keep = t
                    .outputs
                    .iter()
                    .copied()
                    .find(|id| mofs[id.0 as usize].status == MofStatus::Available)
                    .unwrap_or(t.outputs[0]);
                self.discarded_outputs += t.outputs.len() as u32 - 1;
                t.outputs = vec![keep];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(maps: u32) -> JobShape {
        // 5000 ms maps, 3000 ms reduce (2000 shuffle + 1000 reduce).
        JobShape {
            maps,
            reduces: 1,
            split_bytes: 5_000_000,
            num_spills: 5,
            map_duration_ms: 5000.0,
            fetch_ms: 2000.0 / f64::from(maps),
            reduce_phase_ms: 1000.0,
        }
    }

    fn map_attempt(shape: &JobShape) -> TaskAttempt {
        TaskAttempt::new_map(AttemptId(0), TaskId::map(JobId(0), 0), NodeId(0), SimTime(0), shape, None)
    }

    #[test]
    fn job_shape_from_profile() {
        let p = JobProfile::default();
        let s = JobShape::new(GIB, None, None, &p);
        assert_eq!(s.maps, 8);
        assert_eq!(s.reduces, 1);
        assert_eq!(s.split_bytes, 128 * MIB);
        assert!((s.map_duration_ms - 32_000.0).abs() < 1e-6);
        assert!((s.reduce_duration_ms() - 32_000.0).abs() < 1e-6);
    }

    #[test]
    fn map_completes_after_nominal_duration() {
        let s = shape(1);
        let mut a = map_attempt(&s);
        let adv = advance_map_attempt(&mut a, 5000.0, 1.0, &s, SimTime(5000));
        assert!(adv.completed);
        assert_eq!(a.progress, 1.0);
        assert_eq!(a.state, AttemptState::Succeeded);
        assert_eq!(adv.spilled.len(), 5);
    }

    #[test]
    fn spill_entry_on_crossing_one_fifth() {
        let s = shape(1);
        let mut a = map_attempt(&s);
        let adv = advance_map_attempt(&mut a, 1100.0, 1.0, &s, SimTime(1100));
        assert_eq!(adv.spilled.len(), 1);
        assert_eq!(adv.spilled[0].index, 1);
        assert_eq!(adv.spilled[0].input_offset, 1_000_000);
    }

    #[test]
    fn slow_node_halves_progress() {
        let s = shape(1);
        let mut a = map_attempt(&s);
        advance_map_attempt(&mut a, 5000.0, 2.0, &s, SimTime(5000));
        assert!((a.progress - 0.5).abs() < 1e-12);
        assert!(a.is_running());
    }

    #[test]
    fn disk_exception_fails_at_spill_and_keeps_log() {
        let s = shape(1);
        let mut a = map_attempt(&s);
        a.map_work_mut().unwrap().fail_at_spill = Some(4);
        let adv = advance_map_attempt(&mut a, 4500.0, 1.0, &s, SimTime(4500));
        assert!(adv.disk_failed);
        assert_eq!(a.state, AttemptState::Failed);
        assert_eq!(a.spill_log().unwrap().entries.len(), 4);
        assert!((a.progress - 0.8).abs() < 1e-12);
    }

    #[test]
    fn disk_exception_at_spill_zero_leaves_nothing() {
        let s = shape(1);
        let mut a = map_attempt(&s);
        a.map_work_mut().unwrap().fail_at_spill = Some(0);
        let adv = advance_map_attempt(&mut a, 100.0, 1.0, &s, SimTime(100));
        assert!(adv.disk_failed);
        assert!(adv.spilled.is_empty());
        assert_eq!(a.progress, 0.0);
        assert!(a.spill_log().unwrap().entries.is_empty());
    }

    #[test]
    fn resumed_map_starts_from_last_spill() {
        let s = shape(1);
        let mut a = map_attempt(&s);
        a.map_work_mut().unwrap().fail_at_spill = Some(4);
        advance_map_attempt(&mut a, 4500.0, 1.0, &s, SimTime(4500));
        let log = a.spill_log().unwrap().clone();
        let mut b = TaskAttempt::new_map(AttemptId(1), a.task, NodeId(0), SimTime(4500), &s, Some(&log));
        assert!((b.progress - 0.8).abs() < 1e-12);
        assert_eq!(b.resume_offset.unwrap().index, 4);
        let adv = advance_map_attempt(&mut b, 1000.0, 1.0, &s, SimTime(5500));
        assert!(adv.completed, "one fifth of nominal work remains");
    }

    #[test]
    fn progress_rate_examples() {
        assert_eq!(rate_of(0.5, 10_000), Some(5e-5));
        assert_eq!(rate_of(0.0, 1), Some(0.0));
        assert_eq!(rate_of(1.0, 20_000), Some(5e-5));
        assert_eq!(rate_of(0.3, 0), None);
    }

    #[test]
    fn kill_semantics() {
        let s = shape(1);
        let mut a = map_attempt(&s);
        advance_map_attempt(&mut a, 2500.0, 1.0, &s, SimTime(2500));
        assert!(kill_attempt(&mut a, SimTime(2500)));
        assert_eq!(a.state, AttemptState::Killed);
        assert_eq!(a.spill_log().unwrap().entries.len(), 2, "spill log retained");
        let before = a.clone();
        assert!(!kill_attempt(&mut a, SimTime(3000)));
        assert_eq!(a, before);

        let mut done = map_attempt(&s);
        advance_map_attempt(&mut done, 5000.0, 1.0, &s, SimTime(5000));
        assert!(!kill_attempt(&mut done, SimTime(6000)));
        assert_eq!(done.state, AttemptState::Succeeded);
    }

    fn reduce_attempt() -> TaskAttempt {
        TaskAttempt::new_reduce(AttemptId(9), TaskId::reduce(JobId(0), 0), NodeId(1), SimTime(0))
    }

    fn avail(j: u32) -> FetchSource {
        FetchSource::Available {
            mof: MofId(j),
            delay_factor: 1.0,
        }
    }

    #[test]
    fn reduce_completes_with_all_outputs_available() {
        let s = shape(4);
        let mut r = reduce_attempt();
        let adv = advance_reduce_attempt(&mut r, 3000.0, 1.0, &s, SimTime(3000), avail);
        assert!(adv.completed);
        assert_eq!(r.progress, 1.0);
        assert_eq!(r.state, AttemptState::Succeeded);
    }

    #[test]
    fn lost_output_stalls_at_shuffle_ceiling() {
        let s = shape(4);
        let mut r = reduce_attempt();
        let src = |j: u32| if j == 2 { FetchSource::Lost } else { avail(j) };
        let adv = advance_reduce_attempt(&mut r, 10_000.0, 1.0, &s, SimTime(10_000), src);
        assert_eq!(adv.fetch_failures, vec![2]);
        assert!(!adv.completed);
        assert!((r.progress - SHUFFLE_WEIGHT * 3.0 / 4.0).abs() < 1e-12);
        assert!(r.is_blocked());
        // The retry is pending, so advancing again does not re-fail.
        let adv = advance_reduce_attempt(&mut r, 1000.0, 1.0, &s, SimTime(11_000), src);
        assert!(adv.fetch_failures.is_empty());
    }

    #[test]
    fn restored_output_resumes_shuffle() {
        let s = shape(4);
        let mut r = reduce_attempt();
        let lost = |j: u32| if j == 2 { FetchSource::Lost } else { avail(j) };
        advance_reduce_attempt(&mut r, 10_000.0, 1.0, &s, SimTime(10_000), lost);
        r.reduce_work_mut().unwrap().awaiting_retry.remove(&2);
        let adv = advance_reduce_attempt(&mut r, 10_000.0, 1.0, &s, SimTime(20_000), avail);
        assert_eq!(adv.fetched, vec![2]);
        assert!(adv.completed);
    }

    #[test]
    fn fetch_failure_counter_resets() {
        let mut job = Job::new(
            JobId(0),
            &JobSpec {
                input_size: GIB,
                arrival_ms: 0,
                maps: None,
                reduces: None,
                home_node: None,
            },
            &JobProfile::default(),
            NodeId(0),
        );
        assert_eq!(job.record_fetch_failure(0, 3), 1);
        assert_eq!(job.record_fetch_failure(0, 3), 2);
        job.reset_fetch_failures(0, 3);
        assert_eq!(job.fetch_failure_count(0, 3), 0);
    }

    fn mof(id: u32, node: u32, status: MofStatus) -> MapOutputFile {
        MapOutputFile {
            id: MofId(id),
            map: TaskId::map(JobId(0), 0),
            attempt: AttemptId(id),
            node: NodeId(node),
            partitions: 1,
            status,
        }
    }

    #[test]
    fn dual_output_routing() {
        let mut t = Task::new(TaskId::map(JobId(0), 0));
        t.outputs = vec![MofId(0), MofId(1)];
        let mofs = vec![mof(0, 3, MofStatus::Lost), mof(1, 5, MofStatus::Available)];
        assert_eq!(route_output(&t, &mofs, |_| true), Some(MofId(1)));
        let mofs = vec![mof(0, 3, MofStatus::Available), mof(1, 5, MofStatus::Available)];
        assert_eq!(route_output(&t, &mofs, |_| true), Some(MofId(0)));
    }

    #[test]
    fn duplicates_discarded_at_completion() {
        let mut job = Job::new(
            JobId(0),
            &JobSpec {
                input_size: 128 * MIB,
                arrival_ms: 0,
                maps: Some(1),
                reduces: Some(1),
                home_node: None,
            },
            &JobProfile::default(),
            NodeId(0),
        );
        job.map_tasks[0].outputs = vec![MofId(0), MofId(1)];
        let mofs = vec![mof(0, 3, MofStatus::Lost), mof(1, 5, MofStatus::Available)];
        job.discard_duplicate_outputs(&mofs);
        assert_eq!(job.map_tasks[0].outputs, vec![MofId(1)]);
        assert_eq!(job.discarded_outputs, 1);
    }

    /// With k of m outputs lost, progress never exceeds the ceiling set by the
    /// m - k reachable partitions.
    #[test]
    fn dependency_stall_brute_force() {
        for m in 1..=4u32 {
            let s = shape(m);
            for mask in 0u32..(1 << m) {
                let k = mask.count_ones();
                let mut r = reduce_attempt();
                let src = |j: u32| {
                    if mask & (1 << j) != 0 {
                        FetchSource::Lost
                    } else {
                        avail(j)
                    }
                };
                for step in 1..=20 {
                    advance_reduce_attempt(&mut r, 500.0, 1.0, &s, SimTime(step * 500), src);
                }
                let ceiling = if k == 0 {
                    1.0
                } else {
                    SHUFFLE_WEIGHT * f64::from(m - k) / f64::from(m)
                };
                assert!(r.progress <= ceiling + 1e-12, "m={m} mask={mask:b}");
                assert!((r.progress - ceiling).abs() < 1e-9, "reaches ceiling m={m} mask={mask:b}");
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn map_progress_is_monotone(steps in proptest::collection::vec(0.0f64..800.0, 1..30), slow in 1.0f64..4.0) {
            let s = shape(1);
            let mut a = map_attempt(&s);
            let mut last = 0.0;
            let mut t = 0u64;
            for dt in steps {
                t += dt as u64;
                advance_map_attempt(&mut a, dt, slow, &s, SimTime(t));
                proptest::prop_assert!(a.progress >= last);
                last = a.progress;
            }
        }

        #[test]
        fn spill_offsets_depend_only_on_split_and_count(split in 1u64..1_000_000_000, spills in 1u32..16) {
            let mut s = shape(1);
            s.split_bytes = split;
            s.num_spills = spills;
            let offsets: Vec<u64> = (1..=spills).map(|i| s.spill_offset(i)).collect();
            for w in offsets.windows(2) {
                proptest::prop_assert!(w[0] <= w[1]);
            }
            proptest::prop_assert_eq!(*offsets.last().unwrap(), split);
        }
    }
}
