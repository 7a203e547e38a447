//! Virtual-time discrete-event core.
//!
//! Events are totally ordered by `(fire_at, sequence)`, where `sequence` is the
//! insertion counter. Two queues built from the same sequence of `schedule`
//! calls always dequeue in the same order, which is what makes whole-run
//! traces replayable from a seed.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Virtual milliseconds since simulation start.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn ms(self) -> u64 {
        self.0
    }

    pub fn plus(self, ms: u64) -> SimTime {
        SimTime(self.0 + ms)
    }

    /// Milliseconds elapsed since `earlier`, saturating at zero.
    pub fn since(self, earlier: SimTime) -> u64 {
        self.0.saturating_sub(earlier.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Coarse event tag, used for trace output and summary counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    Heartbeat,
    ProgressQuantum,
    FaultActivation,
    SpeculatorWakeup,
    ShuffleFetch,
    JobArrival,
    AttemptComplete,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Heartbeat => "heartbeat",
            EventKind::ProgressQuantum => "progress-quantum",
            EventKind::FaultActivation => "fault-activation",
            EventKind::SpeculatorWakeup => "speculator-wakeup",
            EventKind::ShuffleFetch => "shuffle-fetch",
            EventKind::JobArrival => "job-arrival",
            EventKind::AttemptComplete => "attempt-complete",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Anything that can ride in the queue.
pub trait Payload: fmt::Display {
    fn kind(&self) -> EventKind;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventHandle(u64);

impl EventHandle {
    pub fn sequence(self) -> u64 {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct SimEvent<P> {
    pub fire_at: SimTime,
    pub sequence: u64,
    pub payload: P,
}

impl<P: Payload> SimEvent<P> {
    pub fn kind(&self) -> EventKind {
        self.payload.kind()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("cannot schedule at t={at} ms: current time is {now} ms")]
    ScheduleInPast { at: SimTime, now: SimTime },
    #[error("event limit of {limit} exceeded at t={now} ms (last event: {last})")]
    EventLimit {
        limit: u64,
        now: SimTime,
        last: String,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SimSummary {
    pub events_processed: u64,
    pub final_time: SimTime,
    pub cancelled_skipped: u64,
}

/// One line of the optional trace dump: `time,sequence,kind,payload`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub time: SimTime,
    pub sequence: u64,
    pub kind: String,
    pub payload: String,
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{}",
            self.time, self.sequence, self.kind, self.payload
        )
    }
}

#[derive(Debug, Default, Clone)]
pub struct Trace {
    enabled: bool,
    records: Vec<TraceRecord>,
}

impl Trace {
    pub fn new(enabled: bool) -> Self {
        Self {
            enabled,
            records: Vec::new(),
        }
    }

    pub fn enabled(&self) -> bool {
        self.enabled
    }

    pub fn push(&mut self, time: SimTime, sequence: u64, kind: &str, payload: String) {
        if self.enabled {
            self.records.push(TraceRecord {
                time,
                sequence,
                kind: kind.to_string(),
                payload,
            });
        }
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    /// Newline-delimited text encoding.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&r.to_string());
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, PartialEq, Eq, PartialOrd, Ord)]
struct QueueKey {
    fire_at: SimTime,
    sequence: u64,
}

/// Pending-event queue plus the virtual clock.
pub struct EventQueue<P> {
    now: SimTime,
    next_sequence: u64,
    heap: BinaryHeap<Reverse<(QueueKey, Slot)>>,
    payloads: Vec<Option<P>>,
    cancelled: BTreeSet<u64>,
    pending: usize,
}

// Index into `payloads`; ordered only to satisfy the heap bound.
#[derive(Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Slot(usize);

impl<P> Default for EventQueue<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> EventQueue<P> {
    pub fn new() -> Self {
        Self {
            now: SimTime::ZERO,
            next_sequence: 0,
            heap: BinaryHeap::new(),
            payloads: Vec::new(),
            cancelled: BTreeSet::new(),
            pending: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.pending
    }

    pub fn schedule(&mut self, fire_at: SimTime, payload: P) -> Result<EventHandle, SimError> {
        if fire_at < self.now {
            return Err(SimError::ScheduleInPast {
                at: fire_at,
                now: self.now,
            });
        }
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        let slot = self.payloads.len();
        self.payloads.push(Some(payload));
        self.heap
            .push(Reverse((QueueKey { fire_at, sequence }, Slot(slot))));
        self.pending += 1;
        Ok(EventHandle(sequence))
    }

    /// Schedules `delay_ms` after the current time. Never fails.
    pub fn schedule_in(&mut self, delay_ms: u64, payload: P) -> EventHandle {
        let at = self.now.plus(delay_ms);
        self.schedule(at, payload)
            .expect("relative schedule is never in the past")
    }

    /// Returns true if the event was still pending.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        let seq = handle.0;
        match self.payloads.get_mut(seq as usize) {
            Some(slot @ Some(_)) => {
                *slot = None;
                self.cancelled.insert(seq);
                self.pending -= 1;
                true
            }
            _ => false,
        }
    }

    /// Removes the next live event if it fires at or before `until`, advancing
    /// the clock to its fire time.
    pub fn pop(&mut self, until: Option<SimTime>) -> Option<SimEvent<P>> {
        loop {
            let Reverse((key, _)) = self.heap.peek()?;
            if let Some(limit) = until {
                if key.fire_at > limit {
                    return None;
                }
            }
            let Reverse((key, Slot(slot))) = self.heap.pop().expect("peeked");
            if self.cancelled.remove(&key.sequence) {
                continue;
            }
            let payload = self.payloads[slot].take().expect("live event has payload");
            self.pending -= 1;
            self.now = key.fire_at;
            return Some(SimEvent {
                fire_at: key.fire_at,
                sequence: key.sequence,
                payload,
            });
        }
    }
}

impl<P: Payload> EventQueue<P> {
    /// Dequeues events in total order and hands each to `handler` until the
    /// queue drains or the next event lies beyond `until`.
    pub fn run<F>(
        &mut self,
        until: Option<SimTime>,
        max_events: u64,
        trace: &mut Trace,
        mut handler: F,
    ) -> Result<SimSummary, SimError>
    where
        F: FnMut(&mut EventQueue<P>, &mut Trace, SimEvent<P>),
    {
        let mut summary = SimSummary::default();
        while let Some(ev) = self.pop(until) {
            if summary.events_processed >= max_events {
                return Err(SimError::EventLimit {
                    limit: max_events,
                    now: self.now,
                    last: ev.payload.to_string(),
                });
            }
            summary.events_processed += 1;
            if trace.enabled() {
                trace.push(
                    ev.fire_at,
                    ev.sequence,
                    ev.kind().as_str(),
                    ev.payload.to_string(),
                );
            }
            handler(self, trace, ev);
        }
        summary.final_time = self.now;
        Ok(summary)
    }
}
