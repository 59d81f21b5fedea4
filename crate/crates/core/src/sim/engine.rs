//! Ordered event queue over virtual time.
//!
//! Events run in `(time, seq)` order, where `seq` is the enqueue counter,
//! so two events at the same instant run in the order they were scheduled.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::fmt;

use serde::Serialize;

use crate::model::ClusterJobId;
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EventKind {
    RcmsPoll,
    ClusterSchedule,
    WalltimeCheck,
    ClientTick,
    SupervisorSweep,
    WorkloadArrival,
    /// A compute job's payload exits on its own.
    JobExit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "entity", content = "id", rename_all = "snake_case")]
pub enum Target {
    Rcms,
    Cluster,
    Supervisor,
    /// The payload of a cluster job (client or compute process).
    Job(ClusterJobId),
    /// Index into the scenario's render jobs.
    RenderJob(usize),
    /// Index into the scenario's compute jobs.
    ComputeJob(usize),
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Rcms => f.write_str("rcms"),
            Target::Cluster => f.write_str("cluster"),
            Target::Supervisor => f.write_str("supervisor"),
            Target::Job(id) => write!(f, "job:{id}"),
            Target::RenderJob(i) => write!(f, "render:{i}"),
            Target::ComputeJob(i) => write!(f, "compute:{i}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SimEvent {
    pub time: SimTime,
    pub seq: u64,
    pub kind: EventKind,
    pub target: Target,
}

impl Ord for SimEvent {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Default)]
pub struct EventQueue {
    now: SimTime,
    next_seq: u64,
    heap: BinaryHeap<Reverse<SimEvent>>,
}

impl EventQueue {
    pub fn new() -> Self {
        EventQueue::default()
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Enqueues an event. Scheduling into the past is a logic error.
    pub fn schedule(&mut self, at: SimTime, kind: EventKind, target: Target) -> u64 {
        assert!(
            at >= self.now,
            "{kind:?} for {target} scheduled at {at}, before now {}",
            self.now
        );
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(SimEvent {
            time: at,
            seq,
            kind,
            target,
        }));
        seq
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|Reverse(e)| e.time)
    }

    /// Removes the earliest event and advances the clock to it.
    pub fn pop(&mut self) -> Option<SimEvent> {
        let Reverse(event) = self.heap.pop()?;
        self.now = event.time;
        Some(event)
    }
}
