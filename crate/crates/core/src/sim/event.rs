//! Timestamped events and the (time, seq) ordered queue.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::cluster::NodeId;
use crate::time::{SimDuration, SimTime};

/// Job phases that end on a timer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Download,
    Work,
    Store,
    /// A replacement learner finished restarting.
    LearnerRecovered(u32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventKind {
    JobArrival { job: usize },
    DispatchTick { periodic: bool },
    DeployStep { job: usize, generation: u64 },
    PhaseComplete { job: usize, generation: u64, phase: Phase },
    CheckpointDue { job: usize, generation: u64 },
    NodeFail { node: NodeId, down: Option<SimDuration> },
    NodeRecover { node: NodeId },
    NodeCordon { node: NodeId },
    LeaseExpiry,
    DeadlockScan,
    UserHalt { job: usize },
    UserResume { job: usize },
    SimEnd,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub time: SimTime,
    pub seq: u64,
    pub kind: EventKind,
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap.
        other.time.cmp(&self.time).then(other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Min-queue on (time, seq); `seq` is assigned at insertion.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Event>,
    next_seq: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, time: SimTime, kind: EventKind) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Event { time, seq, kind });
        seq
    }

    pub fn pop(&mut self) -> Option<Event> {
        self.heap.pop()
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|e| e.time)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_then_insertion_order() {
        let mut q = EventQueue::new();
        q.push(SimTime::from_millis(5), EventKind::SimEnd);
        q.push(SimTime::from_millis(1), EventKind::LeaseExpiry);
        q.push(SimTime::from_millis(5), EventKind::DeadlockScan);
        q.push(SimTime::from_millis(1), EventKind::DispatchTick { periodic: false });
        let order: Vec<(u64, u64)> = std::iter::from_fn(|| q.pop()).map(|e| (e.time.as_millis(), e.seq)).collect();
        assert_eq!(order, [(1, 1), (1, 3), (5, 0), (5, 2)]);
    }
}
