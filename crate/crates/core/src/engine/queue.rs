use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::timemodel::ExtendedTime;

/// A pending gradient completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Event {
    pub time: ExtendedTime,
    pub worker: usize,
    pub seq: u64,
    /// Iteration whose iterate the gradient is computed at.
    pub assigned: u64,
}

/// Min-queue ordered by `(time, worker, insertion sequence)`.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Reverse<Event>>,
    next_seq: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, time: ExtendedTime, worker: usize, assigned: u64) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Event {
            time,
            worker,
            seq,
            assigned,
        }));
    }

    pub fn peek(&self) -> Option<&Event> {
        self.heap.peek().map(|r| &r.0)
    }

    pub fn pop(&mut self) -> Option<Event> {
        self.heap.pop().map(|r| r.0)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// True when nothing finite is left to dispatch.
    pub fn is_stalled(&self) -> bool {
        self.peek().is_none_or(|e| e.time.is_infinite())
    }
}
