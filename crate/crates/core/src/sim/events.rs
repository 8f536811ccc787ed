use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Arrival,
    Heartbeat,
    IterationDone,
    RequestDone,
    ScaleChange,
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub time: f64,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub worker: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Payload {
    Arrival(usize),
    Heartbeat,
    DecodeDone(usize),
    PrefillDone(usize),
    Scale,
}

struct Entry {
    time: f64,
    seq: u64,
    payload: Payload,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Entry {}
impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time.total_cmp(&other.time).then(self.seq.cmp(&other.seq))
    }
}

/// Time-ordered queue; equal times pop in insertion order.
#[derive(Default)]
pub(crate) struct EventQueue {
    heap: BinaryHeap<Reverse<Entry>>,
    seq: u64,
}

impl EventQueue {
    pub fn push(&mut self, time: f64, payload: Payload) {
        debug_assert!(time.is_finite());
        self.heap.push(Reverse(Entry { time, seq: self.seq, payload }));
        self.seq += 1;
    }

    pub fn pop(&mut self) -> Option<(f64, Payload)> {
        self.heap.pop().map(|Reverse(e)| (e.time, e.payload))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_pop_fifo() {
        let mut q = EventQueue::default();
        q.push(1.0, Payload::Heartbeat);
        q.push(0.5, Payload::Arrival(3));
        q.push(1.0, Payload::Arrival(1));
        q.push(1.0, Payload::Scale);
        let order: Vec<_> = std::iter::from_fn(|| q.pop()).map(|e| e.1).collect();
        assert_eq!(order, vec![Payload::Arrival(3), Payload::Heartbeat, Payload::Arrival(1), Payload::Scale]);
    }
}
