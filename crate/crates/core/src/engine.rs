//! Deterministic discrete-event scheduler.
//!
//! Events are ordered by `(fire_at, seq)` where `seq` is the insertion
//! sequence number, so two events scheduled for the same instant dispatch
//! in the order they were scheduled. Cancellation is lazy: a cancelled
//! entry stays in the heap and is skipped when it reaches the top.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::fmt;
use std::ops::{Add, Sub};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::NodeId;

/// Simulation time in whole microseconds since the start of the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000)
    }

    /// Rounds to the nearest microsecond. Negative or non-finite input maps to zero.
    pub fn from_secs_f64(s: f64) -> Self {
        if !s.is_finite() || s <= 0.0 {
            return SimTime(0);
        }
        SimTime((s * 1e6).round() as u64)
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6}s", self.as_secs_f64())
    }
}

/// Handle returned by [`EventQueue::schedule`], usable for cancellation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

impl EventHandle {
    pub fn seq(self) -> u64 {
        self.0
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("cannot schedule event at {at} before current time {now}")]
    InThePast { at: SimTime, now: SimTime },
}

/// A dispatched or pending event.
#[derive(Debug, Clone)]
pub struct SimEvent<K> {
    pub fire_at: SimTime,
    pub seq: u64,
    pub target: NodeId,
    pub kind: K,
}

impl<K> PartialEq for SimEvent<K> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.seq == other.seq
    }
}

impl<K> Eq for SimEvent<K> {}

impl<K> PartialOrd for SimEvent<K> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<K> Ord for SimEvent<K> {
    // Reversed so that BinaryHeap (a max-heap) pops the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.fire_at, other.seq).cmp(&(self.fire_at, self.seq))
    }
}

/// One line of the dispatch trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEntry {
    pub fire_at: SimTime,
    pub seq: u64,
    pub target: NodeId,
    pub kind: String,
}

pub struct EventQueue<K> {
    heap: BinaryHeap<SimEvent<K>>,
    pending: HashSet<u64>,
    next_seq: u64,
    now: SimTime,
    last_dispatched: Option<(SimTime, u64)>,
    trace: Option<Vec<TraceEntry>>,
}

impl<K: fmt::Debug> Default for EventQueue<K> {
    fn default() -> Self {
        Self::new()
    }
}

impl<K: fmt::Debug> EventQueue<K> {
    pub fn new() -> Self {
        Self { heap: BinaryHeap::new(), pending: HashSet::new(), next_seq: 0, now: SimTime::ZERO, last_dispatched: None, trace: None }
    }

    /// Records every dispatched event; used for replay comparisons.
    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn trace(&self) -> Option<&[TraceEntry]> {
        self.trace.as_deref()
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn schedule(&mut self, fire_at: SimTime, target: NodeId, kind: K) -> Result<EventHandle, ScheduleError> {
        if fire_at < self.now {
            return Err(ScheduleError::InThePast { at: fire_at, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.pending.insert(seq);
        self.heap.push(SimEvent { fire_at, seq, target, kind });
        Ok(EventHandle(seq))
    }

    /// Schedules `delay` after the current time; cannot fail.
    pub fn schedule_in(&mut self, delay: SimTime, target: NodeId, kind: K) -> EventHandle {
        let at = self.now + delay;
        self.schedule(at, target, kind).expect("relative schedule is never in the past")
    }

    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        self.pending.remove(&handle.0)
    }

    pub fn is_pending(&self, handle: EventHandle) -> bool {
        self.pending.contains(&handle.0)
    }

    fn peek_live(&mut self) -> Option<&SimEvent<K>> {
        while let Some(top) = self.heap.peek() {
            if self.pending.contains(&top.seq) {
                break;
            }
            self.heap.pop();
        }
        self.heap.peek()
    }

    /// Time of the next live event, if any.
    pub fn peek_time(&mut self) -> Option<SimTime> {
        self.peek_live().map(|e| e.fire_at)
    }

    /// Pops the next live event if it fires at or before `end`, advancing `now`.
    pub fn pop_until(&mut self, end: SimTime) -> Option<SimEvent<K>> {
        if self.peek_live()?.fire_at > end {
            return None;
        }
        let ev = self.heap.pop()?;
        self.pending.remove(&ev.seq);
        let key = (ev.fire_at, ev.seq);
        if let Some(prev) = self.last_dispatched {
            assert!(key > prev, "event dispatched out of order: {key:?} after {prev:?}");
        }
        self.last_dispatched = Some(key);
        assert!(ev.fire_at >= self.now, "time went backwards");
        self.now = ev.fire_at;
        if let Some(trace) = self.trace.as_mut() {
            trace.push(TraceEntry { fire_at: ev.fire_at, seq: ev.seq, target: ev.target, kind: format!("{:?}", ev.kind) });
        }
        Some(ev)
    }

    /// Dispatches every event with `fire_at <= end` in `(fire_at, seq)` order.
    /// The handler may schedule and cancel further events.
    pub fn run_until<F>(&mut self, end: SimTime, mut handler: F) -> usize
    where
        F: FnMut(&mut EventQueue<K>, SimEvent<K>),
    {
        let mut dispatched = 0;
        while let Some(ev) = self.pop_until(end) {
            handler(self, ev);
            dispatched += 1;
        }
        dispatched
    }

    /// Moves the clock forward without dispatching; no-op if `t` is in the past.
    pub fn advance_to(&mut self, t: SimTime) {
        if t > self.now {
            self.now = t;
        }
    }
}

/// Seeded random streams. Each node gets an independent ChaCha stream keyed
/// by its id, so adding a node leaves the other nodes' draws untouched.
#[derive(Debug, Clone, Copy)]
pub struct RngStreams {
    seed: u64,
}

/// Stream id reserved for scenario-level draws (traffic, source selection).
pub const SCENARIO_STREAM: u64 = u64::MAX;
/// Stream id reserved for data-session loss draws.
pub const LINK_LOSS_STREAM: u64 = u64::MAX - 1;

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, id: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(id);
        rng
    }

    pub fn node(&self, node: NodeId) -> ChaCha8Rng {
        self.stream(u64::from(node.0))
    }
}
