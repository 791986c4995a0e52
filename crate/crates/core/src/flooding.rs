//! Flooding baseline with a message cache and TTL. Broadcasts are carried
//! out as one unicast session per neighbor.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::engine::SimTime;
use crate::topology::NodeId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FloodConfig {
    pub ttl: u8,
    pub cache_capacity: usize,
    pub broadcast_timer_s: f64,
}

impl Default for FloodConfig {
    fn default() -> Self {
        Self { ttl: 127, cache_capacity: 64, broadcast_timer_s: 1.5 }
    }
}

impl FloodConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.ttl == 0 {
            return Err("flooding.ttl must be at least 1".into());
        }
        if self.cache_capacity == 0 {
            return Err("flooding.cache_capacity must be positive".into());
        }
        if !(self.broadcast_timer_s >= 0.0 && self.broadcast_timer_s.is_finite()) {
            return Err("flooding.broadcast_timer_s must be non-negative".into());
        }
        Ok(())
    }

    pub fn broadcast_timer(&self) -> SimTime {
        SimTime::from_secs_f64(self.broadcast_timer_s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FloodKey {
    pub origin: NodeId,
    pub seq: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FloodDest {
    /// Any head absorbs it.
    Head,
    Node(NodeId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FloodMessage {
    pub key: FloodKey,
    pub dest: FloodDest,
    pub ttl: u8,
    /// Packet id of the data item this message carries.
    pub packet: u32,
    pub is_ack: bool,
}

/// Bounded set of seen messages, oldest evicted first.
#[derive(Debug, Clone)]
pub struct FloodCache {
    capacity: usize,
    order: VecDeque<FloodKey>,
    seen: HashSet<FloodKey>,
}

impl FloodCache {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        Self { capacity, order: VecDeque::new(), seen: HashSet::new() }
    }

    pub fn contains(&self, key: FloodKey) -> bool {
        self.seen.contains(&key)
    }

    /// Returns false if the key was already cached.
    pub fn insert(&mut self, key: FloodKey) -> bool {
        if !self.seen.insert(key) {
            return false;
        }
        self.order.push_back(key);
        if self.order.len() > self.capacity {
            let old = self.order.pop_front().unwrap();
            self.seen.remove(&old);
        }
        true
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FloodRx {
    /// First copy at its destination.
    Absorbed,
    /// Relay should arm its broadcast timer for this key.
    StartTimer(FloodKey),
    /// Extra copy while the broadcast timer runs.
    Coalesced,
    Duplicate,
    /// TTL exhausted.
    Dropped,
}

#[derive(Debug, Clone)]
struct Pending {
    msg: FloodMessage,
    senders: BTreeSet<NodeId>,
}

#[derive(Debug, Clone)]
pub struct FloodAgent {
    me: NodeId,
    is_head: bool,
    cache: FloodCache,
    pending: BTreeMap<FloodKey, Pending>,
    next_seq: u32,
    pub forwarded: u64,
}

impl FloodAgent {
    pub fn new(me: NodeId, is_head: bool, cache_capacity: usize) -> Self {
        Self { me, is_head, cache: FloodCache::new(cache_capacity), pending: BTreeMap::new(), next_seq: 0, forwarded: 0 }
    }

    pub fn cache(&self) -> &FloodCache {
        &self.cache
    }

    fn is_destination(&self, dest: FloodDest) -> bool {
        match dest {
            FloodDest::Head => self.is_head,
            FloodDest::Node(n) => n == self.me,
        }
    }

    /// New message from this node; returns it with the neighbors to send it to.
    pub fn originate(&mut self, dest: FloodDest, ttl: u8, packet: u32, is_ack: bool, neighbors: &[NodeId]) -> (FloodMessage, Vec<NodeId>) {
        let key = FloodKey { origin: self.me, seq: self.next_seq };
        self.next_seq += 1;
        self.cache.insert(key);
        (FloodMessage { key, dest, ttl, packet, is_ack }, neighbors.to_vec())
    }

    pub fn on_receive(&mut self, from: NodeId, msg: &FloodMessage) -> FloodRx {
        if let Some(p) = self.pending.get_mut(&msg.key) {
            p.senders.insert(from);
            return FloodRx::Coalesced;
        }
        if self.is_destination(msg.dest) {
            return if self.cache.insert(msg.key) { FloodRx::Absorbed } else { FloodRx::Duplicate };
        }
        if self.cache.contains(msg.key) {
            return FloodRx::Duplicate;
        }
        self.cache.insert(msg.key);
        if msg.ttl <= 1 {
            return FloodRx::Dropped;
        }
        // a head never relays uplink traffic meant for heads
        if self.is_head && msg.dest == FloodDest::Head {
            return FloodRx::Duplicate;
        }
        self.pending.insert(msg.key, Pending { msg: msg.clone(), senders: BTreeSet::from([from]) });
        FloodRx::StartTimer(msg.key)
    }

    /// Broadcast timer expiry: the message to forward and its targets.
    pub fn on_timer(&mut self, key: FloodKey, neighbors: &[NodeId]) -> Option<(FloodMessage, Vec<NodeId>)> {
        let p = self.pending.remove(&key)?;
        let mut msg = p.msg;
        msg.ttl -= 1;
        let targets: Vec<_> = neighbors.iter().copied().filter(|n| !p.senders.contains(n)).collect();
        self.forwarded += 1;
        Some((msg, targets))
    }
}
