//! Hop-count neighbor discovery.
//!
//! Every node starts with an undefined hop-count (`0xFF`), heads with 0.
//! The first advertisement carrying a defined hop-count starts the
//! discovery timer and sets `my_hop = adv_hop + 1`; every later *new*
//! advertisement resets the timer and may lower `my_hop`. Discovery ends
//! when the timer expires.

use std::collections::BTreeMap;
use std::fmt;

use crate::engine::SimTime;
use crate::mac::AdvPayload;
use crate::topology::{ConnectivityGraph, NodeId};

/// Largest number of neighbors carried in an advertisement digest.
pub const DIGEST_CAP: usize = 20;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HopCount(pub u8);

impl HopCount {
    pub const UNDEFINED: HopCount = HopCount(0xFF);
    pub const HEAD: HopCount = HopCount(0);

    pub fn is_defined(self) -> bool {
        self != Self::UNDEFINED
    }

    /// One hop further; saturates below the undefined marker.
    pub fn next(self) -> HopCount {
        if !self.is_defined() {
            return self;
        }
        HopCount(self.0.saturating_add(1).min(0xFE))
    }

    pub fn value(self) -> Option<u8> {
        self.is_defined().then_some(self.0)
    }
}

impl fmt::Debug for HopCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.value() {
            Some(v) => write!(f, "{v}"),
            None => write!(f, "undef"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborEntry {
    pub id: NodeId,
    pub hop: HopCount,
    /// Negative path loss of the last advertisement heard, dB.
    pub rssi: f64,
    pub advertised: Vec<(NodeId, HopCount)>,
    pub updated: SimTime,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NeighborTable {
    entries: BTreeMap<NodeId, NeighborEntry>,
}

impl NeighborTable {
    pub fn get(&self, id: NodeId) -> Option<&NeighborEntry> {
        self.entries.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &NeighborEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn upsert(&mut self, entry: NeighborEntry) {
        self.entries.insert(entry.id, entry);
    }

    pub fn hop_of(&self, id: NodeId) -> HopCount {
        self.get(id).map(|e| e.hop).unwrap_or(HopCount::UNDEFINED)
    }

    /// Neighbor table as it would look after a complete, loss-free discovery.
    pub fn from_graph(graph: &ConnectivityGraph, node: NodeId, hops: &BTreeMap<NodeId, u32>) -> Self {
        let hop = |n: NodeId| hops.get(&n).map(|h| HopCount((*h).min(0xFE) as u8)).unwrap_or(HopCount::UNDEFINED);
        let mut table = NeighborTable::default();
        for &nb in graph.neighbors(node) {
            let mut advertised: Vec<_> = graph.neighbors(nb).iter().map(|&x| (x, hop(x))).collect();
            truncate_digest(&mut advertised);
            table.upsert(NeighborEntry {
                id: nb,
                hop: hop(nb),
                rssi: -graph.loss_db(node, nb).unwrap_or(f64::INFINITY),
                advertised,
                updated: SimTime::ZERO,
            });
        }
        table
    }
}

/// Keeps the [`DIGEST_CAP`] lowest hop-counts, ordered by (hop, id).
pub fn truncate_digest(digest: &mut Vec<(NodeId, HopCount)>) {
    digest.sort_by_key(|&(id, hop)| (hop, id));
    digest.truncate(DIGEST_CAP);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Not discovering.
    Idle,
    /// Listening, no valid advertisement heard yet.
    Waiting,
    /// Timer armed.
    Running,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimerAction {
    None,
    Start,
    Reset,
}

#[derive(Debug, Clone)]
pub struct Discovery {
    is_head: bool,
    my_hop: HopCount,
    phase: Phase,
    table: NeighborTable,
    started_at: Option<SimTime>,
    completed_at: Option<SimTime>,
}

impl Discovery {
    pub fn new(is_head: bool) -> Self {
        Self {
            is_head,
            my_hop: if is_head { HopCount::HEAD } else { HopCount::UNDEFINED },
            phase: Phase::Idle,
            table: NeighborTable::default(),
            started_at: None,
            completed_at: None,
        }
    }

    /// A node whose discovery already happened, e.g. from a pre-installed state.
    pub fn preinstalled(is_head: bool, hop: HopCount, table: NeighborTable) -> Self {
        Self {
            is_head,
            my_hop: if is_head { HopCount::HEAD } else { hop },
            phase: Phase::Done,
            table,
            started_at: None,
            completed_at: None,
        }
    }

    pub fn my_hop(&self) -> HopCount {
        self.my_hop
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn is_active(&self) -> bool {
        matches!(self.phase, Phase::Waiting | Phase::Running)
    }

    pub fn table(&self) -> &NeighborTable {
        &self.table
    }

    pub fn started_at(&self) -> Option<SimTime> {
        self.started_at
    }

    pub fn completed_at(&self) -> Option<SimTime> {
        self.completed_at
    }

    /// Duration of the last completed discovery round.
    pub fn duration(&self) -> Option<SimTime> {
        Some(self.completed_at?.saturating_sub(self.started_at?))
    }

    pub fn start(&mut self, now: SimTime) {
        self.phase = Phase::Waiting;
        self.started_at = Some(now);
        self.completed_at = None;
    }

    /// Runs another round on top of the stored table with the timer armed
    /// at once; the caller schedules it. Only advertisements that differ
    /// from what is stored count as new and reset it.
    pub fn restart(&mut self, now: SimTime) {
        self.start(now);
        if self.my_hop.is_defined() {
            self.phase = Phase::Running;
        }
    }

    pub fn is_new_adv(&self, adv: &AdvPayload) -> bool {
        match self.table.get(adv.sender) {
            None => true,
            Some(e) => e.hop != adv.hop || e.advertised != adv.digest,
        }
    }

    /// Processes a received advertisement; returns what to do with the timer.
    pub fn on_adv(&mut self, adv: &AdvPayload, rssi: f64, now: SimTime) -> TimerAction {
        if !self.is_active() || !adv.hop.is_defined() || !self.is_new_adv(adv) {
            let active = self.is_active();
            if let Some(e) = self.table.entries.get_mut(&adv.sender) {
                if active {
                    e.rssi = rssi;
                    e.updated = now;
                }
            }
            return TimerAction::None;
        }
        let candidate = adv.hop.next();
        let action = if self.phase == Phase::Waiting {
            self.phase = Phase::Running;
            if !self.is_head {
                self.my_hop = candidate;
            }
            TimerAction::Start
        } else {
            if !self.is_head && self.my_hop > candidate {
                self.my_hop = candidate;
            }
            TimerAction::Reset
        };
        self.table.upsert(NeighborEntry { id: adv.sender, hop: adv.hop, rssi, advertised: adv.digest.clone(), updated: now });
        action
    }

    pub fn on_timer(&mut self, now: SimTime) {
        if self.phase == Phase::Running {
            self.phase = Phase::Done;
            self.completed_at = Some(now);
        }
    }

    /// Stops a round that never heard a valid advertisement.
    pub fn abandon(&mut self) {
        if self.phase == Phase::Waiting {
            self.phase = Phase::Idle;
        }
    }

    pub fn digest(&self) -> Vec<(NodeId, HopCount)> {
        let mut d: Vec<_> = self.table.iter().map(|e| (e.id, e.hop)).collect();
        truncate_digest(&mut d);
        d
    }

    pub fn advertisement(&self, sender: NodeId) -> AdvPayload {
        AdvPayload { sender, hop: self.my_hop, digest: self.digest() }
    }
}

/// Runs discovery with ideal reception in synchronous rounds: every round
/// each node hears the advertisement of every neighbor. The timer is
/// expressed in rounds.
pub fn ideal_discovery(graph: &ConnectivityGraph, timer_rounds: u32) -> BTreeMap<NodeId, Discovery> {
    let mut nodes: BTreeMap<NodeId, Discovery> = graph.nodes().map(|n| (n, Discovery::new(graph.is_head(n)))).collect();
    let mut timers: BTreeMap<NodeId, u32> = BTreeMap::new();
    for d in nodes.values_mut() {
        d.start(SimTime::ZERO);
    }
    let mut round = 0u32;
    let limit = (graph.len() as u32 + 2) * (timer_rounds + 1) + 8;
    while nodes.values().any(Discovery::is_active) && round < limit {
        round += 1;
        let now = SimTime(u64::from(round));
        let advs: Vec<AdvPayload> = nodes.iter().map(|(&id, d)| d.advertisement(id)).collect();
        for adv in &advs {
            for &rx in graph.neighbors(adv.sender) {
                let rssi = -graph.loss_db(rx, adv.sender).unwrap_or(f64::INFINITY);
                match nodes.get_mut(&rx).unwrap().on_adv(adv, rssi, now) {
                    TimerAction::None => {}
                    TimerAction::Start | TimerAction::Reset => {
                        timers.insert(rx, round + timer_rounds);
                    }
                }
            }
        }
        for (id, d) in nodes.iter_mut() {
            if timers.get(id) == Some(&round) {
                d.on_timer(now);
            }
        }
    }
    for d in nodes.values_mut() {
        d.abandon();
    }
    nodes
}
