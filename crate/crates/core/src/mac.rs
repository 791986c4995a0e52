//! Data-link layer state: advertising and scan timing, per-destination
//! transmit queues, link sequence numbers and the failure-declaration
//! window.
//!
//! A node advertises on 37, 38 and 39 every `adv_interval + delta`. When
//! anything is queued it also scans, one channel per scan interval,
//! cycling 37 -> 38 -> 39. Advertising continues while scanning so two
//! nodes that want each other cannot deadlock. Hearing a wanted
//! advertiser triggers a connection request; a connection is a private
//! session where the scanner pushes every queued frame for that peer and
//! the peer acknowledges each one.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::AdvChannel;
use crate::discovery::HopCount;
use crate::engine::{EventHandle, SimTime};
use crate::topology::NodeId;

/// Inter-frame space between a frame and its response, microseconds.
pub const T_IFS_US: u64 = 150;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MacConfig {
    pub adv_interval_head_s: f64,
    pub adv_interval_node_s: f64,
    /// Upper bound of the per-cycle random advertising delay.
    pub adv_random_delay_max_s: f64,
    pub scan_interval_s: f64,
    pub scan_window_s: f64,
    /// Transmissions of one frame before the session is torn down.
    pub retx_limit: u32,
    /// Scan time without a usable advertisement from a wanted peer before
    /// the peer is declared failed.
    pub failure_declare_window_s: f64,
    pub packet_bits: u32,
    pub phy_bitrate_bps: f64,
    /// Turnaround added to the round trip to form the ack timeout.
    pub ack_turnaround_s: f64,
    /// Independent loss probability of a data or ack frame inside a session.
    pub session_loss_prob: f64,
}

impl Default for MacConfig {
    fn default() -> Self {
        Self {
            adv_interval_head_s: 0.1,
            adv_interval_node_s: 1.0,
            adv_random_delay_max_s: 0.01,
            scan_interval_s: 0.01,
            scan_window_s: 0.01,
            retx_limit: 3,
            failure_declare_window_s: 6.0,
            packet_bits: 240,
            phy_bitrate_bps: 1e6,
            ack_turnaround_s: 0.001,
            session_loss_prob: 0.0,
        }
    }
}

impl MacConfig {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("adv_interval_head_s", self.adv_interval_head_s),
            ("adv_interval_node_s", self.adv_interval_node_s),
            ("scan_interval_s", self.scan_interval_s),
            ("scan_window_s", self.scan_window_s),
            ("failure_declare_window_s", self.failure_declare_window_s),
            ("phy_bitrate_bps", self.phy_bitrate_bps),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.adv_random_delay_max_s >= 0.0) {
            return Err("adv_random_delay_max_s must be non-negative".into());
        }
        if self.scan_window_s > self.scan_interval_s {
            return Err(format!("scan_window_s ({}) exceeds scan_interval_s ({})", self.scan_window_s, self.scan_interval_s));
        }
        if self.retx_limit < 1 {
            return Err("retx_limit must be at least 1".into());
        }
        if self.packet_bits == 0 {
            return Err("packet_bits must be positive".into());
        }
        if !(0.0..1.0).contains(&self.session_loss_prob) {
            return Err("session_loss_prob must be in [0, 1)".into());
        }
        Ok(())
    }

    pub fn airtime(&self) -> SimTime {
        SimTime::from_secs_f64(f64::from(self.packet_bits) / self.phy_bitrate_bps).max(SimTime(1))
    }

    pub fn adv_interval(&self, is_head: bool) -> SimTime {
        SimTime::from_secs_f64(if is_head { self.adv_interval_head_s } else { self.adv_interval_node_s })
    }

    pub fn adv_delay_max(&self) -> SimTime {
        SimTime::from_secs_f64(self.adv_random_delay_max_s)
    }

    pub fn scan_interval(&self) -> SimTime {
        SimTime::from_secs_f64(self.scan_interval_s)
    }

    pub fn scan_window(&self) -> SimTime {
        SimTime::from_secs_f64(self.scan_window_s)
    }

    pub fn failure_window(&self) -> SimTime {
        SimTime::from_secs_f64(self.failure_declare_window_s)
    }

    pub fn ack_timeout(&self) -> SimTime {
        SimTime(2 * self.airtime().0) + SimTime::from_secs_f64(self.ack_turnaround_s)
    }

    /// One advertising-channel slot: the advertisement, an inter-frame
    /// space, and room for a connection request.
    pub fn adv_slot(&self) -> SimTime {
        SimTime(2 * self.airtime().0 + T_IFS_US)
    }

    /// One data frame plus its acknowledgment.
    pub fn exchange_time(&self) -> SimTime {
        SimTime(2 * self.airtime().0 + 2 * T_IFS_US)
    }

    /// Next advertising cycle period: `interval + U[0, delay_max]`.
    pub fn next_adv_period<R: Rng>(&self, is_head: bool, rng: &mut R) -> SimTime {
        let max = self.adv_delay_max().0;
        let delta = if max == 0 { 0 } else { rng.gen_range(0..=max) };
        self.adv_interval(is_head) + SimTime(delta)
    }
}

/// Content of an advertisement.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvPayload {
    pub sender: NodeId,
    pub hop: HopCount,
    /// 1-hop neighbor ids and hop-counts.
    pub digest: Vec<(NodeId, HopCount)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MacMode {
    Advertising,
    Scanning,
    Connected,
}

/// Scan phase anchor: channel `start_channel` is scanned during
/// `[since, since + interval)`, the next channel during the following
/// interval, and so on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScanSchedule {
    pub since: SimTime,
    pub start_channel: AdvChannel,
}

impl ScanSchedule {
    /// Channel being listened to at `t`, or `None` outside the scan window.
    pub fn channel_at(&self, t: SimTime, interval: SimTime, window: SimTime) -> Option<AdvChannel> {
        if t < self.since {
            return None;
        }
        let off = (t - self.since).0;
        let k = off / interval.0;
        if off % interval.0 >= window.0 {
            return None;
        }
        Some(AdvChannel::from_index(self.start_channel.index() + k as usize))
    }

    /// Whether `[start, end)` lies entirely inside one scan window on `ch`.
    pub fn hears(&self, ch: AdvChannel, start: SimTime, end: SimTime, interval: SimTime, window: SimTime) -> bool {
        if start < self.since || end <= start {
            return false;
        }
        let s = (start - self.since).0;
        let e = (end - self.since).0;
        let k = s / interval.0;
        let window_end = k * interval.0 + window.0;
        e <= window_end && AdvChannel::from_index(self.start_channel.index() + k as usize) == ch
    }

    /// Time spent actually listening within `[from, to)`.
    pub fn listening_time(&self, from: SimTime, to: SimTime, interval: SimTime, window: SimTime) -> SimTime {
        let from = from.max(self.since);
        if to <= from {
            return SimTime::ZERO;
        }
        if window >= interval {
            return to - from;
        }
        let on_before = |t: SimTime| {
            let off = (t - self.since).0;
            (off / interval.0) * window.0 + (off % interval.0).min(window.0)
        };
        SimTime(on_before(to) - on_before(from))
    }
}

/// A frame waiting in a transmit queue.
#[derive(Debug, Clone)]
pub struct Frame<P> {
    pub payload: P,
    pub queued_at: SimTime,
    /// Link sequence number, fixed at the first transmission attempt.
    pub seq: Option<u8>,
}

/// Per-node link-layer state. The payload type belongs to the network layer.
#[derive(Debug, Clone)]
pub struct MacState<P> {
    queues: BTreeMap<NodeId, VecDeque<Frame<P>>>,
    pub scan: Option<ScanSchedule>,
    pub listening_for_adv: bool,
    pub connected_with: Option<NodeId>,
    pub failure_timers: BTreeMap<NodeId, EventHandle>,
    next_seq: BTreeMap<NodeId, u8>,
    last_rx_seq: BTreeMap<NodeId, u8>,
    /// Recent intervals during which the radio was transmitting or tuned
    /// away from the scan channel.
    busy: VecDeque<(SimTime, SimTime)>,
    pub scan_channel_seed: usize,
}

impl<P> Default for MacState<P> {
    fn default() -> Self {
        Self {
            queues: BTreeMap::new(),
            scan: None,
            listening_for_adv: false,
            connected_with: None,
            failure_timers: BTreeMap::new(),
            next_seq: BTreeMap::new(),
            last_rx_seq: BTreeMap::new(),
            busy: VecDeque::new(),
            scan_channel_seed: 0,
        }
    }
}

impl<P> MacState<P> {
    pub fn mode(&self) -> MacMode {
        if self.connected_with.is_some() {
            MacMode::Connected
        } else if self.scan.is_some() {
            MacMode::Scanning
        } else {
            MacMode::Advertising
        }
    }

    /// Whether the node has a reason to scan: queued frames or an active discovery.
    pub fn wants_scan(&self) -> bool {
        self.listening_for_adv || self.has_pending()
    }

    pub fn has_pending(&self) -> bool {
        self.queues.values().any(|q| !q.is_empty())
    }

    pub fn pending_for(&self, dest: NodeId) -> usize {
        self.queues.get(&dest).map_or(0, VecDeque::len)
    }

    pub fn wants(&self, dest: NodeId) -> bool {
        self.pending_for(dest) > 0
    }

    pub fn wanted(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.queues.iter().filter(|(_, q)| !q.is_empty()).map(|(d, _)| *d)
    }

    /// Appends a frame; returns true if this made the destination wanted.
    pub fn enqueue(&mut self, dest: NodeId, payload: P, now: SimTime) -> bool {
        let q = self.queues.entry(dest).or_default();
        q.push_back(Frame { payload, queued_at: now, seq: None });
        q.len() == 1
    }

    pub fn push_front(&mut self, dest: NodeId, frame: Frame<P>) {
        self.queues.entry(dest).or_default().push_front(frame);
    }

    pub fn pop(&mut self, dest: NodeId) -> Option<Frame<P>> {
        self.queues.get_mut(&dest)?.pop_front()
    }

    pub fn drain(&mut self, dest: NodeId) -> Vec<Frame<P>> {
        self.queues.remove(&dest).map(Vec::from).unwrap_or_default()
    }

    pub fn drain_all(&mut self) -> Vec<(NodeId, Frame<P>)> {
        let queues = std::mem::take(&mut self.queues);
        queues.into_iter().flat_map(|(d, q)| q.into_iter().map(move |f| (d, f))).collect()
    }

    /// 8-bit per-link sequence number for the next new frame to `peer`.
    pub fn take_seq(&mut self, peer: NodeId) -> u8 {
        let s = self.next_seq.entry(peer).or_insert(0);
        let out = *s;
        *s = s.wrapping_add(1);
        out
    }

    /// Records an arriving frame; false if it duplicates the previous one.
    pub fn accept_seq(&mut self, peer: NodeId, seq: u8) -> bool {
        if self.last_rx_seq.get(&peer) == Some(&seq) {
            return false;
        }
        self.last_rx_seq.insert(peer, seq);
        true
    }

    pub fn mark_busy(&mut self, from: SimTime, to: SimTime) {
        self.busy.push_back((from, to));
        while self.busy.len() > 16 {
            self.busy.pop_front();
        }
    }

    pub fn busy_during(&self, from: SimTime, to: SimTime) -> bool {
        self.busy.iter().any(|&(a, b)| a < to && from < b)
    }
}
