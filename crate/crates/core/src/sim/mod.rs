//! The simulated network: nodes, the event loop and the link layer.
//!
//! Advertisements and connection requests go over the shared advertising
//! channels and may collide. Everything else happens inside a connection:
//! a private session in which the initiator pushes its frames for the
//! peer one by one, then the peer pushes its frames back, each frame
//! answered by an acknowledgment.

mod net;

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::channel::{AdvChannel, Airspace, RxOutcome};
use crate::config::{Protocol, ScenarioConfig};
use crate::discovery::{Discovery, TimerAction};
use crate::engine::{EventHandle, EventQueue, RngStreams, SimEvent, SimTime, LINK_LOSS_STREAM};
use crate::flooding::{FloodAgent, FloodKey};
use crate::mac::{Frame, MacConfig, MacState, ScanSchedule, T_IFS_US};
use crate::metrics::{RadioState, Timeline};
use crate::routing::{GsaAgent, LinkReply, RouteId};
use crate::topology::{ConnectivityGraph, NodeId, NodeSpec};

pub use net::{DataPacket, Notice, PacketTrack, Payload};

#[derive(Debug, Clone, PartialEq)]
pub enum Ev {
    AdvCycle,
    AdvPdu { k: u8 },
    AdvPduEnd { tx: u64 },
    ConnReqEnd { tx: u64, peer: NodeId },
    Exchange { session: u64 },
    DiscoveryStart,
    DiscoveryTimer,
    FailureTimer { dest: NodeId },
    BroadcastTimer { key: FloodKey },
    Generate { packet: u32 },
    Fail,
}

#[derive(Debug)]
pub struct Node {
    pub id: NodeId,
    pub is_head: bool,
    pub alive: bool,
    rng: ChaCha8Rng,
    pub mac: MacState<Payload>,
    pub disc: Discovery,
    disc_timer: Option<EventHandle>,
    /// Discovery round of an HB recovery, as opposed to the initial one.
    rediscovering: bool,
    pub first_discovery: Option<SimTime>,
    pub gsa: GsaAgent,
    pub flood: FloodAgent,
    pub timeline: Timeline,
    scan_span: Option<u64>,
    adv_next_pdu: Option<EventHandle>,
    /// Peer of a connection request in the air.
    pending_req: Option<NodeId>,
    req_failures: u32,
    /// Usable advertisements still to let pass before the next request.
    req_backoff: u32,
    pub known_failed: BTreeSet<NodeId>,
    /// Reconnection windows already spent on a routing reply.
    control_retries: BTreeMap<(NodeId, RouteId), u32>,
    hb_waiting: Vec<(DataPacket, Option<NodeId>)>,
    last_reply: BTreeMap<NodeId, Option<LinkReply>>,
    pub sessions: u64,
    pub gsa_done_at: Option<SimTime>,
}

#[derive(Debug)]
struct InFlight {
    from: NodeId,
    to: NodeId,
    frame: Frame<Payload>,
    seq: u8,
    attempts: u32,
}

#[derive(Debug)]
struct Session {
    master: NodeId,
    slave: NodeId,
    idle_spans: [u64; 2],
    inflight: Option<InFlight>,
}

/// Per-run counters not tied to a packet.
#[derive(Debug, Default, Clone)]
pub struct RunStats {
    pub sessions: u64,
    pub frames: u64,
    pub conn_requests: u64,
    pub conn_collisions: u64,
    pub lost_control: u64,
    pub false_failures: u64,
}

pub struct World<'a> {
    pub(crate) cfg: &'a ScenarioConfig,
    mac: MacConfig,
    q: EventQueue<Ev>,
    pub graph: ConnectivityGraph,
    nodes: Vec<Node>,
    index: BTreeMap<NodeId, usize>,
    air: Airspace,
    sessions: BTreeMap<u64, Session>,
    next_session: u64,
    loss_rng: ChaCha8Rng,
    pub packets: BTreeMap<u32, PacketTrack>,
    pub stats: RunStats,
    pub discovery_started_at: Option<SimTime>,
    pub failed_at: Option<SimTime>,
    fail_target: Option<NodeId>,
}

impl<'a> World<'a> {
    pub fn new(cfg: &'a ScenarioConfig, specs: &[NodeSpec], seed: u64) -> Self {
        let graph = ConnectivityGraph::build(specs, &cfg.channel);
        let streams = RngStreams::new(seed);
        let mut q = EventQueue::new();
        let mut nodes = Vec::with_capacity(specs.len());
        let mut index = BTreeMap::new();
        for (i, s) in specs.iter().enumerate() {
            let is_head = s.is_head();
            let mut rng = streams.node(s.id);
            let wake = SimTime((rng.gen::<f64>() * cfg.wake_window_s * 1e6) as u64);
            q.schedule(wake, s.id, Ev::AdvCycle).expect("future");
            nodes.push(Node {
                id: s.id,
                is_head,
                alive: true,
                rng,
                mac: MacState::default(),
                disc: Discovery::new(is_head),
                disc_timer: None,
                rediscovering: false,
                first_discovery: None,
                gsa: GsaAgent::new(s.id, is_head, cfg.routing.max_paths, cfg.routing.head_rule),
                flood: FloodAgent::new(s.id, is_head, cfg.flooding.cache_capacity),
                timeline: Timeline::default(),
                scan_span: None,
                adv_next_pdu: None,
                pending_req: None,
                req_failures: 0,
                req_backoff: 0,
                known_failed: BTreeSet::new(),
                control_retries: BTreeMap::new(),
                hb_waiting: vec![],
                last_reply: BTreeMap::new(),
                sessions: 0,
                gsa_done_at: None,
            });
            index.insert(s.id, i);
        }
        Self {
            cfg,
            mac: cfg.mac.clone(),
            q,
            graph,
            nodes,
            index,
            air: Airspace::new(),
            sessions: BTreeMap::new(),
            next_session: 0,
            loss_rng: streams.stream(LINK_LOSS_STREAM),
            packets: BTreeMap::new(),
            stats: RunStats::default(),
            discovery_started_at: None,
            failed_at: None,
            fail_target: None,
        }
    }

    pub fn now(&self) -> SimTime {
        self.q.now()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[self.index[&id]]
    }

    fn n(&mut self, id: NodeId) -> &mut Node {
        let i = self.index[&id];
        &mut self.nodes[i]
    }

    pub fn enable_trace(&mut self) {
        self.q.enable_trace();
    }

    pub fn trace(&self) -> Option<&[crate::engine::TraceEntry]> {
        self.q.trace()
    }

    /// Replaces discovery and routing state, as if both phases had run before.
    pub fn preinstall(&mut self, disc: BTreeMap<NodeId, Discovery>, gsa: BTreeMap<NodeId, GsaAgent>) {
        for (id, d) in disc {
            if let Some(&i) = self.index.get(&id) {
                self.nodes[i].disc = d;
            }
        }
        for (id, g) in gsa {
            if let Some(&i) = self.index.get(&id) {
                self.nodes[i].gsa = g;
            }
        }
    }

    pub fn schedule_discovery(&mut self, at: SimTime) {
        let first = self.nodes[0].id;
        self.q.schedule(at, first, Ev::DiscoveryStart).expect("future");
    }

    pub fn schedule_failure(&mut self, node: NodeId, at: SimTime) {
        self.fail_target = Some(node);
        self.q.schedule(at, node, Ev::Fail).expect("future");
    }

    pub fn schedule_packet(&mut self, track: PacketTrack) {
        let (src, at, id) = (track.source, track.generated, track.id);
        self.packets.insert(id, track);
        self.q.schedule(at, src, Ev::Generate { packet: id }).expect("future");
    }

    /// Runs until `end`, or earlier once `done` holds at or after `min_end`.
    pub fn run(&mut self, end: SimTime, min_end: SimTime, done: impl Fn(&World) -> bool) {
        let mut checked = SimTime::ZERO;
        while let Some(ev) = self.q.pop_until(end) {
            self.dispatch(ev);
            let now = self.now();
            if now >= min_end && now >= checked + SimTime::from_millis(100) {
                checked = now;
                if done(self) {
                    return;
                }
            }
        }
        // nothing left before `end`: the clock still reaches it
        self.q.advance_to(end);
    }

    fn dispatch(&mut self, ev: SimEvent<Ev>) {
        let id = ev.target;
        match ev.kind {
            Ev::AdvCycle => self.on_adv_cycle(id),
            Ev::AdvPdu { k } => self.on_adv_pdu(id, k),
            Ev::AdvPduEnd { tx } => self.on_adv_pdu_end(id, tx),
            Ev::ConnReqEnd { tx, peer } => self.on_conn_req_end(id, tx, peer),
            Ev::Exchange { session } => self.on_exchange(session),
            Ev::DiscoveryStart => self.on_discovery_start(),
            Ev::DiscoveryTimer => self.on_discovery_timer(id),
            Ev::FailureTimer { dest } => self.on_failure_timer(id, dest),
            Ev::BroadcastTimer { key } => self.on_broadcast_timer(id, key),
            Ev::Generate { packet } => self.on_generate(id, packet),
            Ev::Fail => self.on_fail(id),
        }
    }

    // ---- scanning -------------------------------------------------------

    fn update_scan(&mut self, id: NodeId) {
        let now = self.now();
        let (interval, window) = (self.mac.scan_interval(), self.mac.scan_window());
        let n = self.n(id);
        let should = n.alive && n.mac.connected_with.is_none() && n.mac.wants_scan();
        match (should, n.mac.scan) {
            (true, None) => {
                let ch = AdvChannel::from_index(n.rng.gen_range(0..3));
                n.mac.scan = Some(ScanSchedule { since: now, start_channel: ch });
                if window >= interval {
                    n.scan_span = Some(n.timeline.open(RadioState::Rx, now));
                }
            }
            (false, Some(sched)) => {
                n.mac.scan = None;
                if let Some(span) = n.scan_span.take() {
                    n.timeline.close(span, now);
                } else {
                    let mut t = sched.since;
                    while t < now {
                        n.timeline.add(RadioState::Rx, t, (t + window).min(now));
                        t = t + interval;
                    }
                }
            }
            _ => {}
        }
    }

    // ---- advertising ----------------------------------------------------

    fn on_adv_cycle(&mut self, id: NodeId) {
        let mac = self.mac.clone();
        let n = self.n(id);
        if !n.alive {
            return;
        }
        let period = mac.next_adv_period(n.is_head, &mut n.rng);
        let connected = n.mac.connected_with.is_some();
        self.q.schedule_in(period, id, Ev::AdvCycle);
        if !connected {
            self.on_adv_pdu(id, 0);
        }
    }

    fn on_adv_pdu(&mut self, id: NodeId, k: u8) {
        let now = self.now();
        let (air, slot) = (self.mac.airtime(), self.mac.adv_slot());
        let n = self.n(id);
        n.adv_next_pdu = None;
        if !n.alive || n.mac.connected_with.is_some() {
            return;
        }
        n.mac.mark_busy(now, now + slot);
        n.timeline.add(RadioState::Tx, now, now + air);
        n.timeline.add(RadioState::Rx, now + air, now + slot);
        let tx = self.air.begin(id, AdvChannel::ALL[k as usize], now, now + air);
        self.q.schedule_in(air, id, Ev::AdvPduEnd { tx: tx.id });
        if k < 2 {
            let h = self.q.schedule_in(slot, id, Ev::AdvPdu { k: k + 1 });
            self.n(id).adv_next_pdu = Some(h);
        }
    }

    fn on_adv_pdu_end(&mut self, sender: NodeId, tx_id: u64) {
        let now = self.now();
        let Some(tx) = self.air.get(tx_id).copied() else { return };
        let (interval, window) = (self.mac.scan_interval(), self.mac.scan_window());
        let candidates: Vec<(NodeId, bool)> = self
            .graph
            .neighbors(sender)
            .iter()
            .map(|&r| {
                let n = self.node(r);
                let listening = n.alive
                    && n.mac.connected_with.is_none()
                    && n.pending_req.is_none()
                    && n.mac.scan.is_some_and(|s| s.hears(tx.channel, tx.start, tx.end, interval, window))
                    && !n.mac.busy_during(tx.start, tx.end);
                (r, listening)
            })
            .collect();
        let graph = &self.graph;
        let outcomes = self.air.deliver(tx_id, &candidates, self.cfg.channel.collisions, |a, b| graph.has_edge(a, b));
        let adv = self.node(sender).disc.advertisement(sender);
        let sender_free = self.node(sender).alive && self.node(sender).mac.connected_with.is_none();
        for (r, outcome) in outcomes {
            if outcome != RxOutcome::Received {
                continue;
            }
            let rssi = -self.graph.loss_db(sender, r).unwrap_or(f64::INFINITY);
            let timer_len = self.disc_timer_len(r);
            let n = self.n(r);
            if n.disc.is_active() {
                match n.disc.on_adv(&adv, rssi, now) {
                    TimerAction::None => {}
                    TimerAction::Start | TimerAction::Reset => {
                        if let Some(h) = n.disc_timer.take() {
                            self.q.cancel(h);
                        }
                        let h = self.q.schedule_in(timer_len, r, Ev::DiscoveryTimer);
                        self.n(r).disc_timer = Some(h);
                    }
                }
            }
            let n = self.n(r);
            if sender_free && n.mac.wants(sender) && n.pending_req.is_none() {
                if n.req_backoff > 0 {
                    n.req_backoff -= 1;
                    continue;
                }
                self.send_conn_req(r, sender, tx.channel, tx.end);
            }
        }
        self.air.prune(now.saturating_sub(SimTime::from_millis(20)));
    }

    fn disc_timer_len(&self, id: NodeId) -> SimTime {
        if self.node(id).rediscovering {
            SimTime::from_secs_f64(self.cfg.recovery.rediscovery_timer_s)
        } else {
            SimTime::from_secs_f64(self.cfg.discovery.timer_s)
        }
    }

    fn send_conn_req(&mut self, from: NodeId, to: NodeId, ch: AdvChannel, adv_end: SimTime) {
        let air = self.mac.airtime();
        let start = adv_end + SimTime(T_IFS_US);
        let end = start + air;
        let tx = self.air.begin(from, ch, start, end);
        let n = self.n(from);
        n.pending_req = Some(to);
        n.mac.mark_busy(start, end);
        n.timeline.add(RadioState::Tx, start, end);
        self.stats.conn_requests += 1;
        self.q.schedule(end, from, Ev::ConnReqEnd { tx: tx.id, peer: to }).expect("future");
    }

    fn on_conn_req_end(&mut self, from: NodeId, tx_id: u64, peer: NodeId) {
        self.n(from).pending_req = None;
        let p = self.node(peer);
        let listening = p.alive && p.mac.connected_with.is_none() && p.pending_req.is_none();
        let graph = &self.graph;
        let outcome = self.air.deliver(tx_id, &[(peer, listening)], self.cfg.channel.collisions, |a, b| graph.has_edge(a, b));
        let ok = outcome.first().is_some_and(|(_, o)| *o == RxOutcome::Received);
        let f = self.node(from);
        if ok && f.alive && f.mac.connected_with.is_none() && f.mac.wants(peer) {
            let n = self.n(from);
            n.req_failures = 0;
            n.req_backoff = 0;
            self.open_session(from, peer);
        } else {
            if outcome.first().is_some_and(|(_, o)| *o == RxOutcome::Collided) {
                self.stats.conn_collisions += 1;
            }
            // random backoff so that contending initiators fall out of step
            let n = self.n(from);
            n.req_failures += 1;
            let upper = 1u32 << n.req_failures.min(2);
            n.req_backoff = n.rng.gen_range(0..=upper);
        }
    }

    // ---- sessions -------------------------------------------------------

    fn open_session(&mut self, master: NodeId, slave: NodeId) {
        let now = self.now();
        let sid = self.next_session;
        self.next_session += 1;
        self.stats.sessions += 1;
        let mut spans = [0u64; 2];
        for (i, (me, peer)) in [(master, slave), (slave, master)].into_iter().enumerate() {
            let n = self.n(me);
            if let Some(h) = n.adv_next_pdu.take() {
                self.q.cancel(h);
            }
            let n = self.n(me);
            n.mac.connected_with = Some(peer);
            n.known_failed.remove(&peer);
            n.sessions += 1;
            spans[i] = n.timeline.open(RadioState::Idle, now);
            if let Some(h) = n.mac.failure_timers.remove(&peer) {
                self.q.cancel(h);
            }
            self.update_scan(me);
        }
        self.sessions.insert(sid, Session { master, slave, idle_spans: spans, inflight: None });
        self.next_exchange(sid);
    }

    fn next_exchange(&mut self, sid: u64) {
        let now = self.now();
        let (master, slave) = {
            let s = &self.sessions[&sid];
            (s.master, s.slave)
        };
        for (from, to) in [(master, slave), (slave, master)] {
            let n = self.n(from);
            if let Some(mut frame) = n.mac.pop(to) {
                let seq = match frame.seq {
                    Some(s) => s,
                    None => n.mac.take_seq(to),
                };
                frame.seq = Some(seq);
                self.sessions.get_mut(&sid).unwrap().inflight = Some(InFlight { from, to, frame, seq, attempts: 0 });
                self.start_exchange(sid, now);
                return;
            }
        }
        self.close_session(sid);
    }

    /// Schedules the exchange of the in-flight frame starting at `at`.
    fn start_exchange(&mut self, sid: u64, at: SimTime) {
        let (air, ifs) = (self.mac.airtime(), SimTime(T_IFS_US));
        let (from, to) = {
            let f = self.sessions[&sid].inflight.as_ref().unwrap();
            (f.from, f.to)
        };
        let ack_start = at + air + ifs;
        self.n(from).timeline.add(RadioState::Tx, at, at + air);
        self.n(from).timeline.add(RadioState::Rx, ack_start, ack_start + air);
        self.n(to).timeline.add(RadioState::Rx, at, at + air);
        self.n(to).timeline.add(RadioState::Tx, ack_start, ack_start + air);
        self.q.schedule(at + self.mac.exchange_time(), from, Ev::Exchange { session: sid }).expect("future");
    }

    fn draw_loss(&mut self) -> bool {
        let p = self.mac.session_loss_prob;
        p > 0.0 && self.loss_rng.gen::<f64>() < p
    }

    fn on_exchange(&mut self, sid: u64) {
        let Some(mut inf) = self.sessions.get_mut(&sid).and_then(|s| s.inflight.take()) else { return };
        self.stats.frames += 1;
        if let Some(pkt) = inf.frame.payload.packet_id() {
            if let Some(t) = self.packets.get_mut(&pkt) {
                t.transmissions += 1;
            }
        }
        let to_alive = self.node(inf.to).alive;
        let data_lost = !to_alive || self.draw_loss();
        let mut reply = None;
        if !data_lost {
            let fresh = self.n(inf.to).mac.accept_seq(inf.from, inf.seq);
            if fresh {
                reply = self.deliver_frame(inf.to, inf.from, inf.frame.payload.clone());
                self.n(inf.to).last_reply.insert(inf.from, reply);
            } else {
                reply = self.node(inf.to).last_reply.get(&inf.from).copied().flatten();
            }
        }
        let ack_lost = data_lost || self.draw_loss();
        if !ack_lost {
            self.on_frame_acked(inf.from, inf.to, &inf.frame.payload, reply);
            if self.sessions.contains_key(&sid) {
                self.next_exchange(sid);
            }
            return;
        }
        inf.attempts += 1;
        if inf.attempts >= self.mac.retx_limit {
            let (from, to) = (inf.from, inf.to);
            self.n(from).mac.push_front(to, inf.frame);
            self.close_session(sid);
            self.ensure_failure_timer(from, to);
            self.update_scan(from);
            return;
        }
        // retransmit once the ack timeout has elapsed
        let at = self.now() + self.mac.ack_timeout();
        self.sessions.get_mut(&sid).unwrap().inflight = Some(inf);
        self.start_exchange(sid, at);
    }

    fn close_session(&mut self, sid: u64) {
        let now = self.now();
        let Some(s) = self.sessions.remove(&sid) else { return };
        for (i, me) in [s.master, s.slave].into_iter().enumerate() {
            let n = self.n(me);
            n.mac.connected_with = None;
            n.timeline.close(s.idle_spans[i], now);
        }
        for me in [s.master, s.slave] {
            // frames queued during the session for other peers may lack a timer
            let wanted: Vec<NodeId> = self.node(me).mac.wanted().collect();
            for d in wanted {
                self.ensure_failure_timer(me, d);
            }
            self.update_scan(me);
        }
    }

    // ---- queues and failure declaration ----------------------------------

    fn ensure_failure_timer(&mut self, id: NodeId, dest: NodeId) {
        let window = self.mac.failure_window();
        let n = self.node(id);
        if n.mac.failure_timers.contains_key(&dest) || !n.mac.wants(dest) || n.mac.connected_with == Some(dest) {
            return;
        }
        let h = self.q.schedule_in(window, id, Ev::FailureTimer { dest });
        self.n(id).mac.failure_timers.insert(dest, h);
    }

    /// Queues a frame for `to` and makes sure the node scans for it.
    pub fn send(&mut self, from: NodeId, to: NodeId, payload: Payload) {
        let now = self.now();
        let n = self.n(from);
        if !n.alive {
            return;
        }
        n.mac.enqueue(to, payload, now);
        self.ensure_failure_timer(from, to);
        self.update_scan(from);
    }

    fn on_failure_timer(&mut self, id: NodeId, dest: NodeId) {
        let n = self.n(id);
        n.mac.failure_timers.remove(&dest);
        if !n.alive || n.mac.connected_with == Some(dest) {
            return;
        }
        let frames = n.mac.drain(dest);
        if frames.is_empty() {
            return;
        }
        if self.node(dest).alive {
            self.stats.false_failures += 1;
        }
        self.n(id).known_failed.insert(dest);
        for f in frames {
            self.on_send_failure(id, dest, f.payload);
        }
        self.update_scan(id);
    }

    /// Switches `node` off at `at`, on top of any scheduled failure.
    pub fn schedule_power_off(&mut self, node: NodeId, at: SimTime) {
        self.q.schedule(at, node, Ev::Fail).expect("future");
    }

    fn on_fail(&mut self, id: NodeId) {
        let now = self.now();
        self.failed_at = Some(now);
        let n = self.n(id);
        n.alive = false;
        n.mac.drain_all();
        n.mac.listening_for_adv = false;
        if let Some(h) = n.adv_next_pdu.take() {
            self.q.cancel(h);
        }
        let timers: Vec<EventHandle> = std::mem::take(&mut self.n(id).mac.failure_timers).into_values().collect();
        for h in timers {
            self.q.cancel(h);
        }
        self.update_scan(id);
        self.n(id).timeline.close_all(now);
    }

    pub fn fail_target(&self) -> Option<NodeId> {
        self.fail_target
    }

    /// Follows the upstream pointers of `route_id` from its origin.
    pub fn trace_route(&self, route_id: RouteId) -> Option<Vec<NodeId>> {
        let mut path = vec![route_id.origin];
        let mut cur = route_id.origin;
        while let Some(next) = self.index.get(&cur).and_then(|&i| self.nodes[i].gsa.table.get(route_id)).and_then(|e| e.upstream) {
            if path.contains(&next) {
                return None;
            }
            path.push(next);
            cur = next;
        }
        Some(path)
    }

    /// Paths built by `origin`, in creation order.
    pub fn built_paths(&self, origin: NodeId) -> Vec<Vec<NodeId>> {
        let Some(st) = self.node(origin).gsa.origin_state() else { return vec![] };
        st.routes.iter().filter_map(|&r| self.trace_route(r)).collect()
    }

    // ---- discovery --------------------------------------------------------

    fn on_discovery_start(&mut self) {
        let now = self.now();
        self.discovery_started_at = Some(now);
        let ids: Vec<NodeId> = self.nodes.iter().map(|n| n.id).collect();
        for id in ids {
            let n = self.n(id);
            n.disc.start(now);
            n.mac.listening_for_adv = true;
            self.update_scan(id);
        }
    }

    /// Starts a discovery round on top of the stored table, timer armed.
    pub(crate) fn start_rediscovery(&mut self, id: NodeId) {
        let now = self.now();
        let len = SimTime::from_secs_f64(self.cfg.recovery.rediscovery_timer_s);
        let n = self.n(id);
        if n.rediscovering {
            return;
        }
        n.rediscovering = true;
        n.disc.restart(now);
        n.mac.listening_for_adv = true;
        if let Some(h) = n.disc_timer.take() {
            self.q.cancel(h);
        }
        let h = self.q.schedule_in(len, id, Ev::DiscoveryTimer);
        self.n(id).disc_timer = Some(h);
        self.update_scan(id);
    }

    fn on_discovery_timer(&mut self, id: NodeId) {
        let now = self.now();
        let n = self.n(id);
        n.disc_timer = None;
        if !n.alive {
            return;
        }
        n.disc.on_timer(now);
        n.disc.abandon();
        n.mac.listening_for_adv = false;
        let was_recovery = std::mem::replace(&mut n.rediscovering, false);
        if !was_recovery && n.first_discovery.is_none() {
            n.first_discovery = n.disc.duration();
        }
        self.update_scan(id);
        if was_recovery {
            let waiting = std::mem::take(&mut self.n(id).hb_waiting);
            for (pkt, prev) in waiting {
                self.hb_continue(id, pkt, prev);
            }
        } else if self.cfg.protocol == Protocol::Proposed && !self.node(id).is_head {
            let n = self.n(id);
            let outs = n.gsa.start(now, n.disc.table());
            self.process_gsa(id, outs);
        }
    }
}
