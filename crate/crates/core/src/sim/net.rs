//! Network layer of the simulated nodes: path creation, data forwarding,
//! failure recovery and flooding.

use crate::engine::SimTime;
use crate::flooding::{FloodDest, FloodKey, FloodMessage, FloodRx};
use crate::recovery::{failure_distance, hb_reuse, hb_select, multipath_next, RecoveryMethod};
use crate::routing::{Direction, GsaOutput, LinkReply, RouteId, RoutingMsg};
use crate::topology::NodeId;

use super::{Ev, World};

/// Hop budget after which a wandering data packet is given up.
const MAX_DATA_HOPS: u16 = 64;

/// Extra reconnection windows granted to a routing reply.
const CONTROL_RETRIES: u32 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct DataPacket {
    pub id: u32,
    pub is_ack: bool,
    pub dir: Direction,
    pub route_id: RouteId,
    /// Hop-count of the origin, the TTL the packet started with.
    pub initial_ttl: u8,
    pub ttl: u8,
    /// Travelling on hop-distance recovery.
    pub hb: bool,
    pub failed: Vec<NodeId>,
    pub hops: u16,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Notice {
    pub packet: DataPacket,
    pub failed: NodeId,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Routing(RoutingMsg),
    Data(DataPacket),
    Notice(Notice),
    Flood(FloodMessage),
}

impl Payload {
    pub fn packet_id(&self) -> Option<u32> {
        match self {
            Payload::Data(p) => Some(p.id),
            Payload::Notice(n) => Some(n.packet.id),
            Payload::Flood(m) => Some(m.packet),
            Payload::Routing(_) => None,
        }
    }
}

/// Life of one generated data packet.
#[derive(Debug, Clone, PartialEq)]
pub struct PacketTrack {
    pub id: u32,
    pub source: NodeId,
    pub source_hop: u32,
    pub ack_required: bool,
    pub generated: SimTime,
    pub uplink_at: Option<SimTime>,
    pub ack_at: Option<SimTime>,
    pub undeliverable: bool,
    pub transmissions: u64,
    pub failure_at: Option<SimTime>,
    pub detector: Option<NodeId>,
    pub failed_node: Option<NodeId>,
    pub failure_x: Option<u32>,
    pub method: Option<RecoveryMethod>,
    pub predicted_hb_s: Option<f64>,
    pub predicted_mp_s: Option<f64>,
    /// Route the uplink copy reached the head on.
    pub delivered_route: Option<RouteId>,
    /// Hops from the source along the path that delivered the uplink copy.
    pub uplink_hops: Option<u16>,
    /// Times the sending end moved to the next path.
    pub mp_switches: u32,
}

impl PacketTrack {
    pub fn new(id: u32, source: NodeId, source_hop: u32, ack_required: bool, generated: SimTime) -> Self {
        Self {
            id,
            source,
            source_hop,
            ack_required,
            generated,
            uplink_at: None,
            ack_at: None,
            undeliverable: false,
            transmissions: 0,
            failure_at: None,
            detector: None,
            failed_node: None,
            failure_x: None,
            method: None,
            predicted_hb_s: None,
            predicted_mp_s: None,
            delivered_route: None,
            uplink_hops: None,
            mp_switches: 0,
        }
    }

    pub fn is_settled(&self) -> bool {
        self.undeliverable || (self.uplink_at.is_some() && (!self.ack_required || self.ack_at.is_some()))
    }

    pub fn delivered(&self) -> bool {
        self.uplink_at.is_some() && (!self.ack_required || self.ack_at.is_some())
    }

    /// End-to-end latency including the acknowledgment when one is required.
    pub fn latency(&self) -> Option<SimTime> {
        let end = if self.ack_required { self.ack_at? } else { self.uplink_at? };
        Some(end.saturating_sub(self.generated))
    }
}

impl World<'_> {
    /// A frame reached the network layer of `me`. The return value rides
    /// back in the link-layer acknowledgment.
    pub(super) fn deliver_frame(&mut self, me: NodeId, from: NodeId, payload: Payload) -> Option<LinkReply> {
        let now = self.now();
        match payload {
            Payload::Routing(RoutingMsg::Gsa(m)) => {
                let n = self.n(me);
                let (reply, outs) = n.gsa.on_gsa(from, &m, now, n.disc.table());
                self.process_gsa(me, outs);
                Some(reply)
            }
            Payload::Routing(RoutingMsg::RoutingAck { route_id, path }) => {
                let n = self.n(me);
                let outs = n.gsa.on_routing_ack(route_id, &path, now, n.disc.table());
                self.process_gsa(me, outs);
                None
            }
            Payload::Routing(RoutingMsg::RoutingNack { route_id }) => {
                let n = self.n(me);
                let outs = n.gsa.on_routing_nack(from, route_id, now, n.disc.table());
                self.process_gsa(me, outs);
                None
            }
            Payload::Data(p) => {
                self.route_data(me, p, Some(from));
                None
            }
            Payload::Notice(n) => {
                self.on_notice(me, n);
                None
            }
            Payload::Flood(m) => {
                self.on_flood(me, from, m);
                None
            }
        }
    }

    pub(super) fn on_frame_acked(&mut self, from: NodeId, to: NodeId, payload: &Payload, reply: Option<LinkReply>) {
        if let (Payload::Routing(RoutingMsg::Gsa(m)), Some(r)) = (payload, reply) {
            let now = self.now();
            let n = self.n(from);
            let outs = n.gsa.on_link_reply(to, m.route_id, r, now, n.disc.table());
            self.process_gsa(from, outs);
        }
    }

    pub(super) fn on_send_failure(&mut self, me: NodeId, dest: NodeId, payload: Payload) {
        let now = self.now();
        match payload {
            Payload::Routing(RoutingMsg::Gsa(m)) => {
                let n = self.n(me);
                let outs = n.gsa.on_send_failed(dest, m.route_id, now, n.disc.table());
                self.process_gsa(me, outs);
            }
            Payload::Routing(msg) => {
                // replies have no alternative route; keep trying a few windows
                let route_id = match &msg {
                    RoutingMsg::RoutingAck { route_id, .. } | RoutingMsg::RoutingNack { route_id } => *route_id,
                    RoutingMsg::Gsa(_) => unreachable!("handled above"),
                };
                let n = self.n(me);
                let tries = n.control_retries.entry((dest, route_id)).or_insert(0);
                *tries += 1;
                if *tries <= CONTROL_RETRIES {
                    self.send(me, dest, Payload::Routing(msg));
                } else {
                    self.stats.lost_control += 1;
                }
            }
            Payload::Data(p) => self.on_data_failure(me, p, dest),
            Payload::Notice(n) => self.undeliverable(n.packet.id),
            Payload::Flood(_) => {}
        }
    }

    pub(super) fn process_gsa(&mut self, me: NodeId, outs: Vec<GsaOutput>) {
        for o in outs {
            match o {
                GsaOutput::Send { to, msg } => self.send(me, to, Payload::Routing(msg)),
                GsaOutput::Finished { .. } => {
                    let now = self.now();
                    self.n(me).gsa_done_at = Some(now);
                }
            }
        }
    }

    fn undeliverable(&mut self, packet: u32) {
        if let Some(t) = self.packets.get_mut(&packet) {
            if !t.delivered() {
                t.undeliverable = true;
            }
        }
    }

    // ---- data ---------------------------------------------------------------

    pub(super) fn on_generate(&mut self, src: NodeId, packet: u32) {
        if !self.node(src).alive {
            self.undeliverable(packet);
            return;
        }
        match self.cfg.protocol {
            crate::config::Protocol::Proposed => {
                let n = self.node(src);
                let hop = n.disc.my_hop().value().unwrap_or(0).max(1);
                let Some(route_id) = n.gsa.table.first_active(src) else {
                    self.undeliverable(packet);
                    return;
                };
                let pkt = DataPacket {
                    id: packet,
                    is_ack: false,
                    dir: Direction::Uplink,
                    route_id,
                    initial_ttl: hop,
                    ttl: hop,
                    hb: false,
                    failed: vec![],
                    hops: 0,
                };
                self.route_data(src, pkt, None);
            }
            crate::config::Protocol::Flooding => {
                let ttl = self.cfg.flooding.ttl;
                let nbrs = self.flood_neighbors(src);
                let (msg, targets) = self.n(src).flood.originate(FloodDest::Head, ttl, packet, false, &nbrs);
                for t in targets {
                    self.send(src, t, Payload::Flood(msg.clone()));
                }
            }
        }
    }

    fn forward(&mut self, me: NodeId, mut pkt: DataPacket, next: NodeId) {
        pkt.ttl = pkt.ttl.saturating_sub(1);
        pkt.hops += 1;
        self.send(me, next, Payload::Data(pkt));
    }

    /// Handles a data packet at `me`, arriving from `prev` (`None` when `me`
    /// emits it).
    fn route_data(&mut self, me: NodeId, pkt: DataPacket, prev: Option<NodeId>) {
        let now = self.now();
        if pkt.hops > MAX_DATA_HOPS {
            self.undeliverable(pkt.id);
            return;
        }
        let is_head = self.node(me).is_head;
        if pkt.dir == Direction::Uplink && is_head {
            let n = self.n(me);
            if pkt.hb {
                n.gsa.table.upsert(pkt.route_id, None, prev, now);
            }
            n.gsa.table.activate_and_invalidate_older(pkt.route_id);
            let Some(t) = self.packets.get_mut(&pkt.id) else { return };
            if t.uplink_at.is_some() {
                return;
            }
            t.uplink_at = Some(now);
            t.delivered_route = Some(pkt.route_id);
            t.uplink_hops = Some(pkt.hops);
            if t.ack_required {
                let ack =
                    DataPacket { is_ack: true, dir: Direction::Downlink, ttl: pkt.initial_ttl, hb: false, failed: vec![], hops: 0, ..pkt };
                self.route_data(me, ack, None);
            }
            return;
        }
        if pkt.dir == Direction::Downlink && me == pkt.route_id.origin {
            self.n(me).gsa.table.activate_and_invalidate_older(pkt.route_id);
            if let Some(t) = self.packets.get_mut(&pkt.id) {
                if t.ack_at.is_none() {
                    t.ack_at = Some(now);
                }
            }
            return;
        }
        if pkt.hb && pkt.dir == Direction::Uplink {
            self.hb_relay(me, pkt, prev);
            return;
        }
        match self.node(me).gsa.table.forward(pkt.route_id, pkt.dir) {
            Ok(next) if self.node(me).known_failed.contains(&next) => {
                let pkt = DataPacket { ttl: pkt.ttl.saturating_sub(1), hops: pkt.hops + 1, ..pkt };
                self.on_data_failure(me, pkt, next);
            }
            Ok(next) => self.forward(me, pkt, next),
            Err(_) if pkt.dir == Direction::Uplink => {
                let pkt = DataPacket { hb: true, ..pkt };
                self.hb_relay(me, pkt, prev);
            }
            Err(_) => self.undeliverable(pkt.id),
        }
    }

    /// The link layer declared `failed` unreachable while holding `pkt`,
    /// which was already counted as sent to it.
    fn on_data_failure(&mut self, me: NodeId, mut pkt: DataPacket, failed: NodeId) {
        let now = self.now();
        self.n(me).known_failed.insert(failed);
        let z = u32::from(pkt.initial_ttl).max(1);
        let x = failure_distance(pkt.initial_ttl, pkt.ttl).clamp(1, z);
        // the hop to `failed` never happened
        pkt.ttl = pkt.ttl.saturating_add(1).min(pkt.initial_ttl);
        pkt.hops = pkt.hops.saturating_sub(1);
        let method = self.cfg.recovery.decide(pkt.dir, z, x);
        let params = self.cfg.recovery.params(z, x);
        if let Some(t) = self.packets.get_mut(&pkt.id) {
            if t.failure_at.is_none() && !pkt.is_ack {
                t.failure_at = Some(now);
                t.detector = Some(me);
                t.failed_node = Some(failed);
                t.failure_x = Some(x);
                t.method = Some(method);
                t.predicted_hb_s = Some(crate::recovery::hb_latency(&params));
                t.predicted_mp_s = Some(crate::recovery::mp_latency(&params));
            }
        }
        match method {
            RecoveryMethod::Mp => self.mp_recover(me, pkt, failed),
            RecoveryMethod::Hb => {
                if !pkt.failed.contains(&failed) {
                    pkt.failed.push(failed);
                }
                pkt.hb = true;
                let prev = self.node(me).gsa.table.get(pkt.route_id).and_then(|e| e.previous_hop(pkt.dir));
                self.start_hb(me, pkt, prev);
            }
        }
    }

    fn is_sending_end(&self, me: NodeId, pkt: &DataPacket) -> bool {
        match pkt.dir {
            Direction::Uplink => me == pkt.route_id.origin,
            Direction::Downlink => self.node(me).is_head,
        }
    }

    /// Multi-path recovery: back to the sending end, then the next path.
    fn mp_recover(&mut self, me: NodeId, mut pkt: DataPacket, failed: NodeId) {
        pkt.hb = false;
        pkt.failed.clear();
        if self.is_sending_end(me, &pkt) {
            match multipath_next(&mut self.n(me).gsa.table, pkt.route_id) {
                Some(next_route) => {
                    if let Some(t) = self.packets.get_mut(&pkt.id) {
                        if !pkt.is_ack {
                            t.mp_switches += 1;
                        }
                    }
                    pkt.route_id = next_route;
                    pkt.ttl = pkt.initial_ttl;
                    pkt.hops = 0;
                    self.route_data(me, pkt, None);
                }
                None => self.undeliverable(pkt.id),
            }
            return;
        }
        let table = &mut self.n(me).gsa.table;
        let back = table.get(pkt.route_id).and_then(|e| e.previous_hop(pkt.dir));
        table.invalidate(pkt.route_id);
        match back {
            Some(b) => self.send(me, b, Payload::Notice(Notice { packet: pkt, failed })),
            None => self.undeliverable(pkt.id),
        }
    }

    fn on_notice(&mut self, me: NodeId, notice: Notice) {
        if self.is_sending_end(me, &notice.packet) {
            self.mp_recover(me, notice.packet, notice.failed);
            return;
        }
        let table = &mut self.n(me).gsa.table;
        let back = table.get(notice.packet.route_id).and_then(|e| e.previous_hop(notice.packet.dir));
        table.invalidate(notice.packet.route_id);
        match back {
            Some(b) => self.send(me, b, Payload::Notice(notice)),
            None => self.undeliverable(notice.packet.id),
        }
    }

    /// Relay step of a packet on hop-distance recovery.
    fn hb_relay(&mut self, me: NodeId, pkt: DataPacket, prev: Option<NodeId>) {
        let now = self.now();
        let n = self.node(me);
        let failed: Vec<NodeId> = pkt.failed.iter().chain(n.known_failed.iter()).copied().collect();
        match hb_reuse(&n.gsa.table, me, pkt.route_id, prev, &failed) {
            Some(next) => {
                self.n(me).gsa.table.upsert(pkt.route_id, Some(next), prev, now);
                self.forward(me, pkt, next);
            }
            None => self.start_hb(me, pkt, prev),
        }
    }

    fn start_hb(&mut self, me: NodeId, pkt: DataPacket, prev: Option<NodeId>) {
        if self.cfg.recovery.fresh_discovery {
            self.n(me).hb_waiting.push((pkt, prev));
            self.start_rediscovery(me);
        } else {
            self.hb_continue(me, pkt, prev);
        }
    }

    /// Picks the minimum-hop neighbor and rewrites the route entry.
    pub(super) fn hb_continue(&mut self, me: NodeId, pkt: DataPacket, prev: Option<NodeId>) {
        let now = self.now();
        let n = self.node(me);
        let failed: Vec<NodeId> = pkt.failed.iter().chain(n.known_failed.iter()).copied().collect();
        match hb_select(n.disc.table(), &failed, prev) {
            Some(next) => {
                self.n(me).gsa.table.upsert(pkt.route_id, Some(next), prev, now);
                self.forward(me, pkt, next);
            }
            None => {
                let failed = pkt.failed.last().copied().unwrap_or(me);
                self.mp_recover(me, pkt, failed);
            }
        }
    }

    // ---- flooding -----------------------------------------------------------

    fn flood_neighbors(&self, me: NodeId) -> Vec<NodeId> {
        let n = self.node(me);
        n.disc.table().iter().map(|e| e.id).filter(|id| !n.known_failed.contains(id)).collect()
    }

    fn on_flood(&mut self, me: NodeId, from: NodeId, m: FloodMessage) {
        let now = self.now();
        match self.n(me).flood.on_receive(from, &m) {
            FloodRx::Absorbed => {
                let Some(t) = self.packets.get_mut(&m.packet) else { return };
                if m.is_ack {
                    t.ack_at.get_or_insert(now);
                    return;
                }
                if t.uplink_at.is_some() {
                    return;
                }
                t.uplink_at = Some(now);
                if t.ack_required {
                    let source = t.source;
                    let ttl = self.cfg.flooding.ttl;
                    let nbrs = self.flood_neighbors(me);
                    let (msg, targets) = self.n(me).flood.originate(FloodDest::Node(source), ttl, m.packet, true, &nbrs);
                    for t in targets {
                        self.send(me, t, Payload::Flood(msg.clone()));
                    }
                }
            }
            FloodRx::StartTimer(key) => {
                let d = self.cfg.flooding.broadcast_timer();
                self.q.schedule_in(d, me, Ev::BroadcastTimer { key });
            }
            FloodRx::Coalesced | FloodRx::Duplicate | FloodRx::Dropped => {}
        }
    }

    pub(super) fn on_broadcast_timer(&mut self, me: NodeId, key: FloodKey) {
        if !self.node(me).alive {
            return;
        }
        let nbrs = self.flood_neighbors(me);
        if let Some((msg, targets)) = self.n(me).flood.on_timer(key, &nbrs) {
            for t in targets {
                self.send(me, t, Payload::Flood(msg.clone()));
            }
        }
    }
}
