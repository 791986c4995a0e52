//! Greedy Search Algorithm (GSA) for node-disjoint minimum-hop paths, and
//! the per-node routing table.
//!
//! An origin sends a GSA message with `TTL = maxTTL`; each hop picks the
//! neighbor with the smallest hop-count below its TTL (best RSSI on ties)
//! that is not excluded, decrements the TTL and forwards. A head answers
//! with a routing ack that walks the recorded path back to the origin,
//! and every node on the way stores a [`RoutingEntry`]. Dead ends are
//! reported with data-link nacks (immediate, inside the session) or
//! routing nacks (sent back to the previous hop).

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use crate::discovery::{HopCount, NeighborTable};
use crate::engine::SimTime;
use crate::topology::NodeId;

/// Upper bound for `maxTTL` escalation.
pub const MAX_TTL_LIMIT: u32 = 254;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RouteId {
    pub origin: NodeId,
    pub index: u16,
}

impl fmt::Debug for RouteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "R{}.{}", self.origin.0, self.index)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GsaMessage {
    pub route_id: RouteId,
    pub ttl: u32,
    pub max_ttl: u32,
    /// Nodes visited so far, origin first, sender last.
    pub path: Vec<NodeId>,
}

impl GsaMessage {
    pub fn origin(&self) -> NodeId {
        self.route_id.origin
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RoutingMsg {
    Gsa(GsaMessage),
    /// Full path origin..head; travels backwards along it.
    RoutingAck {
        route_id: RouteId,
        path: Vec<NodeId>,
    },
    RoutingNack {
        route_id: RouteId,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NackKind {
    Perm,
    Temp,
}

/// Immediate data-link response to a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkReply {
    Ack,
    Nack(NackKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RouteState {
    Active,
    Invalidated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Uplink,
    Downlink,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoutingEntry {
    pub route_id: RouteId,
    /// Towards the head; `None` at the head.
    pub upstream: Option<NodeId>,
    /// Towards the origin; `None` at the origin.
    pub downstream: Option<NodeId>,
    pub state: RouteState,
    pub created_at: SimTime,
    /// Insertion counter; breaks ties between entries created at the same instant.
    pub order: u64,
}

impl RoutingEntry {
    pub fn next_hop(&self, dir: Direction) -> Option<NodeId> {
        match dir {
            Direction::Uplink => self.upstream,
            Direction::Downlink => self.downstream,
        }
    }

    pub fn previous_hop(&self, dir: Direction) -> Option<NodeId> {
        match dir {
            Direction::Uplink => self.downstream,
            Direction::Downlink => self.upstream,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ForwardError {
    UnknownRoute(RouteId),
    Invalidated(RouteId),
    /// This node is the end of the route in that direction.
    EndOfRoute(RouteId),
}

#[derive(Debug, Clone, Default)]
pub struct RoutingTable {
    entries: BTreeMap<RouteId, RoutingEntry>,
    counter: u64,
}

impl RoutingTable {
    /// Inserts or replaces the entry for `route_id`. A replacement keeps the
    /// original chronological position.
    pub fn upsert(&mut self, route_id: RouteId, upstream: Option<NodeId>, downstream: Option<NodeId>, now: SimTime) {
        match self.entries.get_mut(&route_id) {
            Some(e) => {
                e.upstream = upstream;
                e.downstream = downstream;
                e.state = RouteState::Active;
            }
            None => {
                self.counter += 1;
                self.entries.insert(
                    route_id,
                    RoutingEntry { route_id, upstream, downstream, state: RouteState::Active, created_at: now, order: self.counter },
                );
            }
        }
    }

    pub fn get(&self, route_id: RouteId) -> Option<&RoutingEntry> {
        self.entries.get(&route_id)
    }

    pub fn get_mut(&mut self, route_id: RouteId) -> Option<&mut RoutingEntry> {
        self.entries.get_mut(&route_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &RoutingEntry> {
        self.entries.values()
    }

    /// Whether this node lies on some path already built for `origin`.
    pub fn in_previous_path(&self, origin: NodeId) -> bool {
        self.entries.keys().any(|r| r.origin == origin)
    }

    /// Routes of `origin` known here, oldest first.
    pub fn routes_of(&self, origin: NodeId) -> Vec<&RoutingEntry> {
        let mut v: Vec<_> = self.entries.values().filter(|e| e.route_id.origin == origin).collect();
        v.sort_by_key(|e| (e.created_at, e.order));
        v
    }

    /// Oldest active route of `origin`.
    pub fn first_active(&self, origin: NodeId) -> Option<RouteId> {
        self.routes_of(origin).into_iter().find(|e| e.state == RouteState::Active).map(|e| e.route_id)
    }

    pub fn invalidate(&mut self, route_id: RouteId) {
        if let Some(e) = self.entries.get_mut(&route_id) {
            e.state = RouteState::Invalidated;
        }
    }

    /// Marks `route_id` active and invalidates every older route of the same origin.
    pub fn activate_and_invalidate_older(&mut self, route_id: RouteId) {
        let Some(key) = self.entries.get(&route_id).map(|e| (e.created_at, e.order)) else {
            return;
        };
        for e in self.entries.values_mut().filter(|e| e.route_id.origin == route_id.origin) {
            if e.route_id == route_id {
                e.state = RouteState::Active;
            } else if (e.created_at, e.order) < key {
                e.state = RouteState::Invalidated;
            }
        }
    }

    pub fn forward(&self, route_id: RouteId, dir: Direction) -> Result<NodeId, ForwardError> {
        let e = self.entries.get(&route_id).ok_or(ForwardError::UnknownRoute(route_id))?;
        if e.state == RouteState::Invalidated {
            return Err(ForwardError::Invalidated(route_id));
        }
        e.next_hop(dir).ok_or(ForwardError::EndOfRoute(route_id))
    }

    /// Human-readable dump, one route per line.
    pub fn dump(&self) -> String {
        let mut out = String::from("route_id\tupstream\tdownstream\tstate\tcreated_s\n");
        let mut v: Vec<_> = self.entries.values().collect();
        v.sort_by_key(|e| (e.created_at, e.order));
        for e in v {
            let hop = |n: Option<NodeId>| n.map_or_else(|| "-".to_string(), |n| n.0.to_string());
            out.push_str(&format!(
                "{:?}\t{}\t{}\t{:?}\t{:.6}\n",
                e.route_id,
                hop(e.upstream),
                hop(e.downstream),
                e.state,
                e.created_at.as_secs_f64()
            ));
        }
        out
    }
}

/// Per-origin neighbor blacklists.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExclusionLists {
    perm: BTreeSet<NodeId>,
    /// Neighbor -> the `maxTTL` of the search during which it is avoided.
    temp: BTreeMap<NodeId, u32>,
}

impl ExclusionLists {
    pub fn add(&mut self, n: NodeId, kind: NackKind, max_ttl: u32) {
        match kind {
            NackKind::Perm => {
                self.temp.remove(&n);
                self.perm.insert(n);
            }
            NackKind::Temp => {
                if !self.perm.contains(&n) {
                    self.temp.insert(n, max_ttl);
                }
            }
        }
    }

    pub fn is_perm(&self, n: NodeId) -> bool {
        self.perm.contains(&n)
    }

    pub fn is_temp(&self, n: NodeId, max_ttl: u32) -> bool {
        self.temp.get(&n) == Some(&max_ttl)
    }

    pub fn is_excluded(&self, n: NodeId, max_ttl: u32) -> bool {
        self.is_perm(n) || self.is_temp(n, max_ttl)
    }
}

/// Picks the next hop: smallest hop-count below `ttl`, then best RSSI, then
/// lowest id. Excluded and already-visited nodes are skipped.
pub fn select_next_hop(ttl: u32, max_ttl: u32, excl: &ExclusionLists, neighbors: &NeighborTable, visited: &[NodeId]) -> Option<NodeId> {
    neighbors
        .iter()
        .filter(|e| e.hop.is_defined() && u32::from(e.hop.0) < ttl)
        .filter(|e| !excl.is_excluded(e.id, max_ttl) && !visited.contains(&e.id))
        .min_by(|a, b| a.hop.cmp(&b.hop).then(b.rssi.total_cmp(&a.rssi)).then(a.id.cmp(&b.id)))
        .map(|e| e.id)
}

#[derive(Debug, Clone, PartialEq)]
pub enum GsaOutput {
    Send {
        to: NodeId,
        msg: RoutingMsg,
    },
    /// Path creation at this origin ended with `n_paths` routes.
    Finished {
        n_paths: usize,
    },
}

#[derive(Debug, Clone)]
struct InFlight {
    ttl: u32,
    max_ttl: u32,
    /// Visited path including this node.
    path: Vec<NodeId>,
    predecessor: Option<NodeId>,
    awaiting: Option<NodeId>,
}

#[derive(Debug, Clone)]
pub struct OriginState {
    pub max_ttl: u32,
    pub n_paths: usize,
    pub next_index: u16,
    pub started_at: SimTime,
    pub finished_at: Option<SimTime>,
    pub routes: Vec<RouteId>,
}

#[derive(Debug, Clone)]
pub struct GsaAgent {
    me: NodeId,
    is_head: bool,
    max_paths: usize,
    /// A head refuses a second path arriving directly from its origin.
    head_rule: bool,
    pub table: RoutingTable,
    exclusions: BTreeMap<NodeId, ExclusionLists>,
    inflight: BTreeMap<RouteId, InFlight>,
    origin: Option<OriginState>,
}

impl GsaAgent {
    pub fn new(me: NodeId, is_head: bool, max_paths: usize, head_rule: bool) -> Self {
        Self {
            me,
            is_head,
            max_paths,
            head_rule,
            table: RoutingTable::default(),
            exclusions: BTreeMap::new(),
            inflight: BTreeMap::new(),
            origin: None,
        }
    }

    pub fn id(&self) -> NodeId {
        self.me
    }

    pub fn origin_state(&self) -> Option<&OriginState> {
        self.origin.as_ref()
    }

    pub fn is_finished(&self) -> bool {
        self.origin.as_ref().is_some_and(|o| o.finished_at.is_some())
    }

    pub fn exclusions_for(&self, origin: NodeId) -> Option<&ExclusionLists> {
        self.exclusions.get(&origin)
    }

    /// Starts building paths from this node. Heads do not originate.
    pub fn start(&mut self, now: SimTime, neighbors: &NeighborTable) -> Vec<GsaOutput> {
        if self.is_head {
            return vec![];
        }
        self.origin = Some(OriginState { max_ttl: 1, n_paths: 0, next_index: 0, started_at: now, finished_at: None, routes: vec![] });
        self.new_path(now, neighbors)
    }

    fn new_path(&mut self, now: SimTime, neighbors: &NeighborTable) -> Vec<GsaOutput> {
        let o = self.origin.as_mut().expect("origin state");
        if o.n_paths >= self.max_paths {
            o.finished_at = Some(now);
            return vec![GsaOutput::Finished { n_paths: o.n_paths }];
        }
        let route_id = RouteId { origin: self.me, index: o.next_index };
        o.next_index += 1;
        self.inflight
            .insert(route_id, InFlight { ttl: o.max_ttl, max_ttl: o.max_ttl, path: vec![self.me], predecessor: None, awaiting: None });
        self.send_step(route_id, now, neighbors)
    }

    fn send_step(&mut self, route_id: RouteId, now: SimTime, neighbors: &NeighborTable) -> Vec<GsaOutput> {
        let Some(ctx) = self.inflight.get(&route_id) else {
            return vec![];
        };
        let excl = self.exclusions.entry(route_id.origin).or_default();
        match select_next_hop(ctx.ttl, ctx.max_ttl, excl, neighbors, &ctx.path) {
            Some(next) => {
                let ctx = self.inflight.get_mut(&route_id).unwrap();
                ctx.awaiting = Some(next);
                let msg = GsaMessage { route_id, ttl: ctx.ttl, max_ttl: ctx.max_ttl, path: ctx.path.clone() };
                vec![GsaOutput::Send { to: next, msg: RoutingMsg::Gsa(msg) }]
            }
            None => {
                let ctx = self.inflight.remove(&route_id).unwrap();
                match ctx.predecessor {
                    Some(prev) => vec![GsaOutput::Send { to: prev, msg: RoutingMsg::RoutingNack { route_id } }],
                    None => self.origin_exhausted(route_id, ctx, now, neighbors),
                }
            }
        }
    }

    /// No selectable neighbor at the origin: widen the search if anything
    /// is left to try, otherwise stop.
    fn origin_exhausted(&mut self, route_id: RouteId, ctx: InFlight, now: SimTime, neighbors: &NeighborTable) -> Vec<GsaOutput> {
        let excl = self.exclusions.entry(self.me).or_default();
        let ttl = ctx.max_ttl;
        let more = neighbors
            .iter()
            .filter(|e| e.hop.is_defined() && !excl.is_perm(e.id))
            .any(|e| u32::from(e.hop.0) >= ttl || excl.is_temp(e.id, ttl));
        let o = self.origin.as_mut().expect("origin state");
        if more && o.max_ttl < MAX_TTL_LIMIT {
            o.max_ttl += 1;
            let max_ttl = o.max_ttl;
            self.inflight.insert(route_id, InFlight { ttl: max_ttl, max_ttl, path: vec![self.me], predecessor: None, awaiting: None });
            self.send_step(route_id, now, neighbors)
        } else {
            o.finished_at = Some(now);
            vec![GsaOutput::Finished { n_paths: o.n_paths }]
        }
    }

    /// A GSA message arrives from `from`. Returns the data-link reply and
    /// whatever this node sends next.
    pub fn on_gsa(&mut self, from: NodeId, msg: &GsaMessage, now: SimTime, neighbors: &NeighborTable) -> (LinkReply, Vec<GsaOutput>) {
        let origin = msg.origin();
        if self.is_head {
            if self.head_rule && msg.path.len() == 1 && self.table.in_previous_path(origin) {
                return (LinkReply::Nack(NackKind::Perm), vec![]);
            }
            self.table.upsert(msg.route_id, None, Some(from), now);
            let mut path = msg.path.clone();
            path.push(self.me);
            return (LinkReply::Ack, vec![GsaOutput::Send { to: from, msg: RoutingMsg::RoutingAck { route_id: msg.route_id, path } }]);
        }
        if self.table.in_previous_path(origin) || msg.path.contains(&self.me) || self.inflight.contains_key(&msg.route_id) {
            return (LinkReply::Nack(NackKind::Perm), vec![]);
        }
        let ttl = msg.ttl.saturating_sub(1);
        let mut path = msg.path.clone();
        path.push(self.me);
        let excl = self.exclusions.entry(origin).or_default();
        if select_next_hop(ttl, msg.max_ttl, excl, neighbors, &path).is_none() {
            let could_with_more_ttl = select_next_hop(u32::MAX, msg.max_ttl, excl, neighbors, &path).is_some();
            let kind = if could_with_more_ttl { NackKind::Temp } else { NackKind::Perm };
            return (LinkReply::Nack(kind), vec![]);
        }
        self.inflight.insert(msg.route_id, InFlight { ttl, max_ttl: msg.max_ttl, path, predecessor: Some(from), awaiting: None });
        (LinkReply::Ack, self.send_step(msg.route_id, now, neighbors))
    }

    /// Data-link reply for a GSA message this node sent to `to`.
    pub fn on_link_reply(
        &mut self,
        to: NodeId,
        route_id: RouteId,
        reply: LinkReply,
        now: SimTime,
        neighbors: &NeighborTable,
    ) -> Vec<GsaOutput> {
        let Some(ctx) = self.inflight.get_mut(&route_id) else {
            return vec![];
        };
        if ctx.awaiting != Some(to) {
            return vec![];
        }
        match reply {
            LinkReply::Ack => vec![],
            LinkReply::Nack(kind) => {
                ctx.awaiting = None;
                let max_ttl = ctx.max_ttl;
                self.exclusions.entry(route_id.origin).or_default().add(to, kind, max_ttl);
                self.send_step(route_id, now, neighbors)
            }
        }
    }

    /// The link layer gave up on delivering a GSA message to `to`.
    pub fn on_send_failed(&mut self, to: NodeId, route_id: RouteId, now: SimTime, neighbors: &NeighborTable) -> Vec<GsaOutput> {
        self.on_link_reply(to, route_id, LinkReply::Nack(NackKind::Temp), now, neighbors)
    }

    pub fn on_routing_nack(&mut self, from: NodeId, route_id: RouteId, now: SimTime, neighbors: &NeighborTable) -> Vec<GsaOutput> {
        match self.inflight.get(&route_id) {
            Some(ctx) if ctx.awaiting == Some(from) => self.on_link_reply(from, route_id, LinkReply::Nack(NackKind::Temp), now, neighbors),
            _ => vec![],
        }
    }

    pub fn on_routing_ack(&mut self, route_id: RouteId, path: &[NodeId], now: SimTime, neighbors: &NeighborTable) -> Vec<GsaOutput> {
        let Some(i) = path.iter().position(|&n| n == self.me) else {
            return vec![];
        };
        if i + 1 >= path.len() {
            return vec![];
        }
        let upstream = path[i + 1];
        let downstream = (i > 0).then(|| path[i - 1]);
        self.table.upsert(route_id, Some(upstream), downstream, now);
        self.inflight.remove(&route_id);
        match downstream {
            Some(prev) => vec![GsaOutput::Send { to: prev, msg: RoutingMsg::RoutingAck { route_id, path: path.to_vec() } }],
            None => {
                let Some(o) = self.origin.as_mut() else {
                    return vec![];
                };
                if o.finished_at.is_some() {
                    return vec![];
                }
                o.n_paths += 1;
                o.routes.push(route_id);
                self.new_path(now, neighbors)
            }
        }
    }
}

/// Runs GSA with ideal, instantaneous delivery. Origins are started in id
/// order and messages are processed first-in first-out.
pub fn ideal_gsa(
    neighbors: &BTreeMap<NodeId, NeighborTable>,
    heads: &BTreeSet<NodeId>,
    hops: &BTreeMap<NodeId, HopCount>,
    max_paths: usize,
    head_rule: bool,
) -> BTreeMap<NodeId, GsaAgent> {
    let mut agents: BTreeMap<NodeId, GsaAgent> =
        neighbors.keys().map(|&n| (n, GsaAgent::new(n, heads.contains(&n), max_paths, head_rule))).collect();
    let empty = NeighborTable::default();
    let nb = |n: NodeId| neighbors.get(&n).unwrap_or(&empty);
    let mut queue: VecDeque<(NodeId, GsaOutput)> = VecDeque::new();
    for (&id, agent) in agents.iter_mut() {
        if heads.contains(&id) || !hops.get(&id).is_some_and(|h| h.is_defined()) {
            continue;
        }
        queue.extend(agent.start(SimTime::ZERO, nb(id)).into_iter().map(|o| (id, o)));
    }
    let mut steps = 0usize;
    while let Some((from, out)) = queue.pop_front() {
        steps += 1;
        assert!(steps < 10_000_000, "GSA did not terminate");
        let GsaOutput::Send { to, msg } = out else { continue };
        let now = SimTime(steps as u64);
        match msg {
            RoutingMsg::Gsa(m) => {
                let (reply, outs) = agents.get_mut(&to).expect("known node").on_gsa(from, &m, now, nb(to));
                queue.extend(outs.into_iter().map(|o| (to, o)));
                let outs = agents.get_mut(&from).unwrap().on_link_reply(to, m.route_id, reply, now, nb(from));
                queue.extend(outs.into_iter().map(|o| (from, o)));
            }
            RoutingMsg::RoutingAck { route_id, path } => {
                let outs = agents.get_mut(&to).unwrap().on_routing_ack(route_id, &path, now, nb(to));
                queue.extend(outs.into_iter().map(|o| (to, o)));
            }
            RoutingMsg::RoutingNack { route_id } => {
                let outs = agents.get_mut(&to).unwrap().on_routing_nack(from, route_id, now, nb(to));
                queue.extend(outs.into_iter().map(|o| (to, o)));
            }
        }
    }
    agents
}

/// Follows upstream pointers of `route_id` from its origin to the end.
pub fn trace_route(agents: &BTreeMap<NodeId, GsaAgent>, route_id: RouteId) -> Option<Vec<NodeId>> {
    let mut path = vec![route_id.origin];
    let mut cur = route_id.origin;
    while let Some(next) = agents.get(&cur)?.table.get(route_id)?.upstream {
        if path.contains(&next) || path.len() > agents.len() {
            return None;
        }
        path.push(next);
        cur = next;
    }
    Some(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discovery::NeighborEntry;

    fn table(entries: &[(u32, u8, f64)]) -> NeighborTable {
        let mut t = NeighborTable::default();
        for &(id, hop, rssi) in entries {
            t.upsert(NeighborEntry { id: NodeId(id), hop: HopCount(hop), rssi, advertised: vec![], updated: SimTime::ZERO });
        }
        t
    }

    #[test]
    fn select_prefers_min_hop_then_rssi() {
        let ex = ExclusionLists::default();
        assert_eq!(select_next_hop(3, 3, &ex, &table(&[(2, 2, -40.0), (3, 1, -69.0)]), &[]), Some(NodeId(3)));
        assert_eq!(select_next_hop(3, 3, &ex, &table(&[(2, 1, -70.0), (3, 1, -60.0)]), &[]), Some(NodeId(3)));
        assert_eq!(select_next_hop(1, 1, &ex, &table(&[(2, 1, -70.0)]), &[]), None);
    }

    #[test]
    fn select_skips_exclusions() {
        let t = table(&[(2, 1, -60.0), (3, 1, -70.0)]);
        let mut ex = ExclusionLists::default();
        ex.add(NodeId(2), NackKind::Perm, 3);
        ex.add(NodeId(3), NackKind::Temp, 3);
        assert_eq!(select_next_hop(3, 3, &ex, &t, &[]), None);
        // temp exclusion only applies to the maxTTL it was recorded for
        assert_eq!(select_next_hop(4, 4, &ex, &t, &[]), Some(NodeId(3)));
        assert_eq!(select_next_hop(4, 4, &ex, &t, &[NodeId(3)]), None);
    }

    #[test]
    fn routing_table_chronology() {
        let mut t = RoutingTable::default();
        let o = NodeId(7);
        let r = |i| RouteId { origin: o, index: i };
        t.upsert(r(0), Some(NodeId(1)), None, SimTime(10));
        t.upsert(r(1), Some(NodeId(2)), None, SimTime(20));
        t.upsert(r(2), Some(NodeId(3)), None, SimTime(30));
        assert_eq!(t.first_active(o), Some(r(0)));
        t.invalidate(r(0));
        assert_eq!(t.first_active(o), Some(r(1)));
        t.activate_and_invalidate_older(r(2));
        assert_eq!(t.get(r(1)).unwrap().state, RouteState::Invalidated);
        assert_eq!(t.first_active(o), Some(r(2)));
        assert_eq!(t.forward(r(2), Direction::Uplink), Ok(NodeId(3)));
        assert_eq!(t.forward(r(2), Direction::Downlink), Err(ForwardError::EndOfRoute(r(2))));
        assert_eq!(t.forward(r(1), Direction::Uplink), Err(ForwardError::Invalidated(r(1))));
        let unknown = RouteId { origin: NodeId(99), index: 0 };
        assert_eq!(t.forward(unknown, Direction::Uplink), Err(ForwardError::UnknownRoute(unknown)));
        assert!(t.dump().lines().count() == 4);
    }

    fn graph_tables(edges: &[(u32, u32)], n: u32) -> (BTreeMap<NodeId, NeighborTable>, BTreeMap<NodeId, HopCount>) {
        let ids: Vec<_> = (1..=n).map(NodeId).collect();
        let g = crate::topology::ConnectivityGraph::from_edges(&ids, &[NodeId(1)], edges);
        let bfs = g.hops_to_heads();
        let tables = ids.iter().map(|&i| (i, NeighborTable::from_graph(&g, i, &bfs))).collect();
        let hops = ids.iter().map(|&i| (i, bfs.get(&i).map_or(HopCount::UNDEFINED, |h| HopCount(*h as u8)))).collect();
        (tables, hops)
    }

    #[test]
    fn one_hop_source_single_path() {
        let (t, h) = graph_tables(&[(1, 2)], 2);
        let heads = BTreeSet::from([NodeId(1)]);
        let agents = ideal_gsa(&t, &heads, &h, 1, true);
        let o = agents[&NodeId(2)].origin_state().unwrap();
        assert_eq!(o.n_paths, 1);
        assert_eq!(trace_route(&agents, o.routes[0]).unwrap(), vec![NodeId(2), NodeId(1)]);
        assert_eq!(agents[&NodeId(1)].table.len(), 1);
        assert_eq!(agents[&NodeId(2)].table.len(), 1);
    }

    #[test]
    fn chain_has_one_disjoint_path() {
        // head 1 - B 2 - A 3
        let (t, h) = graph_tables(&[(1, 2), (2, 3)], 3);
        let agents = ideal_gsa(&t, &BTreeSet::from([NodeId(1)]), &h, 2, true);
        let a = agents[&NodeId(3)].origin_state().unwrap();
        assert_eq!(a.n_paths, 1);
        assert!(a.finished_at.is_some());
        assert_eq!(trace_route(&agents, a.routes[0]).unwrap(), vec![NodeId(3), NodeId(2), NodeId(1)]);
    }

    #[test]
    fn head_rule_blocks_second_direct_path() {
        let (t, h) = graph_tables(&[(1, 2)], 2);
        let mut head = GsaAgent::new(NodeId(1), true, 5, true);
        let r0 = RouteId { origin: NodeId(2), index: 0 };
        let r1 = RouteId { origin: NodeId(2), index: 1 };
        let m0 = GsaMessage { route_id: r0, ttl: 1, max_ttl: 1, path: vec![NodeId(2)] };
        assert_eq!(head.on_gsa(NodeId(2), &m0, SimTime(0), &t[&NodeId(1)]).0, LinkReply::Ack);
        let m1 = GsaMessage { route_id: r1, ..m0.clone() };
        assert_eq!(head.on_gsa(NodeId(2), &m1, SimTime(1), &t[&NodeId(1)]).0, LinkReply::Nack(NackKind::Perm));
        // a longer path from the same origin is fine
        let m2 = GsaMessage { route_id: r1, ttl: 1, max_ttl: 2, path: vec![NodeId(2), NodeId(3)] };
        assert_eq!(head.on_gsa(NodeId(3), &m2, SimTime(2), &t[&NodeId(1)]).0, LinkReply::Ack);
        let _ = h;
    }

    #[test]
    fn intermediate_in_previous_path_nacks_perm() {
        let (t, _) = graph_tables(&[(1, 2), (2, 3)], 3);
        let mut b = GsaAgent::new(NodeId(2), false, 5, true);
        let r0 = RouteId { origin: NodeId(3), index: 0 };
        b.table.upsert(r0, Some(NodeId(1)), Some(NodeId(3)), SimTime(0));
        let m = GsaMessage { route_id: RouteId { origin: NodeId(3), index: 1 }, ttl: 2, max_ttl: 2, path: vec![NodeId(3)] };
        assert_eq!(b.on_gsa(NodeId(3), &m, SimTime(1), &t[&NodeId(2)]).0, LinkReply::Nack(NackKind::Perm));
    }

    #[test]
    fn ttl_dead_end_nacks_temp() {
        // 2 has only a hop-1 neighbor (3) besides the sender; TTL 1 leaves nothing below 1 except the head
        let (t, _) = graph_tables(&[(1, 3), (2, 3), (2, 4)], 4);
        let mut two = GsaAgent::new(NodeId(2), false, 5, true);
        let m = GsaMessage { route_id: RouteId { origin: NodeId(4), index: 0 }, ttl: 1, max_ttl: 1, path: vec![NodeId(4)] };
        assert_eq!(two.on_gsa(NodeId(4), &m, SimTime(0), &t[&NodeId(2)]).0, LinkReply::Nack(NackKind::Temp));
    }

    #[test]
    fn routing_nack_for_unknown_route_is_ignored() {
        let (t, _) = graph_tables(&[(1, 2)], 2);
        let mut a = GsaAgent::new(NodeId(2), false, 5, true);
        let out = a.on_routing_nack(NodeId(1), RouteId { origin: NodeId(9), index: 3 }, SimTime(0), &t[&NodeId(2)]);
        assert!(out.is_empty());
    }

    #[test]
    fn origin_escalates_max_ttl_after_nack() {
        // head 1, source 4 at hop 2 via 2 or 3
        let (t, _) = graph_tables(&[(1, 2), (1, 3), (2, 4), (3, 4)], 4);
        let mut src = GsaAgent::new(NodeId(4), false, 2, true);
        let out = src.start(SimTime(0), &t[&NodeId(4)]);
        // maxTTL started at 1, nothing below 1, escalated to 2 and picked 2 (lowest id on RSSI tie)
        assert_eq!(src.origin_state().unwrap().max_ttl, 2);
        let GsaOutput::Send { to, msg: RoutingMsg::Gsa(m) } = &out[0] else { panic!("{out:?}") };
        assert_eq!(*to, NodeId(2));
        assert_eq!(m.ttl, 2);
        let out = src.on_link_reply(NodeId(2), m.route_id, LinkReply::Nack(NackKind::Temp), SimTime(1), &t[&NodeId(4)]);
        let GsaOutput::Send { to, .. } = &out[0] else { panic!() };
        assert_eq!(*to, NodeId(3));
        let out = src.on_link_reply(NodeId(3), m.route_id, LinkReply::Nack(NackKind::Temp), SimTime(2), &t[&NodeId(4)]);
        // both temp-excluded at maxTTL 2: escalate to 3, exclusions lapse
        assert_eq!(src.origin_state().unwrap().max_ttl, 3);
        let GsaOutput::Send { to, msg: RoutingMsg::Gsa(m3) } = &out[0] else { panic!() };
        assert_eq!(*to, NodeId(2));
        assert_eq!(m3.ttl, 3);
    }
}
