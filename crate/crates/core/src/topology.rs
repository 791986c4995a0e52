//! Node deployments and the static connectivity graph.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{is_neighbor, path_loss, ChannelParams, Position, FLOOR_HEIGHT_M};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Head,
    BleNode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: NodeId,
    pub role: Role,
    pub position: Position,
}

impl NodeSpec {
    pub fn is_head(&self) -> bool {
        self.role == Role::Head
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("duplicate node id {0}")]
    DuplicateId(NodeId),
    #[error("topology has no head node")]
    NoHead,
    #[error("node {0} has a non-finite position")]
    BadPosition(NodeId),
    #[error("topology is empty")]
    Empty,
    #[error("invalid grid preset: {0}")]
    BadGrid(String),
}

/// Geometry knobs of the three-floor office deployment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PaperLayout {
    /// Spacing between consecutive nodes of a line, meters.
    pub spacing_m: f64,
    /// Separation between the two lines of a floor, meters.
    pub row_spacing_m: f64,
    /// Mounting height above each floor, meters.
    pub node_height_m: f64,
    /// Head offset from the horizontal center of the grid, meters.
    pub head_offset_x_m: f64,
    pub head_offset_y_m: f64,
}

impl Default for PaperLayout {
    fn default() -> Self {
        Self { spacing_m: 12.0, row_spacing_m: 12.0, node_height_m: 1.2, head_offset_x_m: 0.0, head_offset_y_m: 0.0 }
    }
}

pub const PAPER_FLOORS: u32 = 3;
pub const PAPER_COLUMNS: u32 = 5;
pub const PAPER_ROWS: u32 = 2;

/// The 31-node office deployment: head `#1` on the central-floor ceiling,
/// BLE nodes `#2..#31` in a 2x5 grid on each of three floors.
pub fn generate_paper_topology() -> Vec<NodeSpec> {
    generate_paper_topology_with(&PaperLayout::default())
}

pub fn generate_paper_topology_with(layout: &PaperLayout) -> Vec<NodeSpec> {
    let width = layout.spacing_m * f64::from(PAPER_COLUMNS - 1);
    let depth = layout.row_spacing_m * f64::from(PAPER_ROWS - 1);
    let central = f64::from(PAPER_FLOORS / 2) * FLOOR_HEIGHT_M;
    let mut nodes = vec![NodeSpec {
        id: NodeId(1),
        role: Role::Head,
        position: Position::new(width / 2.0 + layout.head_offset_x_m, depth / 2.0 + layout.head_offset_y_m, central + FLOOR_HEIGHT_M),
    }];
    let mut id = 2;
    for floor in 0..PAPER_FLOORS {
        for row in 0..PAPER_ROWS {
            for col in 0..PAPER_COLUMNS {
                nodes.push(NodeSpec {
                    id: NodeId(id),
                    role: Role::BleNode,
                    position: Position::new(
                        f64::from(col) * layout.spacing_m,
                        f64::from(row) * layout.row_spacing_m,
                        f64::from(floor) * FLOOR_HEIGHT_M + layout.node_height_m,
                    ),
                });
                id += 1;
            }
        }
    }
    nodes
}

/// Single-floor strip: head `#1` at column 0 in the middle row, then
/// `rows x cols` BLE nodes in columns `1..=cols`. With a spacing between
/// 12.05 m and 17.0 m only the 8 surrounding grid cells are in range, so a
/// node's hop-count equals its column index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StripLayout {
    pub rows: u32,
    pub cols: u32,
    pub spacing_m: f64,
    pub node_height_m: f64,
}

impl Default for StripLayout {
    fn default() -> Self {
        Self { rows: 3, cols: 5, spacing_m: 13.0, node_height_m: 1.2 }
    }
}

pub fn generate_strip(layout: &StripLayout) -> Result<Vec<NodeSpec>, TopologyError> {
    if layout.rows == 0 || layout.cols == 0 || !(layout.spacing_m > 0.0) {
        return Err(TopologyError::BadGrid(format!("{layout:?}")));
    }
    let s = layout.spacing_m;
    let mut nodes = vec![NodeSpec {
        id: NodeId(1),
        role: Role::Head,
        position: Position::new(0.0, f64::from(layout.rows - 1) * s / 2.0, layout.node_height_m),
    }];
    let mut id = 2;
    for col in 1..=layout.cols {
        for row in 0..layout.rows {
            nodes.push(NodeSpec {
                id: NodeId(id),
                role: Role::BleNode,
                position: Position::new(f64::from(col) * s, f64::from(row) * s, layout.node_height_m),
            });
            id += 1;
        }
    }
    Ok(nodes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    #[serde(rename = "paper-3floor")]
    Paper3Floor,
    Strip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDecl {
    pub id: u32,
    pub role: Role,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// The `[topology]` section of a scenario file: either a preset or an
/// explicit node list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct TopologyConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    pub paper: PaperLayout,
    pub strip: StripLayout,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub nodes: Vec<NodeDecl>,
}

impl TopologyConfig {
    pub fn preset(preset: Preset) -> Self {
        Self { preset: Some(preset), ..Self::default() }
    }
}

pub fn load_topology(cfg: &TopologyConfig) -> Result<Vec<NodeSpec>, TopologyError> {
    let nodes = match cfg.preset {
        Some(Preset::Paper3Floor) => generate_paper_topology_with(&cfg.paper),
        Some(Preset::Strip) => generate_strip(&cfg.strip)?,
        None => cfg.nodes.iter().map(|d| NodeSpec { id: NodeId(d.id), role: d.role, position: Position::new(d.x, d.y, d.z) }).collect(),
    };
    validate(&nodes)?;
    Ok(nodes)
}

pub fn validate(nodes: &[NodeSpec]) -> Result<(), TopologyError> {
    if nodes.is_empty() {
        return Err(TopologyError::Empty);
    }
    let mut seen = BTreeSet::new();
    for n in nodes {
        if !seen.insert(n.id) {
            return Err(TopologyError::DuplicateId(n.id));
        }
        if !n.position.is_finite() {
            return Err(TopologyError::BadPosition(n.id));
        }
    }
    if !nodes.iter().any(NodeSpec::is_head) {
        return Err(TopologyError::NoHead);
    }
    Ok(())
}

/// Undirected, irreflexive link graph with neighbor lists sorted by id.
#[derive(Debug, Clone)]
pub struct ConnectivityGraph {
    adjacency: BTreeMap<NodeId, Vec<NodeId>>,
    loss_db: BTreeMap<(NodeId, NodeId), f64>,
    heads: BTreeSet<NodeId>,
}

impl ConnectivityGraph {
    pub fn build(nodes: &[NodeSpec], params: &ChannelParams) -> Self {
        let mut adjacency: BTreeMap<NodeId, Vec<NodeId>> = nodes.iter().map(|n| (n.id, Vec::new())).collect();
        let mut loss_db = BTreeMap::new();
        for (i, a) in nodes.iter().enumerate() {
            for b in &nodes[i + 1..] {
                if is_neighbor(&a.position, &b.position, params) {
                    let pl = path_loss(&a.position, &b.position, params);
                    adjacency.get_mut(&a.id).unwrap().push(b.id);
                    adjacency.get_mut(&b.id).unwrap().push(a.id);
                    loss_db.insert((a.id.min(b.id), a.id.max(b.id)), pl);
                }
            }
        }
        for list in adjacency.values_mut() {
            list.sort();
        }
        let heads = nodes.iter().filter(|n| n.is_head()).map(|n| n.id).collect();
        Self { adjacency, loss_db, heads }
    }

    /// Builds from an explicit edge list; every edge gets the same nominal loss.
    pub fn from_edges(nodes: &[NodeId], heads: &[NodeId], edges: &[(u32, u32)]) -> Self {
        let mut adjacency: BTreeMap<NodeId, Vec<NodeId>> = nodes.iter().map(|n| (*n, Vec::new())).collect();
        let mut loss_db = BTreeMap::new();
        for &(a, b) in edges {
            let (a, b) = (NodeId(a), NodeId(b));
            assert_ne!(a, b, "self loops are not links");
            adjacency.get_mut(&a).expect("edge endpoint").push(b);
            adjacency.get_mut(&b).expect("edge endpoint").push(a);
            loss_db.insert((a.min(b), a.max(b)), 60.0);
        }
        for list in adjacency.values_mut() {
            list.sort();
            list.dedup();
        }
        Self { adjacency, loss_db, heads: heads.iter().copied().collect() }
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.adjacency.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn heads(&self) -> &BTreeSet<NodeId> {
        &self.heads
    }

    pub fn is_head(&self, n: NodeId) -> bool {
        self.heads.contains(&n)
    }

    pub fn neighbors(&self, n: NodeId) -> &[NodeId] {
        self.adjacency.get(&n).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn degree(&self, n: NodeId) -> usize {
        self.neighbors(n).len()
    }

    pub fn has_edge(&self, a: NodeId, b: NodeId) -> bool {
        self.neighbors(a).binary_search(&b).is_ok()
    }

    /// Path loss of a link, if the link exists.
    pub fn loss_db(&self, a: NodeId, b: NodeId) -> Option<f64> {
        self.loss_db.get(&(a.min(b), a.max(b))).copied()
    }

    /// Breadth-first hop distance to the nearest head; unreachable nodes are absent.
    pub fn hops_to_heads(&self) -> BTreeMap<NodeId, u32> {
        let mut dist = BTreeMap::new();
        let mut queue = VecDeque::new();
        for &h in &self.heads {
            dist.insert(h, 0);
            queue.push_back(h);
        }
        while let Some(u) = queue.pop_front() {
            let du = dist[&u];
            for &v in self.neighbors(u) {
                if let std::collections::btree_map::Entry::Vacant(e) = dist.entry(v) {
                    e.insert(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn office_topology_shape() {
        let nodes = generate_paper_topology();
        assert_eq!(nodes.len(), 31);
        assert_eq!(nodes.iter().filter(|n| n.is_head()).count(), 1);
        assert_eq!(nodes[0].id, NodeId(1));
        assert!((nodes[0].position.z - 8.0).abs() < 1e-12);
        assert_eq!(nodes[0].position.floor(), 1);
        for n in &nodes[1..] {
            let floor = n.position.floor();
            assert!((n.position.z - (4.0 * f64::from(floor) + 1.2)).abs() < 1e-12);
        }
        assert_eq!(generate_paper_topology(), generate_paper_topology());
    }

    #[test]
    fn load_explicit_two_nodes() {
        let cfg = TopologyConfig {
            nodes: vec![
                NodeDecl { id: 1, role: Role::Head, x: 0.0, y: 0.0, z: 1.0 },
                NodeDecl { id: 2, role: Role::BleNode, x: 5.0, y: 0.0, z: 1.0 },
            ],
            ..Default::default()
        };
        let nodes = load_topology(&cfg).unwrap();
        assert_eq!(nodes.len(), 2);
        let g = ConnectivityGraph::build(&nodes, &ChannelParams::default());
        assert!(g.has_edge(NodeId(1), NodeId(2)));
    }

    #[test]
    fn load_rejects_bad_input() {
        let dup = TopologyConfig {
            nodes: vec![
                NodeDecl { id: 1, role: Role::Head, x: 0.0, y: 0.0, z: 1.0 },
                NodeDecl { id: 1, role: Role::BleNode, x: 5.0, y: 0.0, z: 1.0 },
            ],
            ..Default::default()
        };
        assert_eq!(load_topology(&dup), Err(TopologyError::DuplicateId(NodeId(1))));
        let headless =
            TopologyConfig { nodes: vec![NodeDecl { id: 2, role: Role::BleNode, x: 0.0, y: 0.0, z: 1.0 }], ..Default::default() };
        assert_eq!(load_topology(&headless), Err(TopologyError::NoHead));
        let nan = TopologyConfig { nodes: vec![NodeDecl { id: 1, role: Role::Head, x: f64::NAN, y: 0.0, z: 1.0 }], ..Default::default() };
        assert_eq!(load_topology(&nan), Err(TopologyError::BadPosition(NodeId(1))));
    }

    #[test]
    fn edges_follow_distance() {
        let p = ChannelParams::default();
        let near = [
            NodeSpec { id: NodeId(1), role: Role::Head, position: Position::new(0.0, 0.0, 1.2) },
            NodeSpec { id: NodeId(2), role: Role::BleNode, position: Position::new(12.0, 0.0, 1.2) },
            NodeSpec { id: NodeId(3), role: Role::BleNode, position: Position::new(60.0, 0.0, 1.2) },
        ];
        let g = ConnectivityGraph::build(&near, &p);
        assert!(g.has_edge(NodeId(1), NodeId(2)));
        assert!(!g.has_edge(NodeId(1), NodeId(3)));
        assert_eq!(g.degree(NodeId(3)), 0);
        assert_eq!(g.hops_to_heads().get(&NodeId(3)), None);
    }

    #[test]
    fn strip_hop_equals_column() {
        let nodes = generate_strip(&StripLayout::default()).unwrap();
        assert_eq!(nodes.len(), 16);
        let g = ConnectivityGraph::build(&nodes, &ChannelParams::default());
        let hops = g.hops_to_heads();
        for n in &nodes[1..] {
            let col = (n.position.x / 13.0).round() as u32;
            assert_eq!(hops[&n.id], col, "node {}", n.id);
        }
    }
}
