//! Scenario runner: builds a world from a configuration, drives it and
//! turns the outcome into KPI records.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::config::{AckPolicy, ConfigError, FailureConfig, Protocol, ScenarioConfig, ScenarioKind};
use crate::discovery::{ideal_discovery, HopCount, NeighborTable};
use crate::engine::{RngStreams, SimTime, SCENARIO_STREAM};
use crate::metrics::{
    ledger_for, summarize, write_csv, ExportError, KpiRecord, NodeRecord, PacketRecord, RadioState, SummaryRow, SUMMARY_COLUMNS,
};
use crate::recovery::{RecoveryMethod, RecoveryMode};
use crate::routing::{ideal_gsa, trace_route, GsaAgent, RouteId};
use crate::sim::{PacketTrack, RunStats, World};
use crate::topology::{ConnectivityGraph, NodeId, Preset, TopologyConfig};

/// Instant at which every node starts discovery; the wake-up phase lasts
/// until then.
pub const DISCOVERY_START_S: f64 = 1.0;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Precondition(String),
    #[error("no node {placement} hops from source {origin} along its first path")]
    Placement { origin: u32, placement: u32 },
    #[error("only {available} eligible sources for {wanted} packets")]
    Sources { wanted: u32, available: usize },
}

/// Outcome of one seeded run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub seed: u64,
    pub kpi: KpiRecord,
    pub stats: RunStats,
    /// Paths built by each node, in creation order.
    pub paths: BTreeMap<NodeId, Vec<Vec<NodeId>>>,
    pub end: SimTime,
}

/// Rows of all runs plus the per-metric aggregation across runs.
#[derive(Debug, Clone, Default)]
pub struct Report {
    pub runs: Vec<RunOutput>,
    pub kpi: KpiRecord,
    pub summary: Vec<SummaryRow>,
}

impl Report {
    /// Writes `packets.csv`, `nodes.csv` and `summary.csv` into `dir`.
    pub fn export(&self, dir: &Path) -> Result<(), ExportError> {
        crate::metrics::export(dir, &self.kpi)?;
        write_csv(&dir.join("summary.csv"), SUMMARY_COLUMNS, &self.summary)
    }
}

/// Preliminary phase on the three-floor building.
pub fn case1_config() -> ScenarioConfig {
    ScenarioConfig { scenario: ScenarioKind::Case1, power_window_s: 0.0, ..Default::default() }
}

/// Background traffic over pre-installed paths.
pub fn case2_config(packets: u32, ack: bool, protocol: Protocol) -> ScenarioConfig {
    let mut c = ScenarioConfig { scenario: ScenarioKind::Case2, protocol, preinstalled: true, duration_s: 300.0, ..Default::default() };
    c.traffic.packets = packets;
    c.traffic.ack = if ack { AckPolicy::All } else { AckPolicy::None };
    c
}

/// One packet from a 5-hop node with a failure `placement` hops down its
/// first path.
pub fn case3_config(placement: u32, mode: RecoveryMode, protocol: Protocol) -> ScenarioConfig {
    let mut c = ScenarioConfig {
        scenario: ScenarioKind::Case3,
        protocol,
        preinstalled: true,
        topology: TopologyConfig::preset(Preset::Strip),
        failure: Some(FailureConfig { node: None, hop: Some(placement), at_s: 1.0 }),
        ..Default::default()
    };
    c.recovery.mode = mode;
    c.traffic.packets = 1;
    c.traffic.source_hop = Some(5);
    c
}

/// Default configuration of a scenario kind.
pub fn preset(kind: ScenarioKind) -> ScenarioConfig {
    match kind {
        ScenarioKind::Case1 => case1_config(),
        ScenarioKind::Case2 => case2_config(3, true, Protocol::Proposed),
        ScenarioKind::Case3 => case3_config(2, RecoveryMode::Adaptive, Protocol::Proposed),
        ScenarioKind::Custom => ScenarioConfig::default(),
    }
}

/// Discovery and path creation computed with ideal reception.
pub struct Preinstalled {
    pub discovery: BTreeMap<NodeId, crate::discovery::Discovery>,
    pub gsa: BTreeMap<NodeId, GsaAgent>,
}

/// The discovery timer counts as many rounds as node advertising cycles fit in it.
pub fn preinstall(graph: &ConnectivityGraph, cfg: &ScenarioConfig) -> Preinstalled {
    let rounds = (cfg.discovery.timer_s / cfg.mac.adv_interval_node_s).ceil().max(1.0) as u32;
    let discovery = ideal_discovery(graph, rounds);
    let tables: BTreeMap<NodeId, NeighborTable> = discovery.iter().map(|(&n, d)| (n, d.table().clone())).collect();
    let hops: BTreeMap<NodeId, HopCount> = discovery.iter().map(|(&n, d)| (n, d.my_hop())).collect();
    let gsa = ideal_gsa(&tables, graph.heads(), &hops, cfg.routing.max_paths, cfg.routing.head_rule);
    Preinstalled { discovery, gsa }
}

fn packet_plan(
    cfg: &ScenarioConfig,
    graph: &ConnectivityGraph,
    hops: &BTreeMap<NodeId, u32>,
    excluded: Option<NodeId>,
    rng: &mut impl Rng,
) -> Result<Vec<PacketTrack>, ScenarioError> {
    let t = &cfg.traffic;
    let sources: Vec<NodeId> = if t.sources.is_empty() {
        let mut pool: Vec<NodeId> = graph
            .nodes()
            .filter(|&n| !graph.is_head(n) && Some(n) != excluded)
            .filter(|n| hops.get(n).is_some_and(|&h| t.source_hop.is_none_or(|want| h == want)))
            .collect();
        if pool.len() < t.packets as usize {
            return Err(ScenarioError::Sources { wanted: t.packets, available: pool.len() });
        }
        pool.shuffle(rng);
        pool.truncate(t.packets as usize);
        pool
    } else {
        t.sources.iter().cycle().take(t.packets as usize).map(|&s| NodeId(s)).collect()
    };
    let mut plan = Vec::with_capacity(sources.len());
    for (i, src) in sources.into_iter().enumerate() {
        let at = SimTime::from_secs_f64(t.window_start_s + rng.gen::<f64>() * t.window_s);
        let ack = match t.ack {
            AckPolicy::None => false,
            AckPolicy::All => true,
            AckPolicy::Probability => rng.gen_bool(t.ack_probability),
        };
        let hop = hops.get(&src).copied().unwrap_or(0);
        plan.push(PacketTrack::new(i as u32, src, hop, ack, at));
    }
    Ok(plan)
}

/// The node `placement` hops from `source` along its first ideal path.
fn place_failure(pre: &Preinstalled, source: NodeId, placement: u32) -> Result<NodeId, ScenarioError> {
    let path = trace_route(&pre.gsa, RouteId { origin: source, index: 0 }).unwrap_or_default();
    // neither the source itself nor the head
    if placement == 0 || placement as usize + 1 >= path.len() {
        return Err(ScenarioError::Placement { origin: source.0, placement });
    }
    Ok(path[placement as usize])
}

/// Runs one seed of `cfg`.
pub fn run_once(cfg: &ScenarioConfig, seed: u64) -> Result<RunOutput, ScenarioError> {
    let specs = cfg.nodes()?;
    let mut world = World::new(cfg, &specs, seed);
    let graph = world.graph.clone();
    let hops = graph.hops_to_heads();
    let mut rng = RngStreams::new(seed).stream(SCENARIO_STREAM);

    let needs_paths = cfg.preinstalled || cfg.failure.as_ref().is_some_and(|f| f.node.is_none());
    let pre = needs_paths.then(|| preinstall(&graph, cfg));
    if cfg.preinstalled {
        let p = pre.as_ref().unwrap();
        world.preinstall(p.discovery.clone(), if cfg.protocol == Protocol::Proposed { p.gsa.clone() } else { BTreeMap::new() });
    } else {
        world.schedule_discovery(SimTime::from_secs_f64(DISCOVERY_START_S));
    }

    let fixed_failure = cfg.failure.as_ref().and_then(|f| f.node).map(NodeId);
    let plan = packet_plan(cfg, &graph, &hops, fixed_failure, &mut rng)?;
    if let Some(f) = &cfg.failure {
        let target = match (f.node, f.hop) {
            (Some(n), _) => NodeId(n),
            (None, Some(placement)) => {
                let source = plan
                    .first()
                    .map(|p| p.source)
                    .ok_or_else(|| ScenarioError::Precondition("failure placement by hop needs at least one packet".into()))?;
                place_failure(pre.as_ref().unwrap(), source, placement)?
            }
            (None, None) => unreachable!("validated"),
        };
        world.schedule_failure(target, SimTime::from_secs_f64(f.at_s));
    }
    for p in plan {
        world.schedule_packet(p);
    }

    let end = SimTime::from_secs_f64(cfg.duration_s);
    let min_end = SimTime::from_secs_f64(cfg.power_window_s).min(end);
    let has_traffic = cfg.traffic.packets > 0;
    let preliminary = !cfg.preinstalled && cfg.protocol == Protocol::Proposed;
    world.run(end, min_end, |w| {
        let settled = w.packets.values().all(PacketTrack::is_settled);
        let built =
            !preliminary || w.nodes().iter().filter(|n| n.alive && !n.is_head && hops.contains_key(&n.id)).all(|n| n.gsa.is_finished());
        let discovered = cfg.preinstalled || w.nodes().iter().all(|n| n.first_discovery.is_some() || !hops.contains_key(&n.id));
        (settled || !has_traffic) && built && discovered
    });
    let stop = world.now();
    Ok(collect(cfg, seed, &world, stop))
}

/// Turns the state of a finished world into records; `stop` is the end of the run.
pub fn collect(cfg: &ScenarioConfig, seed: u64, world: &World, stop: SimTime) -> RunOutput {
    let graph = &world.graph;
    let scenario = cfg.scenario.name().to_string();
    let protocol = cfg.protocol.name().to_string();
    let hops = graph.hops_to_heads();
    let started = world.discovery_started_at;

    let window_end = if cfg.power_window_s > 0.0 {
        SimTime::from_secs_f64(cfg.power_window_s).min(stop)
    } else {
        world.nodes().iter().filter_map(|n| n.gsa_done_at).max().unwrap_or(stop).min(stop)
    };
    let ledger = ledger_for(&cfg.energy, world.nodes().iter().map(|n| (n.id, &n.timeline)), SimTime::ZERO, window_end);

    let nodes = world
        .nodes()
        .iter()
        .map(|n| NodeRecord {
            scenario: scenario.clone(),
            seed,
            protocol: protocol.clone(),
            node: n.id.0,
            role: if n.is_head { "head" } else { "node" }.to_string(),
            hop: n.disc.my_hop().value().map(u32::from),
            degree: graph.degree(n.id) as u32,
            failed: !n.alive,
            discovery_delay_s: n.first_discovery.map(SimTime::as_secs_f64),
            all_phase_s: match (n.gsa_done_at, started) {
                (Some(done), Some(s)) => Some(done.saturating_sub(s).as_secs_f64()),
                _ => None,
            },
            paths: n.gsa.origin_state().map(|o| o.n_paths as u32),
            avg_power_mw: ledger.average_power_mw(n.id, window_end),
            window_s: window_end.as_secs_f64(),
            tx_s: ledger.time_in(n.id, RadioState::Tx).as_secs_f64(),
            rx_s: ledger.time_in(n.id, RadioState::Rx).as_secs_f64(),
            idle_s: ledger.time_in(n.id, RadioState::Idle).as_secs_f64(),
            sleep_s: ledger.time_in(n.id, RadioState::Sleep).as_secs_f64(),
            sessions: n.sessions,
        })
        .collect();

    let packets = world
        .packets
        .values()
        .map(|t| PacketRecord {
            scenario: scenario.clone(),
            seed,
            protocol: protocol.clone(),
            packet: t.id,
            source: t.source.0,
            source_hop: t.source_hop,
            ack_required: t.ack_required,
            generated_s: t.generated.as_secs_f64(),
            delivered: t.delivered(),
            latency_s: t.delivered().then(|| t.latency()).flatten().map(SimTime::as_secs_f64),
            uplink_latency_s: t.uplink_at.map(|u| u.saturating_sub(t.generated).as_secs_f64()),
            hops: t.uplink_hops.map(u32::from),
            transmissions: t.transmissions,
            detection_s: t.failure_at.map(|f| f.saturating_sub(t.generated).as_secs_f64()),
            mp_switches: t.mp_switches,
            recovery: t.method.map(|m| match m {
                RecoveryMethod::Hb => "hb".to_string(),
                RecoveryMethod::Mp => "mp".to_string(),
            }),
            failed_node: t.failed_node.map(|n| n.0),
            failed_hop: t.failed_node.and_then(|n| hops.get(&n).copied()),
            failure_x: t.failure_x,
            predicted_hb_s: t.predicted_hb_s,
            predicted_mp_s: t.predicted_mp_s,
            recovery_latency_s: match (t.failure_at, t.uplink_at) {
                (Some(f), Some(u)) if u >= f => Some((u - f).as_secs_f64()),
                _ => None,
            },
        })
        .collect();

    let paths = world.nodes().iter().filter(|n| !n.is_head).map(|n| (n.id, world.built_paths(n.id))).collect();
    RunOutput { seed, kpi: KpiRecord { packets, nodes }, stats: world.stats.clone(), paths, end: stop }
}

/// Mean over the nodes that count for power: alive BLE nodes.
pub fn mean_node_power(nodes: &[NodeRecord]) -> Option<f64> {
    let v: Vec<f64> = nodes.iter().filter(|n| n.role == "node" && !n.failed).map(|n| n.avg_power_mw).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = v.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Per-run means of the headline metrics, aggregated across runs.
pub fn summarize_runs(scenario: &str, runs: &[RunOutput]) -> Vec<SummaryRow> {
    type Metric = fn(&RunOutput) -> Option<f64>;
    let metrics: [(&str, Metric); 7] = [
        ("latency_s", |r| mean(r.kpi.packets.iter().filter_map(|p| p.latency_s))),
        ("uplink_latency_s", |r| mean(r.kpi.packets.iter().filter_map(|p| p.uplink_latency_s))),
        ("recovery_latency_s", |r| mean(r.kpi.packets.iter().filter_map(|p| p.recovery_latency_s))),
        ("undeliverable", |r| (!r.kpi.packets.is_empty()).then(|| r.kpi.undeliverable() as f64)),
        ("avg_power_mw", |r| mean_node_power(&r.kpi.nodes)),
        ("discovery_delay_s", |r| mean(r.kpi.nodes.iter().filter_map(|n| n.discovery_delay_s))),
        ("all_phase_s", |r| mean(r.kpi.nodes.iter().filter_map(|n| n.all_phase_s))),
    ];
    metrics
        .iter()
        .filter_map(|(name, f)| {
            let v: Vec<f64> = runs.iter().filter_map(f).collect();
            summarize(scenario, name, &v)
        })
        .collect()
}

/// Runs `cfg.runs` seeds starting at `cfg.seed`.
pub fn run_many(cfg: &ScenarioConfig) -> Result<Report, ScenarioError> {
    let mut report = Report::default();
    for i in 0..u64::from(cfg.runs) {
        let out = run_once(cfg, cfg.seed.wrapping_add(i))?;
        report.kpi.extend(out.kpi.clone());
        report.runs.push(out);
    }
    report.summary = summarize_runs(cfg.scenario.name(), &report.runs);
    Ok(report)
}

pub fn run_case1(cfg: &ScenarioConfig) -> Result<Report, ScenarioError> {
    if cfg.protocol != Protocol::Proposed || cfg.preinstalled {
        return Err(ScenarioError::Precondition("case1 runs the preliminary phase of the proposed protocol".into()));
    }
    run_many(cfg)
}

pub fn run_case2(cfg: &ScenarioConfig) -> Result<Report, ScenarioError> {
    if cfg.protocol == Protocol::Proposed && !cfg.preinstalled {
        return Err(ScenarioError::Precondition("case2 needs pre-installed paths (preinstalled = true)".into()));
    }
    run_many(cfg)
}

pub fn run_case3(cfg: &ScenarioConfig) -> Result<Report, ScenarioError> {
    if cfg.failure.is_none() {
        return Err(ScenarioError::Precondition("case3 needs a [failure] section".into()));
    }
    if cfg.protocol == Protocol::Proposed && !cfg.preinstalled {
        return Err(ScenarioError::Precondition("case3 needs pre-installed paths (preinstalled = true)".into()));
    }
    run_many(cfg)
}

pub fn run(cfg: &ScenarioConfig) -> Result<Report, ScenarioError> {
    match cfg.scenario {
        ScenarioKind::Case1 => run_case1(cfg),
        ScenarioKind::Case2 => run_case2(cfg),
        ScenarioKind::Case3 => run_case3(cfg),
        ScenarioKind::Custom => run_many(cfg),
    }
}
