//! Radio energy accounting and KPI export.
//!
//! The simulator records possibly overlapping activity spans per node
//! (an advertisement inside a scan, say). [`flatten`] resolves them by
//! priority tx > rx > idle > sleep into a gap-free sequence that feeds an
//! [`EnergyLedger`].

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::SimTime;
use crate::topology::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RadioState {
    Sleep,
    Idle,
    Rx,
    Tx,
}

impl RadioState {
    pub const ALL: [RadioState; 4] = [RadioState::Sleep, RadioState::Idle, RadioState::Rx, RadioState::Tx];

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyModel {
    pub voltage_v: f64,
    pub tx_ma: f64,
    pub rx_ma: f64,
    pub idle_ma: f64,
    pub sleep_ma: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        Self { voltage_v: 3.3, tx_ma: 7.3, rx_ma: 6.5, idle_ma: 0.7, sleep_ma: 0.001 }
    }
}

impl EnergyModel {
    pub fn validate(&self) -> Result<(), String> {
        let all = [self.voltage_v, self.tx_ma, self.rx_ma, self.idle_ma, self.sleep_ma];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err("energy currents and voltage must be finite and non-negative".into());
        }
        Ok(())
    }

    pub fn current_ma(&self, s: RadioState) -> f64 {
        match s {
            RadioState::Tx => self.tx_ma,
            RadioState::Rx => self.rx_ma,
            RadioState::Idle => self.idle_ma,
            RadioState::Sleep => self.sleep_ma,
        }
    }

    pub fn power_mw(&self, s: RadioState) -> f64 {
        self.current_ma(s) * self.voltage_v
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Span {
    pub state: RadioState,
    pub from: SimTime,
    pub to: SimTime,
}

/// Activity spans of one node. Spans may overlap and may be left open.
#[derive(Debug, Clone, Default)]
pub struct Timeline {
    spans: Vec<Span>,
    open: BTreeMap<u64, (RadioState, SimTime)>,
    next_id: u64,
}

impl Timeline {
    pub fn add(&mut self, state: RadioState, from: SimTime, to: SimTime) {
        assert!(from <= to, "span ends before it starts");
        if from < to && state != RadioState::Sleep {
            self.spans.push(Span { state, from, to });
        }
    }

    pub fn open(&mut self, state: RadioState, at: SimTime) -> u64 {
        self.next_id += 1;
        self.open.insert(self.next_id, (state, at));
        self.next_id
    }

    pub fn close(&mut self, id: u64, at: SimTime) {
        if let Some((state, from)) = self.open.remove(&id) {
            self.add(state, from, at.max(from));
        }
    }

    pub fn close_all(&mut self, at: SimTime) {
        let ids: Vec<_> = self.open.keys().copied().collect();
        for id in ids {
            self.close(id, at);
        }
    }

    pub fn spans(&self) -> &[Span] {
        &self.spans
    }

    /// Spans including those still open, closed at `at`.
    fn spans_until(&self, at: SimTime) -> Vec<Span> {
        let mut v = self.spans.clone();
        v.extend(self.open.values().filter(|(_, f)| *f < at).map(|&(state, from)| Span { state, from, to: at }));
        v
    }
}

/// Non-overlapping, gap-free segments covering `[from, to)`; each gets the
/// highest-priority state active in it, sleep when none is.
pub fn flatten(timeline: &Timeline, from: SimTime, to: SimTime) -> Vec<Span> {
    let mut edges: Vec<(SimTime, usize, i32)> = Vec::new();
    for s in timeline.spans_until(to) {
        let a = s.from.max(from);
        let b = s.to.min(to);
        if a < b {
            edges.push((a, s.state.index(), 1));
            edges.push((b, s.state.index(), -1));
        }
    }
    edges.sort();
    let mut counts = [0i32; 4];
    let mut out: Vec<Span> = Vec::new();
    let mut cursor = from;
    let mut i = 0;
    while cursor < to {
        while i < edges.len() && edges[i].0 <= cursor {
            counts[edges[i].1] += edges[i].2;
            i += 1;
        }
        let next = if i < edges.len() { edges[i].0.min(to) } else { to };
        let state = RadioState::ALL.iter().rev().copied().find(|s| counts[s.index()] > 0).unwrap_or(RadioState::Sleep);
        match out.last_mut() {
            Some(last) if last.state == state && last.to == cursor => last.to = next,
            _ => out.push(Span { state, from: cursor, to: next }),
        }
        cursor = next;
    }
    out
}

#[derive(Debug, Clone, Default)]
struct NodeEnergy {
    time_us: [u64; 4],
    energy_mj: f64,
    last_end: Option<SimTime>,
}

/// Per-node energy totals.
#[derive(Debug, Clone, Default)]
pub struct EnergyLedger {
    model: EnergyModel,
    nodes: BTreeMap<NodeId, NodeEnergy>,
}

impl EnergyLedger {
    pub fn new(model: EnergyModel) -> Self {
        Self { model, nodes: BTreeMap::new() }
    }

    /// Adds `[from, to)` in `state`. Intervals of a node must come in order
    /// and must not overlap.
    pub fn accumulate(&mut self, node: NodeId, state: RadioState, from: SimTime, to: SimTime) {
        assert!(from <= to, "interval ends before it starts");
        let e = self.nodes.entry(node).or_default();
        if let Some(last) = e.last_end {
            assert!(from >= last, "overlapping radio state intervals for node {node}");
        }
        let dt = to.0 - from.0;
        e.time_us[state.index()] += dt;
        e.energy_mj += dt as f64 * 1e-6 * self.model.power_mw(state);
        e.last_end = Some(to);
    }

    pub fn energy_mj(&self, node: NodeId) -> f64 {
        self.nodes.get(&node).map_or(0.0, |e| e.energy_mj)
    }

    pub fn time_in(&self, node: NodeId, state: RadioState) -> SimTime {
        SimTime(self.nodes.get(&node).map_or(0, |e| e.time_us[state.index()]))
    }

    pub fn total_time(&self, node: NodeId) -> SimTime {
        SimTime(RadioState::ALL.iter().map(|&s| self.time_in(node, s).0).sum())
    }

    /// Time-weighted mean power over `window_len`, mW.
    pub fn average_power_mw(&self, node: NodeId, window_len: SimTime) -> f64 {
        if window_len.0 == 0 {
            return 0.0;
        }
        self.energy_mj(node) / window_len.as_secs_f64()
    }
}

/// Builds a ledger for `[from, to)` from per-node timelines.
pub fn ledger_for<'a>(
    model: &EnergyModel,
    timelines: impl IntoIterator<Item = (NodeId, &'a Timeline)>,
    from: SimTime,
    to: SimTime,
) -> EnergyLedger {
    let mut ledger = EnergyLedger::new(model.clone());
    for (node, tl) in timelines {
        for s in flatten(tl, from, to) {
            ledger.accumulate(node, s.state, s.from, s.to);
        }
    }
    ledger
}

/// One delivered or lost data packet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketRecord {
    pub scenario: String,
    pub seed: u64,
    pub protocol: String,
    pub packet: u32,
    pub source: u32,
    pub source_hop: u32,
    pub ack_required: bool,
    pub generated_s: f64,
    pub delivered: bool,
    /// Source to destination, plus the acknowledgment when one is required.
    pub latency_s: Option<f64>,
    pub uplink_latency_s: Option<f64>,
    /// Hops travelled by the copy that reached the head.
    pub hops: Option<u32>,
    pub transmissions: u64,
    pub recovery: Option<String>,
    /// Generation to failure declaration.
    pub detection_s: Option<f64>,
    /// Paths abandoned by the sending end before delivery.
    pub mp_switches: u32,
    pub failed_node: Option<u32>,
    pub failed_hop: Option<u32>,
    pub failure_x: Option<u32>,
    pub predicted_hb_s: Option<f64>,
    pub predicted_mp_s: Option<f64>,
    /// Delivery time minus the moment the failure was declared.
    pub recovery_latency_s: Option<f64>,
}

pub const PACKET_COLUMNS: &[&str] = &[
    "scenario",
    "seed",
    "protocol",
    "packet",
    "source",
    "source_hop",
    "ack_required",
    "generated_s",
    "delivered",
    "latency_s",
    "uplink_latency_s",
    "hops",
    "transmissions",
    "recovery",
    "detection_s",
    "mp_switches",
    "failed_node",
    "failed_hop",
    "failure_x",
    "predicted_hb_s",
    "predicted_mp_s",
    "recovery_latency_s",
];

/// Per-node results of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub scenario: String,
    pub seed: u64,
    pub protocol: String,
    pub node: u32,
    pub role: String,
    pub hop: Option<u32>,
    pub degree: u32,
    pub failed: bool,
    pub discovery_delay_s: Option<f64>,
    pub all_phase_s: Option<f64>,
    pub paths: Option<u32>,
    pub avg_power_mw: f64,
    pub window_s: f64,
    pub tx_s: f64,
    pub rx_s: f64,
    pub idle_s: f64,
    pub sleep_s: f64,
    pub sessions: u64,
}

pub const NODE_COLUMNS: &[&str] = &[
    "scenario",
    "seed",
    "protocol",
    "node",
    "role",
    "hop",
    "degree",
    "failed",
    "discovery_delay_s",
    "all_phase_s",
    "paths",
    "avg_power_mw",
    "window_s",
    "tx_s",
    "rx_s",
    "idle_s",
    "sleep_s",
    "sessions",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub stddev: f64,
}

pub const SUMMARY_COLUMNS: &[&str] = &["scenario", "metric", "n", "mean", "min", "max", "stddev"];

/// Mean, extremes and sample standard deviation. `None` for no values.
pub fn summarize(scenario: &str, metric: &str, values: &[f64]) -> Option<SummaryRow> {
    if values.is_empty() {
        return None;
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let stddev = if n > 1 { (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
    Some(SummaryRow { scenario: scenario.to_string(), metric: metric.to_string(), n, mean, min, max, stddev })
}

/// Everything a run produces.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KpiRecord {
    pub packets: Vec<PacketRecord>,
    pub nodes: Vec<NodeRecord>,
}

impl KpiRecord {
    pub fn extend(&mut self, other: KpiRecord) {
        self.packets.extend(other.packets);
        self.nodes.extend(other.nodes);
    }

    pub fn undeliverable(&self) -> usize {
        self.packets.iter().filter(|p| !p.delivered).count()
    }
}

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

/// Serializes rows under a fixed header into an in-memory CSV.
pub fn to_csv<T: Serialize>(columns: &[&str], rows: &[T]) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(columns)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}

pub fn write_csv<T: Serialize>(path: &Path, columns: &[&str], rows: &[T]) -> Result<(), ExportError> {
    let bytes = to_csv(columns, rows).map_err(|source| ExportError::Csv { path: path.to_path_buf(), source })?;
    let io = |source| ExportError::Io { path: path.to_path_buf(), source };
    let mut f = File::create(path).map_err(io)?;
    f.write_all(&bytes).map_err(io)?;
    Ok(())
}

/// Writes `packets.csv` and `nodes.csv` into `dir`.
pub fn export(dir: &Path, kpi: &KpiRecord) -> Result<(), ExportError> {
    std::fs::create_dir_all(dir).map_err(|source| ExportError::Io { path: dir.to_path_buf(), source })?;
    write_csv(&dir.join("packets.csv"), PACKET_COLUMNS, &kpi.packets)?;
    write_csv(&dir.join("nodes.csv"), NODE_COLUMNS, &kpi.nodes)?;
    Ok(())
}
