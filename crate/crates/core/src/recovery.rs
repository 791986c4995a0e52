//! Failure recovery: multi-path (MP), hop-distance based (HB), and the
//! adaptive choice between them from their latency estimates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discovery::NeighborTable;
use crate::routing::{Direction, RouteId, RouteState, RoutingTable};
use crate::topology::NodeId;

#[derive(Debug, Error, PartialEq)]
pub enum RecoveryError {
    #[error("invalid recovery parameters: {0}")]
    Invalid(String),
}

/// Inputs of the latency estimates. `z` is the head-origin distance and
/// `x` the origin-failure distance, both in hops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveParams {
    pub z: u32,
    pub x: u32,
    pub alpha: f64,
    pub beta: f64,
    /// Rediscovery latency, seconds.
    pub r: f64,
    /// Single-hop delivery time, seconds.
    pub gamma: f64,
}

impl AdaptiveParams {
    pub fn validate(&self) -> Result<(), RecoveryError> {
        let bad = |m: &str| Err(RecoveryError::Invalid(m.to_string()));
        if self.z < 1 {
            return bad("Z must be at least 1");
        }
        if self.x < 1 || self.x > self.z {
            return bad("X must lie in 1..=Z");
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return bad("alpha and beta must be non-negative");
        }
        if !(self.r > 0.0 && self.gamma > 0.0) || !self.r.is_finite() || !self.gamma.is_finite() {
            return bad("r and gamma must be positive");
        }
        Ok(())
    }
}

pub fn hb_latency(p: &AdaptiveParams) -> f64 {
    p.r + p.gamma * (f64::from(p.z) - f64::from(p.x) + 1.0 + p.alpha)
}

pub fn mp_latency(p: &AdaptiveParams) -> f64 {
    p.gamma * (f64::from(p.z) + f64::from(p.x) - 1.0 + p.beta)
}

/// HB wins for X strictly above this bound.
pub fn hb_threshold(p: &AdaptiveParams) -> f64 {
    (p.r / p.gamma + p.alpha + 2.0 - p.beta) / 2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecoveryMethod {
    Hb,
    Mp,
}

/// Ties go to MP, which needs no rediscovery.
pub fn choose_recovery(p: &AdaptiveParams) -> RecoveryMethod {
    if hb_latency(p) < mp_latency(p) {
        RecoveryMethod::Hb
    } else {
        RecoveryMethod::Mp
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RecoveryMode {
    MpOnly,
    HbOnly,
    #[default]
    Adaptive,
}

impl std::str::FromStr for RecoveryMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mp-only" | "mp" => Ok(Self::MpOnly),
            "hb-only" | "hb" => Ok(Self::HbOnly),
            "adaptive" => Ok(Self::Adaptive),
            _ => Err(format!("unknown recovery mode `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoveryConfig {
    pub mode: RecoveryMode,
    pub alpha: f64,
    pub beta: f64,
    pub r_s: f64,
    pub gamma_s: f64,
    /// Run a fresh neighbor discovery before HB selection.
    pub fresh_discovery: bool,
    /// Discovery timer used for that rediscovery.
    pub rediscovery_timer_s: f64,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self {
            mode: RecoveryMode::Adaptive,
            alpha: 0.0,
            beta: 0.0,
            r_s: 2.3,
            gamma_s: 0.5,
            fresh_discovery: true,
            rediscovery_timer_s: 2.0,
        }
    }
}

impl RecoveryConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=4.0).contains(&self.alpha) || !(0.0..=4.0).contains(&self.beta) {
            return Err("recovery.alpha and recovery.beta must lie in [0, 4]".into());
        }
        if !(self.r_s > 0.0 && self.gamma_s > 0.0 && self.rediscovery_timer_s > 0.0) {
            return Err("recovery.r_s, gamma_s and rediscovery_timer_s must be positive".into());
        }
        Ok(())
    }

    pub fn params(&self, z: u32, x: u32) -> AdaptiveParams {
        AdaptiveParams { z, x, alpha: self.alpha, beta: self.beta, r: self.r_s, gamma: self.gamma_s }
    }

    /// Method to run for a failure seen by a packet travelling in `dir`.
    pub fn decide(&self, dir: Direction, z: u32, x: u32) -> RecoveryMethod {
        if dir == Direction::Downlink {
            return RecoveryMethod::Mp;
        }
        match self.mode {
            RecoveryMode::MpOnly => RecoveryMethod::Mp,
            RecoveryMode::HbOnly => RecoveryMethod::Hb,
            RecoveryMode::Adaptive => {
                let z = z.max(1);
                choose_recovery(&self.params(z, x.clamp(1, z)))
            }
        }
    }
}

/// Origin-failure distance seen by a detector. `ttl_left` is the packet
/// TTL after it was decremented for the failed hop, so the failed node
/// counts as traversed.
pub fn failure_distance(initial_ttl: u8, ttl_left: u8) -> u32 {
    u32::from(initial_ttl.saturating_sub(ttl_left)).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FailureNotice {
    pub route_id: RouteId,
    pub failed: NodeId,
    pub detector: NodeId,
    pub direction: Direction,
}

/// HB next hop by minimum hop-count, skipping failed nodes and the node
/// the packet came from. Ties go to the stronger signal, then lower id.
pub fn hb_select(neighbors: &NeighborTable, failed: &[NodeId], previous: Option<NodeId>) -> Option<NodeId> {
    neighbors
        .iter()
        .filter(|e| e.hop.is_defined() && !failed.contains(&e.id) && Some(e.id) != previous)
        .min_by(|a, b| a.hop.cmp(&b.hop).then(b.rssi.total_cmp(&a.rssi)).then(a.id.cmp(&b.id)))
        .map(|e| e.id)
}

/// Route a relay reuses for an HB packet: its entry for `route_id`, else
/// the upstream of its own oldest active route. Rejected if that hop is
/// the previous node or a failed one.
pub fn hb_reuse(table: &RoutingTable, me: NodeId, route_id: RouteId, previous: Option<NodeId>, failed: &[NodeId]) -> Option<NodeId> {
    let ok = |n: NodeId| Some(n) != previous && !failed.contains(&n);
    if let Some(e) = table.get(route_id) {
        if e.state == RouteState::Active {
            if let Some(up) = e.upstream.filter(|&n| ok(n)) {
                return Some(up);
            }
        }
    }
    let own = table.first_active(me)?;
    table.get(own)?.upstream.filter(|&n| ok(n))
}

/// Multipath retry at the origin: invalidate `failed_route` and return the
/// next active route in chronological order.
pub fn multipath_next(table: &mut RoutingTable, failed_route: RouteId) -> Option<RouteId> {
    table.invalidate(failed_route);
    table.first_active(failed_route.origin)
}
