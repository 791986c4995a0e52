//! Scenario configuration, read from and written to TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::ChannelParams;
use crate::flooding::FloodConfig;
use crate::mac::MacConfig;
use crate::metrics::EnergyModel;
use crate::recovery::RecoveryConfig;
use crate::topology::{load_topology, NodeId, NodeSpec, Preset, TopologyConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("cannot parse {path}: {source}")]
    Parse { path: String, source: toml::de::Error },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    Case1,
    Case2,
    Case3,
    #[default]
    Custom,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Case1 => "case1",
            Self::Case2 => "case2",
            Self::Case3 => "case3",
            Self::Custom => "custom",
        }
    }
}

impl std::str::FromStr for ScenarioKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "case1" => Ok(Self::Case1),
            "case2" => Ok(Self::Case2),
            "case3" => Ok(Self::Case3),
            "custom" => Ok(Self::Custom),
            _ => Err(format!("unknown scenario `{s}` (expected case1, case2, case3 or custom)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    #[default]
    Proposed,
    Flooding,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Proposed => "proposed",
            Protocol::Flooding => "flooding",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AckPolicy {
    #[default]
    None,
    All,
    /// Each packet asks for an acknowledgment with `traffic.ack_probability`.
    Probability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscoveryConfig {
    pub timer_s: f64,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        Self { timer_s: 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoutingConfig {
    pub max_paths: usize,
    /// A head refuses a second path that reaches it straight from its origin.
    pub head_rule: bool,
}

impl Default for RoutingConfig {
    fn default() -> Self {
        Self { max_paths: 5, head_rule: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficConfig {
    /// Uplink packets, each from a different node.
    pub packets: u32,
    pub ack: AckPolicy,
    pub ack_probability: f64,
    pub window_start_s: f64,
    pub window_s: f64,
    /// Only nodes at this hop-count may be sources.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_hop: Option<u32>,
    /// Explicit sources, used in order instead of a random pick.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub sources: Vec<u32>,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self {
            packets: 0,
            ack: AckPolicy::None,
            ack_probability: 0.5,
            window_start_s: 1.0,
            window_s: 1.0,
            source_hop: None,
            sources: vec![],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FailureConfig {
    /// Node to fail.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub node: Option<u32>,
    /// Alternatively, the node this many hops away from the first source
    /// along its first path.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hop: Option<u32>,
    pub at_s: f64,
}

impl Default for FailureConfig {
    fn default() -> Self {
        Self { node: None, hop: None, at_s: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    pub protocol: Protocol,
    pub seed: u64,
    pub runs: u32,
    /// Hard stop of a run.
    pub duration_s: f64,
    /// Average power is measured over `[0, power_window_s)`; 0 means up to
    /// the end of the preliminary phase.
    pub power_window_s: f64,
    /// Nodes wake at a uniform instant in `[0, wake_window_s)`.
    pub wake_window_s: f64,
    /// Discovery and path creation already done before the run.
    pub preinstalled: bool,
    pub topology: TopologyConfig,
    pub channel: ChannelParams,
    pub mac: MacConfig,
    pub discovery: DiscoveryConfig,
    pub routing: RoutingConfig,
    pub recovery: RecoveryConfig,
    pub flooding: FloodConfig,
    pub energy: EnergyModel,
    pub traffic: TrafficConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<FailureConfig>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioKind::Custom,
            protocol: Protocol::Proposed,
            seed: 1,
            runs: 1,
            duration_s: 300.0,
            power_window_s: 60.0,
            wake_window_s: 1.0,
            preinstalled: false,
            topology: TopologyConfig::preset(Preset::Paper3Floor),
            channel: ChannelParams::default(),
            mac: MacConfig::default(),
            discovery: DiscoveryConfig::default(),
            routing: RoutingConfig::default(),
            recovery: RecoveryConfig::default(),
            flooding: FloodConfig::default(),
            energy: EnergyModel::default(),
            traffic: TrafficConfig::default(),
            failure: None,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|source| ConfigError::Parse { path: "<string>".into(), source })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let name = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: name.clone(), source })?;
        let cfg: Self = toml::from_str(&text).map_err(|source| ConfigError::Parse { path: name, source })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn nodes(&self) -> Result<Vec<NodeSpec>, ConfigError> {
        load_topology(&self.topology).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |m: String| Err(ConfigError::Invalid(m));
        for (name, v) in
            [("duration_s", self.duration_s), ("discovery.timer_s", self.discovery.timer_s), ("wake_window_s", self.wake_window_s)]
        {
            if !(v > 0.0 && v.is_finite()) {
                return inv(format!("{name} must be positive"));
            }
        }
        if !(self.power_window_s >= 0.0) {
            return inv("power_window_s must be non-negative".into());
        }
        if self.runs == 0 {
            return inv("runs must be at least 1".into());
        }
        if self.routing.max_paths == 0 {
            return inv("routing.max_paths must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.traffic.ack_probability) {
            return inv("traffic.ack_probability must lie in [0, 1]".into());
        }
        if !(self.traffic.window_start_s >= 0.0 && self.traffic.window_s >= 0.0) {
            return inv("traffic window must be non-negative".into());
        }
        self.channel.validate().map_err(ConfigError::Invalid)?;
        self.mac.validate().map_err(ConfigError::Invalid)?;
        self.recovery.validate().map_err(ConfigError::Invalid)?;
        self.flooding.validate().map_err(ConfigError::Invalid)?;
        self.energy.validate().map_err(ConfigError::Invalid)?;
        let nodes = self.nodes()?;
        let exists = |id: u32| nodes.iter().any(|n| n.id == NodeId(id));
        for &s in &self.traffic.sources {
            if !exists(s) {
                return inv(format!("traffic source {s} is not in the topology"));
            }
        }
        if let Some(f) = &self.failure {
            if let Some(n) = f.node {
                if !exists(n) {
                    return inv(format!("failed node {n} is not in the topology"));
                }
            }
            if f.node.is_none() && f.hop.is_none() {
                return inv("failure needs either `node` or `hop`".into());
            }
            if !(f.at_s >= 0.0) {
                return inv("failure.at_s must be non-negative".into());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recovery::RecoveryMode;
    use proptest::prelude::*;

    #[test]
    fn default_round_trips() {
        let c = ScenarioConfig::default();
        let back = ScenarioConfig::from_toml_str(&c.to_toml()).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn sections_parse() {
        let text = r#"
            scenario = "case3"
            protocol = "flooding"
            seed = 7

            [topology]
            preset = "strip"

            [recovery]
            mode = "hb-only"

            [traffic]
            packets = 1
            ack = "all"
            source_hop = 5

            [failure]
            hop = 2
        "#;
        let c = ScenarioConfig::from_toml_str(text).unwrap();
        assert_eq!(c.scenario, ScenarioKind::Case3);
        assert_eq!(c.protocol, Protocol::Flooding);
        assert_eq!(c.recovery.mode, RecoveryMode::HbOnly);
        assert_eq!(c.traffic.source_hop, Some(5));
        assert_eq!(c.failure.as_ref().unwrap().hop, Some(2));
        assert_eq!(c.mac.adv_interval_head_s, 0.1);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ScenarioConfig::from_toml_str("duration_s = -1.0").is_err());
        assert!(ScenarioConfig::from_toml_str("bogus = 1").is_err());
        assert!(ScenarioConfig::from_toml_str("[failure]\nnode = 99").is_err());
        assert!(ScenarioConfig::from_toml_str("[traffic]\nsources = [40]").is_err());
        assert!(ScenarioConfig::from_toml_str("[mac]\nscan_window_s = 0.02").is_err());
    }

    #[test]
    fn missing_file_names_path() {
        let e = ScenarioConfig::load(Path::new("/no/such/file.toml")).unwrap_err();
        assert!(e.to_string().contains("/no/such/file.toml"));
    }

    proptest! {
        #[test]
        fn round_trip(
            seed in any::<u64>(),
            packets in 0u32..10,
            timer in 0.5f64..10.0,
            alpha in 0.0f64..4.0,
            window in 0.0f64..120.0,
            flood in any::<bool>(),
            hop in proptest::option::of(1u32..5),
        ) {
            let mut c = ScenarioConfig { seed, power_window_s: window, ..Default::default() };
            c.traffic.packets = packets;
            c.discovery.timer_s = timer;
            c.recovery.alpha = alpha;
            c.protocol = if flood { Protocol::Flooding } else { Protocol::Proposed };
            c.failure = hop.map(|h| FailureConfig { hop: Some(h), ..Default::default() });
            let text = c.to_toml();
            let back = ScenarioConfig::from_toml_str(&text).unwrap();
            prop_assert_eq!(&c, &back);
            prop_assert_eq!(text, back.to_toml());
        }
    }
}
