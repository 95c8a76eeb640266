//! Scenario configuration and traffic generation.

use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{stream_rng, SimTime};
use crate::mobility::MobilityParams;
use crate::packet::NodeId;
use crate::proto::constants::ConstantsError;
use crate::proto::{ProtocolConstants, ProtocolKind};
use crate::radio::MacParams;
use crate::sim::{FlowSpec, SimParams};

pub const DATA_PACKET_BITS: f64 = 8192.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficConfig {
    pub flows: usize,
    /// Offered load of each flow, bits per second.
    pub rate_bps: f64,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        TrafficConfig { flows: 10, rate_bps: 40_000.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub protocol: ProtocolKind,
    pub node_count: usize,
    pub packet_bytes: u32,
    /// Data packet lifetime, seconds.
    pub ttl: f64,
    pub duration: f64,
    /// Traffic starts after this many seconds; all averages exclude it.
    pub warmup: f64,
    pub seeds: Vec<u64>,
    /// Permit values outside the evaluated parameter ranges.
    pub extrapolation: bool,
    /// Seconds between in-run conservation audits; 0 disables them.
    pub audit_interval: f64,
    pub traffic: TrafficConfig,
    pub mobility: MobilityParams,
    pub mac: MacParams,
    pub constants: ProtocolConstants,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            name: "default".into(),
            protocol: ProtocolKind::Haodv,
            node_count: 50,
            packet_bytes: 1024,
            ttl: 3.0,
            duration: 300.0,
            warmup: 25.0,
            seeds: (1..=10).collect(),
            extrapolation: false,
            audit_interval: 10.0,
            traffic: TrafficConfig::default(),
            mobility: MobilityParams::default(),
            mac: MacParams::default(),
            constants: ProtocolConstants::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{field} = {value} is outside the evaluated range ({allowed}); set `extrapolation = true` to allow it")]
    OutOfRange { field: &'static str, value: String, allowed: &'static str },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Constants(#[from] ConstantsError),
}

fn out_of_range(field: &'static str, value: impl ToString, allowed: &'static str) -> ConfigError {
    ConfigError::OutOfRange { field, value: value.to_string(), allowed }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    /// The fully resolved configuration, defaults included.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.constants.validate()?;
        let t = &self.traffic;
        if self.node_count < 2 * t.flows.max(1) {
            return Err(ConfigError::Invalid(format!(
                "{} flows need {} distinct nodes, only {} configured",
                t.flows,
                2 * t.flows,
                self.node_count
            )));
        }
        if !(t.rate_bps > 0.0) || self.packet_bytes == 0 || !(self.ttl > 0.0) {
            return Err(ConfigError::Invalid("rate, packet size and ttl must be positive".into()));
        }
        if !(self.warmup >= 0.0) || !(self.duration > self.warmup + self.ttl) {
            return Err(ConfigError::Invalid(format!(
                "duration {} must exceed warmup {} plus ttl {}",
                self.duration, self.warmup, self.ttl
            )));
        }
        if !(self.audit_interval >= 0.0) {
            return Err(ConfigError::Invalid("audit_interval must be non-negative".into()));
        }
        let m = &self.mobility;
        if !(m.speed > 0.0) || !(m.area.width > 2.0 * m.edge_margin) || !(m.area.height > 2.0 * m.edge_margin) {
            return Err(ConfigError::Invalid("speed and area must be positive".into()));
        }
        if !(self.mac.range > 0.0) || !(self.mac.rate_bps > 0.0) || self.mac.retry_limit == 0 {
            return Err(ConfigError::Invalid("range, channel rate and retry limit must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(ConfigError::Invalid("at least one seed is required".into()));
        }
        if self.extrapolation {
            return Ok(());
        }
        if ![50, 100].contains(&self.node_count) {
            return Err(out_of_range("node_count", self.node_count, "50 or 100"));
        }
        if ![20.0, 50.0].contains(&m.speed) {
            return Err(out_of_range("mobility.speed", m.speed, "20 or 50 m/s"));
        }
        if ![1, 3, 10].contains(&t.flows) {
            return Err(out_of_range("traffic.flows", t.flows, "1, 3 or 10"));
        }
        if !(40e3..=3e6).contains(&t.rate_bps) {
            return Err(out_of_range("traffic.rate_bps", t.rate_bps, "40 kbps to 3 Mbps"));
        }
        if self.packet_bytes != 1024 {
            return Err(out_of_range("packet_bytes", self.packet_bytes, "1024"));
        }
        if self.ttl != 3.0 {
            return Err(out_of_range("ttl", self.ttl, "3 s"));
        }
        if m.area.width != 8000.0 || m.area.height != 8000.0 {
            return Err(out_of_range("mobility.area", format!("{}x{}", m.area.width, m.area.height), "8000x8000 m"));
        }
        if self.mac.range != 1000.0 {
            return Err(out_of_range("mac.range", self.mac.range, "1000 m"));
        }
        if self.mac.rate_bps != 11e6 {
            return Err(out_of_range("mac.rate_bps", self.mac.rate_bps, "11 Mbps"));
        }
        Ok(())
    }

    pub fn cbr_interval(&self) -> f64 {
        cbr_interval(self.traffic.rate_bps)
    }

    pub fn sim_params(&self, seed: u64) -> SimParams {
        SimParams {
            node_count: self.node_count,
            mobility: self.mobility.clone(),
            mac: self.mac.clone(),
            protocol: self.protocol,
            constants: self.constants.clone(),
            packet_bytes: self.packet_bytes,
            ttl: self.ttl,
            seed,
            warmup: self.warmup,
            duration: self.duration,
            audit_interval: (self.audit_interval > 0.0).then_some(self.audit_interval),
        }
    }

    /// Source-destination pairs and CBR schedules for one run.
    pub fn flows(&self, seed: u64) -> Vec<FlowSpec> {
        generate_traffic(
            seed,
            self.node_count,
            self.traffic.flows,
            self.cbr_interval(),
            self.warmup,
            self.duration - self.ttl,
        )
    }
}

/// Seconds between packets of a constant-bit-rate flow of 1 kB packets.
pub fn cbr_interval(rate_bps: f64) -> f64 {
    DATA_PACKET_BITS / rate_bps
}

/// Draws `count` flows over distinct nodes from the `traffic` stream. Each
/// flow starts at a random phase within its first interval after `start`
/// and stops generating at `stop`.
pub fn generate_traffic(seed: u64, nodes: usize, count: usize, interval: f64, start: f64, stop: f64) -> Vec<FlowSpec> {
    assert!(nodes >= 2 * count, "not enough nodes for {count} flows");
    let mut rng = stream_rng(seed, "traffic");
    let picked = sample(&mut rng, nodes, 2 * count).into_vec();
    picked
        .chunks(2)
        .map(|pair| {
            let offset = rng.random_range(0.0..interval);
            FlowSpec {
                src: pair[0] as NodeId,
                dst: pair[1] as NodeId,
                interval,
                start: SimTime::from_secs_f64(start + offset),
                stop: SimTime::from_secs_f64(stop),
            }
        })
        .collect()
}

/// Parses `a..b` (inclusive) or a single seed.
pub fn parse_seed_range(s: &str) -> Result<Vec<u64>, String> {
    let bad = || format!("expected `a..b` or a single seed, got `{s}`");
    match s.split_once("..") {
        Some((a, b)) => {
            let a: u64 = a.trim().parse().map_err(|_| bad())?;
            let b: u64 = b.trim_start_matches('=').trim().parse().map_err(|_| bad())?;
            if b < a {
                return Err(bad());
            }
            Ok((a..=b).collect())
        }
        None => Ok(vec![s.trim().parse().map_err(|_| bad())?]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cbr_arithmetic() {
        assert!((cbr_interval(40e3) - 0.2048).abs() < 1e-12);
        assert!((1.0 / cbr_interval(2.5e6) - 305.17578125).abs() < 1e-9);
    }

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = ScenarioConfig::default();
        c.validate().unwrap();
        let back = ScenarioConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_config_fills_defaults() {
        let c = ScenarioConfig::from_toml(
            "protocol = \"aodv\"\nnode_count = 100\n[traffic]\nrate_bps = 200000.0\n[constants.haodv]\ndelta = 1.0\n",
        )
        .unwrap();
        assert_eq!(c.protocol, ProtocolKind::Aodv);
        assert_eq!(c.node_count, 100);
        assert_eq!(c.traffic.flows, 10);
        assert_eq!(c.constants.haodv.delta, 1.0);
        assert_eq!(c.constants.timers.hello_interval, 1.0);
    }

    #[test]
    fn node_count_outside_range_is_rejected() {
        let e = ScenarioConfig::from_toml("node_count = 70\n").unwrap_err();
        assert!(matches!(e, ConfigError::OutOfRange { field: "node_count", .. }), "{e}");
        ScenarioConfig::from_toml("node_count = 70\nextrapolation = true\n").unwrap();
        assert!(ScenarioConfig::from_toml("node_count = 12\nextrapolation = true\n").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ScenarioConfig::from_toml("nodes = 50\n").is_err());
        assert!(ScenarioConfig::from_toml("[constants.haodv]\ndeltta = 1.0\n").is_err());
    }

    #[test]
    fn traffic_uses_distinct_nodes() {
        let f = generate_traffic(7, 50, 10, 0.2, 25.0, 297.0);
        let mut ids: Vec<NodeId> = f.iter().flat_map(|f| [f.src, f.dst]).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 20);
        for fl in &f {
            assert!(fl.start >= SimTime::from_secs(25) && fl.start < SimTime::from_secs_f64(25.2));
        }
        assert_eq!(f, generate_traffic(7, 50, 10, 0.2, 25.0, 297.0));
        assert_ne!(f, generate_traffic(8, 50, 10, 0.2, 25.0, 297.0));
    }

    #[test]
    fn seed_ranges() {
        assert_eq!(parse_seed_range("1..3").unwrap(), vec![1, 2, 3]);
        assert_eq!(parse_seed_range("4").unwrap(), vec![4]);
        assert!(parse_seed_range("3..1").is_err());
        assert!(parse_seed_range("x").is_err());
    }
}
