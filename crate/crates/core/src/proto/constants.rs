//! Protocol timers, thresholds and the control-packet byte layouts used for
//! overhead accounting.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::packet::{Packet, Payload};
use crate::proto::messages::Hello;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolKind {
    Aodv,
    Lepr,
    Haodv,
}

impl ProtocolKind {
    pub const ALL: [ProtocolKind; 3] = [ProtocolKind::Aodv, ProtocolKind::Lepr, ProtocolKind::Haodv];

    pub fn name(self) -> &'static str {
        match self {
            ProtocolKind::Aodv => "aodv",
            ProtocolKind::Lepr => "lepr",
            ProtocolKind::Haodv => "haodv",
        }
    }
}

impl std::fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ProtocolKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "aodv" => Ok(ProtocolKind::Aodv),
            "lepr" => Ok(ProtocolKind::Lepr),
            "haodv" | "h-aodv" => Ok(ProtocolKind::Haodv),
            other => Err(format!("unknown protocol `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Timers {
    pub hello_interval: f64,
    pub allowed_hello_loss: u32,
    pub active_route_timeout: f64,
    /// Minimum spacing of route requests toward one destination.
    pub rreq_min_interval: f64,
    /// Upper bound of the exponential discovery backoff.
    pub rreq_backoff_cap: f64,
    /// How long a source collects route replies before choosing.
    pub rrep_window: f64,
    pub liveness_check: f64,
    /// Data packets a node may hold while waiting for a route.
    pub source_buffer: usize,
}

impl Default for Timers {
    fn default() -> Self {
        Timers {
            hello_interval: 1.0,
            allowed_hello_loss: 3,
            active_route_timeout: 3.0,
            rreq_min_interval: 1.0,
            rreq_backoff_cap: 16.0,
            rrep_window: 0.1,
            liveness_check: 0.25,
            source_buffer: 1000,
        }
    }
}

impl Timers {
    pub fn neighbor_timeout(&self) -> f64 {
        self.hello_interval * self.allowed_hello_loss as f64
    }
}

/// Control packet sizes in bytes, including IP and UDP headers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PacketSizes {
    pub rreq: u32,
    pub rrep: u32,
    pub rerr: u32,
    pub rerr_extra_destination: u32,
    pub hello: u32,
    pub rswt: u32,
    pub notify_source: u32,
    pub lepr_rreq_ext: u32,
    pub lepr_rrep_ext: u32,
    pub haodv_rreq_ext: u32,
    pub haodv_rrep_ext: u32,
    pub llt_entry: u32,
    pub gps: u32,
    pub trajectory: u32,
    pub pst_il: u32,
    pub flags: u32,
    pub neighbor_record: u32,
}

impl Default for PacketSizes {
    fn default() -> Self {
        PacketSizes {
            rreq: 52,
            rrep: 48,
            rerr: 40,
            rerr_extra_destination: 8,
            hello: 48,
            rswt: 40,
            notify_source: 40,
            lepr_rreq_ext: 5,
            lepr_rrep_ext: 5,
            haodv_rreq_ext: 2,
            haodv_rrep_ext: 4,
            llt_entry: 4,
            gps: 6,
            trajectory: 8,
            pst_il: 2,
            flags: 1,
            neighbor_record: 9,
        }
    }
}

impl PacketSizes {
    pub fn hello_size(&self, protocol: ProtocolKind, hello: &Hello) -> u32 {
        let mut size = self.hello;
        if protocol == ProtocolKind::Aodv {
            return size;
        }
        size += self.gps;
        if hello.trajectory.is_some() {
            size += self.trajectory;
        }
        if protocol == ProtocolKind::Haodv {
            size += self.pst_il + self.flags;
            if let Some(records) = &hello.neighbors {
                size += self.neighbor_record * records.len() as u32;
            }
        }
        size
    }

    /// Bytes charged for a control packet; `None` for data.
    pub fn control_size(&self, protocol: ProtocolKind, payload: &Payload) -> Option<u32> {
        let size = match payload {
            Payload::Data(_) => return None,
            Payload::Hello(h) => self.hello_size(protocol, h),
            Payload::Rreq(_) => {
                self.rreq
                    + match protocol {
                        ProtocolKind::Aodv => 0,
                        ProtocolKind::Lepr => self.lepr_rreq_ext,
                        ProtocolKind::Haodv => self.haodv_rreq_ext,
                    }
            }
            Payload::Rrep(r) => {
                self.rrep
                    + match protocol {
                        ProtocolKind::Aodv => 0,
                        ProtocolKind::Lepr => self.lepr_rrep_ext,
                        ProtocolKind::Haodv => {
                            self.haodv_rrep_ext + self.llt_entry * r.llts.len() as u32
                        }
                    }
            }
            Payload::Rerr(r) => {
                self.rerr
                    + self.rerr_extra_destination * r.unreachable.len().saturating_sub(1) as u32
            }
            Payload::NotifySource(n) => self.notify_source + n.payload.len() as u32,
            Payload::Rswt(_) => self.rswt,
        };
        Some(size)
    }

    /// Smallest control packet any protocol can emit.
    pub fn min_control(&self) -> u32 {
        [self.rreq, self.rrep, self.rerr, self.hello, self.rswt, self.notify_source]
            .into_iter()
            .min()
            .unwrap()
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MonitoredLinks {
    Downstream,
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LeprParams {
    /// Stability below which an intermediate node raises a route switch.
    pub k: f64,
    /// Stability a cached route needs to be switched to.
    pub k_prime: f64,
    /// LLT at which the lifetime factor of the stability saturates.
    pub llt_norm: f64,
    pub cache_size: usize,
    pub monitored_links: MonitoredLinks,
}

impl Default for LeprParams {
    fn default() -> Self {
        LeprParams {
            k: 0.3,
            k_prime: 0.5,
            llt_norm: 30.0,
            cache_size: 3,
            monitored_links: MonitoredLinks::Both,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HaodvParams {
    /// Margin of the RREQ link admission gate, seconds.
    pub delta: f64,
    pub pipe_width: u32,
    pub survivability_threshold: f64,
    /// Route lifetime below which the active route counts as degraded.
    pub rlt_min: f64,
    /// Fraction of TTL above which route ETD counts as degraded.
    pub eta: f64,
    /// Relative cost improvement required to switch routes.
    pub switch_margin: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub clique_compression: bool,
    pub max_pipe_paths: usize,
    /// Missed Notify_Source cycles after which the pipe is stale.
    pub stale_cycles: u32,
    /// Age limit of a pipe report that can defer a link-loss decision.
    pub corroboration_window: f64,
}

impl Default for HaodvParams {
    fn default() -> Self {
        HaodvParams {
            delta: 0.5,
            pipe_width: 2,
            survivability_threshold: 0.7,
            rlt_min: 2.0,
            eta: 0.5,
            switch_margin: 0.1,
            alpha: 1.0 / 3.0,
            beta: 1.0 / 3.0,
            gamma: 1.0 / 3.0,
            clique_compression: true,
            max_pipe_paths: 5000,
            stale_cycles: 2,
            corroboration_window: 2.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConstants {
    pub timers: Timers,
    pub sizes: PacketSizes,
    pub lepr: LeprParams,
    pub haodv: HaodvParams,
    /// Apply survivability pruning to AODV and LEPR as well, using the
    /// node's own service time as ETD.
    pub aoi_queue_for_baselines: bool,
}

#[derive(Debug, Error, PartialEq)]
pub enum ConstantsError {
    #[error("{0} must lie in [0, 1], got {1}")]
    UnitRange(&'static str, f64),
    #[error("{0} must be positive, got {1}")]
    NonPositive(&'static str, f64),
    #[error("{0} must be non-negative, got {1}")]
    Negative(&'static str, f64),
    #[error("pipe_width {0} is not supported at run time (1 or 2)")]
    PipeWidth(u32),
    #[error("route cost weights must be non-negative and not all zero")]
    Weights,
}

impl ProtocolConstants {
    pub fn validate(&self) -> Result<(), ConstantsError> {
        let t = &self.timers;
        for (name, v) in [
            ("hello_interval", t.hello_interval),
            ("active_route_timeout", t.active_route_timeout),
            ("rreq_min_interval", t.rreq_min_interval),
            ("rreq_backoff_cap", t.rreq_backoff_cap),
            ("liveness_check", t.liveness_check),
            ("lepr.llt_norm", self.lepr.llt_norm),
        ] {
            if !(v > 0.0) {
                return Err(ConstantsError::NonPositive(name, v));
            }
        }
        if !(t.rrep_window >= 0.0) {
            return Err(ConstantsError::Negative("rrep_window", t.rrep_window));
        }
        for (name, v) in [("lepr.k", self.lepr.k), ("lepr.k_prime", self.lepr.k_prime)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ConstantsError::UnitRange(name, v));
            }
        }
        let h = &self.haodv;
        for (name, v) in [
            ("haodv.delta", h.delta),
            ("haodv.survivability_threshold", h.survivability_threshold),
            ("haodv.rlt_min", h.rlt_min),
            ("haodv.eta", h.eta),
            ("haodv.switch_margin", h.switch_margin),
            ("haodv.corroboration_window", h.corroboration_window),
        ] {
            if !(v >= 0.0) {
                return Err(ConstantsError::Negative(name, v));
            }
        }
        if !(1..=2).contains(&h.pipe_width) {
            return Err(ConstantsError::PipeWidth(h.pipe_width));
        }
        let w = [h.alpha, h.beta, h.gamma];
        if w.iter().any(|x| !(*x >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
            return Err(ConstantsError::Weights);
        }
        Ok(())
    }
}

/// Bytes on air for `pkt` under `protocol`.
pub fn packet_size(sizes: &PacketSizes, protocol: ProtocolKind, pkt: &Packet, data_bytes: u32) -> u32 {
    sizes.control_size(protocol, &pkt.payload).unwrap_or(data_bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::SimTime;
    use crate::proto::messages::NeighborRecord;

    fn record(id: u16) -> NeighborRecord {
        NeighborRecord { id, llt: 1.0, pst: 0.0, il: 0, link_active: false }
    }

    #[test]
    fn hello_layouts() {
        let s = PacketSizes::default();
        let mut h = Hello::plain(SimTime::ZERO);
        assert_eq!(s.hello_size(ProtocolKind::Aodv, &h), 48);
        assert_eq!(s.hello_size(ProtocolKind::Lepr, &h), 54);
        assert_eq!(s.hello_size(ProtocolKind::Haodv, &h), 57);
        h.neighbors = Some(vec![record(1), record(2)]);
        assert_eq!(s.hello_size(ProtocolKind::Haodv, &h), 75);
    }

    #[test]
    fn defaults_validate() {
        ProtocolConstants::default().validate().unwrap();
        let mut c = ProtocolConstants::default();
        c.lepr.k = 1.5;
        assert!(matches!(c.validate(), Err(ConstantsError::UnitRange("lepr.k", _))));
    }

    #[test]
    fn overrides_parse_from_toml() {
        let c: ProtocolConstants = toml::from_str("[haodv]\ndelta = 1.0\n[timers]\nhello_interval = 2.0\n").unwrap();
        assert_eq!(c.haodv.delta, 1.0);
        assert_eq!(c.timers.hello_interval, 2.0);
        assert_eq!(c.timers.neighbor_timeout(), 6.0);
        assert_eq!(c.sizes, PacketSizes::default());
    }
}
