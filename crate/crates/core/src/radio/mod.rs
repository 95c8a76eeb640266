//! Range-disc connectivity, contention channel and per-node MAC queue.

pub mod channel;
pub mod queue;

use serde::{Deserialize, Serialize};

use crate::geom::Vec2;
use crate::kernel::SimTime;

pub use channel::{Channel, TxId};
pub use queue::{reorder_and_prune, survivability, MacQueue, PstMeter};

/// Why a data packet left the network without being delivered.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossCause {
    Collision,
    LinkBreak,
    TtlExpiry,
    QueueFull,
    NoRoute,
}

impl LossCause {
    pub const ALL: [LossCause; 5] = [
        LossCause::Collision,
        LossCause::LinkBreak,
        LossCause::TtlExpiry,
        LossCause::QueueFull,
        LossCause::NoRoute,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossCause::Collision => "collision",
            LossCause::LinkBreak => "link-break",
            LossCause::TtlExpiry => "ttl-expiry",
            LossCause::QueueFull => "queue-full",
            LossCause::NoRoute => "no-route",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MacParams {
    pub rate_bps: f64,
    pub range: f64,
    /// Preamble, MAC header and acknowledgement time charged per frame.
    pub frame_overhead_us: u64,
    pub slot_us: u64,
    pub difs_us: u64,
    /// Initial contention window in slots; doubled per retry, capped at 1023.
    pub cw: u32,
    /// Attempts per unicast frame before the link is declared lost.
    pub retry_limit: u32,
    pub queue_capacity: usize,
}

impl Default for MacParams {
    fn default() -> Self {
        MacParams {
            rate_bps: 11e6,
            range: 1000.0,
            frame_overhead_us: 250,
            slot_us: 20,
            difs_us: 50,
            cw: 31,
            retry_limit: 4,
            queue_capacity: 1000,
        }
    }
}

impl MacParams {
    pub fn airtime(&self, size_bytes: u32) -> SimTime {
        let secs = size_bytes as f64 * 8.0 / self.rate_bps;
        SimTime::from_micros((secs * 1e6).ceil() as u64 + self.frame_overhead_us)
    }
}

pub fn in_range(p: Vec2, q: Vec2, range: f64) -> bool {
    (p - q).norm_sq() <= range * range
}

/// Airtime in seconds: serialization at `rate` plus `overhead` seconds.
pub fn tx_duration(size_bytes: u32, rate: f64, overhead: f64) -> f64 {
    assert!(size_bytes > 0, "empty frame");
    size_bytes as f64 * 8.0 / rate + overhead
}
