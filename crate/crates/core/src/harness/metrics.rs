//! Per-flow and per-run metrics extracted from a finished simulation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::packet::NodeId;
use crate::radio::LossCause;
use crate::sim::{ControlStats, FlowSpec, FlowStats, SimReport};

/// Delivered over generated; a flow that generated nothing scores zero.
pub fn compute_pdr(delivered: u64, generated: u64) -> f64 {
    if generated == 0 {
        0.0
    } else {
        delivered as f64 / generated as f64
    }
}

/// Control packets transmitted and their total size in bytes.
pub fn count_overhead(control: &ControlStats) -> (u64, u64) {
    (control.total_packets(), control.total_bytes())
}

/// Per-second PDR over bins that generated at least one packet.
pub fn instantaneous_pdr(bins: &[(u64, u64)]) -> Vec<f64> {
    bins.iter().filter(|b| b.0 > 0).map(|&(g, d)| compute_pdr(d, g)).collect()
}

/// Population variance.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowMetrics {
    pub flow: usize,
    pub src: NodeId,
    pub dst: NodeId,
    pub generated: u64,
    pub delivered: u64,
    pub pdr: f64,
    pub mean_delay: f64,
    pub route_discoveries: u64,
    pub lost: BTreeMap<LossCause, u64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunMetrics {
    pub seed: u64,
    pub flows: Vec<FlowMetrics>,
    pub generated: u64,
    pub delivered: u64,
    pub pdr: f64,
    pub route_discoveries: u64,
    pub routes_computed: u64,
    pub route_switches: u64,
    pub control_packets: u64,
    pub control_bytes: u64,
    pub lost: BTreeMap<LossCause, u64>,
    /// `(generated, delivered)` per second after warmup, all flows summed.
    pub per_second: Vec<(u64, u64)>,
    pub data_transmissions: u64,
    pub events: u64,
}

impl RunMetrics {
    pub fn from_report(seed: u64, specs: &[FlowSpec], r: &SimReport) -> Self {
        let flows: Vec<FlowMetrics> = specs
            .iter()
            .zip(&r.flows)
            .enumerate()
            .map(|(i, (spec, st))| flow_metrics(i, spec, st, r))
            .collect();
        let generated = flows.iter().map(|f| f.generated).sum();
        let delivered = flows.iter().map(|f| f.delivered).sum();
        let mut lost = BTreeMap::new();
        for f in &flows {
            for (&c, &n) in &f.lost {
                *lost.entry(c).or_insert(0) += n;
            }
        }
        let len = r.flows.iter().map(|f| f.per_second.len()).max().unwrap_or(0);
        let mut per_second = vec![(0, 0); len];
        for f in &r.flows {
            for (acc, b) in per_second.iter_mut().zip(&f.per_second) {
                acc.0 += b.0;
                acc.1 += b.1;
            }
        }
        let (control_packets, control_bytes) = count_overhead(&r.control);
        RunMetrics {
            seed,
            route_discoveries: flows.iter().map(|f| f.route_discoveries).sum(),
            flows,
            generated,
            delivered,
            pdr: compute_pdr(delivered, generated),
            routes_computed: r.counters.routes_computed,
            route_switches: r.counters.route_switches,
            control_packets,
            control_bytes,
            lost,
            per_second,
            data_transmissions: r.data_transmissions,
            events: r.events_executed,
        }
    }

    pub fn discoveries_per_flow(&self) -> f64 {
        self.route_discoveries as f64 / self.flows.len().max(1) as f64
    }

    pub fn control_mb(&self) -> f64 {
        self.control_bytes as f64 / 1e6
    }

    pub fn pdr_series(&self) -> Vec<f64> {
        instantaneous_pdr(&self.per_second)
    }

    pub fn pdr_variance(&self) -> f64 {
        variance(&self.pdr_series())
    }

    pub fn mean_delay(&self) -> f64 {
        let total: f64 = self.flows.iter().map(|f| f.mean_delay * f.delivered as f64).sum();
        if self.delivered == 0 { 0.0 } else { total / self.delivered as f64 }
    }
}

fn flow_metrics(i: usize, spec: &FlowSpec, st: &FlowStats, r: &SimReport) -> FlowMetrics {
    FlowMetrics {
        flow: i,
        src: spec.src,
        dst: spec.dst,
        generated: st.generated,
        delivered: st.delivered,
        pdr: compute_pdr(st.delivered, st.generated),
        mean_delay: if st.delivered == 0 { 0.0 } else { st.delay_sum / st.delivered as f64 },
        route_discoveries: r.counters.discoveries(spec.src, spec.dst),
        lost: st.lost.clone(),
    }
}
