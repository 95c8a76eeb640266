//! CSV emission and the `report` aggregation. Column meanings and units are
//! listed in `docs/csv.md`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::harness::config::ScenarioConfig;
use crate::harness::metrics::RunMetrics;
use crate::harness::stats::{mean_ci, StatsError, Summary};
use crate::harness::HarnessError;
use crate::radio::LossCause;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub scenario: String,
    pub protocol: String,
    pub node_count: usize,
    pub speed_mps: f64,
    pub flows: usize,
    pub rate_bps: f64,
    pub seed: u64,
    pub generated: u64,
    pub delivered: u64,
    pub pdr: f64,
    pub pdr_variance: f64,
    pub mean_delay_s: f64,
    pub route_discoveries: u64,
    pub discoveries_per_flow: f64,
    pub routes_computed: u64,
    pub route_switches: u64,
    pub control_packets: u64,
    pub control_bytes: u64,
    pub loss_collision: u64,
    pub loss_link_break: u64,
    pub loss_ttl_expiry: u64,
    pub loss_queue_full: u64,
    pub loss_no_route: u64,
    pub data_transmissions: u64,
    pub events: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowRow {
    pub scenario: String,
    pub protocol: String,
    pub seed: u64,
    pub flow: usize,
    pub src: u16,
    pub dst: u16,
    pub generated: u64,
    pub delivered: u64,
    pub pdr: f64,
    pub mean_delay_s: f64,
    pub route_discoveries: u64,
    pub loss_collision: u64,
    pub loss_link_break: u64,
    pub loss_ttl_expiry: u64,
    pub loss_queue_full: u64,
    pub loss_no_route: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub scenario: String,
    pub protocol: String,
    pub seed: u64,
    pub second: usize,
    pub generated: u64,
    pub delivered: u64,
    pub pdr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub protocol: String,
    pub node_count: usize,
    pub speed_mps: f64,
    pub flows: usize,
    pub rate_bps: f64,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

fn loss(m: &BTreeMap<LossCause, u64>, c: LossCause) -> u64 {
    m.get(&c).copied().unwrap_or(0)
}

pub fn run_row(cfg: &ScenarioConfig, m: &RunMetrics) -> RunRow {
    RunRow {
        scenario: cfg.name.clone(),
        protocol: cfg.protocol.name().into(),
        node_count: cfg.node_count,
        speed_mps: cfg.mobility.speed,
        flows: cfg.traffic.flows,
        rate_bps: cfg.traffic.rate_bps,
        seed: m.seed,
        generated: m.generated,
        delivered: m.delivered,
        pdr: m.pdr,
        pdr_variance: m.pdr_variance(),
        mean_delay_s: m.mean_delay(),
        route_discoveries: m.route_discoveries,
        discoveries_per_flow: m.discoveries_per_flow(),
        routes_computed: m.routes_computed,
        route_switches: m.route_switches,
        control_packets: m.control_packets,
        control_bytes: m.control_bytes,
        loss_collision: loss(&m.lost, LossCause::Collision),
        loss_link_break: loss(&m.lost, LossCause::LinkBreak),
        loss_ttl_expiry: loss(&m.lost, LossCause::TtlExpiry),
        loss_queue_full: loss(&m.lost, LossCause::QueueFull),
        loss_no_route: loss(&m.lost, LossCause::NoRoute),
        data_transmissions: m.data_transmissions,
        events: m.events,
    }
}

pub fn flow_rows(cfg: &ScenarioConfig, m: &RunMetrics) -> Vec<FlowRow> {
    m.flows
        .iter()
        .map(|f| FlowRow {
            scenario: cfg.name.clone(),
            protocol: cfg.protocol.name().into(),
            seed: m.seed,
            flow: f.flow,
            src: f.src,
            dst: f.dst,
            generated: f.generated,
            delivered: f.delivered,
            pdr: f.pdr,
            mean_delay_s: f.mean_delay,
            route_discoveries: f.route_discoveries,
            loss_collision: loss(&f.lost, LossCause::Collision),
            loss_link_break: loss(&f.lost, LossCause::LinkBreak),
            loss_ttl_expiry: loss(&f.lost, LossCause::TtlExpiry),
            loss_queue_full: loss(&f.lost, LossCause::QueueFull),
            loss_no_route: loss(&f.lost, LossCause::NoRoute),
        })
        .collect()
}

pub fn series_rows(cfg: &ScenarioConfig, m: &RunMetrics) -> Vec<SeriesRow> {
    m.per_second
        .iter()
        .enumerate()
        .map(|(i, &(g, d))| SeriesRow {
            scenario: cfg.name.clone(),
            protocol: cfg.protocol.name().into(),
            seed: m.seed,
            second: i,
            generated: g,
            delivered: d,
            pdr: (g > 0).then(|| d as f64 / g as f64),
        })
        .collect()
}

/// Serializes rows to CSV in memory.
pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))
}

/// Writes through a temporary file so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_runs(path: &Path) -> Result<Vec<RunRow>, HarnessError> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<Result<Vec<RunRow>, _>>()?;
    Ok(rows)
}

type GroupKey = (String, String, usize, u64, usize, u64);

/// Mean and 95% CI of every run metric, per scenario and protocol.
pub fn summarize(rows: &[RunRow]) -> Result<Vec<SummaryRow>, StatsError> {
    let mut groups: BTreeMap<GroupKey, Vec<&RunRow>> = BTreeMap::new();
    for r in rows {
        let key = (
            r.scenario.clone(),
            r.protocol.clone(),
            r.node_count,
            r.speed_mps.to_bits(),
            r.flows,
            r.rate_bps.to_bits(),
        );
        groups.entry(key).or_default().push(r);
    }
    let metrics: [(&str, fn(&RunRow) -> f64); 11] = [
        ("pdr", |r| r.pdr),
        ("pdr_variance", |r| r.pdr_variance),
        ("mean_delay_s", |r| r.mean_delay_s),
        ("route_discoveries", |r| r.route_discoveries as f64),
        ("discoveries_per_flow", |r| r.discoveries_per_flow),
        ("routes_computed", |r| r.routes_computed as f64),
        ("route_switches", |r| r.route_switches as f64),
        ("control_packets", |r| r.control_packets as f64),
        ("control_mb", |r| r.control_bytes as f64 / 1e6),
        ("loss_no_route", |r| r.loss_no_route as f64),
        ("data_transmissions", |r| r.data_transmissions as f64),
    ];
    let mut out = Vec::new();
    for ((scenario, protocol, node_count, speed, flows, rate), rs) in groups {
        for (name, f) in metrics {
            let vals: Vec<f64> = rs.iter().map(|r| f(r)).collect();
            let s = match mean_ci(&vals) {
                Ok(s) => s,
                Err(StatsError::TooFew(1)) => {
                    Summary { n: 1, mean: vals[0], std: 0.0, ci_low: f64::NAN, ci_high: f64::NAN }
                }
                Err(e) => return Err(e),
            };
            out.push(SummaryRow {
                scenario: scenario.clone(),
                protocol: protocol.clone(),
                node_count,
                speed_mps: f64::from_bits(speed),
                flows,
                rate_bps: f64::from_bits(rate),
                metric: name.into(),
                n: s.n,
                mean: s.mean,
                std: s.std,
                ci_low: s.ci_low,
                ci_high: s.ci_high,
            });
        }
    }
    Ok(out)
}
