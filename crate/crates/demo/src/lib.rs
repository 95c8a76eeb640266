//! Browser front end: a live swarm with routes and pipes drawn on a canvas,
//! and a one-seed protocol comparison.

use std::collections::BTreeSet;

use serde::Serialize;
use wasm_bindgen::prelude::*;

use fanet_core::harness::study::adjacency;
use fanet_core::harness::{build_network, run_once, ScenarioConfig};
use fanet_core::kernel::SimTime;
use fanet_core::mobility::Trajectory;
use fanet_core::packet::NodeId;
use fanet_core::proto::haodv::pipe::pipe_members;
use fanet_core::proto::router::Router;
use fanet_core::proto::ProtocolKind;
use fanet_core::sim::Network;

#[derive(Serialize)]
pub struct FlowView {
    pub src: NodeId,
    pub dst: NodeId,
    pub route: Option<Vec<NodeId>>,
    pub generated: u64,
    pub delivered: u64,
}

#[derive(Serialize)]
pub struct Frame {
    pub t: f64,
    pub area: [f64; 2],
    pub range: f64,
    pub positions: Vec<[f64; 2]>,
    pub links: Vec<[NodeId; 2]>,
    pub flows: Vec<FlowView>,
    /// Links of the first flow's pipe as last reported to its source.
    pub known_pipe: Vec<[NodeId; 2]>,
}

#[derive(Serialize)]
pub struct PipeView {
    pub width: u32,
    pub nodes: Vec<NodeId>,
    pub links: Vec<[NodeId; 2]>,
}

#[derive(Serialize)]
pub struct ComparisonRow {
    pub protocol: String,
    pub pdr: f64,
    pub discoveries_per_flow: f64,
    pub control_mb: f64,
    pub route_switches: u64,
}

pub fn scenario(protocol: &str, nodes: usize, flows: usize, rate_bps: f64) -> Result<ScenarioConfig, String> {
    let mut cfg = ScenarioConfig::default();
    cfg.protocol = protocol.parse().map_err(|e| format!("{e}"))?;
    cfg.node_count = nodes;
    cfg.traffic.flows = flows;
    cfg.traffic.rate_bps = rate_bps;
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

pub struct Swarm {
    cfg: ScenarioConfig,
    net: Network<Router>,
}

impl Swarm {
    pub fn new(cfg: ScenarioConfig, seed: u64) -> Result<Swarm, String> {
        let net = build_network(&cfg, seed).map_err(|e| e.to_string())?;
        Ok(Swarm { cfg, net })
    }

    /// Advances by `dt` seconds, stopping at the end of the run.
    pub fn step(&mut self, dt: f64) -> Result<(), String> {
        let end = SimTime::from_secs_f64(self.cfg.duration);
        let t = (self.net.now() + SimTime::from_secs_f64(dt)).min(end);
        self.net.run_until(t).map_err(|e| e.to_string())
    }

    fn trajectories(&self) -> Vec<Trajectory> {
        (0..self.cfg.node_count).map(|i| self.net.trajectory(i as NodeId)).collect()
    }

    pub fn frame(&self) -> Frame {
        let trajs = self.trajectories();
        let adj = adjacency(&trajs, self.cfg.mac.range);
        let links = adj
            .iter()
            .flat_map(|(&a, ns)| ns.iter().filter(move |&&b| a < b).map(move |&b| [a, b]))
            .collect();
        let stats = self.net.stats();
        let flows: Vec<FlowView> = self
            .net
            .flows()
            .iter()
            .zip(stats)
            .map(|(f, s)| FlowView {
                src: f.src,
                dst: f.dst,
                route: self.net.agent(f.src).route(f.dst).map(|r| r.path.to_vec()),
                generated: s.generated,
                delivered: s.delivered,
            })
            .collect();
        let known_pipe = flows
            .first()
            .and_then(|f| self.net.agent(f.src).pipe(f.dst))
            .map(|p| p.topology.links.keys().map(|&(a, b)| [a, b]).collect())
            .unwrap_or_default();
        Frame {
            t: self.net.now().as_secs_f64(),
            area: [self.cfg.mobility.area.width, self.cfg.mobility.area.height],
            range: self.cfg.mac.range,
            positions: trajs.iter().map(|t| [t.position.x, t.position.y]).collect(),
            links,
            flows,
            known_pipe,
        }
    }

    /// Ground-truth pipe of the given width around the first flow's route.
    pub fn pipe(&self, width: u32) -> Option<PipeView> {
        let f = self.net.flows().first()?;
        let route = self.net.agent(f.src).route(f.dst)?.path.to_vec();
        let adj = adjacency(&self.trajectories(), self.cfg.mac.range);
        if !route.windows(2).all(|l| adj[&l[0]].contains(&l[1])) {
            return None;
        }
        let (nodes, links): (BTreeSet<NodeId>, _) = pipe_members(&adj, &route, width);
        Some(PipeView {
            width,
            nodes: nodes.into_iter().collect(),
            links: links.into_iter().map(|(a, b)| [a, b]).collect(),
        })
    }
}

pub fn compare(nodes: usize, flows: usize, rate_bps: f64, seed: u64) -> Result<Vec<ComparisonRow>, String> {
    ProtocolKind::ALL
        .iter()
        .map(|p| {
            let cfg = scenario(p.name(), nodes, flows, rate_bps)?;
            let m = run_once(&cfg, seed).map_err(|e| e.to_string())?;
            Ok(ComparisonRow {
                protocol: p.name().into(),
                pdr: m.pdr,
                discoveries_per_flow: m.discoveries_per_flow(),
                control_mb: m.control_mb(),
                route_switches: m.route_switches,
            })
        })
        .collect()
}

fn js<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("plain data serializes")
}

#[wasm_bindgen]
pub struct Demo {
    swarm: Swarm,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(protocol: &str, nodes: usize, flows: usize, rate_bps: f64, seed: u64) -> Result<Demo, JsError> {
        let cfg = scenario(protocol, nodes, flows, rate_bps).map_err(|e| JsError::new(&e))?;
        Ok(Demo { swarm: Swarm::new(cfg, seed).map_err(|e| JsError::new(&e))? })
    }

    /// Advances the swarm and returns the new frame as JSON.
    pub fn step(&mut self, dt: f64) -> Result<String, JsError> {
        self.swarm.step(dt).map_err(|e| JsError::new(&e))?;
        Ok(js(&self.swarm.frame()))
    }

    /// JSON pipe view, or `null` while the first flow has no live route.
    pub fn pipe(&self, width: u32) -> String {
        js(&self.swarm.pipe(width))
    }
}

/// Runs all three protocols on one seed; JSON rows.
#[wasm_bindgen]
pub fn compare_protocols(nodes: usize, flows: usize, rate_bps: f64, seed: u64) -> Result<String, JsError> {
    compare(nodes, flows, rate_bps, seed).map(|r| js(&r)).map_err(|e| JsError::new(&e))
}
