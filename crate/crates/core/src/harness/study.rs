//! Pipe-width tradeoff: how many neighbors a route's intermediate nodes
//! would track, and how many alternate high-quality routes the source
//! would see, for a range of widths.
//!
//! An H-AODV scenario is run and, at regular instants, every flow's active
//! route is measured against the true topology at that instant. A route
//! inside the width-`w` pipe counts as high quality when each of its links
//! is predicted to outlive `ttl + delta`; it may be at most `2w` hops longer
//! than the current route.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::harness::config::ScenarioConfig;
use crate::harness::run::build_network;
use crate::harness::stats::{mean_ci, Summary};
use crate::harness::HarnessError;
use crate::kernel::SimTime;
use crate::mobility::{predict_llt, Trajectory};
use crate::packet::NodeId;
use crate::proto::haodv::pipe::{enumerate_simple_paths, neighbors_tracked, pipe_members, Adjacency};
use crate::proto::ProtocolKind;
use crate::radio::in_range;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WidthRow {
    pub width: u32,
    /// Neighbors tracked per intermediate node.
    pub neighbors: Summary,
    /// Mean alternate routes per sampled route, no longer than the current one.
    pub routes_le: f64,
    pub routes_gt: f64,
    pub routes_sampled: usize,
    pub truncated: usize,
}

/// Ground-truth unit-disc graph.
pub fn adjacency(trajs: &[Trajectory], range: f64) -> Adjacency {
    let n = trajs.len();
    let mut adj: Adjacency = (0..n as NodeId).map(|i| (i, BTreeSet::new())).collect();
    for i in 0..n {
        for j in i + 1..n {
            if in_range(trajs[i].position, trajs[j].position, range) {
                adj.get_mut(&(i as NodeId)).unwrap().insert(j as NodeId);
                adj.get_mut(&(j as NodeId)).unwrap().insert(i as NodeId);
            }
        }
    }
    adj
}

fn restrict(nodes: &BTreeSet<NodeId>, links: &BTreeSet<(NodeId, NodeId)>) -> Adjacency {
    let mut adj: Adjacency = nodes.iter().map(|&n| (n, BTreeSet::new())).collect();
    for &(a, b) in links {
        if nodes.contains(&a) && nodes.contains(&b) {
            adj.get_mut(&a).unwrap().insert(b);
            adj.get_mut(&b).unwrap().insert(a);
        }
    }
    adj
}

#[derive(Default)]
struct Acc {
    neighbors: Vec<f64>,
    le: u64,
    gt: u64,
    truncated: usize,
}

struct Sampler<'a> {
    trajs: &'a [Trajectory],
    adj: &'a Adjacency,
    range: f64,
    min_llt: f64,
    cap: usize,
    now: SimTime,
    llt_cache: BTreeMap<(NodeId, NodeId), f64>,
}

impl Sampler<'_> {
    fn llt(&mut self, a: NodeId, b: NodeId) -> f64 {
        let k = if a < b { (a, b) } else { (b, a) };
        let (trajs, range, now) = (self.trajs, self.range, self.now);
        *self.llt_cache.entry(k).or_insert_with(|| {
            predict_llt(&trajs[k.0 as usize], &trajs[k.1 as usize], range, now).map_or(0.0, |e| e.value)
        })
    }

    fn sample(&mut self, route: &[NodeId], w: u32, acc: &mut Acc) {
        for i in 1..route.len() - 1 {
            acc.neighbors.push(neighbors_tracked(self.adj, route, i, w) as f64);
        }
        let (nodes, links) = pipe_members(self.adj, route, w);
        let sub = restrict(&nodes, &links);
        let hops = route.len() - 1;
        let (src, dst) = (route[0], route[hops]);
        let (paths, truncated) = enumerate_simple_paths(&sub, src, dst, hops + 2 * w as usize, self.cap);
        acc.truncated += truncated as usize;
        for p in paths {
            if p.as_slice() == route {
                continue;
            }
            if p.windows(2).all(|l| self.llt(l[0], l[1]) > self.min_llt) {
                if p.len() <= route.len() {
                    acc.le += 1;
                } else {
                    acc.gt += 1;
                }
            }
        }
    }
}

/// Runs the study over every configured seed, sampling every `interval`
/// seconds after warmup.
pub fn pipe_width_study(cfg: &ScenarioConfig, widths: &[u32], interval: f64) -> Result<Vec<WidthRow>, HarnessError> {
    let mut cfg = cfg.clone();
    cfg.protocol = ProtocolKind::Haodv;
    cfg.validate()?;
    let mut accs: Vec<Acc> = widths.iter().map(|_| Acc::default()).collect();
    let mut routes = 0usize;
    for &seed in &cfg.seeds {
        let mut net = build_network(&cfg, seed)?;
        let flows = net.flows().to_vec();
        let mut t = cfg.warmup + interval;
        while t <= cfg.duration - cfg.ttl {
            net.run_until(SimTime::from_secs_f64(t))?;
            let trajs: Vec<Trajectory> = (0..cfg.node_count).map(|i| net.trajectory(i as NodeId)).collect();
            let adj = adjacency(&trajs, cfg.mac.range);
            let mut s = Sampler {
                trajs: &trajs,
                adj: &adj,
                range: cfg.mac.range,
                min_llt: cfg.ttl + cfg.constants.haodv.delta,
                cap: cfg.constants.haodv.max_pipe_paths,
                now: net.now(),
                llt_cache: BTreeMap::new(),
            };
            for f in &flows {
                let Some(r) = net.agent(f.src).route(f.dst) else { continue };
                let path: Vec<NodeId> = r.path.to_vec();
                // Only routes that exist right now and have an interior.
                if path.len() < 3 || !path.windows(2).all(|l| adj[&l[0]].contains(&l[1])) {
                    continue;
                }
                routes += 1;
                for (acc, &w) in accs.iter_mut().zip(widths) {
                    s.sample(&path, w, acc);
                }
            }
            t += interval;
        }
    }
    accs.into_iter()
        .zip(widths)
        .map(|(a, &w)| {
            let neighbors = match mean_ci(&a.neighbors) {
                Ok(s) => s,
                Err(_) => {
                    let mean = a.neighbors.first().copied().unwrap_or(f64::NAN);
                    Summary { n: a.neighbors.len(), mean, std: 0.0, ci_low: f64::NAN, ci_high: f64::NAN }
                }
            };
            let per = |x: u64| if routes == 0 { 0.0 } else { x as f64 / routes as f64 };
            Ok(WidthRow {
                width: w,
                neighbors,
                routes_le: per(a.le),
                routes_gt: per(a.gt),
                routes_sampled: routes,
                truncated: a.truncated,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec2;

    fn still(x: f64, y: f64) -> Trajectory {
        Trajectory::straight(Vec2::new(x, y), 0.0, 0.0, SimTime::MAX)
    }

    #[test]
    fn ladder_alternates() {
        // Two rows of four static nodes 800 m apart; the top row is the route.
        let mut trajs = Vec::new();
        for i in 0..4 {
            trajs.push(still(800.0 * i as f64, 0.0));
        }
        for i in 0..4 {
            trajs.push(still(800.0 * i as f64, 800.0));
        }
        let adj = adjacency(&trajs, 1000.0);
        assert_eq!(adj[&0], BTreeSet::from([1, 4]));
        let mut s = Sampler {
            trajs: &trajs,
            adj: &adj,
            range: 1000.0,
            min_llt: 3.5,
            cap: 1000,
            now: SimTime::ZERO,
            llt_cache: BTreeMap::new(),
        };
        let route = [0, 1, 2, 3];
        let mut w0 = Acc::default();
        s.sample(&route, 0, &mut w0);
        assert_eq!(w0.neighbors, vec![2.0, 2.0]);
        assert_eq!((w0.le, w0.gt), (0, 0));
        let mut w1 = Acc::default();
        s.sample(&route, 1, &mut w1);
        assert_eq!(w1.neighbors, vec![3.0, 3.0]);
        // Width 1 brings in 5 and 6 but not the 5-6 link.
        let (nodes, _) = pipe_members(&adj, &route, 1);
        assert_eq!(nodes, BTreeSet::from([0, 1, 2, 3, 5, 6]));
        assert_eq!((w1.le, w1.gt), (0, 0));
        let mut w2 = Acc::default();
        s.sample(&route, 2, &mut w2);
        assert_eq!(w2.neighbors, vec![6.0, 6.0]);
        // Width 2 covers the whole ladder: one path per even subset of the
        // four rungs, minus the route itself.
        assert_eq!(w2.gt, 7);
        assert_eq!(w2.le, 0);
    }
}
