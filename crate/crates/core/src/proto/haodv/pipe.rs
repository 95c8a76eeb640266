//! The pipe: neighborhood topology around the active route, as known to the
//! source, and the search for alternate routes inside it.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::kernel::SimTime;
use crate::packet::NodeId;
use crate::proto::haodv::metrics::{compute_il_route, route_etd, route_rlt, InterferenceView, RouteMetrics};
use crate::proto::messages::NodeStats;

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct LinkStat {
    /// Remaining lifetime at the time of the report, seconds.
    pub llt: f64,
    pub active: bool,
}

pub type Adjacency = BTreeMap<NodeId, BTreeSet<NodeId>>;

fn key(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    if a <= b { (a, b) } else { (b, a) }
}

/// Undirected graph with per-node and per-link statistics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Topology {
    pub nodes: BTreeMap<NodeId, NodeStats>,
    /// Keyed by `(min, max)` endpoint.
    pub links: BTreeMap<(NodeId, NodeId), LinkStat>,
}

impl Topology {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, id: NodeId, stats: NodeStats) {
        self.nodes.insert(id, stats);
    }

    /// Adds or overwrites a link; unknown endpoints get default statistics.
    pub fn add_link(&mut self, a: NodeId, b: NodeId, stat: LinkStat) {
        assert_ne!(a, b, "self loop");
        self.nodes.entry(a).or_default();
        self.nodes.entry(b).or_default();
        self.links.insert(key(a, b), stat);
    }

    pub fn link(&self, a: NodeId, b: NodeId) -> Option<&LinkStat> {
        self.links.get(&key(a, b))
    }

    pub fn has_link(&self, a: NodeId, b: NodeId) -> bool {
        self.links.contains_key(&key(a, b))
    }

    pub fn adjacency(&self) -> Adjacency {
        let mut adj: Adjacency = self.nodes.keys().map(|&n| (n, BTreeSet::new())).collect();
        for &(a, b) in self.links.keys() {
            adj.get_mut(&a).unwrap().insert(b);
            adj.get_mut(&b).unwrap().insert(a);
        }
        adj
    }

    /// Union with `other`; statistics from `other` win on overlap.
    pub fn merge(&mut self, other: &Topology) {
        for (&id, &s) in &other.nodes {
            self.nodes.insert(id, s);
        }
        for (&k, &l) in &other.links {
            self.links.insert(k, l);
        }
    }
}

/// Hop distances from `center`, up to `max_hops`.
pub fn hop_distances(adj: &Adjacency, center: NodeId, max_hops: u32) -> BTreeMap<NodeId, u32> {
    let mut dist = BTreeMap::new();
    dist.insert(center, 0);
    let mut frontier = VecDeque::from([center]);
    while let Some(n) = frontier.pop_front() {
        let d = dist[&n];
        if d == max_hops {
            continue;
        }
        if let Some(ns) = adj.get(&n) {
            for &m in ns {
                if !dist.contains_key(&m) {
                    dist.insert(m, d + 1);
                    frontier.push_back(m);
                }
            }
        }
    }
    dist
}

/// What `center` learns with width `w`: every node within `w` hops and
/// every link with an endpoint within `w - 1` hops.
///
/// For `w = 2` this is the node's own star plus its neighbors' stars, which
/// is what Hello neighbor lists provide.
pub fn neighborhood(adj: &Adjacency, center: NodeId, w: u32) -> (BTreeSet<NodeId>, BTreeSet<(NodeId, NodeId)>) {
    let dist = hop_distances(adj, center, w);
    let nodes: BTreeSet<NodeId> = dist.keys().copied().collect();
    let mut links = BTreeSet::new();
    if w == 0 {
        return (nodes, links);
    }
    for (&n, &d) in &dist {
        if d < w {
            for &m in &adj[&n] {
                links.insert(key(n, m));
            }
        }
    }
    (nodes, links)
}

/// Union of the width-`w` neighborhoods of the route's intermediate nodes,
/// plus the route itself.
pub fn pipe_members(adj: &Adjacency, route: &[NodeId], w: u32) -> (BTreeSet<NodeId>, BTreeSet<(NodeId, NodeId)>) {
    let mut nodes: BTreeSet<NodeId> = route.iter().copied().collect();
    let mut links: BTreeSet<(NodeId, NodeId)> = route.windows(2).map(|l| key(l[0], l[1])).collect();
    if route.len() > 2 {
        for &j in &route[1..route.len() - 1] {
            let (n, l) = neighborhood(adj, j, w);
            nodes.extend(n);
            links.extend(l);
        }
    }
    (nodes, links)
}

/// Neighbors an intermediate node keeps track of at width `w`; at width 0
/// only its two route neighbors.
pub fn neighbors_tracked(adj: &Adjacency, route: &[NodeId], index: usize, w: u32) -> usize {
    let j = route[index];
    let mut set: BTreeSet<NodeId> = if w == 0 {
        BTreeSet::new()
    } else {
        neighborhood(adj, j, w).0
    };
    if index > 0 {
        set.insert(route[index - 1]);
    }
    if index + 1 < route.len() {
        set.insert(route[index + 1]);
    }
    set.remove(&j);
    set.len()
}

/// Breadth-first enumeration of simple paths from `src` to `dst` with at
/// most `max_hops` links. Stops after `cap` paths, or once the search has
/// expanded 20 times as many partial paths; the flag reports whether a
/// limit cut the search short.
pub fn enumerate_simple_paths(
    adj: &Adjacency,
    src: NodeId,
    dst: NodeId,
    max_hops: usize,
    cap: usize,
) -> (Vec<Vec<NodeId>>, bool) {
    let mut out = Vec::new();
    if !adj.contains_key(&src) || !adj.contains_key(&dst) {
        return (out, false);
    }
    if src == dst {
        return (vec![vec![src]], false);
    }
    // A partial path is only extended if it can still reach dst in time.
    let to_dst = hop_distances(adj, dst, max_hops as u32);
    let budget = cap.saturating_mul(20);
    let mut expanded = 0usize;
    let mut queue: VecDeque<Vec<NodeId>> = VecDeque::from([vec![src]]);
    while let Some(path) = queue.pop_front() {
        let last = *path.last().unwrap();
        let hops = path.len() - 1;
        for &n in &adj[&last] {
            if path.contains(&n) {
                continue;
            }
            let Some(&d) = to_dst.get(&n) else { continue };
            if hops + 1 + d as usize > max_hops {
                continue;
            }
            let mut next = path.clone();
            next.push(n);
            if n == dst {
                out.push(next);
                if out.len() >= cap {
                    return (out, true);
                }
            } else {
                expanded += 1;
                if expanded > budget {
                    return (out, true);
                }
                queue.push_back(next);
            }
        }
    }
    (out, false)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipeGraph {
    pub topology: Topology,
    pub anchor: Vec<NodeId>,
    pub width: u32,
    /// When the most recent Notify_Source arrived.
    pub freshness: SimTime,
}

impl PipeGraph {
    pub fn is_fresh(&self, now: SimTime, max_age: f64) -> bool {
        now.secs_since(self.freshness) <= max_age
    }

    /// Lifetime of a pipe link left at `now`.
    pub fn link_llt(&self, a: NodeId, b: NodeId, now: SimTime) -> Option<f64> {
        let age = now.secs_since(self.freshness);
        self.topology.link(a, b).map(|l| (l.llt - age).max(0.0))
    }

    pub fn metrics_of(&self, path: &[NodeId], now: SimTime) -> Option<RouteMetrics> {
        let mut llts = Vec::with_capacity(path.len());
        for l in path.windows(2) {
            llts.push(self.link_llt(l[0], l[1], now)?);
        }
        let psts: Vec<f64> = path
            .iter()
            .map(|n| self.topology.nodes.get(n).map_or(0.0, |s| s.pst))
            .collect();
        Some(RouteMetrics {
            hc: path.len() - 1,
            rlt: route_rlt(&llts),
            etd: route_etd(&psts),
            il_r: compute_il_route(path, &self.topology),
        })
    }

    /// Every simple `src`-`dst` path in the pipe within the hop bound, with
    /// metrics; paths over links that have already expired are left out.
    pub fn routes(&self, src: NodeId, dst: NodeId, max_hops: usize, cap: usize, now: SimTime) -> (Vec<(Vec<NodeId>, RouteMetrics)>, bool) {
        let adj = self.topology.adjacency();
        let (paths, truncated) = enumerate_simple_paths(&adj, src, dst, max_hops, cap);
        let routes = paths
            .into_iter()
            .filter_map(|p| {
                let m = self.metrics_of(&p, now)?;
                let live = p.windows(2).all(|l| {
                    let s = self.topology.link(l[0], l[1]).unwrap();
                    s.active || self.link_llt(l[0], l[1], now).unwrap() > 0.0
                });
                live.then_some((p, m))
            })
            .collect();
        (routes, truncated)
    }
}

impl InterferenceView for Topology {
    fn il(&self, node: NodeId) -> u32 {
        self.nodes.get(&node).map_or(0, |s| s.il as u32)
    }
    fn hears(&self, node: NodeId, other: NodeId) -> bool {
        node == other || self.has_link(node, other)
    }
    fn link_active(&self, from: NodeId, to: NodeId) -> bool {
        self.link(from, to).is_some_and(|l| l.active)
    }
}
