//! Route metrics, the RREQ admission gate and route selection.

use crate::mobility::LLT_MAX;
use crate::packet::NodeId;
use crate::proto::messages::Rrep;

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct RouteMetrics {
    pub hc: usize,
    /// Route lifetime, seconds.
    pub rlt: f64,
    /// Estimated time to destination, seconds.
    pub etd: f64,
    pub il_r: u32,
}

/// Minimum link lifetime; a route without links never breaks.
pub fn route_rlt(llts: &[f64]) -> f64 {
    llts.iter().copied().fold(LLT_MAX, f64::min)
}

pub fn route_etd(psts: &[f64]) -> f64 {
    psts.iter().sum()
}

/// Link admission for rebroadcasting a route request: the link to the
/// transmitter must outlive the flow TTL by more than `delta`. An unknown
/// lifetime never admits.
pub fn rreq_admission(llt: Option<f64>, ttl: f64, delta: f64) -> bool {
    match llt {
        Some(l) => l > ttl + delta,
        None => false,
    }
}

/// Local knowledge needed to count interfering links.
pub trait InterferenceView {
    /// Advertised IL value of `node`: active links whose transmitter lies in
    /// the node's closed 1-hop neighborhood.
    fn il(&self, node: NodeId) -> u32;
    /// Whether `node` is within one hop of `other` (or is `other`).
    fn hears(&self, node: NodeId, other: NodeId) -> bool;
    /// Whether the directed link already carries data.
    fn link_active(&self, from: NodeId, to: NodeId) -> bool;
}

/// `IL_theta + IL_phi` at `node` for `route`.
pub fn node_il_contribution<V: InterferenceView + ?Sized>(node: NodeId, route: &[NodeId], view: &V) -> u32 {
    let new_links = route
        .windows(2)
        .filter(|l| !view.link_active(l[0], l[1]) && view.hears(node, l[0]))
        .count() as u32;
    view.il(node) + new_links
}

pub fn compute_il_route<V: InterferenceView + ?Sized>(route: &[NodeId], view: &V) -> u32 {
    if route.len() < 2 {
        return 0;
    }
    route.iter().map(|&j| node_il_contribution(j, route, view)).sum()
}

/// Folds one node's statistics into a reply travelling toward the requester.
///
/// The node has just received `rrep` over a link with lifetime `link_llt`.
pub fn accumulate_rrep(rrep: &mut Rrep, pst: f64, il: u32, link_llt: f64) {
    rrep.route.advance();
    rrep.llts.push(link_llt);
    rrep.etd += pst;
    rrep.il += il;
}

/// Metrics of a reply that has reached its requester (after accumulation).
pub fn metrics_from_rrep(rrep: &Rrep) -> RouteMetrics {
    RouteMetrics {
        hc: rrep.route.hops.len() - 1,
        rlt: route_rlt(&rrep.llts),
        etd: rrep.etd,
        il_r: rrep.il,
    }
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct CostWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights { alpha: 1.0 / 3.0, beta: 1.0 / 3.0, gamma: 1.0 / 3.0 }
    }
}

fn normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    values
        .iter()
        .map(|v| if span > 0.0 { (v - lo) / span } else { 0.0 })
        .collect()
}

/// Weighted sum of min-max normalized HC, ETD and IL_R over the given set.
pub fn route_costs(metrics: &[RouteMetrics], w: CostWeights) -> Vec<f64> {
    let hc = normalize(&metrics.iter().map(|m| m.hc as f64).collect::<Vec<_>>());
    let etd = normalize(&metrics.iter().map(|m| m.etd).collect::<Vec<_>>());
    let il = normalize(&metrics.iter().map(|m| m.il_r as f64).collect::<Vec<_>>());
    (0..metrics.len())
        .map(|i| w.alpha * hc[i] + w.beta * etd[i] + w.gamma * il[i])
        .collect()
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Selection {
    pub index: usize,
    /// No candidate passed the lifetime filter; the longest-lived was taken.
    pub fallback: bool,
    /// Cost of the chosen route among the feasible set (0 on fallback).
    pub cost: f64,
}

/// Picks a route among `candidates`, given in arrival order.
///
/// Candidates whose lifetime does not exceed `ttl + delta` are discarded;
/// the rest are ranked by [`route_costs`], ties going to the longer lifetime
/// and then the earlier arrival.
pub fn select_route(candidates: &[RouteMetrics], ttl: f64, delta: f64, w: CostWeights) -> Option<Selection> {
    if candidates.is_empty() {
        return None;
    }
    let feasible: Vec<usize> = (0..candidates.len()).filter(|&i| candidates[i].rlt > ttl + delta).collect();
    if feasible.is_empty() {
        let mut best = 0;
        for i in 1..candidates.len() {
            if candidates[i].rlt > candidates[best].rlt {
                best = i;
            }
        }
        return Some(Selection { index: best, fallback: true, cost: 0.0 });
    }
    let subset: Vec<RouteMetrics> = feasible.iter().map(|&i| candidates[i]).collect();
    let costs = route_costs(&subset, w);
    let mut best = 0;
    for k in 1..subset.len() {
        let better = costs[k] < costs[best] || (costs[k] == costs[best] && subset[k].rlt > subset[best].rlt);
        if better {
            best = k;
        }
    }
    Some(Selection { index: feasible[best], fallback: false, cost: costs[best] })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::proto::messages::TravelRoute;
    use std::collections::{BTreeMap, BTreeSet};

    fn m(hc: usize, rlt: f64, etd: f64, il_r: u32) -> RouteMetrics {
        RouteMetrics { hc, rlt, etd, il_r }
    }

    #[test]
    fn admission_boundaries() {
        assert!(rreq_admission(Some(5.0), 3.0, 1.0));
        assert!(!rreq_admission(Some(4.0), 3.0, 1.0));
        assert!(!rreq_admission(Some(3.0), 3.0, 0.0));
        assert!(!rreq_admission(None, 3.0, 0.0));
    }

    #[test]
    fn rlt_and_etd() {
        assert_eq!(route_rlt(&[12.0, 4.5, 30.0]), 4.5);
        assert_eq!(route_rlt(&[]), LLT_MAX);
        assert!((route_etd(&[0.01, 0.02, 0.01]) - 0.04).abs() < 1e-15);
    }

    #[test]
    fn destination_reply_starts_with_its_own_pst() {
        // Route S-A-B-D with PSTs D 0.01, B 0.01, A 0.02 and source 0.0.
        let mut rrep = Rrep {
            requester: 0,
            responder: 3,
            rreq_id: 1,
            dst_seq: 1,
            route: TravelRoute::new(vec![3, 2, 1, 0]),
            etd: 0.01,
            il: 0,
            llts: vec![],
            stability: None,
            refresh: false,
        };
        accumulate_rrep(&mut rrep, 0.01, 0, 20.0);
        accumulate_rrep(&mut rrep, 0.02, 0, 15.0);
        accumulate_rrep(&mut rrep, 0.0, 0, 40.0);
        assert!(rrep.route.at_end());
        let got = metrics_from_rrep(&rrep);
        assert_eq!(got.hc, 3);
        assert_eq!(got.rlt, 15.0);
        assert!((got.etd - 0.04).abs() < 1e-15);
    }

    struct Idle {
        adj: BTreeMap<NodeId, BTreeSet<NodeId>>,
        active: BTreeSet<(NodeId, NodeId)>,
    }

    impl InterferenceView for Idle {
        fn il(&self, node: NodeId) -> u32 {
            self.active.iter().filter(|(u, _)| self.hears(node, *u)).count() as u32
        }
        fn hears(&self, node: NodeId, other: NodeId) -> bool {
            node == other || self.adj[&node].contains(&other)
        }
        fn link_active(&self, from: NodeId, to: NodeId) -> bool {
            self.active.contains(&(from, to))
        }
    }

    fn line(n: u16) -> Idle {
        let mut adj: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
        for i in 0..n {
            let e = adj.entry(i).or_default();
            if i > 0 {
                e.insert(i - 1);
            }
            if i + 1 < n {
                e.insert(i + 1);
            }
        }
        Idle { adj, active: BTreeSet::new() }
    }

    #[test]
    fn il_on_idle_line() {
        // A-B-C-D plus a bystander E hanging off B.
        let mut v = line(4);
        v.adj.get_mut(&1).unwrap().insert(4);
        v.adj.insert(4, [1].into());
        // Links A->B, B->C, C->D. A hears A, B; B hears A, B, C; C hears B, C; D hears C.
        assert_eq!(compute_il_route(&[0, 1, 2, 3], &v), 2 + 3 + 2 + 1);
        // E's outgoing link is heard by B only.
        v.active.insert((4, 1));
        assert_eq!(compute_il_route(&[0, 1, 2, 3], &v), 9);
        assert_eq!(compute_il_route(&[2], &v), 0);
        assert_eq!(compute_il_route(&[], &v), 0);
    }

    #[test]
    fn single_candidate_and_il_preference() {
        let w = CostWeights::default();
        let s = select_route(&[m(3, 10.0, 0.1, 5)], 3.0, 0.5, w).unwrap();
        assert_eq!((s.index, s.fallback), (0, false));
        let s = select_route(&[m(3, 10.0, 0.1, 10), m(3, 10.0, 0.1, 4)], 3.0, 0.5, w).unwrap();
        assert_eq!(s.index, 1);
    }

    #[test]
    fn lifetime_filter_and_fallback() {
        let w = CostWeights::default();
        let s = select_route(&[m(2, 3.5, 0.0, 0), m(6, 3.6, 1.0, 9)], 3.0, 0.5, w).unwrap();
        assert_eq!((s.index, s.fallback), (1, false));
        let s = select_route(&[m(2, 1.0, 0.0, 0), m(6, 2.0, 1.0, 9)], 3.0, 0.5, w).unwrap();
        assert_eq!((s.index, s.fallback), (1, true));
        assert!(select_route(&[], 3.0, 0.5, w).is_none());
    }

    #[test]
    fn ties_prefer_longer_life_then_earlier_arrival() {
        let w = CostWeights::default();
        let s = select_route(&[m(3, 10.0, 0.1, 4), m(3, 20.0, 0.1, 4)], 3.0, 0.5, w).unwrap();
        assert_eq!(s.index, 1);
        let s = select_route(&[m(3, 20.0, 0.1, 4), m(3, 20.0, 0.1, 4)], 3.0, 0.5, w).unwrap();
        assert_eq!(s.index, 0);
    }
}
