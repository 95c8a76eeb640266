//! LEPR building blocks: link stability, disjoint-route caching and the
//! switch-or-rediscover decision.
//!
//! The stability metric is a surrogate: the lifetime factor
//! `min(1, LLT / llt_norm)` times the distance factor `1 - d / range`.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::packet::NodeId;

#[derive(Debug, Error, PartialEq)]
pub enum StabilityError {
    #[error("neighbor at {distance:.1} m is beyond range {range:.1} m")]
    OutOfRange { distance: f64, range: f64 },
}

pub fn link_stability(llt: f64, distance: f64, range: f64, llt_norm: f64) -> Result<f64, StabilityError> {
    if distance > range {
        return Err(StabilityError::OutOfRange { distance, range });
    }
    let life = (llt / llt_norm).clamp(0.0, 1.0);
    let near = (1.0 - distance / range).clamp(0.0, 1.0);
    Ok(life * near)
}

pub fn path_stability(links: &[f64]) -> f64 {
    links.iter().copied().fold(1.0, f64::min)
}

/// Undirected links of a node sequence.
pub fn links_of(path: &[NodeId]) -> BTreeSet<(NodeId, NodeId)> {
    path.windows(2).map(|l| (l[0].min(l[1]), l[0].max(l[1]))).collect()
}

pub fn link_disjoint(a: &[NodeId], b: &[NodeId]) -> bool {
    links_of(a).is_disjoint(&links_of(b))
}

/// Destination-side filter: a copy of a request is answered only if neither
/// its first hop nor its last hop was used by an earlier answered copy.
#[derive(Clone, Debug, Default)]
pub struct DisjointReplyFilter {
    first: BTreeSet<NodeId>,
    last: BTreeSet<NodeId>,
}

impl DisjointReplyFilter {
    /// `path` runs from the originator to the node before the destination.
    pub fn admit(&mut self, path: &[NodeId]) -> bool {
        let last = *path.last().expect("empty path");
        let first = path.get(1).copied().unwrap_or(last);
        if self.first.contains(&first) || self.last.contains(&last) {
            return false;
        }
        self.first.insert(first);
        self.last.insert(last);
        true
    }

    pub fn answered(&self) -> usize {
        self.first.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CachedRoute {
    pub path: Vec<NodeId>,
    pub stability: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LeprRouteCache {
    pub primary: Option<CachedRoute>,
    pub alternates: Vec<CachedRoute>,
}

impl LeprRouteCache {
    /// Installs the most stable reply as primary and caches up to `cap`
    /// others that are link-disjoint from everything already kept.
    /// Ties keep the earlier reply.
    pub fn from_replies(replies: &[CachedRoute], cap: usize) -> Self {
        let mut order: Vec<usize> = (0..replies.len()).collect();
        order.sort_by(|&a, &b| replies[b].stability.total_cmp(&replies[a].stability).then(a.cmp(&b)));
        let mut cache = LeprRouteCache::default();
        for i in order {
            let r = &replies[i];
            match &cache.primary {
                None => cache.primary = Some(r.clone()),
                Some(p) => {
                    if cache.alternates.len() < cap
                        && link_disjoint(&p.path, &r.path)
                        && cache.alternates.iter().all(|a| link_disjoint(&a.path, &r.path))
                    {
                        cache.alternates.push(r.clone());
                    }
                }
            }
        }
        cache
    }

    /// Drops alternates that use the undirected link `a`-`b`.
    pub fn forget_link(&mut self, a: NodeId, b: NodeId) {
        let k = (a.min(b), a.max(b));
        self.alternates.retain(|r| !links_of(&r.path).contains(&k));
    }

    pub fn update_stability(&mut self, path: &[NodeId], stability: f64) -> bool {
        let mut hit = false;
        for r in self.primary.iter_mut().chain(self.alternates.iter_mut()) {
            if r.path == path {
                r.stability = stability;
                hit = true;
            }
        }
        hit
    }

    /// Promotes the best alternate whose stability exceeds `k_prime`; the old
    /// primary is discarded. Returns false when rediscovery is needed.
    pub fn switch(&mut self, k_prime: f64) -> bool {
        match switch_or_rediscover(&self.alternates, k_prime) {
            Some(i) => {
                self.primary = Some(self.alternates.remove(i));
                true
            }
            None => false,
        }
    }
}

/// Index of the most stable cached route strictly above `k_prime`.
pub fn switch_or_rediscover(cached: &[CachedRoute], k_prime: f64) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in cached.iter().enumerate() {
        if r.stability > k_prime && best.is_none_or(|b| r.stability > cached[b].stability) {
            best = Some(i);
        }
    }
    best
}

pub fn needs_rswt(stability: f64, k: f64) -> bool {
    stability < k
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(path: &[NodeId], s: f64) -> CachedRoute {
        CachedRoute { path: path.to_vec(), stability: s }
    }

    #[test]
    fn stability_surrogate() {
        assert_eq!(link_stability(45.0, 0.0, 1000.0, 30.0).unwrap(), 1.0);
        assert_eq!(link_stability(30.0, 1000.0, 1000.0, 30.0).unwrap(), 0.0);
        assert!((link_stability(15.0, 500.0, 1000.0, 30.0).unwrap() - 0.25).abs() < 1e-15);
        assert!(link_stability(15.0, 1000.5, 1000.0, 30.0).is_err());
    }

    #[test]
    fn primary_is_most_stable() {
        let c = LeprRouteCache::from_replies(&[r(&[0, 1, 3], 0.5), r(&[0, 2, 3], 0.8)], 3);
        assert_eq!(c.primary.unwrap().stability, 0.8);
        assert_eq!(c.alternates, vec![r(&[0, 1, 3], 0.5)]);
        let c = LeprRouteCache::from_replies(&[r(&[0, 1, 3], 0.5)], 3);
        assert!(c.alternates.is_empty());
    }

    #[test]
    fn overlapping_reply_not_cached() {
        let c = LeprRouteCache::from_replies(&[r(&[0, 1, 2, 5], 0.9), r(&[0, 4, 2, 5], 0.7)], 3);
        assert!(c.alternates.is_empty());
    }

    #[test]
    fn switch_thresholds() {
        assert_eq!(switch_or_rediscover(&[r(&[0, 1], 0.6), r(&[0, 2], 0.4)], 0.5), Some(0));
        assert_eq!(switch_or_rediscover(&[r(&[0, 2], 0.4)], 0.5), None);
        assert_eq!(switch_or_rediscover(&[], 0.5), None);
        assert_eq!(switch_or_rediscover(&[r(&[0, 2], 0.5)], 0.5), None);
    }

    #[test]
    fn rswt_threshold() {
        assert!(needs_rswt(0.29, 0.3));
        assert!(!needs_rswt(0.31, 0.3));
        assert!(!needs_rswt(0.3, 0.3));
    }

    #[test]
    fn reply_filter_rejects_shared_first_or_last_hop() {
        let mut f = DisjointReplyFilter::default();
        assert!(f.admit(&[0, 1, 4]));
        assert!(!f.admit(&[0, 1, 5]));
        assert!(!f.admit(&[0, 2, 4]));
        assert!(f.admit(&[0, 2, 5]));
        assert_eq!(f.answered(), 2);
    }
}
