//! AODV building blocks shared by all three protocols: duplicate
//! suppression, request rate limiting, destination reply policy and
//! shortest-hop route choice.

use std::collections::{BTreeMap, BTreeSet};

use crate::kernel::SimTime;
use crate::packet::NodeId;

/// Remembers `(originator, rreq_id)` pairs already processed.
#[derive(Clone, Debug, Default)]
pub struct RreqCache {
    seen: BTreeSet<(NodeId, u32)>,
}

impl RreqCache {
    /// True the first time a pair is offered.
    pub fn first_seen(&mut self, originator: NodeId, rreq_id: u32) -> bool {
        self.seen.insert((originator, rreq_id))
    }

    pub fn contains(&self, originator: NodeId, rreq_id: u32) -> bool {
        self.seen.contains(&(originator, rreq_id))
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }
}

/// At most one request per `min_interval` toward a destination; the spacing
/// doubles with each consecutive failed discovery up to `cap`.
#[derive(Clone, Debug)]
pub struct RreqLimiter {
    min_interval: f64,
    cap: f64,
    last: BTreeMap<NodeId, SimTime>,
    failures: BTreeMap<NodeId, u32>,
}

impl RreqLimiter {
    pub fn new(min_interval: f64, cap: f64) -> Self {
        RreqLimiter { min_interval, cap, last: BTreeMap::new(), failures: BTreeMap::new() }
    }

    pub fn spacing(&self, dst: NodeId) -> f64 {
        let f = self.failures.get(&dst).copied().unwrap_or(0).min(30);
        (self.min_interval * 2f64.powi(f as i32)).min(self.cap.max(self.min_interval))
    }

    pub fn next_allowed(&self, dst: NodeId) -> SimTime {
        match self.last.get(&dst) {
            Some(&t) => t + SimTime::from_secs_f64(self.spacing(dst)),
            None => SimTime::ZERO,
        }
    }

    pub fn allows(&self, dst: NodeId, now: SimTime) -> bool {
        now >= self.next_allowed(dst)
    }

    pub fn record_sent(&mut self, dst: NodeId, now: SimTime) {
        self.last.insert(dst, now);
    }

    pub fn record_failure(&mut self, dst: NodeId) {
        *self.failures.entry(dst).or_insert(0) += 1;
    }

    pub fn record_success(&mut self, dst: NodeId) {
        self.failures.remove(&dst);
    }

    pub fn failures(&self, dst: NodeId) -> u32 {
        self.failures.get(&dst).copied().unwrap_or(0)
    }
}

/// Destination reply policy: answer the first copy of a request and any
/// later copy that arrived over fewer hops.
#[derive(Clone, Debug, Default)]
pub struct ReplyPolicy {
    best: BTreeMap<(NodeId, u32), usize>,
}

impl ReplyPolicy {
    pub fn should_reply(&mut self, originator: NodeId, rreq_id: u32, hop_count: usize) -> bool {
        match self.best.get_mut(&(originator, rreq_id)) {
            Some(best) if hop_count >= *best => false,
            Some(best) => {
                *best = hop_count;
                true
            }
            None => {
                self.best.insert((originator, rreq_id), hop_count);
                true
            }
        }
    }
}

/// Index of the minimum hop count; `hop_counts` is in arrival order so the
/// first minimum is the earliest.
pub fn select_shortest(hop_counts: &[usize]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &h) in hop_counts.iter().enumerate() {
        if best.is_none_or(|b| h < hop_counts[b]) {
            best = Some(i);
        }
    }
    best
}

/// True if the node sequence never revisits a node.
pub fn is_loop_free(path: &[NodeId]) -> bool {
    let mut seen = BTreeSet::new();
    path.iter().all(|n| seen.insert(*n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_detected() {
        let mut c = RreqCache::default();
        assert!(c.first_seen(3, 1));
        assert!(!c.first_seen(3, 1));
        assert!(c.first_seen(3, 2));
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn limiter_spacing_and_backoff() {
        let mut l = RreqLimiter::new(1.0, 16.0);
        assert!(l.allows(5, SimTime::ZERO));
        l.record_sent(5, SimTime::from_millis(100));
        assert!(!l.allows(5, SimTime::from_millis(600)));
        assert!(l.allows(6, SimTime::from_millis(600)));
        assert!(l.allows(5, SimTime::from_millis(1100)));
        for _ in 0..10 {
            l.record_failure(5);
        }
        assert_eq!(l.spacing(5), 16.0);
        l.record_failure(6);
        l.record_failure(6);
        assert_eq!(l.spacing(6), 4.0);
        l.record_success(6);
        assert_eq!(l.spacing(6), 1.0);
    }

    #[test]
    fn reply_policy_prefers_shorter_copies() {
        let mut p = ReplyPolicy::default();
        assert!(p.should_reply(1, 7, 4));
        assert!(!p.should_reply(1, 7, 4));
        assert!(!p.should_reply(1, 7, 5));
        assert!(p.should_reply(1, 7, 3));
        assert!(p.should_reply(1, 8, 9));
    }

    #[test]
    fn shortest_with_earliest_tie() {
        assert_eq!(select_shortest(&[4, 3, 5]), Some(1));
        assert_eq!(select_shortest(&[2]), Some(0));
        assert_eq!(select_shortest(&[3, 3]), Some(0));
        assert_eq!(select_shortest(&[]), None);
    }

    #[test]
    fn loop_check() {
        assert!(is_loop_free(&[1, 2, 3]));
        assert!(!is_loop_free(&[1, 2, 1]));
    }
}
