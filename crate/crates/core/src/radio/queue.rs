//! MAC queue with control priority and age-of-information pruning.

use std::collections::VecDeque;

use crate::kernel::SimTime;
use crate::packet::Packet;

/// `(ttl - aoi) / etd`; negative once the packet has outlived its TTL.
pub fn survivability(pkt: &Packet, now: SimTime, etd: f64) -> f64 {
    assert!(etd > 0.0, "ETD must be positive");
    (pkt.ttl - pkt.aoi(now)) / etd
}

/// Sorts `data` ascending by survivability and removes packets scoring below
/// `threshold`, returning them in their original relative order.
///
/// `etd_of` yields the ETD a packet is judged against; packets without one
/// are never dropped and sort after every scored packet.
pub fn reorder_and_prune<F>(
    data: &mut VecDeque<Packet>,
    now: SimTime,
    threshold: f64,
    mut etd_of: F,
) -> Vec<Packet>
where
    F: FnMut(&Packet) -> Option<f64>,
{
    let mut kept: Vec<(f64, Packet)> = Vec::with_capacity(data.len());
    let mut dropped = Vec::new();
    for pkt in data.drain(..) {
        match etd_of(&pkt) {
            Some(etd) => {
                let s = survivability(&pkt, now, etd);
                if s < threshold {
                    dropped.push(pkt);
                } else {
                    kept.push((s, pkt));
                }
            }
            None => kept.push((f64::INFINITY, pkt)),
        }
    }
    kept.sort_by(|a, b| a.0.total_cmp(&b.0));
    data.extend(kept.into_iter().map(|(_, p)| p));
    dropped
}

#[derive(Clone, Debug)]
pub struct MacQueue {
    control: VecDeque<Packet>,
    data: VecDeque<Packet>,
    capacity: usize,
    tail_drops: u64,
}

impl MacQueue {
    pub fn new(capacity: usize) -> Self {
        MacQueue { control: VecDeque::new(), data: VecDeque::new(), capacity, tail_drops: 0 }
    }

    pub fn len(&self) -> usize {
        self.control.len() + self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Packets rejected because the queue was full.
    pub fn tail_drops(&self) -> u64 {
        self.tail_drops
    }

    /// Appends `pkt`, handing it back if the queue is full.
    pub fn enqueue(&mut self, pkt: Packet) -> Result<(), Packet> {
        if self.len() >= self.capacity {
            self.tail_drops += 1;
            return Err(pkt);
        }
        if pkt.kind().is_control() {
            self.control.push_back(pkt);
        } else {
            self.data.push_back(pkt);
        }
        Ok(())
    }

    /// Control packets first, then data in queue order.
    pub fn pop(&mut self) -> Option<Packet> {
        self.control.pop_front().or_else(|| self.data.pop_front())
    }

    pub fn peek(&self) -> Option<&Packet> {
        self.control.front().or_else(|| self.data.front())
    }

    pub fn data(&self) -> &VecDeque<Packet> {
        &self.data
    }

    pub fn iter(&self) -> impl Iterator<Item = &Packet> {
        self.control.iter().chain(self.data.iter())
    }

    pub fn reorder_and_prune<F>(&mut self, now: SimTime, threshold: f64, etd_of: F) -> Vec<Packet>
    where
        F: FnMut(&Packet) -> Option<f64>,
    {
        reorder_and_prune(&mut self.data, now, threshold, etd_of)
    }

    /// Removes data packets whose age reached their TTL.
    pub fn drop_expired(&mut self, now: SimTime) -> Vec<Packet> {
        let mut out = Vec::new();
        self.data.retain(|p| {
            if p.is_expired(now) {
                out.push(p.clone());
                false
            } else {
                true
            }
        });
        out
    }

    /// Removes every packet matching `pred`.
    pub fn remove_where<F: FnMut(&Packet) -> bool>(&mut self, mut pred: F) -> Vec<Packet> {
        let mut out = Vec::new();
        for q in [&mut self.control, &mut self.data] {
            let mut keep = VecDeque::with_capacity(q.len());
            for p in q.drain(..) {
                if pred(&p) {
                    out.push(p);
                } else {
                    keep.push_back(p);
                }
            }
            *q = keep;
        }
        out
    }
}

/// Mean MAC-queue dwell of data packets sent during one Hello interval.
#[derive(Clone, Debug, Default)]
pub struct PstMeter {
    sum: f64,
    count: u64,
    current: f64,
}

impl PstMeter {
    pub fn record(&mut self, enqueued_at: SimTime, dequeued_at: SimTime) {
        self.sum += dequeued_at.secs_since(enqueued_at);
        self.count += 1;
    }

    /// Closes the interval; an interval without transmissions reports zero.
    pub fn roll(&mut self) -> f64 {
        self.current = if self.count > 0 { self.sum / self.count as f64 } else { 0.0 };
        self.sum = 0.0;
        self.count = 0;
        self.current
    }

    /// Value from the most recently closed interval.
    pub fn current(&self) -> f64 {
        self.current
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packet::{DataHeader, Payload};
    use crate::proto::messages::Hello;
    use rand::{Rng, SeedableRng};
    use std::sync::Arc;

    pub(crate) fn data_pkt(uid: u64, created_ms: u64) -> Packet {
        Packet {
            uid,
            size_bytes: 1024,
            created_at: SimTime::from_millis(created_ms),
            ttl: 3.0,
            flow: Some(0),
            src: 0,
            dst: 1,
            prev_hop: 0,
            next_hop: Some(1),
            enqueued_at: SimTime::ZERO,
            payload: Payload::Data(DataHeader { path: Arc::from(vec![0u16, 1]), hop: 0 }),
        }
    }

    fn hello_pkt(uid: u64) -> Packet {
        let mut p = data_pkt(uid, 0);
        p.next_hop = None;
        p.payload = Payload::Hello(Box::new(Hello::plain(SimTime::ZERO)));
        p
    }

    #[test]
    fn survivability_values() {
        let now = SimTime::from_secs(10);
        let at = |aoi_ms: u64| data_pkt(0, 10_000 - aoi_ms);
        assert!((survivability(&at(1000), now, 1.0) - 2.0).abs() < 1e-12);
        assert_eq!(survivability(&at(3000), now, 0.37), 0.0);
        assert!((survivability(&at(2900), now, 1.0) - 0.1).abs() < 1e-9);
    }

    #[test]
    fn prune_example() {
        // With TTL 3 and ETD 1, AoI 1.0 / 2.5 / 1.9 give scores 2.0 / 0.5 / 1.1.
        let now = SimTime::from_secs(10);
        let mut q: VecDeque<Packet> =
            [(1, 9000), (2, 7500), (3, 8100)].iter().map(|&(u, c)| data_pkt(u, c)).collect();
        let dropped = reorder_and_prune(&mut q, now, 0.7, |_| Some(1.0));
        assert_eq!(dropped.iter().map(|p| p.uid).collect::<Vec<_>>(), vec![2]);
        assert_eq!(q.iter().map(|p| p.uid).collect::<Vec<_>>(), vec![3, 1]);
    }

    #[test]
    fn prune_keeps_all_when_healthy() {
        let now = SimTime::from_secs(10);
        let mut q: VecDeque<Packet> =
            [(1, 9900), (2, 9000), (3, 9500)].iter().map(|&(u, c)| data_pkt(u, c)).collect();
        assert!(reorder_and_prune(&mut q, now, 0.7, |_| Some(1.0)).is_empty());
        assert_eq!(q.iter().map(|p| p.uid).collect::<Vec<_>>(), vec![2, 3, 1]);
    }

    #[test]
    fn prune_matches_sort_and_filter() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let now = SimTime::from_secs(20);
            let n = rng.random_range(0..40);
            let etd = rng.random_range(0.01..2.0);
            let mut q: VecDeque<Packet> = (0..n)
                .map(|u| data_pkt(u, 20_000 - rng.random_range(0..4000)))
                .collect();
            let mut scored: Vec<(f64, u64)> =
                q.iter().map(|p| (survivability(p, now, etd), p.uid)).collect();
            let want_drop: Vec<u64> =
                scored.iter().filter(|s| s.0 < 0.7).map(|s| s.1).collect();
            scored.retain(|s| s.0 >= 0.7);
            scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            let dropped = reorder_and_prune(&mut q, now, 0.7, |_| Some(etd));
            assert_eq!(dropped.iter().map(|p| p.uid).collect::<Vec<_>>(), want_drop);
            assert_eq!(q.iter().map(|p| p.uid).collect::<Vec<_>>(),
                       scored.iter().map(|s| s.1).collect::<Vec<_>>());
        }
    }

    #[test]
    fn tail_drop_at_capacity() {
        let mut q = MacQueue::new(1000);
        for u in 0..999 {
            q.enqueue(data_pkt(u, 0)).unwrap();
        }
        assert!(q.enqueue(data_pkt(999, 0)).is_ok());
        assert_eq!(q.tail_drops(), 0);
        let rejected = q.enqueue(data_pkt(1000, 0)).unwrap_err();
        assert_eq!(rejected.uid, 1000);
        assert_eq!(q.tail_drops(), 1);
        assert_eq!(q.len(), 1000);
    }

    #[test]
    fn control_goes_first_and_is_never_pruned() {
        let mut q = MacQueue::new(10);
        q.enqueue(data_pkt(1, 0)).unwrap();
        q.enqueue(hello_pkt(2)).unwrap();
        let dropped = q.reorder_and_prune(SimTime::from_secs(100), 0.7, |_| Some(1.0));
        assert_eq!(dropped.len(), 1);
        assert_eq!(q.pop().unwrap().uid, 2);
        assert!(q.pop().is_none());
    }

    #[test]
    fn pst_is_mean_dwell_per_interval() {
        let mut m = PstMeter::default();
        m.record(SimTime::from_millis(0), SimTime::from_millis(10));
        m.record(SimTime::from_millis(5), SimTime::from_millis(35));
        assert!((m.roll() - 0.020).abs() < 1e-12);
        assert!((m.current() - 0.020).abs() < 1e-12);
        assert_eq!(m.roll(), 0.0);
    }
}
