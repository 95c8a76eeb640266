//! Shared-medium bookkeeping: who hears which transmission and which
//! receptions are corrupted by overlap or half-duplex operation.

use std::collections::BTreeMap;

use crate::kernel::SimTime;
use crate::packet::NodeId;

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TxId(pub u64);

#[derive(Clone, Debug)]
struct Incoming {
    tx: TxId,
    start: SimTime,
    end: SimTime,
    corrupted: bool,
}

#[derive(Clone, Debug, Default)]
struct RadioState {
    transmitting: Option<(TxId, SimTime)>,
    incoming: Vec<Incoming>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActiveTx {
    pub sender: NodeId,
    pub start: SimTime,
    pub end: SimTime,
    /// Nodes in range when the transmission started.
    pub audience: Vec<NodeId>,
}

/// Outcome of a finished transmission.
#[derive(Clone, Debug, PartialEq)]
pub struct Finished {
    pub tx: ActiveTx,
    /// Audience members that received the frame intact.
    pub clean: Vec<NodeId>,
}

#[derive(Clone, Debug)]
pub struct Channel {
    radios: Vec<RadioState>,
    active: BTreeMap<TxId, ActiveTx>,
    next_id: u64,
    /// Transmissions younger than this are not yet sensed.
    sense_delay: SimTime,
}

impl Channel {
    pub fn new(nodes: usize, sense_delay: SimTime) -> Self {
        Channel {
            radios: vec![RadioState::default(); nodes],
            active: BTreeMap::new(),
            next_id: 0,
            sense_delay,
        }
    }

    pub fn is_transmitting(&self, node: NodeId) -> bool {
        self.radios[node as usize].transmitting.is_some()
    }

    /// Carrier sense at `node`.
    pub fn busy(&self, node: NodeId, now: SimTime) -> bool {
        let r = &self.radios[node as usize];
        r.transmitting.is_some()
            || r.incoming.iter().any(|i| i.start + self.sense_delay <= now && i.end > now)
    }

    /// Latest end among the transmissions `node` currently hears or sends.
    pub fn busy_until(&self, node: NodeId) -> SimTime {
        let r = &self.radios[node as usize];
        let rx = r.incoming.iter().map(|i| i.end).max().unwrap_or(SimTime::ZERO);
        r.transmitting.map_or(rx, |(_, end)| rx.max(end))
    }

    /// Starts a transmission heard by `audience` (which must not contain the
    /// sender) over `[start, end)`.
    pub fn begin(&mut self, sender: NodeId, audience: Vec<NodeId>, start: SimTime, end: SimTime) -> TxId {
        assert!(end > start, "zero-length transmission");
        let id = TxId(self.next_id);
        self.next_id += 1;
        let own = &mut self.radios[sender as usize];
        assert!(own.transmitting.is_none(), "node {sender} is already transmitting");
        own.transmitting = Some((id, end));
        for i in own.incoming.iter_mut() {
            i.corrupted = true;
        }
        for &n in &audience {
            debug_assert_ne!(n, sender);
            let r = &mut self.radios[n as usize];
            let mut corrupted = r.transmitting.is_some();
            for i in r.incoming.iter_mut() {
                i.corrupted = true;
                corrupted = true;
            }
            r.incoming.push(Incoming { tx: id, start, end, corrupted });
        }
        self.active.insert(id, ActiveTx { sender, start, end, audience });
        id
    }

    pub fn finish(&mut self, id: TxId) -> Finished {
        let tx = self.active.remove(&id).expect("unknown transmission");
        let own = &mut self.radios[tx.sender as usize];
        debug_assert_eq!(own.transmitting.map(|t| t.0), Some(id));
        own.transmitting = None;
        let mut clean = Vec::with_capacity(tx.audience.len());
        for &n in &tx.audience {
            let r = &mut self.radios[n as usize];
            let pos = r.incoming.iter().position(|i| i.tx == id).expect("missing reception");
            let inc = r.incoming.swap_remove(pos);
            if !inc.corrupted {
                clean.push(n);
            }
        }
        Finished { tx, clean }
    }

    pub fn in_flight(&self) -> usize {
        self.active.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ms(v: u64) -> SimTime {
        SimTime::from_millis(v)
    }

    #[test]
    fn broadcast_reaches_whole_audience() {
        let mut c = Channel::new(4, SimTime::from_micros(20));
        let id = c.begin(0, vec![1, 2, 3], ms(0), ms(1));
        let f = c.finish(id);
        assert_eq!(f.clean, vec![1, 2, 3]);
        assert_eq!(c.in_flight(), 0);
    }

    #[test]
    fn overlap_at_common_receiver_loses_both() {
        let mut c = Channel::new(3, SimTime::from_micros(20));
        let a = c.begin(0, vec![1], ms(0), ms(2));
        let b = c.begin(2, vec![1], ms(1), ms(3));
        assert!(c.finish(a).clean.is_empty());
        assert!(c.finish(b).clean.is_empty());
    }

    #[test]
    fn overlap_only_hurts_shared_receivers() {
        let mut c = Channel::new(5, SimTime::from_micros(20));
        let a = c.begin(0, vec![1, 3], ms(0), ms(2));
        let b = c.begin(2, vec![1, 4], ms(1), ms(3));
        assert_eq!(c.finish(a).clean, vec![3]);
        assert_eq!(c.finish(b).clean, vec![4]);
    }

    #[test]
    fn half_duplex() {
        let mut c = Channel::new(2, SimTime::from_micros(20));
        let a = c.begin(0, vec![1], ms(0), ms(2));
        let b = c.begin(1, vec![0], ms(1), ms(3));
        assert!(c.finish(a).clean.is_empty());
        assert!(c.finish(b).clean.is_empty());
    }

    #[test]
    fn sequential_frames_do_not_collide() {
        let mut c = Channel::new(3, SimTime::from_micros(20));
        let a = c.begin(0, vec![1], ms(0), ms(1));
        assert_eq!(c.finish(a).clean, vec![1]);
        let b = c.begin(2, vec![1], ms(1), ms(2));
        assert_eq!(c.finish(b).clean, vec![1]);
    }

    #[test]
    fn carrier_sense_has_detection_delay() {
        let mut c = Channel::new(2, SimTime::from_micros(20));
        c.begin(0, vec![1], SimTime::from_micros(100), SimTime::from_micros(1100));
        assert!(!c.busy(1, SimTime::from_micros(110)));
        assert!(c.busy(1, SimTime::from_micros(120)));
        assert!(c.busy(0, SimTime::from_micros(100)));
        assert_eq!(c.busy_until(1), SimTime::from_micros(1100));
    }
}
