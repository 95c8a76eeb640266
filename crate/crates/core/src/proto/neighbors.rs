//! 1-hop neighbor table maintained from received frames.

use std::collections::BTreeMap;

use crate::geom::Vec2;
use crate::kernel::SimTime;
use crate::mobility::{predict_llt, LltEstimate, Trajectory};
use crate::packet::NodeId;
use crate::proto::messages::{Hello, NeighborRecord};

#[derive(Clone, Debug, PartialEq)]
pub struct NeighborEntry {
    pub id: NodeId,
    pub first_heard: SimTime,
    pub last_heard: SimTime,
    /// Last GPS fix and the instant it refers to.
    pub position: Option<(Vec2, SimTime)>,
    pub trajectory: Option<(Trajectory, SimTime)>,
    pub llt: Option<LltEstimate>,
    pub pst: f64,
    pub il: u16,
    pub is_active: bool,
    pub active_out: u8,
    /// The neighbor's own 1-hop records, if it advertised them.
    pub records: Option<(Vec<NeighborRecord>, SimTime)>,
    /// A link-loss decision is postponed until this instant.
    pub loss_deferred_until: Option<SimTime>,
}

impl NeighborEntry {
    fn new(id: NodeId, now: SimTime) -> Self {
        NeighborEntry {
            id,
            first_heard: now,
            last_heard: now,
            position: None,
            trajectory: None,
            llt: None,
            pst: 0.0,
            il: 0,
            is_active: false,
            active_out: 0,
            records: None,
            loss_deferred_until: None,
        }
    }

    /// Trajectory advanced to `now`.
    pub fn trajectory_at(&self, now: SimTime) -> Option<Trajectory> {
        self.trajectory.map(|(t, at)| t.step(now.secs_since(at)))
    }

    /// Best position estimate at `now`.
    pub fn position_at(&self, now: SimTime) -> Option<Vec2> {
        match (self.trajectory_at(now), self.position) {
            (Some(t), _) => Some(t.position),
            (None, Some((p, _))) => Some(p),
            _ => None,
        }
    }

    pub fn llt_remaining(&self, now: SimTime) -> Option<f64> {
        self.llt.map(|e| e.remaining(now))
    }
}

#[derive(Clone, Debug, Default)]
pub struct NeighborTable {
    entries: BTreeMap<NodeId, NeighborEntry>,
    /// Last trajectory each node advertised; survives entry removal because
    /// a peer that never noticed the break will not resend it.
    trajectories: BTreeMap<NodeId, (Trajectory, SimTime)>,
}

impl NeighborTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: NodeId) -> Option<&NeighborEntry> {
        self.entries.get(&id)
    }

    pub fn get_mut(&mut self, id: NodeId) -> Option<&mut NeighborEntry> {
        self.entries.get_mut(&id)
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.entries.contains_key(&id)
    }

    pub fn ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.entries.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &NeighborEntry> {
        self.entries.values()
    }

    /// Records a frame from `id`; returns true when the neighbor is new.
    pub fn heard(&mut self, id: NodeId, now: SimTime) -> bool {
        match self.entries.get_mut(&id) {
            Some(e) => {
                e.last_heard = now;
                e.loss_deferred_until = None;
                false
            }
            None => {
                let mut e = NeighborEntry::new(id, now);
                e.trajectory = self.trajectories.get(&id).copied();
                self.entries.insert(id, e);
                true
            }
        }
    }

    /// Liveness refresh from an overheard frame; unknown senders are ignored.
    pub fn refresh(&mut self, id: NodeId, now: SimTime) {
        if let Some(e) = self.entries.get_mut(&id) {
            e.last_heard = now;
            e.loss_deferred_until = None;
        }
    }

    /// Applies a Hello; returns true when the sender is a new neighbor.
    pub fn apply_hello(&mut self, from: NodeId, hello: &Hello, now: SimTime) -> bool {
        let new = self.heard(from, now);
        let e = self.entries.get_mut(&from).unwrap();
        if let Some(p) = hello.position {
            e.position = Some((p, hello.stamped_at));
        }
        if let Some(t) = hello.trajectory {
            e.trajectory = Some((t, hello.stamped_at));
            self.trajectories.insert(from, (t, hello.stamped_at));
        }
        if let Some(s) = hello.stats {
            e.pst = s.pst;
            e.il = s.il;
        }
        e.is_active = hello.is_active;
        e.active_out = hello.active_out;
        e.records = hello.neighbors.clone().map(|r| (r, now));
        new
    }

    /// Recomputes the LLT of `id` against our own current trajectory.
    ///
    /// A stale neighbor trajectory that already places the pair out of range
    /// yields a zero lifetime.
    pub fn update_llt(&mut self, id: NodeId, own: &Trajectory, range: f64, now: SimTime) {
        let Some(e) = self.entries.get_mut(&id) else { return };
        let Some(theirs) = e.trajectory_at(now) else { return };
        let est = predict_llt(own, &theirs, range, now)
            .unwrap_or(LltEstimate { value: 0.0, computed_at: now });
        e.llt = Some(est);
    }

    pub fn update_all_llt(&mut self, own: &Trajectory, range: f64, now: SimTime) {
        let ids: Vec<NodeId> = self.entries.keys().copied().collect();
        for id in ids {
            self.update_llt(id, own, range, now);
        }
    }

    /// Neighbors silent for strictly longer than `timeout` seconds.
    pub fn silent(&self, now: SimTime, timeout: f64) -> Vec<NodeId> {
        self.entries
            .values()
            .filter(|e| now.secs_since(e.last_heard) > timeout)
            .map(|e| e.id)
            .collect()
    }

    pub fn remove(&mut self, id: NodeId) -> Option<NeighborEntry> {
        self.entries.remove(&id)
    }

    pub fn any_active(&self) -> bool {
        self.entries.values().any(|e| e.is_active)
    }
}
