//! Control message records carried in packet payloads.

use crate::geom::Vec2;
use crate::kernel::SimTime;
use crate::mobility::Trajectory;
use crate::packet::NodeId;

/// Node sequence a unicast control packet follows, in travel order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TravelRoute {
    pub hops: Vec<NodeId>,
    /// Index of the node currently holding the packet.
    pub cursor: usize,
}

impl TravelRoute {
    pub fn new(hops: Vec<NodeId>) -> Self {
        assert!(!hops.is_empty(), "empty travel route");
        TravelRoute { hops, cursor: 0 }
    }

    pub fn current(&self) -> NodeId {
        self.hops[self.cursor]
    }

    pub fn next(&self) -> Option<NodeId> {
        self.hops.get(self.cursor + 1).copied()
    }

    pub fn advance(&mut self) {
        assert!(self.cursor + 1 < self.hops.len(), "advanced past the end");
        self.cursor += 1;
    }

    pub fn at_end(&self) -> bool {
        self.cursor + 1 == self.hops.len()
    }

    pub fn origin(&self) -> NodeId {
        self.hops[0]
    }

    pub fn terminus(&self) -> NodeId {
        *self.hops.last().unwrap()
    }
}

/// Per-node statistics advertised in Hellos.
#[derive(Copy, Clone, Debug, Default, PartialEq)]
pub struct NodeStats {
    /// Mean packet service time over the previous Hello interval, seconds.
    pub pst: f64,
    pub il: u16,
}

/// What a node advertises about one of its own 1-hop neighbors.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct NeighborRecord {
    pub id: NodeId,
    /// Remaining link lifetime, seconds.
    pub llt: f64,
    pub pst: f64,
    pub il: u16,
    pub link_active: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hello {
    /// Instant the GPS fix and trajectory refer to.
    pub stamped_at: SimTime,
    pub position: Option<Vec2>,
    pub trajectory: Option<Trajectory>,
    pub stats: Option<NodeStats>,
    pub is_active: bool,
    /// Number of outgoing links currently carrying data.
    pub active_out: u8,
    pub neighbors: Option<Vec<NeighborRecord>>,
}

impl Hello {
    pub fn plain(stamped_at: SimTime) -> Self {
        Hello {
            stamped_at,
            position: None,
            trajectory: None,
            stats: None,
            is_active: false,
            active_out: 0,
            neighbors: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rreq {
    pub originator: NodeId,
    pub rreq_id: u32,
    pub dst: NodeId,
    pub orig_seq: u32,
    pub dst_seq: u32,
    /// Nodes traversed so far, originator first, last transmitter last.
    pub path: Vec<NodeId>,
    /// Flow time-to-live carried for the link admission gate.
    pub flow_ttl: Option<f64>,
    /// Minimum link stability seen so far.
    pub stability: Option<f64>,
}

impl Rreq {
    pub fn hop_count(&self) -> usize {
        self.path.len() - 1
    }

    pub fn first_hop(&self) -> Option<NodeId> {
        self.path.get(1).copied()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rrep {
    /// Node that asked for the route.
    pub requester: NodeId,
    /// Destination that answered.
    pub responder: NodeId,
    pub rreq_id: u32,
    pub dst_seq: u32,
    /// Reversed discovery path, responder first.
    pub route: TravelRoute,
    /// Accumulated service time, seconds.
    pub etd: f64,
    pub il: u32,
    /// Link lifetimes appended hop by hop, responder side first.
    pub llts: Vec<f64>,
    pub stability: Option<f64>,
    /// Stability refresh for an already cached route.
    pub refresh: bool,
}

impl Rrep {
    /// Hops from the current holder to the responder.
    pub fn hop_count(&self) -> usize {
        self.route.cursor
    }

    /// Route in forward order, requester first.
    pub fn forward_path(&self) -> Vec<NodeId> {
        self.route.hops.iter().rev().copied().collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rerr {
    pub reporter: NodeId,
    /// Directed link that failed.
    pub broken: (NodeId, NodeId),
    pub unreachable: Vec<NodeId>,
    pub route: TravelRoute,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NotifySource {
    pub flow_src: NodeId,
    pub flow_dst: NodeId,
    pub seq: u32,
    /// Destination first.
    pub route: TravelRoute,
    /// Service time accumulated from the destination, seconds.
    pub etd: f64,
    /// Encoded pipe neighborhood.
    pub payload: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rswt {
    pub source: NodeId,
    pub dst: NodeId,
    pub reporter: NodeId,
    pub stability: f64,
    /// Reporter first, destination last.
    pub route: TravelRoute,
}
