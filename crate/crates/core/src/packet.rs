//! Packet descriptors shared by the radio layer and the routing agents.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::kernel::SimTime;
use crate::proto::messages::{Hello, NotifySource, Rerr, Rrep, Rreq, Rswt};

pub type NodeId = u16;
pub type FlowId = u16;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PacketKind {
    Data,
    Rreq,
    Rrep,
    Rerr,
    Hello,
    NotifySource,
    Rswt,
}

impl PacketKind {
    pub const ALL: [PacketKind; 7] = [
        PacketKind::Data,
        PacketKind::Rreq,
        PacketKind::Rrep,
        PacketKind::Rerr,
        PacketKind::Hello,
        PacketKind::NotifySource,
        PacketKind::Rswt,
    ];

    pub fn is_control(self) -> bool {
        self != PacketKind::Data
    }

    pub fn name(self) -> &'static str {
        match self {
            PacketKind::Data => "data",
            PacketKind::Rreq => "rreq",
            PacketKind::Rrep => "rrep",
            PacketKind::Rerr => "rerr",
            PacketKind::Hello => "hello",
            PacketKind::NotifySource => "notify_source",
            PacketKind::Rswt => "rswt",
        }
    }
}

/// Explicit node sequence a data packet follows, source first.
#[derive(Clone, Debug, PartialEq)]
pub struct DataHeader {
    pub path: Arc<[NodeId]>,
    /// Index in `path` of the node currently holding the packet.
    pub hop: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    Data(DataHeader),
    Hello(Box<Hello>),
    Rreq(Box<Rreq>),
    Rrep(Box<Rrep>),
    Rerr(Box<Rerr>),
    NotifySource(Box<NotifySource>),
    Rswt(Box<Rswt>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Packet {
    pub uid: u64,
    pub size_bytes: u32,
    /// Origin of the packet's age of information.
    pub created_at: SimTime,
    /// Time-to-live in seconds.
    pub ttl: f64,
    pub flow: Option<FlowId>,
    pub src: NodeId,
    pub dst: NodeId,
    pub prev_hop: NodeId,
    /// `None` for link-layer broadcast.
    pub next_hop: Option<NodeId>,
    /// When the packet entered the current node's MAC queue.
    pub enqueued_at: SimTime,
    pub payload: Payload,
}

impl Packet {
    pub fn kind(&self) -> PacketKind {
        match self.payload {
            Payload::Data(_) => PacketKind::Data,
            Payload::Hello(_) => PacketKind::Hello,
            Payload::Rreq(_) => PacketKind::Rreq,
            Payload::Rrep(_) => PacketKind::Rrep,
            Payload::Rerr(_) => PacketKind::Rerr,
            Payload::NotifySource(_) => PacketKind::NotifySource,
            Payload::Rswt(_) => PacketKind::Rswt,
        }
    }

    pub fn is_broadcast(&self) -> bool {
        self.next_hop.is_none()
    }

    /// Age of information in seconds.
    pub fn aoi(&self, now: SimTime) -> f64 {
        now.secs_since(self.created_at)
    }

    pub fn is_expired(&self, now: SimTime) -> bool {
        self.aoi(now) >= self.ttl
    }

    pub fn data_header(&self) -> Option<&DataHeader> {
        match &self.payload {
            Payload::Data(h) => Some(h),
            _ => None,
        }
    }
}
