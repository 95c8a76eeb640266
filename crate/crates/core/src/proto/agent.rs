//! Interface between routing agents and the network simulator.
//!
//! Agents never touch the channel or the clock directly: each callback gets
//! a [`Ctx`] describing the node's situation and collects the agent's
//! reactions in [`Effects`], which the simulator applies afterwards.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;

use crate::kernel::SimTime;
use crate::mobility::Trajectory;
use crate::packet::{NodeId, Packet, Payload};
use crate::proto::constants::ProtocolKind;
use crate::radio::LossCause;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Timer {
    Liveness,
    RrepWindow { dst: NodeId },
    DiscoveryTimeout { dst: NodeId, rreq_id: u32 },
    RetryDiscovery { dst: NodeId },
    NotifySource { src: NodeId },
    RefreshWindow { dst: NodeId },
    Custom(u32),
}

/// Protocol-level counters summed over all nodes of a run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProtoCounters {
    /// Route requests originated, by (source, destination).
    pub route_discoveries: BTreeMap<(NodeId, NodeId), u64>,
    /// Route selections and pipe searches performed.
    pub routes_computed: u64,
    /// Discoveries that timed out without a reply.
    pub discovery_failures: u64,
    pub rreq_suppressed: u64,
    pub rreq_unknown_llt: u64,
    pub route_switches: u64,
    pub selection_fallbacks: u64,
    pub pipe_searches: u64,
    pub pipe_nodes_sum: u64,
    pub pipe_links_sum: u64,
    pub pipe_truncations: u64,
    pub loss_deferrals: u64,
    pub link_losses: u64,
    pub rerr_sent: u64,
    pub rswt_sent: u64,
    pub notify_sent: u64,
}

impl ProtoCounters {
    pub fn discoveries(&self, src: NodeId, dst: NodeId) -> u64 {
        self.route_discoveries.get(&(src, dst)).copied().unwrap_or(0)
    }
}

#[derive(Debug, Default)]
pub struct Effects {
    pub sends: Vec<Packet>,
    pub delayed: Vec<(SimTime, Packet)>,
    pub timers: Vec<(SimTime, Timer)>,
    pub drops: Vec<(Packet, LossCause)>,
    pub delivered: Vec<Packet>,
    /// Neighbors whose queued data should be pulled back from the MAC.
    pub purge_next_hop: Vec<NodeId>,
    pub counters: ProtoCounters,
}

pub struct Ctx<'a> {
    pub now: SimTime,
    pub me: NodeId,
    /// Own motion state at `now`.
    pub own: Trajectory,
    /// Own packet service time from the last closed Hello interval.
    pub pst: f64,
    pub range: f64,
    pub rng: &'a mut ChaCha8Rng,
    pub fx: &'a mut Effects,
}

impl Ctx<'_> {
    pub fn send(&mut self, pkt: Packet) {
        self.fx.sends.push(pkt);
    }

    pub fn send_after(&mut self, delay: f64, pkt: Packet) {
        self.fx.delayed.push((self.now + SimTime::from_secs_f64(delay), pkt));
    }

    pub fn set_timer(&mut self, delay: f64, timer: Timer) {
        self.fx.timers.push((self.now + SimTime::from_secs_f64(delay), timer));
    }

    pub fn drop_data(&mut self, pkt: Packet, cause: LossCause) {
        debug_assert!(!pkt.kind().is_control());
        self.fx.drops.push((pkt, cause));
    }

    pub fn deliver(&mut self, pkt: Packet) {
        self.fx.delivered.push(pkt);
    }

    pub fn purge(&mut self, next_hop: NodeId) {
        self.fx.purge_next_hop.push(next_hop);
    }

    pub fn counters(&mut self) -> &mut ProtoCounters {
        &mut self.fx.counters
    }

    /// A control packet from this node; the simulator assigns id and size.
    pub fn control(&self, dst: NodeId, next_hop: Option<NodeId>, payload: Payload) -> Packet {
        Packet {
            uid: 0,
            size_bytes: 0,
            created_at: self.now,
            ttl: f64::INFINITY,
            flow: None,
            src: self.me,
            dst,
            prev_hop: self.me,
            next_hop,
            enqueued_at: self.now,
            payload,
        }
    }
}

pub trait Agent {
    fn protocol(&self) -> ProtocolKind;

    /// Called once at time zero.
    fn start(&mut self, ctx: &mut Ctx);

    /// Periodic Hello opportunity; the service-time meter has just rolled.
    fn on_hello_tick(&mut self, ctx: &mut Ctx);

    /// The node started a new maneuver.
    fn on_trajectory_change(&mut self, ctx: &mut Ctx);

    /// A data packet generated locally.
    fn on_originate(&mut self, ctx: &mut Ctx, pkt: Packet);

    /// A broadcast, or a unicast addressed to this node, received intact.
    fn on_receive(&mut self, ctx: &mut Ctx, pkt: Packet);

    /// A unicast for someone else was overheard intact.
    fn on_overhear(&mut self, ctx: &mut Ctx, from: NodeId);

    /// A unicast exhausted its attempts toward `pkt.next_hop`.
    fn on_unicast_failure(&mut self, ctx: &mut Ctx, pkt: Packet, cause: LossCause);

    /// Data removed from the MAC queue after a purge request.
    fn on_purged(&mut self, ctx: &mut Ctx, pkts: Vec<Packet>) {
        for p in pkts {
            ctx.drop_data(p, LossCause::LinkBreak);
        }
    }

    fn on_timer(&mut self, ctx: &mut Ctx, timer: Timer);

    /// ETD against which a queued data packet's survivability is judged, or
    /// `None` when the node does not manage its queue by age.
    fn survivability_etd(&self, pkt: &Packet, own_pst: f64) -> Option<f64>;

    /// Data packets held by the agent itself, e.g. awaiting a route.
    fn buffered_data(&self) -> Vec<&Packet>;
}
