//! Packet-level network simulation: smooth-turn mobility, the contention
//! channel, per-node MAC queues and one routing agent per node, all driven
//! by the event scheduler.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geom::Vec2;
use crate::kernel::{stream_rng, KernelError, Scheduler, SimTime};
use crate::mobility::{initial_state, sample_maneuver, MobilityParams, Trajectory};
use crate::packet::{DataHeader, FlowId, NodeId, Packet, PacketKind, Payload};
use crate::proto::agent::{Agent, Ctx, Effects, ProtoCounters, Timer};
use crate::proto::constants::{packet_size, ProtocolConstants, ProtocolKind};
use crate::radio::{survivability, Channel, LossCause, MacParams, MacQueue, PstMeter, TxId};

#[derive(Clone, Debug, PartialEq)]
pub struct FlowSpec {
    pub src: NodeId,
    pub dst: NodeId,
    /// Seconds between packets.
    pub interval: f64,
    pub start: SimTime,
    /// No packet is generated at or after this instant.
    pub stop: SimTime,
}

#[derive(Clone, Debug)]
pub struct SimParams {
    pub node_count: usize,
    pub mobility: MobilityParams,
    pub mac: MacParams,
    pub protocol: ProtocolKind,
    pub constants: ProtocolConstants,
    pub packet_bytes: u32,
    pub ttl: f64,
    pub seed: u64,
    /// Start of the measurement window; per-second series are binned from here.
    pub warmup: f64,
    pub duration: f64,
    /// Interval of the in-run conservation and containment audit.
    pub audit_interval: Option<f64>,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("flow {flow}: generated {generated} != delivered {delivered} + lost {lost} + in system {in_system} at t={at}")]
    Conservation { flow: usize, generated: u64, delivered: u64, lost: u64, in_system: u64, at: SimTime },
    #[error("node {node} left the area at t={at}: {position:?}")]
    OutOfArea { node: NodeId, at: SimTime, position: Vec2 },
    #[error("flow {0} has identical endpoints or an unknown node")]
    BadFlow(usize),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FlowStats {
    pub generated: u64,
    pub delivered: u64,
    pub lost: BTreeMap<LossCause, u64>,
    /// Sum of end-to-end delays of delivered packets, seconds.
    pub delay_sum: f64,
    /// `(generated, delivered)` per second after warmup, by generation time.
    pub per_second: Vec<(u64, u64)>,
}

impl FlowStats {
    pub fn lost_total(&self) -> u64 {
        self.lost.values().sum()
    }

    fn bin(&mut self, i: usize) -> &mut (u64, u64) {
        if self.per_second.len() <= i {
            self.per_second.resize(i + 1, (0, 0));
        }
        &mut self.per_second[i]
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ControlStats {
    /// Transmission attempts per control kind.
    pub packets: BTreeMap<PacketKind, u64>,
    pub bytes: BTreeMap<PacketKind, u64>,
    /// Control packets rejected by a full MAC queue.
    pub queue_drops: u64,
}

impl ControlStats {
    pub fn total_packets(&self) -> u64 {
        self.packets.values().sum()
    }

    pub fn total_bytes(&self) -> u64 {
        self.bytes.values().sum()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SimReport {
    pub flows: Vec<FlowStats>,
    pub control: ControlStats,
    pub counters: ProtoCounters,
    pub data_transmissions: u64,
    pub events_executed: u64,
    pub events_scheduled: u64,
    pub events_cancelled: u64,
    pub events_pending: u64,
}

#[derive(Clone, Debug)]
enum Ev {
    Maneuver(NodeId),
    Hello(NodeId),
    Generate(usize),
    MacAttempt(NodeId),
    TxEnd(NodeId),
    Timer(NodeId, Timer),
    Enqueue(NodeId, Box<Packet>),
    Audit,
}

#[derive(Clone, Debug)]
struct Holding {
    pkt: Packet,
    taken_at: SimTime,
    attempts: u32,
    tx: Option<TxId>,
}

struct NodeState {
    traj: Trajectory,
    traj_at: SimTime,
    queue: MacQueue,
    pst: PstMeter,
    holding: Option<Holding>,
    mob_rng: ChaCha8Rng,
    mac_rng: ChaCha8Rng,
    agent_rng: ChaCha8Rng,
}

impl NodeState {
    fn traj_at(&self, now: SimTime) -> Trajectory {
        self.traj.step(now.secs_since(self.traj_at))
    }
}

/// Called for every transmission attempt with the sender and the frame.
pub type TxObserver = Box<dyn FnMut(SimTime, NodeId, &Packet)>;

pub struct Network<A: Agent> {
    p: SimParams,
    sched: Scheduler<Ev>,
    channel: Channel,
    nodes: Vec<NodeState>,
    agents: Vec<A>,
    flows: Vec<FlowSpec>,
    stats: Vec<FlowStats>,
    control: ControlStats,
    counters: ProtoCounters,
    data_tx: u64,
    next_uid: u64,
    observer: Option<TxObserver>,
}

fn add_counters(into: &mut ProtoCounters, c: &ProtoCounters) {
    for (k, v) in &c.route_discoveries {
        *into.route_discoveries.entry(*k).or_insert(0) += v;
    }
    into.routes_computed += c.routes_computed;
    into.discovery_failures += c.discovery_failures;
    into.rreq_suppressed += c.rreq_suppressed;
    into.rreq_unknown_llt += c.rreq_unknown_llt;
    into.route_switches += c.route_switches;
    into.selection_fallbacks += c.selection_fallbacks;
    into.pipe_searches += c.pipe_searches;
    into.pipe_nodes_sum += c.pipe_nodes_sum;
    into.pipe_links_sum += c.pipe_links_sum;
    into.pipe_truncations += c.pipe_truncations;
    into.loss_deferrals += c.loss_deferrals;
    into.link_losses += c.link_losses;
    into.rerr_sent += c.rerr_sent;
    into.rswt_sent += c.rswt_sent;
    into.notify_sent += c.notify_sent;
}

impl<A: Agent> Network<A> {
    pub fn new<F>(p: SimParams, flows: Vec<FlowSpec>, make_agent: F) -> Result<Self, SimError>
    where
        F: FnMut(NodeId) -> A,
    {
        Self::build(p, flows, None, make_agent)
    }

    /// Like [`Network::new`], but node `i` starts on `trajs[i]`. A trajectory
    /// whose maneuver never ends is flown for the whole run.
    pub fn with_trajectories<F>(
        p: SimParams,
        flows: Vec<FlowSpec>,
        trajs: Vec<Trajectory>,
        make_agent: F,
    ) -> Result<Self, SimError>
    where
        F: FnMut(NodeId) -> A,
    {
        assert_eq!(trajs.len(), p.node_count, "one trajectory per node");
        Self::build(p, flows, Some(trajs), make_agent)
    }

    fn build<F>(p: SimParams, flows: Vec<FlowSpec>, fixed: Option<Vec<Trajectory>>, mut make_agent: F) -> Result<Self, SimError>
    where
        F: FnMut(NodeId) -> A,
    {
        let n = p.node_count;
        for (i, f) in flows.iter().enumerate() {
            if f.src == f.dst || f.src as usize >= n || f.dst as usize >= n {
                return Err(SimError::BadFlow(i));
            }
        }
        let mut nodes = Vec::with_capacity(n);
        for i in 0..n {
            let mut mob_rng = stream_rng(p.seed, &format!("mobility/node-{i}"));
            let traj = match &fixed {
                Some(t) => t[i],
                None => {
                    let (pos, heading) = initial_state(&mut mob_rng, &p.mobility);
                    sample_maneuver(&mut mob_rng, &p.mobility, pos, heading, SimTime::ZERO)
                }
            };
            nodes.push(NodeState {
                traj,
                traj_at: SimTime::ZERO,
                queue: MacQueue::new(p.mac.queue_capacity),
                pst: PstMeter::default(),
                holding: None,
                mob_rng,
                mac_rng: stream_rng(p.seed, &format!("mac/node-{i}")),
                agent_rng: stream_rng(p.seed, &format!("agent/node-{i}")),
            });
        }
        let agents = (0..n).map(|i| make_agent(i as NodeId)).collect();
        let sense = SimTime::from_micros(p.mac.slot_us);
        let mut net = Network {
            sched: Scheduler::new(),
            channel: Channel::new(n, sense),
            nodes,
            agents,
            stats: vec![FlowStats::default(); flows.len()],
            flows,
            control: ControlStats::default(),
            counters: ProtoCounters::default(),
            data_tx: 0,
            next_uid: 1,
            observer: None,
            p,
        };
        net.bootstrap()?;
        Ok(net)
    }

    fn bootstrap(&mut self) -> Result<(), SimError> {
        let mut phase_rng = stream_rng(self.p.seed, "hello-phase");
        let hello = self.p.constants.timers.hello_interval;
        for i in 0..self.nodes.len() {
            let id = i as NodeId;
            let until = self.nodes[i].traj.maneuver_until;
            if until < SimTime::MAX {
                self.sched.schedule(until, Ev::Maneuver(id))?;
            }
            let phase = phase_rng.random_range(0.0..hello);
            self.sched.schedule(SimTime::from_secs_f64(phase), Ev::Hello(id))?;
            self.with_agent(id, |a, ctx| a.start(ctx));
        }
        for (i, f) in self.flows.iter().enumerate() {
            self.sched.schedule(f.start, Ev::Generate(i))?;
        }
        if let Some(a) = self.p.audit_interval {
            self.sched.schedule(SimTime::from_secs_f64(a), Ev::Audit)?;
        }
        Ok(())
    }

    pub fn set_tx_observer(&mut self, obs: TxObserver) {
        self.observer = Some(obs);
    }

    pub fn params(&self) -> &SimParams {
        &self.p
    }

    pub fn now(&self) -> SimTime {
        self.sched.now()
    }

    pub fn agent(&self, id: NodeId) -> &A {
        &self.agents[id as usize]
    }

    pub fn flows(&self) -> &[FlowSpec] {
        &self.flows
    }

    pub fn trajectory(&self, id: NodeId) -> Trajectory {
        self.nodes[id as usize].traj_at(self.now())
    }

    pub fn positions(&self) -> Vec<Vec2> {
        let now = self.now();
        self.nodes.iter().map(|n| n.traj_at(now).position).collect()
    }

    pub fn stats(&self) -> &[FlowStats] {
        &self.stats
    }

    // ----- agent plumbing ----------------------------------------------

    fn with_agent<F>(&mut self, id: NodeId, f: F)
    where
        F: FnOnce(&mut A, &mut Ctx),
    {
        let now = self.now();
        let mut fx = Effects::default();
        {
            let node = &mut self.nodes[id as usize];
            let own = node.traj_at(now);
            let mut ctx = Ctx {
                now,
                me: id,
                own,
                pst: node.pst.current(),
                range: self.p.mac.range,
                rng: &mut node.agent_rng,
                fx: &mut fx,
            };
            f(&mut self.agents[id as usize], &mut ctx);
        }
        self.apply(id, fx);
    }

    fn apply(&mut self, id: NodeId, fx: Effects) {
        let now = self.now();
        add_counters(&mut self.counters, &fx.counters);
        for (pkt, cause) in fx.drops {
            self.lose(&pkt, cause);
        }
        for pkt in fx.delivered {
            self.deliver(&pkt);
        }
        for (at, t) in fx.timers {
            self.sched.schedule(at.max(now), Ev::Timer(id, t)).expect("timer in the past");
        }
        for (at, pkt) in fx.delayed {
            self.sched.schedule(at.max(now), Ev::Enqueue(id, Box::new(pkt))).expect("send in the past");
        }
        for pkt in fx.sends {
            self.enqueue(id, pkt);
        }
        for n in fx.purge_next_hop {
            let purged = self.nodes[id as usize]
                .queue
                .remove_where(|p| p.kind() == PacketKind::Data && p.next_hop == Some(n));
            if !purged.is_empty() {
                self.with_agent(id, |a, ctx| a.on_purged(ctx, purged));
            }
        }
    }

    fn lose(&mut self, pkt: &Packet, cause: LossCause) {
        let f = pkt.flow.expect("data packet without flow") as usize;
        *self.stats[f].lost.entry(cause).or_insert(0) += 1;
    }

    fn deliver(&mut self, pkt: &Packet) {
        let now = self.now();
        if pkt.is_expired(now) {
            self.lose(pkt, LossCause::TtlExpiry);
            return;
        }
        let f = pkt.flow.expect("data packet without flow") as usize;
        let bin = self.bin_of(pkt.created_at);
        let s = &mut self.stats[f];
        s.delivered += 1;
        s.delay_sum += pkt.aoi(now);
        if let Some(b) = bin {
            s.bin(b).1 += 1;
        }
    }

    fn bin_of(&self, t: SimTime) -> Option<usize> {
        let rel = t.as_secs_f64() - self.p.warmup;
        (rel >= 0.0).then(|| rel.floor() as usize)
    }

    fn enqueue(&mut self, id: NodeId, mut pkt: Packet) {
        let now = self.now();
        if pkt.kind().is_control() {
            pkt.uid = self.next_uid;
            self.next_uid += 1;
        }
        pkt.size_bytes = packet_size(&self.p.constants.sizes, self.p.protocol, &pkt, self.p.packet_bytes);
        pkt.enqueued_at = now;
        pkt.prev_hop = id;
        match self.nodes[id as usize].queue.enqueue(pkt) {
            Ok(()) => self.kick(id),
            Err(pkt) => {
                if pkt.kind() == PacketKind::Data {
                    self.lose(&pkt, LossCause::QueueFull);
                } else {
                    self.control.queue_drops += 1;
                }
            }
        }
    }

    // ----- MAC ---------------------------------------------------------

    fn backoff(&mut self, id: NodeId, attempts: u32) -> SimTime {
        let mac = &self.p.mac;
        let cw = (((mac.cw as u64) + 1) << attempts.min(5)).min(1024) - 1;
        let slots = self.nodes[id as usize].mac_rng.random_range(0..=cw);
        SimTime::from_micros(mac.difs_us + slots * mac.slot_us)
    }

    /// Takes the next frame from the queue if the MAC is idle.
    fn kick(&mut self, id: NodeId) {
        let now = self.now();
        if self.nodes[id as usize].holding.is_some() {
            return;
        }
        let thr = self.p.constants.haodv.survivability_threshold;
        loop {
            let node = &mut self.nodes[id as usize];
            let Some(pkt) = node.queue.pop() else { return };
            if pkt.kind() == PacketKind::Data {
                let pst = node.pst.current();
                let doomed = pkt.is_expired(now)
                    || self.agents[id as usize]
                        .survivability_etd(&pkt, pst)
                        .is_some_and(|etd| survivability(&pkt, now, etd) < thr);
                if doomed {
                    self.lose(&pkt, LossCause::TtlExpiry);
                    continue;
                }
            }
            node.holding = Some(Holding { pkt, taken_at: now, attempts: 0, tx: None });
            break;
        }
        let wait = self.backoff(id, 0);
        self.sched.schedule_in(wait, Ev::MacAttempt(id));
    }

    fn attempt(&mut self, id: NodeId) {
        let now = self.now();
        if self.channel.busy(id, now) {
            let attempts = self.nodes[id as usize].holding.as_ref().map_or(0, |h| h.attempts);
            let resume = self.channel.busy_until(id).max(now);
            let wait = self.backoff(id, attempts);
            self.sched.schedule(resume + wait, Ev::MacAttempt(id)).expect("monotone");
            return;
        }
        let range = self.p.mac.range;
        let me = self.nodes[id as usize].traj_at(now).position;
        let audience: Vec<NodeId> = (0..self.nodes.len())
            .filter(|&j| j != id as usize)
            .filter(|&j| (self.nodes[j].traj_at(now).position - me).norm_sq() <= range * range)
            .map(|j| j as NodeId)
            .collect();
        let h = self.nodes[id as usize].holding.as_mut().expect("attempt without frame");
        let airtime = self.p.mac.airtime(h.pkt.size_bytes);
        let kind = h.pkt.kind();
        if kind.is_control() {
            *self.control.packets.entry(kind).or_insert(0) += 1;
            *self.control.bytes.entry(kind).or_insert(0) += h.pkt.size_bytes as u64;
        } else {
            self.data_tx += 1;
        }
        if let Some(obs) = self.observer.as_mut() {
            obs(now, id, &h.pkt);
        }
        let tx = self.channel.begin(id, audience, now, now + airtime);
        h.tx = Some(tx);
        self.sched.schedule(now + airtime, Ev::TxEnd(id)).expect("monotone");
    }

    fn tx_end(&mut self, id: NodeId) {
        let now = self.now();
        let mut h = self.nodes[id as usize].holding.take().expect("tx end without frame");
        let fin = self.channel.finish(h.tx.take().expect("no transmission"));
        let mut pkt = h.pkt.clone();
        pkt.prev_hop = id;
        match pkt.next_hop {
            None => {
                for &r in &fin.clean {
                    let copy = pkt.clone();
                    self.with_agent(r, |a, ctx| a.on_receive(ctx, copy));
                }
                self.kick(id);
            }
            Some(target) => {
                let ok = fin.clean.contains(&target);
                for &r in &fin.clean {
                    if r != target {
                        self.with_agent(r, |a, ctx| a.on_overhear(ctx, id));
                    }
                }
                if ok {
                    if pkt.kind() == PacketKind::Data {
                        self.nodes[id as usize].pst.record(pkt.enqueued_at, h.taken_at);
                    }
                    self.with_agent(target, |a, ctx| a.on_receive(ctx, pkt));
                    self.kick(id);
                    return;
                }
                h.attempts += 1;
                if h.attempts >= self.p.mac.retry_limit {
                    let cause = if fin.tx.audience.contains(&target) {
                        LossCause::Collision
                    } else {
                        LossCause::LinkBreak
                    };
                    let failed = h.pkt;
                    self.with_agent(id, |a, ctx| a.on_unicast_failure(ctx, failed, cause));
                    self.kick(id);
                } else {
                    let attempts = h.attempts;
                    self.nodes[id as usize].holding = Some(h);
                    let wait = self.backoff(id, attempts);
                    self.sched.schedule(now + wait, Ev::MacAttempt(id)).expect("monotone");
                }
            }
        }
    }

    // ----- other events ------------------------------------------------

    fn maneuver(&mut self, id: NodeId) {
        let now = self.now();
        let node = &mut self.nodes[id as usize];
        let cur = node.traj_at(now);
        let next = sample_maneuver(&mut node.mob_rng, &self.p.mobility, cur.position, cur.heading, now);
        node.traj = next;
        node.traj_at = now;
        self.sched.schedule(next.maneuver_until, Ev::Maneuver(id)).expect("maneuver ends in the future");
        self.with_agent(id, |a, ctx| a.on_trajectory_change(ctx));
    }

    fn hello(&mut self, id: NodeId) {
        let now = self.now();
        let thr = self.p.constants.haodv.survivability_threshold;
        let node = &mut self.nodes[id as usize];
        let pst = node.pst.roll();
        let agent = &self.agents[id as usize];
        let pruned = node.queue.reorder_and_prune(now, thr, |p| agent.survivability_etd(p, pst));
        for p in pruned {
            self.lose(&p, LossCause::TtlExpiry);
        }
        self.with_agent(id, |a, ctx| a.on_hello_tick(ctx));
        let hello = SimTime::from_secs_f64(self.p.constants.timers.hello_interval);
        self.sched.schedule_in(hello, Ev::Hello(id));
    }

    fn generate(&mut self, i: usize) {
        let now = self.now();
        let f = self.flows[i].clone();
        let pkt = Packet {
            uid: self.next_uid,
            size_bytes: self.p.packet_bytes,
            created_at: now,
            ttl: self.p.ttl,
            flow: Some(i as FlowId),
            src: f.src,
            dst: f.dst,
            prev_hop: f.src,
            next_hop: None,
            enqueued_at: now,
            payload: Payload::Data(DataHeader { path: Vec::new().into(), hop: 0 }),
        };
        self.next_uid += 1;
        let bin = self.bin_of(now);
        let s = &mut self.stats[i];
        s.generated += 1;
        if let Some(b) = bin {
            s.bin(b).0 += 1;
        }
        self.with_agent(f.src, |a, ctx| a.on_originate(ctx, pkt));
        let next = now + SimTime::from_secs_f64(f.interval);
        if next < f.stop {
            self.sched.schedule(next, Ev::Generate(i)).expect("monotone");
        }
    }

    /// Data packets of each flow currently held anywhere in the network.
    pub fn in_system(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.flows.len()];
        let mut count = |p: &Packet| {
            if let Some(f) = p.flow {
                counts[f as usize] += 1;
            }
        };
        for (node, agent) in self.nodes.iter().zip(&self.agents) {
            node.queue.iter().for_each(&mut count);
            if let Some(h) = &node.holding {
                count(&h.pkt);
            }
            agent.buffered_data().into_iter().for_each(&mut count);
        }
        counts
    }

    pub fn check_conservation(&self) -> Result<(), SimError> {
        let held = self.in_system();
        for (i, s) in self.stats.iter().enumerate() {
            let lost = s.lost_total();
            if s.generated != s.delivered + lost + held[i] {
                return Err(SimError::Conservation {
                    flow: i,
                    generated: s.generated,
                    delivered: s.delivered,
                    lost,
                    in_system: held[i],
                    at: self.now(),
                });
            }
        }
        Ok(())
    }

    fn check_area(&self) -> Result<(), SimError> {
        let now = self.now();
        let area = &self.p.mobility.area;
        for (i, n) in self.nodes.iter().enumerate() {
            let p = n.traj_at(now).position;
            // Tolerate rounding on the boundary itself.
            if !area.contains_with_margin(p, -1e-6) {
                return Err(SimError::OutOfArea { node: i as NodeId, at: now, position: p });
            }
        }
        Ok(())
    }

    /// Executes every event up to and including `t`.
    pub fn run_until(&mut self, t: SimTime) -> Result<(), SimError> {
        while let Some((_, ev)) = self.sched.pop_until(t) {
            match ev {
                Ev::Maneuver(id) => self.maneuver(id),
                Ev::Hello(id) => self.hello(id),
                Ev::Generate(i) => self.generate(i),
                Ev::MacAttempt(id) => self.attempt(id),
                Ev::TxEnd(id) => self.tx_end(id),
                Ev::Timer(id, timer) => self.with_agent(id, |a, ctx| a.on_timer(ctx, timer)),
                Ev::Enqueue(id, pkt) => self.enqueue(id, *pkt),
                Ev::Audit => {
                    self.check_conservation()?;
                    self.check_area()?;
                    if let Some(a) = self.p.audit_interval {
                        self.sched.schedule_in(SimTime::from_secs_f64(a), Ev::Audit);
                    }
                }
            }
        }
        self.sched.advance_to(t)?;
        Ok(())
    }

    /// Runs to the configured duration and checks the end-of-run invariants.
    pub fn run(mut self) -> Result<SimReport, SimError> {
        let end = SimTime::from_secs_f64(self.p.duration);
        self.run_until(end)?;
        self.check_conservation()?;
        self.check_area()?;
        Ok(self.report())
    }

    pub fn report(&self) -> SimReport {
        SimReport {
            flows: self.stats.clone(),
            control: self.control.clone(),
            counters: self.counters.clone(),
            data_transmissions: self.data_tx,
            events_executed: self.sched.executed_total(),
            events_scheduled: self.sched.scheduled_total(),
            events_cancelled: self.sched.cancelled_total(),
            events_pending: self.sched.pending() as u64,
        }
    }
}
