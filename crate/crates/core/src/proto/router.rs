//! The routing agent. One state machine covers AODV, LEPR and H-AODV; the
//! protocols share discovery, reply and error handling and differ in the
//! hooks noted at each branch.
//!
//! Data packets carry the node sequence chosen by their source, so relays
//! keep no forwarding tables, only a record of the routes they recently
//! served (needed for error reports, activity flags and route monitoring).

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use rand::Rng;

use crate::kernel::SimTime;
use crate::packet::{DataHeader, NodeId, Packet, PacketKind, Payload};
use crate::proto::agent::{Agent, Ctx, Timer};
use crate::proto::aodv::{is_loop_free, select_shortest, ReplyPolicy, RreqCache, RreqLimiter};
use crate::proto::constants::{MonitoredLinks, ProtocolConstants, ProtocolKind};
use crate::proto::haodv::clique::{decode, encode};
use crate::proto::haodv::metrics::{
    accumulate_rrep, metrics_from_rrep, node_il_contribution, route_costs, rreq_admission,
    select_route, CostWeights, InterferenceView, RouteMetrics,
};
use crate::proto::haodv::pipe::{LinkStat, PipeGraph, Topology};
use crate::proto::lepr::{
    link_stability, links_of, needs_rswt, CachedRoute, DisjointReplyFilter, LeprRouteCache,
};
use crate::proto::messages::{
    Hello, NeighborRecord, NodeStats, NotifySource, Rerr, Rrep, Rreq, Rswt, TravelRoute,
};
use crate::proto::neighbors::NeighborTable;
use crate::radio::LossCause;

/// Smallest ETD used in survivability scores.
pub const ETD_FLOOR: f64 = 1e-3;
/// Upper bound of the random delay before a route request is rebroadcast.
const RREQ_JITTER: f64 = 0.01;

#[derive(Clone, Debug)]
pub struct RouterConfig {
    pub protocol: ProtocolKind,
    pub constants: ProtocolConstants,
    /// TTL of the application flows, carried in route requests.
    pub flow_ttl: f64,
    pub range: f64,
}

#[derive(Clone, Debug)]
pub struct Route {
    pub path: Arc<[NodeId]>,
    pub dst_seq: u32,
    pub installed_at: SimTime,
    pub last_used: SimTime,
    pub metrics: Option<RouteMetrics>,
}

impl Route {
    pub fn next_hop(&self) -> NodeId {
        self.path[1]
    }
}

#[derive(Clone, Debug)]
struct Candidate {
    path: Vec<NodeId>,
    metrics: Option<RouteMetrics>,
    stability: f64,
    dst_seq: u32,
}

#[derive(Clone, Debug)]
struct Discovery {
    rreq_id: u32,
    window_open: bool,
    candidates: Vec<Candidate>,
}

#[derive(Clone, Debug)]
struct Relay {
    path: Arc<[NodeId]>,
    index: usize,
    last_used: SimTime,
}

impl Relay {
    fn next(&self) -> Option<NodeId> {
        self.path.get(self.index + 1).copied()
    }
}

#[derive(Clone, Debug)]
struct Sink {
    path: Arc<[NodeId]>,
    last_data: SimTime,
    notify_running: bool,
    notify_seq: u32,
    last_refresh: Option<SimTime>,
}

#[derive(Clone, Debug)]
pub struct Router {
    id: NodeId,
    cfg: Arc<RouterConfig>,
    neighbors: NeighborTable,
    seq: u32,
    next_rreq_id: u32,
    rreq_cache: RreqCache,
    reply_policy: ReplyPolicy,
    limiter: RreqLimiter,
    routes: BTreeMap<NodeId, Route>,
    discoveries: BTreeMap<NodeId, Discovery>,
    retry_scheduled: BTreeSet<NodeId>,
    pending: BTreeMap<NodeId, VecDeque<Packet>>,
    relays: BTreeMap<(NodeId, NodeId), Relay>,
    out_links: BTreeMap<NodeId, SimTime>,
    in_links: BTreeMap<NodeId, SimTime>,
    last_data_tx: Option<SimTime>,
    sinks: BTreeMap<NodeId, Sink>,
    rerr_recent: BTreeMap<(NodeId, NodeId), SimTime>,
    traj_dirty: bool,
    // LEPR
    lepr_filters: BTreeMap<(NodeId, u32), DisjointReplyFilter>,
    lepr_replied: BTreeMap<NodeId, (u32, Vec<Vec<NodeId>>)>,
    lepr_caches: BTreeMap<NodeId, LeprRouteCache>,
    refresh_windows: BTreeMap<NodeId, BTreeSet<Vec<NodeId>>>,
    last_rswt: Option<SimTime>,
    // H-AODV
    pipes: BTreeMap<NodeId, PipeGraph>,
    flow_etd: BTreeMap<(NodeId, NodeId), f64>,
    last_report: Option<(Topology, SimTime)>,
}

impl Router {
    pub fn new(id: NodeId, cfg: Arc<RouterConfig>) -> Self {
        let t = &cfg.constants.timers;
        let limiter = RreqLimiter::new(t.rreq_min_interval, t.rreq_backoff_cap);
        Router {
            id,
            cfg,
            neighbors: NeighborTable::new(),
            seq: 0,
            next_rreq_id: 0,
            rreq_cache: RreqCache::default(),
            reply_policy: ReplyPolicy::default(),
            limiter,
            routes: BTreeMap::new(),
            discoveries: BTreeMap::new(),
            retry_scheduled: BTreeSet::new(),
            pending: BTreeMap::new(),
            relays: BTreeMap::new(),
            out_links: BTreeMap::new(),
            in_links: BTreeMap::new(),
            last_data_tx: None,
            sinks: BTreeMap::new(),
            rerr_recent: BTreeMap::new(),
            traj_dirty: true,
            lepr_filters: BTreeMap::new(),
            lepr_replied: BTreeMap::new(),
            lepr_caches: BTreeMap::new(),
            refresh_windows: BTreeMap::new(),
            last_rswt: None,
            pipes: BTreeMap::new(),
            flow_etd: BTreeMap::new(),
            last_report: None,
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn neighbors(&self) -> &NeighborTable {
        &self.neighbors
    }

    pub fn route(&self, dst: NodeId) -> Option<&Route> {
        self.routes.get(&dst)
    }

    pub fn pipe(&self, dst: NodeId) -> Option<&PipeGraph> {
        self.pipes.get(&dst)
    }

    pub fn lepr_cache(&self, dst: NodeId) -> Option<&LeprRouteCache> {
        self.lepr_caches.get(&dst)
    }

    fn kind(&self) -> ProtocolKind {
        self.cfg.protocol
    }

    fn c(&self) -> &ProtocolConstants {
        &self.cfg.constants
    }

    fn art(&self) -> f64 {
        self.c().timers.active_route_timeout
    }

    fn recent(&self, t: SimTime, now: SimTime) -> bool {
        now.secs_since(t) <= self.art()
    }

    fn is_active(&self, now: SimTime) -> bool {
        self.last_data_tx.is_some_and(|t| self.recent(t, now))
    }

    fn active_out(&self, now: SimTime) -> u32 {
        self.out_links.values().filter(|&&t| self.recent(t, now)).count() as u32
    }

    fn link_active_with(&self, n: NodeId, now: SimTime) -> bool {
        self.out_links.get(&n).is_some_and(|&t| self.recent(t, now))
            || self.in_links.get(&n).is_some_and(|&t| self.recent(t, now))
    }

    /// Active links whose transmitter is this node or one of its neighbors.
    pub fn own_il(&self, now: SimTime) -> u32 {
        self.active_out(now) + self.neighbors.iter().map(|e| e.active_out as u32).sum::<u32>()
    }

    fn llt_with(&self, n: NodeId, now: SimTime) -> Option<f64> {
        self.neighbors.get(n).and_then(|e| e.llt_remaining(now))
    }

    fn stability_with(&self, ctx: &Ctx, n: NodeId) -> Option<f64> {
        let e = self.neighbors.get(n)?;
        let llt = e.llt_remaining(ctx.now)?;
        let pos = e.position_at(ctx.now)?;
        let lp = &self.c().lepr;
        let d = pos.dist(ctx.own.position);
        Some(link_stability(llt, d, ctx.range, lp.llt_norm).unwrap_or(0.0))
    }

    fn pipe_max_age(&self) -> f64 {
        let h = self.c().timers.hello_interval;
        (self.c().haodv.stale_cycles as f64 + 0.5) * h
    }

    // ----- Hello -------------------------------------------------------

    fn build_hello(&self, ctx: &Ctx) -> Hello {
        let now = ctx.now;
        let mut h = Hello::plain(now);
        if self.kind() == ProtocolKind::Aodv {
            return h;
        }
        h.position = Some(ctx.own.position);
        if self.traj_dirty {
            h.trajectory = Some(ctx.own);
        }
        if self.kind() == ProtocolKind::Haodv {
            h.stats = Some(NodeStats { pst: ctx.pst, il: self.own_il(now).min(u16::MAX as u32) as u16 });
            h.is_active = self.is_active(now);
            h.active_out = self.active_out(now).min(u8::MAX as u32) as u8;
            if self.neighbors.any_active() {
                h.neighbors = Some(
                    self.neighbors
                        .iter()
                        .map(|e| NeighborRecord {
                            id: e.id,
                            llt: e.llt_remaining(now).unwrap_or(0.0),
                            pst: e.pst,
                            il: e.il,
                            link_active: self.link_active_with(e.id, now),
                        })
                        .collect(),
                );
            }
        }
        h
    }

    /// This node's width-2 view: its own star plus the stars its neighbors
    /// advertised.
    fn own_star(&self, ctx: &Ctx) -> Topology {
        let now = ctx.now;
        let mut t = Topology::new();
        t.add_node(self.id, NodeStats { pst: ctx.pst, il: self.own_il(now).min(u16::MAX as u32) as u16 });
        for e in self.neighbors.iter() {
            t.add_node(e.id, NodeStats { pst: e.pst, il: e.il });
            t.add_link(
                self.id,
                e.id,
                LinkStat { llt: e.llt_remaining(now).unwrap_or(0.0), active: self.link_active_with(e.id, now) },
            );
        }
        if self.c().haodv.pipe_width >= 2 {
            for e in self.neighbors.iter() {
                let Some((recs, at)) = &e.records else { continue };
                let age = now.secs_since(*at);
                for r in recs {
                    if r.id == self.id || t.has_link(e.id, r.id) {
                        continue;
                    }
                    if !t.nodes.contains_key(&r.id) {
                        t.add_node(r.id, NodeStats { pst: r.pst, il: r.il });
                    }
                    t.add_link(e.id, r.id, LinkStat { llt: (r.llt - age).max(0.0), active: r.link_active });
                }
            }
        }
        t
    }

    // ----- Discovery ---------------------------------------------------

    fn route_usable(&self, dst: NodeId, now: SimTime) -> bool {
        self.routes
            .get(&dst)
            .is_some_and(|r| self.recent(r.last_used, now) && self.neighbors.contains(r.next_hop()))
    }

    fn ensure_discovery(&mut self, ctx: &mut Ctx, dst: NodeId) {
        if self.discoveries.contains_key(&dst) || self.retry_scheduled.contains(&dst) {
            return;
        }
        if self.limiter.allows(dst, ctx.now) {
            self.originate_rreq(ctx, dst);
        } else {
            let wait = self.limiter.next_allowed(dst).secs_since(ctx.now);
            self.retry_scheduled.insert(dst);
            ctx.set_timer(wait, Timer::RetryDiscovery { dst });
        }
    }

    fn originate_rreq(&mut self, ctx: &mut Ctx, dst: NodeId) {
        self.seq += 1;
        let rreq_id = self.next_rreq_id;
        self.next_rreq_id += 1;
        self.rreq_cache.first_seen(self.id, rreq_id);
        let rreq = Rreq {
            originator: self.id,
            rreq_id,
            dst,
            orig_seq: self.seq,
            dst_seq: self.routes.get(&dst).map_or(0, |r| r.dst_seq),
            path: vec![self.id],
            flow_ttl: (self.kind() == ProtocolKind::Haodv).then_some(self.cfg.flow_ttl),
            stability: (self.kind() == ProtocolKind::Lepr).then_some(1.0),
        };
        let pkt = ctx.control(dst, None, Payload::Rreq(Box::new(rreq)));
        ctx.send(pkt);
        self.limiter.record_sent(dst, ctx.now);
        *ctx.counters().route_discoveries.entry((self.id, dst)).or_insert(0) += 1;
        self.discoveries.insert(dst, Discovery { rreq_id, window_open: false, candidates: Vec::new() });
        let wait = self.limiter.spacing(dst);
        ctx.set_timer(wait, Timer::DiscoveryTimeout { dst, rreq_id });
    }

    fn handle_rreq(&mut self, ctx: &mut Ctx, from: NodeId, mut rreq: Rreq) {
        if rreq.originator == self.id {
            return;
        }
        let first = self.rreq_cache.first_seen(rreq.originator, rreq.rreq_id);
        if rreq.dst == self.id {
            let reply = match self.kind() {
                ProtocolKind::Lepr => {
                    let cap = self.c().lepr.cache_size + 1;
                    let f = self.lepr_filters.entry((rreq.originator, rreq.rreq_id)).or_default();
                    f.answered() < cap && f.admit(&rreq.path)
                }
                _ => self.reply_policy.should_reply(rreq.originator, rreq.rreq_id, rreq.hop_count() + 1),
            };
            if reply {
                self.send_rrep(ctx, &rreq);
            }
            return;
        }
        if !first {
            return;
        }
        match self.kind() {
            ProtocolKind::Haodv => {
                let llt = self.llt_with(from, ctx.now);
                if llt.is_none() {
                    ctx.counters().rreq_unknown_llt += 1;
                }
                let ttl = rreq.flow_ttl.unwrap_or(self.cfg.flow_ttl);
                if !rreq_admission(llt, ttl, self.c().haodv.delta) {
                    ctx.counters().rreq_suppressed += 1;
                    return;
                }
            }
            ProtocolKind::Lepr => {
                let s = self.stability_with(ctx, from).unwrap_or(0.0);
                rreq.stability = Some(rreq.stability.unwrap_or(1.0).min(s));
            }
            ProtocolKind::Aodv => {}
        }
        rreq.path.push(self.id);
        let dst = rreq.dst;
        let pkt = ctx.control(dst, None, Payload::Rreq(Box::new(rreq)));
        let jitter = ctx.rng.random_range(0.0..RREQ_JITTER);
        ctx.send_after(jitter, pkt);
    }

    fn send_rrep(&mut self, ctx: &mut Ctx, rreq: &Rreq) {
        self.seq = self.seq.max(rreq.dst_seq) + 1;
        let mut hops = vec![self.id];
        hops.extend(rreq.path.iter().rev());
        let forward: Vec<NodeId> = hops.iter().rev().copied().collect();
        let route = TravelRoute::new(hops);
        let next = route.next();
        let (etd, il) = if self.kind() == ProtocolKind::Haodv {
            (ctx.pst, node_il_contribution(self.id, &forward, &LocalView { r: self, now: ctx.now }))
        } else {
            (0.0, 0)
        };
        if self.kind() == ProtocolKind::Lepr {
            let e = self.lepr_replied.entry(rreq.originator).or_insert((rreq.rreq_id, Vec::new()));
            if e.0 != rreq.rreq_id {
                *e = (rreq.rreq_id, Vec::new());
            }
            e.1.push(forward.clone());
        }
        let rrep = Rrep {
            requester: rreq.originator,
            responder: self.id,
            rreq_id: rreq.rreq_id,
            dst_seq: self.seq,
            route,
            etd,
            il,
            llts: Vec::new(),
            stability: (self.kind() == ProtocolKind::Lepr).then_some(1.0),
            refresh: false,
        };
        let pkt = ctx.control(rreq.originator, next, Payload::Rrep(Box::new(rrep)));
        ctx.send(pkt);
    }

    fn handle_rrep(&mut self, ctx: &mut Ctx, from: NodeId, mut rrep: Rrep) {
        if rrep.route.next() != Some(self.id) {
            return;
        }
        let forward = rrep.forward_path();
        match self.kind() {
            ProtocolKind::Haodv => {
                let llt = self.llt_with(from, ctx.now).unwrap_or(0.0);
                let il = node_il_contribution(self.id, &forward, &LocalView { r: self, now: ctx.now });
                accumulate_rrep(&mut rrep, ctx.pst, il, llt);
            }
            ProtocolKind::Lepr => {
                rrep.route.advance();
                let s = self.stability_with(ctx, from).unwrap_or(0.0);
                rrep.stability = Some(rrep.stability.unwrap_or(1.0).min(s));
            }
            ProtocolKind::Aodv => rrep.route.advance(),
        }
        if rrep.route.at_end() {
            self.rrep_at_source(ctx, rrep);
            return;
        }
        if self.kind() == ProtocolKind::Haodv {
            self.flow_etd.insert((rrep.requester, rrep.responder), rrep.etd);
        }
        let next = rrep.route.next();
        let pkt = ctx.control(rrep.requester, next, Payload::Rrep(Box::new(rrep)));
        ctx.send(pkt);
    }

    fn rrep_at_source(&mut self, ctx: &mut Ctx, rrep: Rrep) {
        let dst = rrep.responder;
        let path = rrep.forward_path();
        debug_assert!(is_loop_free(&path));
        if !is_loop_free(&path) {
            return;
        }
        let stability = rrep.stability.unwrap_or(1.0);
        if rrep.refresh {
            if let Some(cache) = self.lepr_caches.get_mut(&dst) {
                cache.update_stability(&path, stability);
                let window = self.refresh_windows.entry(dst).or_default();
                if window.is_empty() {
                    ctx.set_timer(self.cfg.constants.timers.rrep_window, Timer::RefreshWindow { dst });
                }
                window.insert(path);
            }
            return;
        }
        let metrics = (self.kind() == ProtocolKind::Haodv).then(|| metrics_from_rrep(&rrep));
        let cand = Candidate { path, metrics, stability, dst_seq: rrep.dst_seq };
        if let Some(d) = self.discoveries.get_mut(&dst) {
            d.candidates.push(cand);
            if !d.window_open {
                d.window_open = true;
                ctx.set_timer(self.cfg.constants.timers.rrep_window, Timer::RrepWindow { dst });
            }
            return;
        }
        // A reply after the route was chosen.
        match self.kind() {
            ProtocolKind::Aodv => {
                let shorter = self.routes.get(&dst).is_some_and(|r| cand.path.len() < r.path.len());
                if shorter {
                    self.install(ctx, dst, &cand);
                }
            }
            ProtocolKind::Lepr => {
                let cap = self.c().lepr.cache_size;
                if let Some(cache) = self.lepr_caches.get_mut(&dst) {
                    let fits = cache.alternates.len() < cap
                        && cache.primary.iter().chain(cache.alternates.iter())
                            .all(|r| links_of(&r.path).is_disjoint(&links_of(&cand.path)));
                    if fits {
                        cache.alternates.push(CachedRoute { path: cand.path, stability });
                    }
                }
            }
            ProtocolKind::Haodv => {}
        }
    }

    fn close_rrep_window(&mut self, ctx: &mut Ctx, dst: NodeId) {
        let Some(d) = self.discoveries.remove(&dst) else { return };
        if d.candidates.is_empty() {
            return;
        }
        ctx.counters().routes_computed += 1;
        let chosen = match self.kind() {
            ProtocolKind::Aodv => {
                let hcs: Vec<usize> = d.candidates.iter().map(|c| c.path.len() - 1).collect();
                select_shortest(&hcs).unwrap()
            }
            ProtocolKind::Haodv => {
                let ms: Vec<RouteMetrics> = d.candidates.iter().map(|c| c.metrics.unwrap()).collect();
                let sel = select_route(&ms, self.cfg.flow_ttl, self.c().haodv.delta, self.weights()).unwrap();
                if sel.fallback {
                    ctx.counters().selection_fallbacks += 1;
                }
                sel.index
            }
            ProtocolKind::Lepr => {
                let replies: Vec<CachedRoute> = d
                    .candidates
                    .iter()
                    .map(|c| CachedRoute { path: c.path.clone(), stability: c.stability })
                    .collect();
                let cache = LeprRouteCache::from_replies(&replies, self.c().lepr.cache_size);
                let primary = cache.primary.clone().unwrap();
                self.lepr_caches.insert(dst, cache);
                d.candidates.iter().position(|c| c.path == primary.path).unwrap()
            }
        };
        self.limiter.record_success(dst);
        let cand = d.candidates[chosen].clone();
        self.install(ctx, dst, &cand);
    }

    fn weights(&self) -> CostWeights {
        let h = &self.c().haodv;
        CostWeights { alpha: h.alpha, beta: h.beta, gamma: h.gamma }
    }

    fn install(&mut self, ctx: &mut Ctx, dst: NodeId, cand: &Candidate) {
        let path: Arc<[NodeId]> = Arc::from(cand.path.clone());
        self.install_path(ctx, dst, path, cand.metrics, cand.dst_seq);
    }

    fn install_path(&mut self, ctx: &mut Ctx, dst: NodeId, path: Arc<[NodeId]>, metrics: Option<RouteMetrics>, dst_seq: u32) {
        debug_assert_eq!(path[0], self.id);
        debug_assert_eq!(*path.last().unwrap(), dst);
        if let Some(m) = metrics {
            self.flow_etd.insert((self.id, dst), m.etd);
        }
        self.pipes.remove(&dst);
        self.routes.insert(
            dst,
            Route { path, dst_seq, installed_at: ctx.now, last_used: ctx.now, metrics },
        );
        self.flush_pending(ctx, dst);
    }

    fn flush_pending(&mut self, ctx: &mut Ctx, dst: NodeId) {
        let Some(mut q) = self.pending.remove(&dst) else { return };
        while let Some(p) = q.pop_front() {
            if p.is_expired(ctx.now) {
                ctx.drop_data(p, LossCause::NoRoute);
            } else if self.route_usable(dst, ctx.now) || self.routes.contains_key(&dst) {
                self.send_data(ctx, p);
            } else {
                self.pending.entry(dst).or_default().push_back(p);
            }
        }
    }

    fn buffer(&mut self, ctx: &mut Ctx, pkt: Packet) {
        let total: usize = self.pending.values().map(|q| q.len()).sum();
        if total >= self.c().timers.source_buffer {
            ctx.drop_data(pkt, LossCause::QueueFull);
        } else {
            self.pending.entry(pkt.dst).or_default().push_back(pkt);
        }
    }

    // ----- Data --------------------------------------------------------

    fn send_data(&mut self, ctx: &mut Ctx, mut pkt: Packet) {
        let dst = pkt.dst;
        let route = self.routes.get_mut(&dst).expect("no route");
        route.last_used = ctx.now;
        let path = route.path.clone();
        let next = path[1];
        self.relays.insert((self.id, dst), Relay { path: path.clone(), index: 0, last_used: ctx.now });
        pkt.payload = Payload::Data(DataHeader { path, hop: 0 });
        pkt.prev_hop = self.id;
        pkt.next_hop = Some(next);
        self.out_links.insert(next, ctx.now);
        self.last_data_tx = Some(ctx.now);
        ctx.send(pkt);
    }

    fn originate(&mut self, ctx: &mut Ctx, pkt: Packet) {
        let dst = pkt.dst;
        if let Some(r) = self.routes.get(&dst) {
            let next = r.next_hop();
            if !self.neighbors.contains(next) {
                self.route_broken(ctx, dst, (self.id, next));
            } else if !self.recent(r.last_used, ctx.now) {
                self.routes.remove(&dst);
            }
        }
        if self.routes.contains_key(&dst) && self.pending.get(&dst).is_none_or(|q| q.is_empty()) {
            self.send_data(ctx, pkt);
        } else {
            self.buffer(ctx, pkt);
            if self.routes.contains_key(&dst) {
                self.flush_pending(ctx, dst);
            } else {
                self.ensure_discovery(ctx, dst);
            }
        }
    }

    fn handle_data(&mut self, ctx: &mut Ctx, from: NodeId, mut pkt: Packet) {
        let Payload::Data(header) = &mut pkt.payload else { unreachable!() };
        header.hop += 1;
        let path = header.path.clone();
        let i = header.hop;
        self.in_links.insert(from, ctx.now);
        if path.get(i) != Some(&self.id) {
            ctx.drop_data(pkt, LossCause::LinkBreak);
            return;
        }
        let src = path[0];
        let dst = *path.last().unwrap();
        if i + 1 == path.len() {
            let notify = self.kind() == ProtocolKind::Haodv;
            let sink = self.sinks.entry(src).or_insert(Sink {
                path: path.clone(),
                last_data: ctx.now,
                notify_running: false,
                notify_seq: 0,
                last_refresh: None,
            });
            sink.path = path;
            sink.last_data = ctx.now;
            if notify && !sink.notify_running {
                sink.notify_running = true;
                ctx.set_timer(self.c().timers.hello_interval, Timer::NotifySource { src });
            }
            ctx.deliver(pkt);
            return;
        }
        let next = path[i + 1];
        self.relays.insert((src, dst), Relay { path, index: i, last_used: ctx.now });
        if !self.neighbors.contains(next) {
            ctx.drop_data(pkt, LossCause::LinkBreak);
            self.report_break(ctx, src, dst, next);
            return;
        }
        pkt.next_hop = Some(next);
        self.out_links.insert(next, ctx.now);
        self.last_data_tx = Some(ctx.now);
        ctx.send(pkt);
    }

    // ----- Link loss and errors ----------------------------------------

    /// Error report for one flow whose next hop is already known to be gone.
    fn report_break(&mut self, ctx: &mut Ctx, src: NodeId, dst: NodeId, next: NodeId) {
        let hold = self.c().timers.hello_interval;
        if self.rerr_recent.get(&(src, next)).is_some_and(|&t| ctx.now.secs_since(t) < hold) {
            return;
        }
        self.rerr_recent.insert((src, next), ctx.now);
        let Some(relay) = self.relays.get(&(src, dst)) else { return };
        let hops: Vec<NodeId> = relay.path[..=relay.index].iter().rev().copied().collect();
        self.send_rerr(ctx, hops, next, vec![dst]);
    }

    fn send_rerr(&mut self, ctx: &mut Ctx, hops: Vec<NodeId>, lost: NodeId, unreachable: Vec<NodeId>) {
        let source = *hops.last().unwrap();
        let route = TravelRoute::new(hops);
        let next = route.next();
        let rerr = Rerr { reporter: self.id, broken: (self.id, lost), unreachable, route };
        ctx.counters().rerr_sent += 1;
        let pkt = ctx.control(source, next, Payload::Rerr(Box::new(rerr)));
        ctx.send(pkt);
    }

    fn link_lost(&mut self, ctx: &mut Ctx, lost: NodeId) {
        ctx.counters().link_losses += 1;
        self.neighbors.remove(lost);
        self.out_links.remove(&lost);
        self.in_links.remove(&lost);
        ctx.purge(lost);
        let now = ctx.now;
        let mut by_source: BTreeMap<NodeId, (Vec<NodeId>, Vec<NodeId>)> = BTreeMap::new();
        let affected: Vec<(NodeId, NodeId)> = self
            .relays
            .iter()
            .filter(|(_, r)| r.next() == Some(lost) && self.recent(r.last_used, now))
            .map(|(&k, _)| k)
            .collect();
        for (src, dst) in affected {
            let r = self.relays.remove(&(src, dst)).unwrap();
            let e = by_source
                .entry(src)
                .or_insert_with(|| (r.path[..=r.index].iter().rev().copied().collect(), Vec::new()));
            e.1.push(dst);
        }
        for (src, (hops, dsts)) in by_source {
            if src == self.id {
                for dst in dsts {
                    self.route_broken(ctx, dst, (self.id, lost));
                }
            } else {
                self.rerr_recent.insert((src, lost), now);
                self.send_rerr(ctx, hops, lost, dsts);
            }
        }
        // A source whose route has not carried data yet still needs repair.
        let stale: Vec<NodeId> =
            self.routes.iter().filter(|(_, r)| r.next_hop() == lost).map(|(&d, _)| d).collect();
        for dst in stale {
            self.route_broken(ctx, dst, (self.id, lost));
        }
    }

    fn handle_rerr(&mut self, ctx: &mut Ctx, mut rerr: Rerr) {
        if rerr.route.next() != Some(self.id) {
            return;
        }
        rerr.route.advance();
        if !rerr.route.at_end() {
            let next = rerr.route.next();
            let dst = rerr.route.terminus();
            let pkt = ctx.control(dst, next, Payload::Rerr(Box::new(rerr)));
            ctx.send(pkt);
            return;
        }
        let (a, b) = rerr.broken;
        for dst in rerr.unreachable {
            let uses = self
                .routes
                .get(&dst)
                .is_some_and(|r| r.path.windows(2).any(|l| l[0] == a && l[1] == b));
            if uses {
                self.route_broken(ctx, dst, (a, b));
            }
        }
    }

    /// The active route to `dst` lost the directed link `broken`.
    fn route_broken(&mut self, ctx: &mut Ctx, dst: NodeId, broken: (NodeId, NodeId)) {
        if !self.routes.contains_key(&dst) {
            return;
        }
        match self.kind() {
            ProtocolKind::Aodv => {
                self.routes.remove(&dst);
                self.ensure_discovery(ctx, dst);
            }
            ProtocolKind::Lepr => {
                let k_prime = self.c().lepr.k_prime;
                let switched = match self.lepr_caches.get_mut(&dst) {
                    Some(cache) => {
                        cache.forget_link(broken.0, broken.1);
                        cache.switch(k_prime).then(|| cache.primary.clone().unwrap())
                    }
                    None => None,
                };
                ctx.counters().routes_computed += 1;
                match switched {
                    Some(p) if p.path[0] == self.id && self.neighbors.contains(p.path[1]) => {
                        ctx.counters().route_switches += 1;
                        let seq = self.routes[&dst].dst_seq;
                        self.install_path(ctx, dst, Arc::from(p.path), None, seq);
                    }
                    _ => {
                        self.routes.remove(&dst);
                        self.ensure_discovery(ctx, dst);
                    }
                }
            }
            ProtocolKind::Haodv => self.reevaluate(ctx, dst, Some(broken)),
        }
    }

    // ----- H-AODV pipe -------------------------------------------------

    fn notify_tick(&mut self, ctx: &mut Ctx, src: NodeId) {
        let art = self.art();
        let compress = self.c().haodv.clique_compression;
        let hello = self.c().timers.hello_interval;
        let Some(sink) = self.sinks.get_mut(&src) else { return };
        if ctx.now.secs_since(sink.last_data) > art {
            sink.notify_running = false;
            return;
        }
        sink.notify_seq += 1;
        let hops: Vec<NodeId> = sink.path.iter().rev().copied().collect();
        let route = TravelRoute::new(hops);
        let next = route.next();
        let ns = NotifySource {
            flow_src: src,
            flow_dst: self.id,
            seq: sink.notify_seq,
            route,
            etd: ctx.pst,
            payload: encode(&Topology::new(), compress),
        };
        ctx.counters().notify_sent += 1;
        let pkt = ctx.control(src, next, Payload::NotifySource(Box::new(ns)));
        ctx.send(pkt);
        ctx.set_timer(hello, Timer::NotifySource { src });
    }

    fn handle_notify(&mut self, ctx: &mut Ctx, mut ns: NotifySource) {
        if ns.route.next() != Some(self.id) {
            return;
        }
        ns.route.advance();
        let Ok(mut topo) = decode(&ns.payload) else { return };
        ns.etd += ctx.pst;
        if ns.route.at_end() {
            self.last_report = Some((topo.clone(), ctx.now));
            self.notify_at_source(ctx, ns, topo);
            return;
        }
        topo.merge(&self.own_star(ctx));
        ns.payload = encode(&topo, self.c().haodv.clique_compression);
        self.flow_etd.insert((ns.flow_src, ns.flow_dst), ns.etd);
        self.last_report = Some((topo, ctx.now));
        let next = ns.route.next();
        let pkt = ctx.control(ns.flow_src, next, Payload::NotifySource(Box::new(ns)));
        ctx.send(pkt);
    }

    fn notify_at_source(&mut self, ctx: &mut Ctx, ns: NotifySource, topo: Topology) {
        let dst = ns.flow_dst;
        let Some(route) = self.routes.get(&dst) else { return };
        let reported: Vec<NodeId> = ns.route.hops.iter().rev().copied().collect();
        if *route.path != reported[..] {
            return;
        }
        ctx.counters().pipe_nodes_sum += topo.nodes.len() as u64;
        ctx.counters().pipe_links_sum += topo.links.len() as u64;
        let anchor = route.path.to_vec();
        self.flow_etd.insert((self.id, dst), ns.etd);
        self.pipes.insert(
            dst,
            PipeGraph { topology: topo, anchor, width: self.c().haodv.pipe_width, freshness: ctx.now },
        );
        self.reevaluate(ctx, dst, None);
    }

    /// Checks the active route to `dst` against the degradation conditions
    /// and switches within the pipe or rediscovers as needed.
    fn reevaluate(&mut self, ctx: &mut Ctx, dst: NodeId, loss: Option<(NodeId, NodeId)>) {
        let now = ctx.now;
        let Some(route) = self.routes.get(&dst) else { return };
        let current = route.path.to_vec();
        let h = self.c().haodv.clone();
        let ttl = self.cfg.flow_ttl;
        let pipe = self.pipes.get(&dst).filter(|p| p.is_fresh(now, self.pipe_max_age()));
        let installed_rlt = route
            .metrics
            .map(|m| if m.rlt >= crate::mobility::LLT_MAX { m.rlt } else { m.rlt - now.secs_since(route.installed_at) });
        let cur_rlt = pipe
            .and_then(|p| p.metrics_of(&current, now))
            .map(|m| m.rlt)
            .or(installed_rlt)
            .unwrap_or(0.0);
        let cur_etd = self.flow_etd.get(&(self.id, dst)).copied().unwrap_or(0.0);
        let degraded = loss.is_some() || cur_rlt < h.rlt_min || cur_etd > h.eta * ttl;
        if !degraded {
            return;
        }
        let mut cands: Vec<(Vec<NodeId>, RouteMetrics)> = Vec::new();
        if let Some(p) = pipe {
            let max_hops = current.len() - 1 + 2 * h.pipe_width as usize;
            let (routes, truncated) = p.routes(self.id, dst, max_hops, h.max_pipe_paths, now);
            let c = ctx.counters();
            c.pipe_searches += 1;
            c.routes_computed += 1;
            if truncated {
                c.pipe_truncations += 1;
            }
            cands = routes;
        }
        if let Some((a, b)) = loss {
            let k = (a.min(b), a.max(b));
            cands.retain(|(p, _)| !links_of(p).contains(&k));
        }
        cands.retain(|(p, _)| self.neighbors.contains(p[1]));
        let cur_idx = cands.iter().position(|(p, _)| *p == current);
        if loss.is_none() && cur_idx.is_none() {
            let m = pipe.and_then(|p| p.metrics_of(&current, now)).unwrap_or(RouteMetrics {
                hc: current.len() - 1,
                rlt: cur_rlt,
                etd: cur_etd,
                il_r: route.metrics.map_or(0, |m| m.il_r),
            });
            cands.push((current.clone(), m));
        }
        let cur_idx = cands.iter().position(|(p, _)| *p == current);
        let metrics: Vec<RouteMetrics> = cands.iter().map(|c| c.1).collect();
        let choice = select_route(&metrics, ttl, h.delta, self.weights()).and_then(|sel| {
            if Some(sel.index) == cur_idx {
                return None;
            }
            if sel.fallback {
                return loss.is_some().then_some(sel.index);
            }
            match cur_idx {
                Some(ci) if metrics[ci].rlt > ttl + h.delta => {
                    let feasible: Vec<usize> =
                        (0..metrics.len()).filter(|&i| metrics[i].rlt > ttl + h.delta).collect();
                    let sub: Vec<RouteMetrics> = feasible.iter().map(|&i| metrics[i]).collect();
                    let costs = route_costs(&sub, self.weights());
                    let pos = |i| feasible.iter().position(|&f| f == i).unwrap();
                    let (c_new, c_cur) = (costs[pos(sel.index)], costs[pos(ci)]);
                    (c_new <= (1.0 - h.switch_margin) * c_cur).then_some(sel.index)
                }
                _ => Some(sel.index),
            }
        });
        match choice {
            Some(i) => {
                let (path, m) = cands.swap_remove(i);
                debug_assert!(pipe.is_some_and(|p| path.windows(2).all(|l| p.topology.has_link(l[0], l[1]))));
                ctx.counters().route_switches += 1;
                let seq = route.dst_seq;
                self.install_path(ctx, dst, Arc::from(path), Some(m), seq);
            }
            None => {
                if loss.is_some() {
                    self.routes.remove(&dst);
                }
                self.ensure_discovery(ctx, dst);
            }
        }
    }

    fn corroborated(&self, n: NodeId, now: SimTime) -> bool {
        let window = self.c().haodv.corroboration_window;
        self.last_report.as_ref().is_some_and(|(t, at)| {
            now.secs_since(*at) <= window && t.link(self.id, n).is_some_and(|l| l.active)
        })
    }

    fn downstream_of_active_route(&self, n: NodeId, now: SimTime) -> bool {
        self.relays.values().any(|r| r.next() == Some(n) && self.recent(r.last_used, now))
    }

    // ----- LEPR monitoring ---------------------------------------------

    fn lepr_monitor(&mut self, ctx: &mut Ctx) {
        let now = ctx.now;
        let hello = self.c().timers.hello_interval;
        if self.last_rswt.is_some_and(|t| now.secs_since(t) < hello) {
            return;
        }
        let lp = self.c().lepr.clone();
        let mut report: Option<(NodeId, NodeId, f64, Vec<NodeId>)> = None;
        for r in self.relays.values() {
            if r.index == 0 || r.index + 1 >= r.path.len() || !self.recent(r.last_used, now) {
                continue;
            }
            let mut links = vec![r.path[r.index + 1]];
            if lp.monitored_links == MonitoredLinks::Both {
                links.push(r.path[r.index - 1]);
            }
            let worst = links
                .iter()
                .filter_map(|&n| self.stability_with(ctx, n))
                .fold(f64::INFINITY, f64::min);
            if needs_rswt(worst, lp.k) {
                report = Some((r.path[0], *r.path.last().unwrap(), worst, r.path[r.index..].to_vec()));
                break;
            }
        }
        if let Some((source, dst, stability, hops)) = report {
            self.last_rswt = Some(now);
            ctx.counters().rswt_sent += 1;
            let route = TravelRoute::new(hops);
            let next = route.next();
            let rswt = Rswt { source, dst, reporter: self.id, stability, route };
            let pkt = ctx.control(dst, next, Payload::Rswt(Box::new(rswt)));
            ctx.send(pkt);
        }
    }

    fn handle_rswt(&mut self, ctx: &mut Ctx, mut rswt: Rswt) {
        if rswt.route.next() != Some(self.id) {
            return;
        }
        rswt.route.advance();
        if !rswt.route.at_end() {
            let next = rswt.route.next();
            let pkt = ctx.control(rswt.dst, next, Payload::Rswt(Box::new(rswt)));
            ctx.send(pkt);
            return;
        }
        let hello = self.c().timers.hello_interval;
        let Some(sink) = self.sinks.get_mut(&rswt.source) else { return };
        if sink.last_refresh.is_some_and(|t| ctx.now.secs_since(t) < hello) {
            return;
        }
        sink.last_refresh = Some(ctx.now);
        let mut paths: Vec<Vec<NodeId>> = vec![sink.path.to_vec()];
        if let Some((_, replied)) = self.lepr_replied.get(&rswt.source) {
            for p in replied {
                if !paths.contains(p) {
                    paths.push(p.clone());
                }
            }
        }
        for forward in paths {
            let hops: Vec<NodeId> = forward.iter().rev().copied().collect();
            let route = TravelRoute::new(hops);
            let next = route.next();
            let rrep = Rrep {
                requester: rswt.source,
                responder: self.id,
                rreq_id: 0,
                dst_seq: self.seq,
                route,
                etd: 0.0,
                il: 0,
                llts: Vec::new(),
                stability: Some(1.0),
                refresh: true,
            };
            let pkt = ctx.control(rswt.source, next, Payload::Rrep(Box::new(rrep)));
            ctx.send(pkt);
        }
    }

    fn close_refresh_window(&mut self, ctx: &mut Ctx, dst: NodeId) {
        let refreshed = self.refresh_windows.remove(&dst).unwrap_or_default();
        let lp = self.c().lepr.clone();
        let Some(route) = self.routes.get(&dst) else { return };
        let current = route.path.to_vec();
        let seq = route.dst_seq;
        let Some(cache) = self.lepr_caches.get_mut(&dst) else { return };
        let primary_ok = refreshed.contains(&current)
            && cache.primary.as_ref().is_some_and(|p| p.path == current && p.stability >= lp.k);
        if primary_ok {
            return;
        }
        ctx.counters().routes_computed += 1;
        if cache.switch(lp.k_prime) {
            let p = cache.primary.clone().unwrap();
            if self.neighbors.contains(p.path[1]) {
                ctx.counters().route_switches += 1;
                self.install_path(ctx, dst, Arc::from(p.path), None, seq);
                return;
            }
        }
        self.ensure_discovery(ctx, dst);
    }

    // ----- Periodic housekeeping ---------------------------------------

    fn liveness(&mut self, ctx: &mut Ctx) {
        let now = ctx.now;
        let timeout = self.c().timers.neighbor_timeout();
        let hello = self.c().timers.hello_interval;
        for n in self.neighbors.silent(now, timeout) {
            let deferred = self.neighbors.get(n).and_then(|e| e.loss_deferred_until);
            match deferred {
                Some(until) if now < until => continue,
                Some(_) => {}
                None => {
                    if self.kind() == ProtocolKind::Haodv
                        && self.downstream_of_active_route(n, now)
                        && self.corroborated(n, now)
                    {
                        self.neighbors.get_mut(n).unwrap().loss_deferred_until =
                            Some(now + SimTime::from_secs_f64(hello));
                        ctx.counters().loss_deferrals += 1;
                        continue;
                    }
                }
            }
            self.link_lost(ctx, n);
        }
        let dsts: Vec<NodeId> = self.pending.keys().copied().collect();
        for dst in dsts {
            let q = self.pending.get_mut(&dst).unwrap();
            while q.front().is_some_and(|p| p.is_expired(now)) {
                let p = q.pop_front().unwrap();
                ctx.drop_data(p, LossCause::NoRoute);
            }
            if q.is_empty() {
                self.pending.remove(&dst);
            }
        }
        let art = self.art();
        let keep = |t: &SimTime| now.secs_since(*t) <= 2.0 * art;
        self.relays.retain(|_, r| keep(&r.last_used));
        self.out_links.retain(|_, t| keep(t));
        self.in_links.retain(|_, t| keep(t));
        self.rerr_recent.retain(|_, t| now.secs_since(*t) <= hello);
        if self.kind() == ProtocolKind::Lepr {
            self.lepr_monitor(ctx);
        }
        ctx.set_timer(self.c().timers.liveness_check, Timer::Liveness);
    }
}

/// What a node knows locally about interference around itself.
struct LocalView<'a> {
    r: &'a Router,
    now: SimTime,
}

impl InterferenceView for LocalView<'_> {
    fn il(&self, node: NodeId) -> u32 {
        if node == self.r.id {
            self.r.own_il(self.now)
        } else {
            self.r.neighbors.get(node).map_or(0, |e| e.il as u32)
        }
    }

    fn hears(&self, node: NodeId, other: NodeId) -> bool {
        if node == other {
            return true;
        }
        if node == self.r.id {
            return self.r.neighbors.contains(other);
        }
        if other == self.r.id {
            return self.r.neighbors.contains(node);
        }
        self.r.neighbors.get(node).and_then(|e| e.records.as_ref()).is_some_and(|(recs, _)| recs.iter().any(|x| x.id == other))
    }

    fn link_active(&self, from: NodeId, to: NodeId) -> bool {
        if from == self.r.id {
            return self.r.out_links.get(&to).is_some_and(|&t| self.r.recent(t, self.now));
        }
        self.r
            .neighbors
            .get(from)
            .and_then(|e| e.records.as_ref())
            .is_some_and(|(recs, _)| recs.iter().any(|x| x.id == to && x.link_active))
    }
}

impl Agent for Router {
    fn protocol(&self) -> ProtocolKind {
        self.kind()
    }

    fn start(&mut self, ctx: &mut Ctx) {
        let phase = ctx.rng.random_range(0.0..self.c().timers.liveness_check);
        ctx.set_timer(phase, Timer::Liveness);
    }

    fn on_hello_tick(&mut self, ctx: &mut Ctx) {
        let hello = self.build_hello(ctx);
        self.traj_dirty = false;
        let pkt = ctx.control(self.id, None, Payload::Hello(Box::new(hello)));
        ctx.send(pkt);
    }

    fn on_trajectory_change(&mut self, ctx: &mut Ctx) {
        if self.kind() != ProtocolKind::Aodv {
            self.neighbors.update_all_llt(&ctx.own, ctx.range, ctx.now);
            self.traj_dirty = true;
        }
    }

    fn on_originate(&mut self, ctx: &mut Ctx, pkt: Packet) {
        self.originate(ctx, pkt);
    }

    fn on_receive(&mut self, ctx: &mut Ctx, pkt: Packet) {
        let from = pkt.prev_hop;
        if let Payload::Hello(h) = &pkt.payload {
            let new = self.neighbors.apply_hello(from, h, ctx.now);
            if self.kind() != ProtocolKind::Aodv {
                if new {
                    self.traj_dirty = true;
                }
                if h.trajectory.is_some() || self.neighbors.get(from).is_some_and(|e| e.llt.is_none()) {
                    self.neighbors.update_llt(from, &ctx.own, ctx.range, ctx.now);
                }
            }
            return;
        }
        if self.neighbors.heard(from, ctx.now) && self.kind() != ProtocolKind::Aodv {
            self.traj_dirty = true;
        }
        match pkt.payload {
            Payload::Data(_) => self.handle_data(ctx, from, pkt),
            Payload::Rreq(r) => self.handle_rreq(ctx, from, *r),
            Payload::Rrep(r) => self.handle_rrep(ctx, from, *r),
            Payload::Rerr(r) => self.handle_rerr(ctx, *r),
            Payload::NotifySource(n) => self.handle_notify(ctx, *n),
            Payload::Rswt(r) => self.handle_rswt(ctx, *r),
            Payload::Hello(_) => unreachable!(),
        }
    }

    fn on_overhear(&mut self, ctx: &mut Ctx, from: NodeId) {
        self.neighbors.refresh(from, ctx.now);
    }

    fn on_unicast_failure(&mut self, ctx: &mut Ctx, pkt: Packet, cause: LossCause) {
        let Some(lost) = pkt.next_hop else { return };
        let own_data = pkt.kind() == PacketKind::Data && pkt.src == self.id;
        let relayed_data = pkt.kind() == PacketKind::Data && !own_data;
        if relayed_data {
            ctx.drop_data(pkt.clone(), cause);
        }
        self.link_lost(ctx, lost);
        if own_data {
            self.originate(ctx, pkt);
        }
    }

    fn on_purged(&mut self, ctx: &mut Ctx, pkts: Vec<Packet>) {
        for p in pkts {
            if p.src == self.id {
                self.originate(ctx, p);
            } else {
                ctx.drop_data(p, LossCause::LinkBreak);
            }
        }
    }

    fn on_timer(&mut self, ctx: &mut Ctx, timer: Timer) {
        match timer {
            Timer::Liveness => self.liveness(ctx),
            Timer::RrepWindow { dst } => self.close_rrep_window(ctx, dst),
            Timer::DiscoveryTimeout { dst, rreq_id } => {
                let expired = self
                    .discoveries
                    .get(&dst)
                    .is_some_and(|d| d.rreq_id == rreq_id && !d.window_open);
                if expired {
                    self.discoveries.remove(&dst);
                    self.limiter.record_failure(dst);
                    ctx.counters().discovery_failures += 1;
                    if self.pending.get(&dst).is_some_and(|q| !q.is_empty()) {
                        self.ensure_discovery(ctx, dst);
                    }
                }
            }
            Timer::RetryDiscovery { dst } => {
                self.retry_scheduled.remove(&dst);
                let waiting = self.pending.get(&dst).is_some_and(|q| !q.is_empty());
                let degraded = self.routes.contains_key(&dst) && self.kind() == ProtocolKind::Haodv;
                if waiting || (degraded && !self.route_usable(dst, ctx.now)) {
                    self.ensure_discovery(ctx, dst);
                }
            }
            Timer::NotifySource { src } => self.notify_tick(ctx, src),
            Timer::RefreshWindow { dst } => self.close_refresh_window(ctx, dst),
            Timer::Custom(_) => {}
        }
    }

    fn survivability_etd(&self, pkt: &Packet, own_pst: f64) -> Option<f64> {
        if pkt.kind() != PacketKind::Data {
            return None;
        }
        match self.kind() {
            ProtocolKind::Haodv => {
                let etd = self.flow_etd.get(&(pkt.src, pkt.dst)).copied().unwrap_or(own_pst);
                Some(etd.max(ETD_FLOOR))
            }
            _ if self.c().aoi_queue_for_baselines => Some(own_pst.max(ETD_FLOOR)),
            _ => None,
        }
    }

    fn buffered_data(&self) -> Vec<&Packet> {
        self.pending.values().flat_map(|q| q.iter()).collect()
    }
}
