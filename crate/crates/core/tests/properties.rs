use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use proptest::prelude::*;

use fanet_core::geom::Vec2;
use fanet_core::harness::output::{run_row, summarize};
use fanet_core::harness::{build_network, run_once, ScenarioConfig};
use fanet_core::kernel::{Scheduler, SimTime};
use fanet_core::mobility::{predict_llt, Direction, Trajectory};
use fanet_core::packet::{DataHeader, NodeId, Packet, Payload};
use fanet_core::proto::haodv::metrics::{select_route, CostWeights, RouteMetrics};
use fanet_core::proto::haodv::pipe::{enumerate_simple_paths, neighbors_tracked, pipe_members, Adjacency};
use fanet_core::proto::lepr::{link_disjoint, link_stability, path_stability, CachedRoute, LeprRouteCache};
use fanet_core::proto::ProtocolKind;
use fanet_core::radio::{reorder_and_prune, survivability, MacQueue};

fn traj() -> impl Strategy<Value = Trajectory> {
    traj_at(2000.0..6000.0f64, 2000.0..6000.0f64)
}

/// Two trajectories starting within `range` of each other.
fn pair(range: f64) -> impl Strategy<Value = (Trajectory, Trajectory)> {
    traj().prop_flat_map(move |a| {
        let p = a.position;
        let b = (0.0..range, -3.14..3.14f64)
            .prop_flat_map(move |(r, phi)| {
                let (x, y) = (p.x + r * phi.cos(), p.y + r * phi.sin());
                traj_at(Just(x), Just(y))
            });
        (Just(a), b)
    })
}

fn traj_at(xs: impl Strategy<Value = f64>, ys: impl Strategy<Value = f64>) -> impl Strategy<Value = Trajectory> {
    (
        xs,
        ys,
        -3.14..3.14f64,
        prop_oneof![Just(20.0), Just(50.0)],
        prop_oneof![Just(None), (100.0..3000.0f64, any::<bool>()).prop_map(Some)],
    )
        .prop_map(|(x, y, h, v, turn)| match turn {
            None => Trajectory::straight(Vec2::new(x, y), h, v, SimTime::MAX),
            Some((r, ccw)) => {
                let d = if ccw { Direction::CounterClockwise } else { Direction::Clockwise };
                Trajectory::turn(Vec2::new(x, y), h, v, r, d, SimTime::MAX)
            }
        })
}

fn adjacency(n: usize, edges: &[bool]) -> Adjacency {
    let mut adj: Adjacency = (0..n as NodeId).map(|i| (i, BTreeSet::new())).collect();
    let mut k = 0;
    for a in 0..n {
        for b in a + 1..n {
            if edges[k] {
                adj.get_mut(&(a as NodeId)).unwrap().insert(b as NodeId);
                adj.get_mut(&(b as NodeId)).unwrap().insert(a as NodeId);
            }
            k += 1;
        }
    }
    adj
}

fn data(uid: u64, created_us: u64) -> Packet {
    Packet {
        uid,
        size_bytes: 1024,
        created_at: SimTime::from_micros(created_us),
        ttl: 3.0,
        flow: Some(0),
        src: 0,
        dst: 1,
        prev_hop: 0,
        next_hop: Some(1),
        enqueued_at: SimTime::from_micros(created_us),
        payload: Payload::Data(DataHeader { path: Arc::from(vec![0, 1]), hop: 0 }),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn scheduler_orders_and_counts(times in prop::collection::vec(0u64..500, 1..80), cancel in prop::collection::vec(any::<bool>(), 80)) {
        let mut s = Scheduler::new();
        let handles: Vec<_> = times.iter().enumerate()
            .map(|(i, &t)| s.schedule(SimTime::from_micros(t), i).unwrap())
            .collect();
        let mut cancelled = BTreeSet::new();
        for (i, h) in handles.iter().enumerate() {
            if cancel[i] && s.cancel(*h) {
                cancelled.insert(i);
            }
        }
        let mut out = Vec::new();
        while let Some((t, i)) = s.pop_until(SimTime::from_micros(300)) {
            prop_assert_eq!(t, s.now());
            out.push((t, i));
        }
        let mut want: Vec<(SimTime, usize)> = times.iter().enumerate()
            .filter(|(i, &t)| !cancelled.contains(i) && t <= 300)
            .map(|(i, &t)| (SimTime::from_micros(t), i))
            .collect();
        want.sort();
        prop_assert_eq!(&out, &want);
        prop_assert_eq!(s.executed_total(), s.scheduled_total() - s.cancelled_total() - s.pending() as u64);
    }

    #[test]
    fn llt_is_symmetric_and_brackets_the_break((a, b) in pair(1000.0)) {
        let range = 1000.0;
        let ab = predict_llt(&a, &b, range, SimTime::ZERO).unwrap();
        let ba = predict_llt(&b, &a, range, SimTime::ZERO).unwrap();
        prop_assert!(ab.value >= 0.0);
        prop_assert!((ab.value - ba.value).abs() <= 1e-9, "{} vs {}", ab.value, ba.value);
        if !ab.is_capped() {
            let sep = |t: f64| a.position_after(t).dist(b.position_after(t));
            let eps = 0.01;
            prop_assert!(sep((ab.value - eps).max(0.0)) <= range);
            prop_assert!(sep(ab.value + eps) > range);
        }
    }

    #[test]
    fn stepping_keeps_speed_and_radius(t in traj(), dt in 0.001..5.0f64) {
        let next = t.step(dt);
        if let fanet_core::mobility::Motion::Turn { center, radius, .. } = t.motion {
            prop_assert!((next.position.dist(center) - radius).abs() < 1e-6);
            let chord = next.position.dist(t.position);
            let arc = 2.0 * radius * (chord / (2.0 * radius)).min(1.0).asin();
            // Exact unless the arc passes half a turn, where the chord folds back.
            if t.speed * dt < std::f64::consts::PI * radius * 0.99 {
                prop_assert!((arc / dt - t.speed).abs() / t.speed < 1e-6);
            }
        } else {
            prop_assert!((next.position.dist(t.position) / dt - t.speed).abs() / t.speed < 1e-9);
        }
        prop_assert_eq!(next.speed, t.speed);
    }

    #[test]
    fn queue_respects_capacity_and_orders_by_score(
        cap in 1usize..40,
        ages in prop::collection::vec(0u64..4_000_000, 0..60),
        etd in 0.05..2.0f64,
    ) {
        let now = 10_000_000u64;
        let mut q = MacQueue::new(cap);
        let mut refused = 0;
        for (i, &age) in ages.iter().enumerate() {
            if q.enqueue(data(i as u64, now - age)).is_err() {
                refused += 1;
            }
            prop_assert!(q.len() <= cap);
        }
        prop_assert_eq!(refused as u64, q.tail_drops());
        let t = SimTime::from_micros(now);
        let before = q.len();
        let dropped = q.reorder_and_prune(t, 0.7, |_| Some(etd));
        prop_assert_eq!(q.len() + dropped.len(), before);
        let scores: Vec<f64> = q.iter().map(|p| survivability(p, t, etd)).collect();
        prop_assert!(scores.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(scores.iter().all(|&s| s >= 0.7));
    }

    #[test]
    fn prune_is_idempotent(ages in prop::collection::vec(0u64..4_000_000, 0..40), etd in 0.05..2.0f64) {
        let now = SimTime::from_micros(10_000_000);
        let mut q: VecDeque<Packet> = ages.iter().enumerate().map(|(i, &a)| data(i as u64, 10_000_000 - a)).collect();
        reorder_and_prune(&mut q, now, 0.7, |_| Some(etd));
        let once: Vec<u64> = q.iter().map(|p| p.uid).collect();
        let again = reorder_and_prune(&mut q, now, 0.7, |_| Some(etd));
        prop_assert!(again.is_empty());
        prop_assert_eq!(q.iter().map(|p| p.uid).collect::<Vec<_>>(), once);
    }

    #[test]
    fn lepr_stability_bounds_and_disjoint_cache(
        links in prop::collection::vec((0.0..100.0f64, 0.0..1000.0f64), 1..8),
        paths in prop::collection::vec(prop::collection::vec(0u16..8, 2..6), 1..8),
    ) {
        let s: Vec<f64> = links.iter().map(|&(l, d)| link_stability(l, d, 1000.0, 30.0).unwrap()).collect();
        prop_assert!(s.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(path_stability(&s), s.iter().copied().fold(f64::INFINITY, f64::min));
        let replies: Vec<CachedRoute> = paths.iter().enumerate()
            .map(|(i, p)| {
                let mut p = p.clone();
                p.dedup();
                CachedRoute { path: p, stability: (i as f64 * 0.37) % 1.0 }
            })
            .filter(|r| r.path.len() >= 2)
            .collect();
        let cache = LeprRouteCache::from_replies(&replies, 3);
        let kept: Vec<&CachedRoute> = cache.primary.iter().chain(cache.alternates.iter()).collect();
        for i in 0..kept.len() {
            for j in i + 1..kept.len() {
                prop_assert!(link_disjoint(&kept[i].path, &kept[j].path));
            }
        }
        if let Some(p) = &cache.primary {
            prop_assert!(replies.iter().all(|r| r.stability <= p.stability));
        }
    }

    #[test]
    fn selection_ignores_etd_scale(
        cands in prop::collection::vec((1usize..8, 0.0..20.0f64, 0.001..1.0f64, 0u32..30), 1..8),
        scale in 0.01..100.0f64,
    ) {
        let m: Vec<RouteMetrics> = cands.iter().map(|&(hc, rlt, etd, il_r)| RouteMetrics { hc, rlt, etd, il_r }).collect();
        let scaled: Vec<RouteMetrics> = m.iter().map(|r| RouteMetrics { etd: r.etd * scale, ..*r }).collect();
        let a = select_route(&m, 3.0, 1.0, CostWeights::default()).unwrap();
        let b = select_route(&scaled, 3.0, 1.0, CostWeights::default()).unwrap();
        prop_assert_eq!(a.index, b.index);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn pipe_grows_with_width(n in 4usize..11, edges in prop::collection::vec(prop::bool::weighted(0.35), 45), len in 3usize..6) {
        let adj = adjacency(n, &edges);
        // Take a shortest path from 0 to the farthest reachable node as the route.
        let mut prev: BTreeMap<NodeId, NodeId> = BTreeMap::new();
        let mut order = vec![0 as NodeId];
        let mut i = 0;
        while i < order.len() {
            let u = order[i];
            for &v in &adj[&u] {
                if v != 0 && !prev.contains_key(&v) {
                    prev.insert(v, u);
                    order.push(v);
                }
            }
            i += 1;
        }
        let mut route = vec![*order.last().unwrap()];
        while *route.last().unwrap() != 0 {
            route.push(prev[route.last().unwrap()]);
        }
        route.reverse();
        route.truncate(len);
        prop_assume!(route.len() >= 3);
        let hops = route.len() - 1;
        let (src, dst) = (route[0], route[hops]);
        let mut last_n = vec![0usize; hops - 1];
        let mut last_routes = 0usize;
        for w in 1..=4u32 {
            for (k, slot) in last_n.iter_mut().enumerate() {
                let t = neighbors_tracked(&adj, &route, k + 1, w);
                prop_assert!(t >= *slot);
                *slot = t;
            }
            let (nodes, links) = pipe_members(&adj, &route, w);
            prop_assert!(route.iter().all(|r| nodes.contains(r)));
            let mut sub: Adjacency = nodes.iter().map(|&x| (x, BTreeSet::new())).collect();
            for &(a, b) in &links {
                sub.get_mut(&a).unwrap().insert(b);
                sub.get_mut(&b).unwrap().insert(a);
            }
            let (paths, truncated) = enumerate_simple_paths(&sub, src, dst, hops + 2 * w as usize, 1 << 20);
            prop_assert!(!truncated);
            prop_assert!(paths.len() >= last_routes);
            last_routes = paths.len();
        }
    }

    #[test]
    fn summary_is_permutation_invariant(pdrs in prop::collection::vec(0.0..1.0f64, 2..12), rot in 0usize..12) {
        let cfg = ScenarioConfig::default();
        let mut rows: Vec<_> = pdrs.iter().enumerate().map(|(i, &p)| {
            let mut m = fanet_core::harness::RunMetrics::default();
            m.seed = i as u64;
            m.pdr = p;
            m.control_bytes = (p * 1e6) as u64;
            run_row(&cfg, &m)
        }).collect();
        let a = summarize(&rows).unwrap();
        let k = rot % rows.len();
        rows.rotate_left(k);
        rows.reverse();
        prop_assert_eq!(a, summarize(&rows).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn runs_stay_within_metric_bounds(seed in 1u64..1000, p in 0usize..3, flows in prop_oneof![Just(1usize), Just(3)]) {
        let mut cfg = ScenarioConfig { protocol: ProtocolKind::ALL[p], ..ScenarioConfig::default() };
        cfg.duration = 60.0;
        cfg.traffic.flows = flows;
        let m = run_once(&cfg, seed).unwrap();
        prop_assert!((0.0..=1.0).contains(&m.pdr));
        prop_assert!(m.flows.iter().all(|f| (0.0..=1.0).contains(&f.pdr)));
        let min = cfg.constants.sizes.min_control() as u64;
        prop_assert!(m.control_bytes >= m.control_packets * min);
    }

    #[test]
    fn gate_keeps_an_admissible_path(seed in 1u64..1000) {
        // A small dense swarm: if a path whose links all outlive the gate by a
        // margin exists when the flow starts, discovery must find a route.
        let mut cfg = ScenarioConfig::default();
        cfg.extrapolation = true;
        cfg.node_count = 10;
        cfg.mobility.area.width = 3000.0;
        cfg.mobility.area.height = 3000.0;
        cfg.traffic.flows = 1;
        cfg.duration = 40.0;
        cfg.warmup = 10.0;
        let mut net = build_network(&cfg, seed).unwrap();
        let f = net.flows()[0].clone();
        net.run_until(f.start).unwrap();
        let now = net.now();
        let trajs: Vec<Trajectory> = (0..cfg.node_count).map(|i| net.trajectory(i as NodeId)).collect();
        let need = cfg.ttl + cfg.constants.haodv.delta + 8.0;
        let mut reach = BTreeSet::from([f.src]);
        let mut frontier = vec![f.src];
        while let Some(u) = frontier.pop() {
            for v in 0..cfg.node_count as NodeId {
                if reach.contains(&v) || trajs[u as usize].position.dist(trajs[v as usize].position) > cfg.mac.range {
                    continue;
                }
                let llt = predict_llt(&trajs[u as usize], &trajs[v as usize], cfg.mac.range, now).unwrap();
                if llt.value > need {
                    reach.insert(v);
                    frontier.push(v);
                }
            }
        }
        prop_assume!(reach.contains(&f.dst));
        net.run_until(f.start + SimTime::from_secs(6)).unwrap();
        prop_assert!(net.agent(f.src).route(f.dst).is_some() || net.stats()[0].delivered > 0);
    }
}
