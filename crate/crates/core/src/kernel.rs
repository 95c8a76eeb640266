//! Discrete-event kernel: fixed-point simulation clock, a cancellable event
//! queue with deterministic tie-breaking, and named seeded random streams.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, AddAssign, Sub};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Simulation time with microsecond resolution.
///
/// Used both for instants and for durations. Integer ticks keep event
/// ordering identical across platforms.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);
    pub const TICKS_PER_SEC: u64 = 1_000_000;

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * Self::TICKS_PER_SEC)
    }

    /// Rounds to the nearest microsecond. Negative and NaN inputs clamp to zero.
    pub fn from_secs_f64(s: f64) -> Self {
        if !(s > 0.0) {
            return SimTime::ZERO;
        }
        let ticks = (s * Self::TICKS_PER_SEC as f64).round();
        if ticks >= u64::MAX as f64 {
            SimTime::MAX
        } else {
            SimTime(ticks as u64)
        }
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / Self::TICKS_PER_SEC as f64
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }

    /// Seconds elapsed from `earlier` to `self`, negative if `earlier` is later.
    pub fn secs_since(self, earlier: SimTime) -> f64 {
        (self.0 as f64 - earlier.0 as f64) / Self::TICKS_PER_SEC as f64
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_add(rhs.0))
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        *self = *self + rhs;
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:06}s", self.0 / Self::TICKS_PER_SEC, self.0 % Self::TICKS_PER_SEC)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KernelError {
    #[error("cannot schedule at {at} before current clock {now}")]
    InPast { at: SimTime, now: SimTime },
    #[error("cannot run backwards to {to} from {now}")]
    RunBackwards { to: SimTime, now: SimTime },
}

/// Handle returned by [`Scheduler::schedule`]; identifies one queued event.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct EventHandle {
    pub fire_at: SimTime,
    pub sequence: u64,
}

/// Event queue ordered by `(fire_at, sequence)`.
///
/// `sequence` is a monotone counter assigned at scheduling time, so events
/// sharing an instant execute in the order they were scheduled.
pub struct Scheduler<E> {
    now: SimTime,
    next_sequence: u64,
    queue: BTreeMap<(SimTime, u64), E>,
    executed: u64,
    cancelled: u64,
}

impl<E> Default for Scheduler<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Scheduler<E> {
    pub fn new() -> Self {
        Scheduler {
            now: SimTime::ZERO,
            next_sequence: 0,
            queue: BTreeMap::new(),
            executed: 0,
            cancelled: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn scheduled_total(&self) -> u64 {
        self.next_sequence
    }

    pub fn executed_total(&self) -> u64 {
        self.executed
    }

    pub fn cancelled_total(&self) -> u64 {
        self.cancelled
    }

    pub fn schedule(&mut self, fire_at: SimTime, event: E) -> Result<EventHandle, KernelError> {
        if fire_at < self.now {
            return Err(KernelError::InPast { at: fire_at, now: self.now });
        }
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.queue.insert((fire_at, sequence), event);
        Ok(EventHandle { fire_at, sequence })
    }

    /// Schedules `delay` after the current clock; never fails.
    pub fn schedule_in(&mut self, delay: SimTime, event: E) -> EventHandle {
        let at = self.now + delay;
        self.schedule(at, event).expect("relative schedule cannot be in the past")
    }

    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        let removed = self.queue.remove(&(handle.fire_at, handle.sequence)).is_some();
        if removed {
            self.cancelled += 1;
        }
        removed
    }

    pub fn is_pending(&self, handle: EventHandle) -> bool {
        self.queue.contains_key(&(handle.fire_at, handle.sequence))
    }

    /// Pops the next event if it fires at or before `limit`, advancing the clock.
    pub fn pop_until(&mut self, limit: SimTime) -> Option<(SimTime, E)> {
        let entry = self.queue.first_entry()?;
        let (at, _) = *entry.key();
        if at > limit {
            return None;
        }
        let event = entry.remove();
        self.now = at;
        self.executed += 1;
        Some((at, event))
    }

    /// Advances the clock to `t` without executing anything. Fails if an
    /// earlier event is still queued or `t` is in the past.
    pub fn advance_to(&mut self, t: SimTime) -> Result<(), KernelError> {
        if t < self.now {
            return Err(KernelError::RunBackwards { to: t, now: self.now });
        }
        if let Some((&(at, _), _)) = self.queue.first_key_value() {
            debug_assert!(at > t, "advance_to skipped a pending event");
        }
        self.now = t;
        Ok(())
    }

    /// Executes every event with `fire_at <= t_end` in order, including events
    /// scheduled by handlers along the way, then sets the clock to `t_end`.
    pub fn run_until<F>(&mut self, t_end: SimTime, mut handler: F) -> Result<u64, KernelError>
    where
        F: FnMut(&mut Scheduler<E>, SimTime, E),
    {
        if t_end < self.now {
            return Err(KernelError::RunBackwards { to: t_end, now: self.now });
        }
        let mut count = 0;
        while let Some((at, event)) = self.pop_until(t_end) {
            handler(self, at, event);
            count += 1;
        }
        self.now = t_end;
        Ok(count)
    }
}

/// Derives an independent ChaCha8 generator from a run seed and a stream label
/// such as `"mobility/node-7"`.
///
/// The derivation hashes `(seed, label)` with SHA-256, so a stream's draws
/// depend only on those two values and not on which other streams exist.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: String,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: impl Into<String>) -> Self {
        RngStream { seed, stream_id: stream_id.into() }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(self.stream_id.as_bytes());
        let digest = hasher.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest[..32]);
        ChaCha8Rng::from_seed(key)
    }
}

/// Shorthand for `RngStream::new(seed, label).rng()`.
pub fn stream_rng(seed: u64, stream_id: &str) -> ChaCha8Rng {
    RngStream::new(seed, stream_id).rng()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn s(x: f64) -> SimTime {
        SimTime::from_secs_f64(x)
    }

    #[test]
    fn forward_schedule_fires_at_requested_time() {
        let mut k: Scheduler<&str> = Scheduler::new();
        k.advance_to(s(1.0)).unwrap();
        let h = k.schedule(s(5.0), "a").unwrap();
        assert_eq!(h.fire_at, s(5.0));
        let mut fired = vec![];
        k.run_until(s(10.0), |_, t, e| fired.push((t, e))).unwrap();
        assert_eq!(fired, vec![(s(5.0), "a")]);
    }

    #[test]
    fn equal_times_execute_in_sequence_order() {
        let mut k: Scheduler<u32> = Scheduler::new();
        let a = k.schedule(s(2.0), 10).unwrap();
        let b = k.schedule(s(2.0), 11).unwrap();
        assert!(a.sequence < b.sequence);
        let mut order = vec![];
        k.run_until(s(3.0), |_, _, e| order.push(e)).unwrap();
        assert_eq!(order, vec![10, 11]);
    }

    #[test]
    fn scheduling_in_the_past_is_rejected() {
        let mut k: Scheduler<()> = Scheduler::new();
        k.advance_to(s(1.0)).unwrap();
        assert_eq!(
            k.schedule(s(0.5), ()),
            Err(KernelError::InPast { at: s(0.5), now: s(1.0) })
        );
    }

    #[test]
    fn cancel_semantics() {
        let mut k: Scheduler<u8> = Scheduler::new();
        let h = k.schedule(s(1.0), 1).unwrap();
        assert!(k.cancel(h));
        assert!(!k.cancel(h));
        let h2 = k.schedule(s(1.0), 2).unwrap();
        k.run_until(s(2.0), |_, _, _| {}).unwrap();
        assert!(!k.cancel(h2));
    }

    #[test]
    fn run_until_on_empty_queue_moves_clock() {
        let mut k: Scheduler<()> = Scheduler::new();
        let n = k.run_until(s(10.0), |_, _, _| {}).unwrap();
        assert_eq!(n, 0);
        assert_eq!(k.now(), s(10.0));
    }

    #[test]
    fn run_until_stops_at_horizon() {
        let mut k: Scheduler<u8> = Scheduler::new();
        for (i, t) in [1.0, 2.0, 3.0].into_iter().enumerate() {
            k.schedule(s(t), i as u8).unwrap();
        }
        assert_eq!(k.run_until(s(2.0), |_, _, _| {}).unwrap(), 2);
        assert_eq!(k.pending(), 1);
        assert_eq!(k.now(), s(2.0));
    }

    #[test]
    fn cascading_events_run_within_horizon() {
        let mut k: Scheduler<&str> = Scheduler::new();
        k.schedule(s(1.0), "parent").unwrap();
        let mut seen = vec![];
        let n = k
            .run_until(s(2.0), |k, _, e| {
                seen.push(e);
                if e == "parent" {
                    k.schedule(s(1.5), "child").unwrap();
                }
            })
            .unwrap();
        assert_eq!(n, 2);
        assert_eq!(seen, vec!["parent", "child"]);
    }

    #[test]
    fn executed_count_balances() {
        let mut k: Scheduler<u32> = Scheduler::new();
        let mut handles = vec![];
        for i in 0..20 {
            handles.push(k.schedule(s(i as f64 * 0.5), i).unwrap());
        }
        k.cancel(handles[3]);
        k.cancel(handles[17]);
        k.run_until(s(6.0), |_, _, _| {}).unwrap();
        let scheduled = k.scheduled_total();
        assert_eq!(
            k.executed_total(),
            scheduled - k.cancelled_total() - k.pending() as u64
        );
    }

    #[test]
    fn time_conversions() {
        assert_eq!(SimTime::from_secs_f64(0.2048).as_micros(), 204_800);
        assert_eq!(SimTime::from_secs_f64(-1.0), SimTime::ZERO);
        assert_eq!(SimTime::from_millis(1500).as_secs_f64(), 1.5);
        assert_eq!(format!("{}", SimTime::from_micros(2_000_001)), "2.000001s");
    }

    #[test]
    fn streams_are_reproducible_and_independent() {
        let a1: Vec<u64> = (0..4).map({
            let mut r = stream_rng(7, "mobility/node-1");
            move |_| r.random()
        }).collect();
        let a2: Vec<u64> = (0..4).map({
            let mut r = stream_rng(7, "mobility/node-1");
            move |_| r.random()
        }).collect();
        let b: Vec<u64> = (0..4).map({
            let mut r = stream_rng(7, "mobility/node-2");
            move |_| r.random()
        }).collect();
        assert_eq!(a1, a2);
        assert_ne!(a1, b);
    }

    #[test]
    fn stream_values_are_pinned() {
        // Guards against accidental changes to the derivation.
        let mut r = stream_rng(42, "traffic/flow-0");
        assert_eq!(r.random::<u64>(), 0x58e2_3d3e_bfec_ec84);
    }
}
