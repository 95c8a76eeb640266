//! Smooth-turn mobility for fixed-wing UAVs and link-lifetime prediction.
//!
//! A node flies either straight or around a circle that is tangent to its
//! current heading. Each maneuver lasts an exponentially distributed time;
//! the signed curvature of a new maneuver is drawn from a zero-mean Gaussian,
//! its sign selecting the rotation direction. Maneuvers that would leave the
//! simulation area are resampled, falling back to a re-aim toward the area
//! center.

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{wrap_angle, Vec2};
use crate::kernel::SimTime;

/// Link lifetime reported when no break is predicted within the horizon.
pub const LLT_MAX: f64 = 3600.0;

const LLT_GRID_STEP: f64 = 0.05;
const LLT_RESOLUTION: f64 = 1e-3;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Clockwise,
    CounterClockwise,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Clockwise => -1.0,
            Direction::CounterClockwise => 1.0,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Motion {
    Straight,
    Turn { center: Vec2, radius: f64, direction: Direction },
}

/// Motion state of one node at a reference instant.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub position: Vec2,
    /// Heading in radians, counter-clockwise from +x.
    pub heading: f64,
    pub speed: f64,
    pub motion: Motion,
    pub maneuver_until: SimTime,
}

impl Trajectory {
    pub fn straight(position: Vec2, heading: f64, speed: f64, maneuver_until: SimTime) -> Self {
        Trajectory { position, heading, speed, motion: Motion::Straight, maneuver_until }
    }

    /// A turn entered tangentially from `position` along `heading`.
    pub fn turn(
        position: Vec2,
        heading: f64,
        speed: f64,
        radius: f64,
        direction: Direction,
        maneuver_until: SimTime,
    ) -> Self {
        let normal = Vec2::from_angle(heading).perp() * direction.sign();
        let center = position + normal * radius;
        Trajectory {
            position,
            heading,
            speed,
            motion: Motion::Turn { center, radius, direction },
            maneuver_until,
        }
    }

    pub fn is_turning(&self) -> bool {
        matches!(self.motion, Motion::Turn { .. })
    }

    pub fn velocity(&self) -> Vec2 {
        Vec2::from_angle(self.heading) * self.speed
    }

    /// Signed angular rate in rad/s; zero for straight flight.
    pub fn angular_rate(&self) -> f64 {
        match self.motion {
            Motion::Straight => 0.0,
            Motion::Turn { radius, direction, .. } => direction.sign() * self.speed / radius,
        }
    }

    /// Advances the state by `dt` seconds along the current maneuver.
    ///
    /// The update is closed-form, so stepping twice by `dt` matches a single
    /// step of `2 dt` up to rounding.
    pub fn step(&self, dt: f64) -> Trajectory {
        debug_assert!(dt >= 0.0, "negative step");
        let mut next = *self;
        match self.motion {
            Motion::Straight => {
                next.position = self.position + Vec2::from_angle(self.heading) * (self.speed * dt);
            }
            Motion::Turn { center, radius, .. } => {
                let dtheta = self.angular_rate() * dt;
                let phase = (self.position - center).angle() + dtheta;
                next.position = center + Vec2::from_angle(phase) * radius;
                next.heading = wrap_angle(self.heading + dtheta);
            }
        }
        next
    }

    /// Position after `dt` seconds without building a full state.
    pub fn position_after(&self, dt: f64) -> Vec2 {
        self.step(dt).position
    }
}

/// Functional form of [`Trajectory::step`].
pub fn step_trajectory(traj: &Trajectory, dt: f64) -> Trajectory {
    traj.step(dt)
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Area {
    pub width: f64,
    pub height: f64,
}

impl Area {
    pub fn contains(&self, p: Vec2) -> bool {
        self.contains_with_margin(p, 0.0)
    }

    pub fn contains_with_margin(&self, p: Vec2, margin: f64) -> bool {
        p.x >= margin && p.y >= margin && p.x <= self.width - margin && p.y <= self.height - margin
    }

    pub fn center(&self) -> Vec2 {
        Vec2::new(self.width / 2.0, self.height / 2.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MobilityParams {
    pub area: Area,
    /// Ground speed in m/s, constant for the run.
    pub speed: f64,
    /// Standard deviation of the signed curvature (1/m).
    pub inv_radius_sigma: f64,
    /// Mean maneuver duration (s).
    pub mean_duration: f64,
    pub min_radius: f64,
    /// Curvatures below `1/straight_radius` are flown straight.
    pub straight_radius: f64,
    pub max_resamples: u32,
    /// Clearance kept from the area boundary (m).
    pub edge_margin: f64,
}

impl Default for MobilityParams {
    fn default() -> Self {
        MobilityParams {
            area: Area { width: 8000.0, height: 8000.0 },
            speed: 20.0,
            inv_radius_sigma: 1.0 / 2500.0,
            mean_duration: 5.0,
            min_radius: 100.0,
            straight_radius: 20_000.0,
            max_resamples: 8,
            edge_margin: 1.0,
        }
    }
}

const MIN_MANEUVER_SECS: f64 = 0.1;

fn draw_candidate<R: Rng + ?Sized>(
    rng: &mut R,
    params: &MobilityParams,
    position: Vec2,
    heading: f64,
    now: SimTime,
) -> (Trajectory, f64) {
    let curvature = Normal::new(0.0, params.inv_radius_sigma)
        .expect("sigma must be finite and non-negative")
        .sample(rng);
    let duration = Exp::new(1.0 / params.mean_duration)
        .expect("mean duration must be positive")
        .sample(rng)
        .max(MIN_MANEUVER_SECS);
    let until = now + SimTime::from_secs_f64(duration);
    let traj = if curvature.abs() < 1.0 / params.straight_radius {
        Trajectory::straight(position, heading, params.speed, until)
    } else {
        let radius = (1.0 / curvature.abs()).max(params.min_radius);
        let dir = if curvature > 0.0 { Direction::CounterClockwise } else { Direction::Clockwise };
        Trajectory::turn(position, heading, params.speed, radius, dir, until)
    };
    (traj, until.secs_since(now))
}

/// Whether the maneuver stays at least `margin` inside `area` over `(0, duration]`.
pub fn stays_inside(traj: &Trajectory, duration: f64, area: &Area, margin: f64) -> bool {
    match traj.motion {
        Motion::Straight => {
            let end = traj.position_after(duration);
            // Convex area: the segment stays inside once the endpoint does.
            area.contains_with_margin(end, margin)
        }
        Motion::Turn { center, radius, .. } => {
            if area.contains_with_margin(center + Vec2::new(radius, radius), margin)
                && area.contains_with_margin(center - Vec2::new(radius, radius), margin)
            {
                return true;
            }
            // Sagitta of a chord of length v*h is (v h)^2 / (8 r); keep it under
            // half the margin so the arc cannot bulge outside between samples.
            let h_max = (4.0 * radius * margin).sqrt() / traj.speed.max(1e-9);
            let h = h_max.min(0.5);
            let mut t = h;
            while t < duration {
                if !area.contains_with_margin(traj.position_after(t), margin) {
                    return false;
                }
                t += h;
            }
            area.contains_with_margin(traj.position_after(duration), margin)
        }
    }
}

/// Draws the next maneuver from the current `position` and `heading`.
///
/// Candidates that would leave the area are redrawn up to
/// `params.max_resamples` times; if all fail, the node is re-aimed straight at
/// the area center for at most the time it takes to get there.
pub fn sample_maneuver<R: Rng + ?Sized>(
    rng: &mut R,
    params: &MobilityParams,
    position: Vec2,
    heading: f64,
    now: SimTime,
) -> Trajectory {
    let mut last_duration = params.mean_duration;
    for _ in 0..=params.max_resamples {
        let (cand, duration) = draw_candidate(rng, params, position, heading, now);
        last_duration = duration;
        if stays_inside(&cand, duration, &params.area, params.edge_margin) {
            return cand;
        }
    }
    let to_center = params.area.center() - position;
    let dist = to_center.norm();
    let aim = if dist > 1e-9 { to_center.angle() } else { heading };
    let reach = dist / params.speed.max(1e-9);
    let duration = last_duration.min(reach).max(MIN_MANEUVER_SECS);
    Trajectory::straight(position, aim, params.speed, now + SimTime::from_secs_f64(duration))
}

/// Uniform initial placement with a uniform heading.
pub fn initial_state<R: Rng + ?Sized>(rng: &mut R, params: &MobilityParams) -> (Vec2, f64) {
    let m = params.edge_margin.max(1.0) * 2.0;
    let x = rng.random_range(m..params.area.width - m);
    let y = rng.random_range(m..params.area.height - m);
    let heading = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    (Vec2::new(x, y), heading)
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LltEstimate {
    /// Predicted seconds until the link breaks, measured from `computed_at`.
    pub value: f64,
    pub computed_at: SimTime,
}

impl LltEstimate {
    pub fn is_capped(&self) -> bool {
        self.value >= LLT_MAX
    }

    /// Lifetime left at `now`; capped estimates never decay.
    pub fn remaining(&self, now: SimTime) -> f64 {
        if self.is_capped() {
            LLT_MAX
        } else {
            (self.value - now.secs_since(self.computed_at)).max(0.0)
        }
    }

    pub fn expires_at(&self) -> Option<SimTime> {
        (!self.is_capped()).then(|| self.computed_at + SimTime::from_secs_f64(self.value))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MobilityError {
    #[error("nodes are {distance:.1} m apart, beyond range {range:.1} m")]
    OutOfRange { distance: f64, range: f64 },
}

/// Earliest time at which the separation of `a` and `b` exceeds `range`,
/// assuming both keep their current maneuver indefinitely.
///
/// Both trajectories must describe the same instant `now`.
pub fn predict_llt(
    a: &Trajectory,
    b: &Trajectory,
    range: f64,
    now: SimTime,
) -> Result<LltEstimate, MobilityError> {
    let d0 = a.position.dist(b.position);
    if d0 > range {
        return Err(MobilityError::OutOfRange { distance: d0, range });
    }
    let value = match (a.motion, b.motion) {
        (Motion::Straight, Motion::Straight) => straight_pair_llt(a, b, range),
        _ => scanned_llt(a, b, range),
    };
    Ok(LltEstimate { value: value.min(LLT_MAX), computed_at: now })
}

fn straight_pair_llt(a: &Trajectory, b: &Trajectory, range: f64) -> f64 {
    let r0 = b.position - a.position;
    let v = b.velocity() - a.velocity();
    let qa = v.norm_sq();
    if qa < 1e-12 {
        return LLT_MAX;
    }
    let qb = 2.0 * r0.dot(v);
    let qc = r0.norm_sq() - range * range;
    let disc = (qb * qb - 4.0 * qa * qc).max(0.0);
    // qc <= 0 so the larger root is the non-negative exit time.
    let t = (-qb + disc.sqrt()) / (2.0 * qa);
    t.max(0.0)
}

/// Separation is Lipschitz with constant `|v_a| + |v_b|`, so stepping by the
/// current slack over that bound cannot jump past a crossing. The step never
/// drops below the 50 ms grid; bisection then refines to 1 ms.
fn scanned_llt(a: &Trajectory, b: &Trajectory, range: f64) -> f64 {
    let sep = |t: f64| a.position_after(t).dist(b.position_after(t));
    let vmax = (a.speed + b.speed).max(1e-9);

    let mut horizon = LLT_MAX;
    if let (Motion::Turn { center: ca, radius: ra, .. }, Motion::Turn { center: cb, radius: rb, .. }) =
        (a.motion, b.motion)
    {
        if ca.dist(cb) + ra + rb <= range {
            return LLT_MAX;
        }
        let wa = a.angular_rate().abs();
        let wb = b.angular_rate().abs();
        if ((wa - wb) / wa.max(wb)).abs() < 1e-12 {
            // Equal periods make the separation periodic: one revolution decides.
            horizon = (std::f64::consts::TAU / wa + LLT_GRID_STEP).min(LLT_MAX);
        }
    }

    let mut lo = 0.0;
    let mut hi = None;
    let mut t = 0.0;
    while t < horizon {
        let slack = range - sep(t);
        if slack < 0.0 {
            hi = Some(t);
            break;
        }
        lo = t;
        t += (slack / vmax).max(LLT_GRID_STEP);
    }
    let Some(mut hi) = hi.or_else(|| (sep(horizon) > range && horizon < LLT_MAX).then_some(horizon))
    else {
        return LLT_MAX;
    };
    while hi - lo > LLT_RESOLUTION {
        let mid = 0.5 * (lo + hi);
        if sep(mid) > range {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::stream_rng;
    use std::f64::consts::PI;

    fn at(s: f64) -> SimTime {
        SimTime::from_secs_f64(s)
    }

    #[test]
    fn half_circle_reaches_opposite_point() {
        let t = Trajectory::turn(Vec2::new(0.0, 0.0), 0.0, 20.0, 1000.0, Direction::CounterClockwise, at(1e4));
        let Motion::Turn { center, .. } = t.motion else { unreachable!() };
        assert!((center - Vec2::new(0.0, 1000.0)).norm() < 1e-9);
        let end = t.step(PI * 1000.0 / 20.0);
        assert!((end.position - Vec2::new(0.0, 2000.0)).norm() < 1e-6);
        assert!((end.position.dist(center) - 1000.0).abs() < 1e-6);
    }

    #[test]
    fn straight_displacement() {
        let t = Trajectory::straight(Vec2::new(10.0, 10.0), PI / 2.0, 50.0, at(100.0));
        let end = t.step(2.0);
        assert!((end.position - Vec2::new(10.0, 110.0)).norm() < 1e-9);
    }

    #[test]
    fn step_composition() {
        for dir in [Direction::Clockwise, Direction::CounterClockwise] {
            let t = Trajectory::turn(Vec2::new(500.0, 700.0), 1.1, 35.0, 870.0, dir, at(50.0));
            let twice = t.step(3.3).step(3.3);
            let once = t.step(6.6);
            assert!((twice.position - once.position).norm() < 1e-6);
            assert!((wrap_angle(twice.heading - once.heading)).abs() < 1e-9);
        }
    }

    #[test]
    fn clockwise_turn_curves_right() {
        let t = Trajectory::turn(Vec2::ZERO, 0.0, 20.0, 500.0, Direction::Clockwise, at(10.0));
        assert!(t.step(5.0).position.y < 0.0);
    }

    #[test]
    fn edge_node_heading_outward_turns_back() {
        let params = MobilityParams::default();
        let mut rng = stream_rng(1, "edge");
        for _ in 0..200 {
            let pos = Vec2::new(params.area.width - 0.5, 4000.0);
            let m = sample_maneuver(&mut rng, &params, pos, 0.0, SimTime::ZERO);
            let dur = m.maneuver_until.as_secs_f64();
            assert!(dur > 0.0);
            let mut t = 0.0;
            while t <= dur {
                assert!(params.area.contains(m.position_after(t)), "left the area at {t}");
                t += 0.01;
            }
            assert!(m.velocity().x <= 1e-9 || m.is_turning());
        }
    }

    #[test]
    fn straight_sample_has_no_turn_fields() {
        let params = MobilityParams { straight_radius: 1e-6, ..Default::default() };
        let mut rng = stream_rng(3, "straight");
        let m = sample_maneuver(&mut rng, &params, params.area.center(), 0.3, SimTime::ZERO);
        assert_eq!(m.motion, Motion::Straight);
    }

    #[test]
    fn mean_duration_matches_configuration() {
        // Large area so boundary resampling never truncates a draw.
        let params = MobilityParams {
            area: Area { width: 1e7, height: 1e7 },
            ..Default::default()
        };
        let mut rng = stream_rng(11, "duration");
        let n = 10_000;
        let total: f64 = (0..n)
            .map(|_| {
                sample_maneuver(&mut rng, &params, params.area.center(), 0.0, SimTime::ZERO)
                    .maneuver_until
                    .as_secs_f64()
            })
            .sum();
        let mean = total / n as f64;
        assert!((mean - 5.0).abs() / 5.0 < 0.05, "mean {mean}");
    }

    #[test]
    fn parallel_straight_links_never_break() {
        let a = Trajectory::straight(Vec2::new(0.0, 0.0), 0.4, 20.0, at(5.0));
        let b = Trajectory::straight(Vec2::new(300.0, 100.0), 0.4, 20.0, at(5.0));
        let llt = predict_llt(&a, &b, 1000.0, SimTime::ZERO).unwrap();
        assert!(llt.is_capped());
        assert_eq!(llt.remaining(at(100.0)), LLT_MAX);
    }

    #[test]
    fn receding_straight_pair() {
        let a = Trajectory::straight(Vec2::new(0.0, 0.0), PI, 20.0, at(5.0));
        let b = Trajectory::straight(Vec2::new(600.0, 0.0), 0.0, 20.0, at(5.0));
        let llt = predict_llt(&a, &b, 1000.0, SimTime::ZERO).unwrap();
        assert!((llt.value - 10.0).abs() < 1e-9);
        assert!((llt.remaining(at(4.0)) - 6.0).abs() < 1e-9);
    }

    #[test]
    fn out_of_range_is_rejected() {
        let a = Trajectory::straight(Vec2::new(0.0, 0.0), 0.0, 20.0, at(5.0));
        let b = Trajectory::straight(Vec2::new(1200.0, 0.0), 0.0, 20.0, at(5.0));
        assert!(matches!(
            predict_llt(&a, &b, 1000.0, SimTime::ZERO),
            Err(MobilityError::OutOfRange { .. })
        ));
    }

    #[test]
    fn concentric_small_orbits_are_capped() {
        let a = Trajectory::turn(Vec2::new(0.0, 0.0), 0.0, 20.0, 200.0, Direction::Clockwise, at(5.0));
        let b = Trajectory::turn(Vec2::new(100.0, 0.0), 0.0, 20.0, 150.0, Direction::CounterClockwise, at(5.0));
        assert!(predict_llt(&a, &b, 1000.0, SimTime::ZERO).unwrap().is_capped());
    }

    #[test]
    fn llt_is_symmetric() {
        let a = Trajectory::turn(Vec2::new(100.0, 0.0), 0.2, 20.0, 900.0, Direction::Clockwise, at(5.0));
        let b = Trajectory::straight(Vec2::new(-300.0, 250.0), 2.0, 20.0, at(5.0));
        let ab = predict_llt(&a, &b, 1000.0, SimTime::ZERO).unwrap().value;
        let ba = predict_llt(&b, &a, 1000.0, SimTime::ZERO).unwrap().value;
        assert!((ab - ba).abs() < 1e-9);
    }
}
