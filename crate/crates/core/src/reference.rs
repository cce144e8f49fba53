//! Rule-based reference policy with privileged state access.
//!
//! Each car follows its lane and accelerates up to its cap, changes lane when
//! a slower car is ahead and a neighbouring lane is free, and brakes when a
//! car ahead in its lane is too close. The lane-change target is latched in
//! [`CarState::target_lane`] until the car has settled in the new lane.

use crate::policies::{QueryKind, QueryLedger};
use crate::sim::{Action, CarId, CarState, WorldState, BRAKE_DECELERATION, CAR_HALF_WIDTH};

/// Lateral PD gain on (offset - lane center) / lane width.
pub const LATERAL_GAIN: f64 = 0.8;
pub const HEADING_GAIN: f64 = 1.2;
/// Distance at which a car ahead in the same lane forces braking, m.
pub const BRAKE_DISTANCE: f64 = 15.0;
/// Distance at which a slower car ahead triggers a lane change, m.
pub const LANE_CHANGE_TRIGGER: f64 = 35.0;
/// A lane is free when no car occupies it within this longitudinal window, m.
pub const FREE_WINDOW: f64 = 25.0;
/// Bumper-to-bumper margin kept on top of the closing-speed stopping distance, m.
pub const STOPPING_MARGIN: f64 = 7.0;
/// While changing lanes, a car this close ahead in the lane being left still forces braking, m.
pub const DEPARTING_LANE_GUARD: f64 = 8.0;
/// A car ahead counts as slower when its speed is below our cap by this margin, m/s.
pub const SLOWER_MARGIN: f64 = 0.5;

const SETTLED_OFFSET: f64 = 0.25;
const SETTLED_HEADING: f64 = 0.05;

/// Planner output: the action plus the lane-change latch to carry forward.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decision {
    pub action: Action,
    pub target_lane: Option<usize>,
}

fn occupies(world: &WorldState, car: &CarState, lane: usize) -> bool {
    let track = &world.track;
    car.target_lane == Some(lane)
        || (car.lateral_offset - track.lane_center(lane)).abs() < 0.5 * track.lane_width() + CAR_HALF_WIDTH
}

/// Nearest car ahead of `me` occupying `lane`: (gap, car).
fn nearest_ahead(world: &WorldState, me: CarId, lane: usize) -> Option<(f64, &CarState)> {
    let s = world.car(me).arc_position;
    world
        .cars()
        .filter(|(id, c)| *id != me && occupies(world, c, lane))
        .map(|(_, c)| (world.track.gap(s, c.arc_position), c))
        .filter(|(g, _)| *g >= 0.0)
        .min_by(|a, b| a.0.total_cmp(&b.0))
}

fn lane_free(world: &WorldState, me: CarId, lane: usize) -> bool {
    let s = world.car(me).arc_position;
    !world
        .cars()
        .any(|(id, c)| id != me && occupies(world, c, lane) && world.track.gap(s, c.arc_position).abs() < FREE_WINDOW)
}

/// Braking distance behind `lead`: the fixed brake distance, extended when
/// the closing speed needs more room to stop.
fn brake_distance(car: &CarState, lead: &CarState) -> f64 {
    let closing = (car.speed * car.speed - lead.speed * lead.speed).max(0.0) / (2.0 * BRAKE_DECELERATION);
    BRAKE_DISTANCE.max(closing + STOPPING_MARGIN)
}

/// Full planner step for car `id`: action and updated lane-change latch.
pub fn decide(world: &WorldState, id: CarId) -> Decision {
    let track = &world.track;
    let car = world.car(id);
    let current = track.lane_of(car.lateral_offset);

    let mut target = car.target_lane.filter(|&t| {
        let settled = (car.lateral_offset - track.lane_center(t)).abs() < SETTLED_OFFSET
            && car.heading_error.abs() < SETTLED_HEADING;
        !settled && t < track.lane_count()
    });

    if target.is_none() {
        if let Some((gap, lead)) = nearest_ahead(world, id, current) {
            if gap < LANE_CHANGE_TRIGGER && lead.speed < car.speed_cap - SLOWER_MARGIN {
                // left first, then right
                let candidates = [current.checked_sub(1), Some(current + 1).filter(|&l| l < track.lane_count())];
                target = candidates.into_iter().flatten().find(|&l| lane_free(world, id, l));
            }
        }
    }

    let desired = target.unwrap_or(current);
    let too_close = |lane, floor: f64| {
        nearest_ahead(world, id, lane).is_some_and(|(g, lead)| g < brake_distance(car, lead).min(floor))
    };
    let brake = match target {
        None => too_close(current, f64::INFINITY),
        Some(t) => too_close(t, f64::INFINITY) || too_close(current, DEPARTING_LANE_GUARD),
    };

    let lateral_error = (car.lateral_offset - track.lane_center(desired)) / track.lane_width();
    let steer = -LATERAL_GAIN * lateral_error - HEADING_GAIN * car.heading_error;
    Decision { action: Action::new(steer, brake), target_lane: target }
}

/// The reference action for car `id` at `world`.
pub fn reference_action(world: &WorldState, id: CarId) -> Action {
    decide(world, id).action
}

/// Reference action for the ego car, counted in `ledger` under `kind`.
pub fn query_reference(world: &WorldState, ledger: &mut QueryLedger, kind: QueryKind) -> Action {
    ledger.record(kind, 1);
    reference_action(world, CarId::Ego)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{Segment, Track, TrackSpec, TrackSplit};
    use std::sync::Arc;

    fn straight_loop(lanes: usize) -> Arc<Track> {
        use std::f64::consts::PI;
        Arc::new(
            Track::build(TrackSpec {
                id: "loop".into(),
                split: TrackSplit::Train,
                lane_count: lanes,
                lane_width: 3.5,
                speed_limit: 20.0,
                segments: vec![
                    Segment::Straight { length: 300.0 },
                    Segment::Arc { radius: 60.0, sweep: PI },
                    Segment::Straight { length: 300.0 },
                    Segment::Arc { radius: 60.0, sweep: PI },
                ],
            })
            .unwrap(),
        )
    }

    #[test]
    fn zero_error_gives_zero_action() {
        let t = straight_loop(2);
        let w = WorldState::new(Arc::clone(&t), CarState::in_lane(&t, 10.0, 0, 20.0, 20.0), vec![]);
        let a = reference_action(&w, CarId::Ego);
        assert_eq!(a.steer(), 0.0);
        assert!(!a.brake());
    }

    #[test]
    fn pd_law_values() {
        let t = straight_loop(2);
        let mut ego = CarState::in_lane(&t, 10.0, 1, 20.0, 20.0);
        ego.lateral_offset += 0.35;
        ego.heading_error = 0.1;
        let w = WorldState::new(Arc::clone(&t), ego, vec![]);
        let a = reference_action(&w, CarId::Ego);
        assert!((a.steer() - (-0.8 * 0.1 - 1.2 * 0.1)).abs() < 1e-12);
    }

    #[test]
    fn overtakes_left_when_free() {
        let t = straight_loop(2);
        // ego in the right lane, slower car 20 m ahead, left lane empty
        let ego = CarState::in_lane(&t, 10.0, 1, 20.0, 20.0);
        let slow = CarState::in_lane(&t, 30.0, 1, 10.0, 10.0);
        let w = WorldState::new(Arc::clone(&t), ego, vec![slow]);
        let d = decide(&w, CarId::Ego);
        assert_eq!(d.target_lane, Some(0));
        // lane 0 is to the left, i.e. at larger lateral offset: steer must be positive
        assert!(t.lane_center(0) > t.lane_center(1));
        assert!(d.action.steer() > 0.0);
        assert!(!d.action.brake());
    }

    #[test]
    fn prefers_left_then_right() {
        let t = straight_loop(3);
        let ego = CarState::in_lane(&t, 10.0, 1, 20.0, 20.0);
        let slow = CarState::in_lane(&t, 30.0, 1, 10.0, 10.0);
        let w = WorldState::new(Arc::clone(&t), ego, vec![slow]);
        assert_eq!(decide(&w, CarId::Ego).target_lane, Some(0));
        let blocker = CarState::in_lane(&t, 15.0, 0, 20.0, 20.0);
        let w = WorldState::new(Arc::clone(&t), ego, vec![slow, blocker]);
        assert_eq!(decide(&w, CarId::Ego).target_lane, Some(2));
    }

    #[test]
    fn brakes_when_no_lane_available() {
        let t = straight_loop(1);
        let ego = CarState::in_lane(&t, 10.0, 0, 20.0, 20.0);
        let slow = CarState::in_lane(&t, 20.0, 0, 10.0, 10.0);
        let w = WorldState::new(Arc::clone(&t), ego, vec![slow]);
        let d = decide(&w, CarId::Ego);
        assert_eq!(d.target_lane, None);
        assert!(d.action.brake());
    }

    #[test]
    fn latch_holds_until_settled() {
        let t = straight_loop(2);
        let mut ego = CarState::in_lane(&t, 10.0, 1, 20.0, 20.0);
        ego.target_lane = Some(0);
        ego.lateral_offset = 0.0;
        let w = WorldState::new(Arc::clone(&t), ego, vec![]);
        assert_eq!(decide(&w, CarId::Ego).target_lane, Some(0));
        ego.lateral_offset = t.lane_center(0) - 0.1;
        let w = WorldState::new(Arc::clone(&t), ego, vec![]);
        assert_eq!(decide(&w, CarId::Ego).target_lane, None);
    }

    #[test]
    fn query_counts() {
        let t = straight_loop(2);
        let w = WorldState::new(Arc::clone(&t), CarState::in_lane(&t, 10.0, 0, 20.0, 20.0), vec![]);
        let mut ledger = QueryLedger::default();
        let a = query_reference(&w, &mut ledger, QueryKind::Label);
        assert_eq!(a, reference_action(&w, CarId::Ego));
        assert_eq!(ledger.label_queries(), 1);
        for _ in 0..9 {
            query_reference(&w, &mut ledger, QueryKind::Label);
        }
        for _ in 0..4 {
            query_reference(&w, &mut ledger, QueryKind::Takeover);
        }
        assert_eq!(ledger.label_queries(), 10);
        assert_eq!(ledger.takeover_queries(), 4);
        assert_eq!(ledger.total(), 14);
    }
}
