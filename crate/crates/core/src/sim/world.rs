use std::io::Write;
use std::sync::Arc;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::track::Track;
use crate::error::{Error, Result};
use crate::reference;

/// Control period, seconds (30 Hz).
pub const DT: f64 = 1.0 / 30.0;
/// Path curvature per unit steer, rad/m.
pub const K_STEER: f64 = 0.35;
pub const ACCELERATION: f64 = 3.0;
pub const BRAKE_DECELERATION: f64 = 6.0;
pub const COLLISION_RADIUS: f64 = 1.0;
pub const CAR_HALF_WIDTH: f64 = 1.0;
pub const CAR_HALF_LENGTH: f64 = 2.25;

/// Longitudinal spacing of traffic spawn slots within a lane.
pub const SPAWN_SPACING: f64 = 25.0;
/// Stretch around arc position 0 kept free of traffic for the ego spawn.
pub const EGO_CLEARANCE: f64 = 30.0;
/// Traffic speed caps are drawn from this fraction range of the speed limit.
pub const TRAFFIC_CAP_RANGE: (f64, f64) = (0.5, 0.8);
/// Initial ego speed as a fraction of the speed limit.
pub const EGO_START_SPEED: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Action {
    steer: f64,
    brake: bool,
}

impl Action {
    pub fn new(steer: f64, brake: bool) -> Action {
        let steer = if steer.is_nan() { 0.0 } else { steer.clamp(-1.0, 1.0) };
        Action { steer, brake }
    }

    pub fn steer(&self) -> f64 {
        self.steer
    }

    pub fn brake(&self) -> bool {
        self.brake
    }
}

/// Which controller produced an action.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ControllerTag {
    Primary,
    Reference,
}

impl ControllerTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            ControllerTag::Primary => "primary",
            ControllerTag::Reference => "reference",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CarState {
    pub arc_position: f64,
    pub lateral_offset: f64,
    pub heading_error: f64,
    pub speed: f64,
    /// Lane whose center is nearest to the car.
    pub lane_index: usize,
    pub speed_cap: f64,
    /// Lane-change target latched by the reference planner.
    pub target_lane: Option<usize>,
}

impl CarState {
    pub fn in_lane(track: &Track, arc_position: f64, lane: usize, speed: f64, speed_cap: f64) -> CarState {
        CarState {
            arc_position: track.wrap(arc_position),
            lateral_offset: track.lane_center(lane),
            heading_error: 0.0,
            speed,
            lane_index: lane,
            speed_cap,
            target_lane: None,
        }
    }

    /// Integrates one control period of the curvilinear kinematic model.
    fn advance(&mut self, track: &Track, action: Action) {
        let kappa = track.curvature_at(self.arc_position);
        self.speed = if action.brake() {
            (self.speed - BRAKE_DECELERATION * DT).max(0.0)
        } else {
            (self.speed + ACCELERATION * DT).min(self.speed_cap)
        };
        let v = self.speed;
        self.heading_error += (v * action.steer() * K_STEER - v * kappa) * DT;
        self.lateral_offset += v * self.heading_error.sin() * DT;
        self.arc_position = track.wrap(self.arc_position + v * self.heading_error.cos() * DT);
        self.lane_index = track.lane_of(self.lateral_offset);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Halt {
    Running,
    OffRoad,
    Finished,
}

/// Identifies a car in a [`WorldState`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CarId {
    Ego,
    Traffic(usize),
}

#[derive(Clone, Debug)]
pub struct WorldState {
    pub track: Arc<Track>,
    pub ego: CarState,
    pub traffic: Vec<CarState>,
    pub time_step: u64,
    /// Number of timesteps in which the ego overlapped another car.
    pub damage: u64,
    pub halted: Halt,
    /// Arc distance driven by the ego since the start.
    pub odometer: f64,
}

impl WorldState {
    pub fn new(track: Arc<Track>, ego: CarState, traffic: Vec<CarState>) -> WorldState {
        WorldState { track, ego, traffic, time_step: 0, damage: 0, halted: Halt::Running, odometer: 0.0 }
    }

    /// Seeded episode start: traffic from [`spawn_traffic`], the whole scene
    /// rotated to a random arc position, ego in a random lane.
    pub fn spawn(track: Arc<Track>, n_cars: usize, seed: u64) -> Result<WorldState> {
        let traffic = spawn_traffic(&track, n_cars, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x05ee_de90);
        let offset = rng.random::<f64>() * track.length();
        let lane = rng.random_range(0..track.lane_count());
        let limit = track.speed_limit();
        let ego = CarState::in_lane(&track, offset, lane, EGO_START_SPEED * limit, limit);
        let traffic = traffic
            .into_iter()
            .map(|mut c| {
                c.arc_position = track.wrap(c.arc_position + offset);
                c
            })
            .collect();
        Ok(WorldState::new(track, ego, traffic))
    }

    pub fn car(&self, id: CarId) -> &CarState {
        match id {
            CarId::Ego => &self.ego,
            CarId::Traffic(i) => &self.traffic[i],
        }
    }

    fn car_mut(&mut self, id: CarId) -> &mut CarState {
        match id {
            CarId::Ego => &mut self.ego,
            CarId::Traffic(i) => &mut self.traffic[i],
        }
    }

    /// All cars as (id, state), ego first.
    pub fn cars(&self) -> impl Iterator<Item = (CarId, &CarState)> {
        std::iter::once((CarId::Ego, &self.ego))
            .chain(self.traffic.iter().enumerate().map(|(i, c)| (CarId::Traffic(i), c)))
    }

    pub fn is_running(&self) -> bool {
        self.halted == Halt::Running
    }

    pub fn laps(&self) -> f64 {
        self.odometer / self.track.length()
    }

    pub fn off_road_bound(&self) -> f64 {
        self.track.half_width() + CAR_HALF_WIDTH
    }

    /// True iff the ego currently overlaps any traffic car.
    pub fn ego_colliding(&self) -> bool {
        let e = self.track.world_pose(self.ego.arc_position, self.ego.lateral_offset, 0.0);
        self.traffic.iter().any(|c| {
            // cheap longitudinal reject before the world-frame check
            if self.track.gap(self.ego.arc_position, c.arc_position).abs() > 10.0 {
                return false;
            }
            let p = self.track.world_pose(c.arc_position, c.lateral_offset, 0.0);
            (e.x - p.x).hypot(e.y - p.y) < 2.0 * COLLISION_RADIUS
        })
    }

    pub fn finish(&mut self) {
        if self.halted == Halt::Running {
            self.halted = Halt::Finished;
        }
    }
}

/// Advances the world by one control period. Traffic is driven by the
/// reference planner; lane-change latches are refreshed for every car (ego
/// first, then traffic in order, each seeing the latches set before it).
pub fn step(state: &WorldState, ego_action: Action) -> Result<WorldState> {
    if !state.is_running() {
        return Err(Error::Halted(state.halted));
    }
    let mut next = state.clone();
    let mut actions = Vec::with_capacity(state.traffic.len());
    let ids: Vec<CarId> = state.cars().map(|(id, _)| id).collect();
    for id in ids {
        let decision = reference::decide(&next, id);
        next.car_mut(id).target_lane = decision.target_lane;
        if id != CarId::Ego {
            actions.push(decision.action);
        }
    }

    let track = Arc::clone(&next.track);
    let before = next.ego.arc_position;
    next.ego.advance(&track, ego_action);
    for (car, action) in next.traffic.iter_mut().zip(actions) {
        car.advance(&track, action);
    }
    next.odometer += track.gap(before, next.ego.arc_position);
    next.time_step += 1;

    if next.ego_colliding() {
        next.damage += 1;
    }
    if next.ego.lateral_offset.abs() > next.off_road_bound() {
        next.halted = Halt::OffRoad;
    }
    Ok(next)
}

/// Places `n_cars` traffic cars at lane centers on a slot grid, away from the
/// ego spawn zone around arc position 0. Deterministic in `seed`.
pub fn spawn_traffic(track: &Track, n_cars: usize, seed: u64) -> Result<Vec<CarState>> {
    let per_lane: Vec<f64> = (0..)
        .map(|k| EGO_CLEARANCE + k as f64 * SPAWN_SPACING)
        .take_while(|&s| s <= track.length() - EGO_CLEARANCE)
        .collect();
    let capacity = per_lane.len() * track.lane_count();
    if n_cars > capacity {
        return Err(Error::TrafficCapacity { requested: n_cars, capacity });
    }
    if n_cars == 0 {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut slots = index::sample(&mut rng, capacity, n_cars).into_vec();
    slots.sort_unstable();
    let limit = track.speed_limit();
    Ok(slots
        .into_iter()
        .map(|slot| {
            let lane = slot % track.lane_count();
            let s = per_lane[slot / track.lane_count()];
            let cap = limit * rng.random_range(TRAFFIC_CAP_RANGE.0..TRAFFIC_CAP_RANGE.1);
            CarState::in_lane(track, s, lane, cap, cap)
        })
        .collect())
}

#[derive(Clone, Debug)]
pub struct TrajectoryStep {
    pub state: WorldState,
    pub action: Action,
    pub tag: ControllerTag,
}

/// Ordered (state, action) pairs plus the state reached after the last action.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    pub terminal: WorldState,
}

impl Trajectory {
    pub fn start(initial: WorldState) -> Trajectory {
        Trajectory { steps: Vec::new(), terminal: initial }
    }

    /// Applies `action` to the terminal state and records the pair.
    pub fn push(&mut self, action: Action, tag: ControllerTag) -> Result<()> {
        let next = step(&self.terminal, action)?;
        let prev = std::mem::replace(&mut self.terminal, next);
        self.steps.push(TrajectoryStep { state: prev, action, tag });
        Ok(())
    }

    pub fn states(&self) -> impl Iterator<Item = &WorldState> {
        self.steps.iter().map(|s| &s.state).chain(std::iter::once(&self.terminal))
    }

    /// Writes the CSV dump: t, arc_position, lateral_offset, heading_error,
    /// speed, steer, brake, damage, controller_tag. The terminal state has an
    /// empty action.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,arc_position,lateral_offset,heading_error,speed,steer,brake,damage,controller_tag")?;
        for s in &self.steps {
            let e = &s.state.ego;
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                s.state.time_step,
                e.arc_position,
                e.lateral_offset,
                e.heading_error,
                e.speed,
                s.action.steer(),
                u8::from(s.action.brake()),
                s.state.damage,
                s.tag.as_str()
            )?;
        }
        let t = &self.terminal;
        writeln!(
            out,
            "{},{},{},{},{},,,{},",
            t.time_step, t.ego.arc_position, t.ego.lateral_offset, t.ego.heading_error, t.ego.speed, t.damage
        )
    }
}

/// Implicit reward: 1 iff the trajectory never collided and never left the road.
pub fn crash_free(traj: &Trajectory) -> u8 {
    let clean = traj.states().all(|s| s.damage == 0 && s.halted != Halt::OffRoad);
    u8::from(clean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::track::{Segment, TrackSpec, TrackSplit};
    use std::f64::consts::PI;

    fn stadium(lanes: usize) -> Arc<Track> {
        Arc::new(
            Track::build(TrackSpec {
                id: "stadium".into(),
                split: TrackSplit::Train,
                lane_count: lanes,
                lane_width: 3.5,
                speed_limit: 20.0,
                segments: vec![
                    Segment::Straight { length: 200.0 },
                    Segment::Arc { radius: 50.0, sweep: PI },
                    Segment::Straight { length: 200.0 },
                    Segment::Arc { radius: 50.0, sweep: PI },
                ],
            })
            .unwrap(),
        )
    }

    #[test]
    fn straight_no_steer_keeps_offset() {
        let t = stadium(2);
        let ego = CarState::in_lane(&t, 10.0, 0, 15.0, 20.0);
        let w = WorldState::new(t, ego, vec![]);
        let n = step(&w, Action::new(0.0, false)).unwrap();
        assert_eq!(n.ego.lateral_offset, w.ego.lateral_offset);
        assert_eq!(n.ego.heading_error, 0.0);
    }

    #[test]
    fn braking_decelerates() {
        let t = stadium(2);
        let ego = CarState::in_lane(&t, 10.0, 0, 10.0, 20.0);
        let w = WorldState::new(t, ego, vec![]);
        let n = step(&w, Action::new(0.0, true)).unwrap();
        assert!((n.ego.speed - 9.8).abs() < 1e-12);
        let mut slow = w.clone();
        slow.ego.speed = 0.1;
        assert_eq!(step(&slow, Action::new(0.0, true)).unwrap().ego.speed, 0.0);
    }

    #[test]
    fn acceleration_capped() {
        let t = stadium(2);
        let ego = CarState::in_lane(&t, 10.0, 0, 19.95, 20.0);
        let w = WorldState::new(t, ego, vec![]);
        assert_eq!(step(&w, Action::new(0.0, false)).unwrap().ego.speed, 20.0);
    }

    #[test]
    fn overlap_adds_one_damage() {
        let t = stadium(2);
        let ego = CarState::in_lane(&t, 50.0, 0, 0.0, 20.0);
        let mut other = CarState::in_lane(&t, 51.5, 0, 0.0, 0.0);
        other.lateral_offset += 0.2;
        // independent check of the geometry: both on the first straight
        let dist = (1.5f64).hypot(0.2);
        assert!(dist < 2.0 * COLLISION_RADIUS);
        let w = WorldState::new(t, ego, vec![other]);
        let n = step(&w, Action::new(0.0, true)).unwrap();
        assert_eq!(n.damage, 1);
        let n2 = step(&n, Action::new(0.0, true)).unwrap();
        assert_eq!(n2.damage, 2);
    }

    #[test]
    fn separated_cars_do_not_collide() {
        let t = stadium(2);
        let ego = CarState::in_lane(&t, 50.0, 0, 0.0, 20.0);
        let other = CarState::in_lane(&t, 50.0, 1, 0.0, 0.0);
        let w = WorldState::new(t, ego, vec![other]);
        assert!(!w.ego_colliding());
    }

    #[test]
    fn off_road_halts_and_blocks_stepping() {
        let t = stadium(2);
        let mut ego = CarState::in_lane(&t, 10.0, 0, 20.0, 20.0);
        ego.heading_error = 0.5;
        let mut w = WorldState::new(t, ego, vec![]);
        while w.is_running() {
            w = step(&w, Action::new(1.0, false)).unwrap();
            assert!(w.time_step < 1000);
        }
        assert_eq!(w.halted, Halt::OffRoad);
        assert!(w.ego.lateral_offset.abs() > w.off_road_bound());
        assert!(matches!(step(&w, Action::new(0.0, false)), Err(Error::Halted(Halt::OffRoad))));
    }

    #[test]
    fn lane_center_loop_returns_to_start() {
        let t = stadium(3);
        let lane = 2;
        let mut w = WorldState::new(Arc::clone(&t), CarState::in_lane(&t, 0.0, lane, 20.0, 20.0), vec![]);
        let start = t.world_pose(w.ego.arc_position, w.ego.lateral_offset, 0.0);
        let steps = (t.length() / (20.0 * DT)).round() as usize;
        for _ in 0..steps {
            let steer = t.curvature_at(w.ego.arc_position) / K_STEER;
            w = step(&w, Action::new(steer, false)).unwrap();
        }
        let remaining = t.length() - w.odometer;
        assert!(remaining.abs() < 20.0 * DT);
        let end = t.world_pose(w.ego.arc_position + remaining, w.ego.lateral_offset, 0.0);
        assert!((end.x - start.x).hypot(end.y - start.y) < 1e-4);
        assert!(w.ego.heading_error.abs() < 1e-9);
    }

    #[test]
    fn spawn_traffic_contract() {
        let t = stadium(2);
        assert!(spawn_traffic(&t, 0, 1).unwrap().is_empty());
        let a = spawn_traffic(&t, 40, 7).unwrap();
        let b = spawn_traffic(&t, 40, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 40);
        for (i, p) in a.iter().enumerate() {
            assert!(p.speed_cap < t.speed_limit());
            for q in &a[i + 1..] {
                let pp = t.world_pose(p.arc_position, p.lateral_offset, 0.0);
                let qp = t.world_pose(q.arc_position, q.lateral_offset, 0.0);
                assert!((pp.x - qp.x).hypot(pp.y - qp.y) >= 2.0 * COLLISION_RADIUS);
            }
        }
        match spawn_traffic(&t, 10_000, 1) {
            Err(Error::TrafficCapacity { requested: 10_000, capacity }) => assert!(capacity >= 40),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn crash_free_definition() {
        let t = stadium(2);
        let w = WorldState::new(Arc::clone(&t), CarState::in_lane(&t, 0.0, 0, 15.0, 20.0), vec![]);
        let mut traj = Trajectory::start(w);
        for _ in 0..300 {
            let a = reference::reference_action(&traj.terminal, CarId::Ego);
            traj.push(a, ControllerTag::Reference).unwrap();
        }
        assert_eq!(crash_free(&traj), 1);

        let mut damaged = traj.clone();
        damaged.terminal.damage = 1;
        assert_eq!(crash_free(&damaged), 0);

        let mut off = traj.clone();
        off.terminal.halted = Halt::OffRoad;
        assert_eq!(crash_free(&off), 0);
    }

    #[test]
    fn trajectory_csv_has_header_and_rows() {
        let t = stadium(2);
        let w = WorldState::new(Arc::clone(&t), CarState::in_lane(&t, 0.0, 0, 15.0, 20.0), vec![]);
        let mut traj = Trajectory::start(w);
        traj.push(Action::new(0.1, false), ControllerTag::Primary).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].ends_with(",primary"));
    }
}
