//! Deterministic fixed-step driving world.

mod track;
mod world;

pub use track::{Pose, Segment, Track, TrackSpec, TrackSplit, CLOSURE_TOLERANCE_M, CLOSURE_TOLERANCE_RAD};
pub use world::{
    crash_free, spawn_traffic, step, Action, CarId, CarState, ControllerTag, Halt, Trajectory, TrajectoryStep,
    WorldState, ACCELERATION, BRAKE_DECELERATION, CAR_HALF_LENGTH, CAR_HALF_WIDTH, COLLISION_RADIUS, DT,
    EGO_CLEARANCE, EGO_START_SPEED, K_STEER, SPAWN_SPACING, TRAFFIC_CAP_RANGE,
};

use std::path::Path;
use std::sync::Arc;

use crate::error::Result;

const BUILTIN: [(&str, &str); 10] = [
    ("train-01", include_str!("../../tracks/train-01.track")),
    ("train-02", include_str!("../../tracks/train-02.track")),
    ("train-03", include_str!("../../tracks/train-03.track")),
    ("train-04", include_str!("../../tracks/train-04.track")),
    ("train-05", include_str!("../../tracks/train-05.track")),
    ("train-06", include_str!("../../tracks/train-06.track")),
    ("train-07", include_str!("../../tracks/train-07.track")),
    ("test-01", include_str!("../../tracks/test-01.track")),
    ("test-02", include_str!("../../tracks/test-02.track")),
    ("test-03", include_str!("../../tracks/test-03.track")),
];

/// A set of compiled tracks split into training and test tracks.
#[derive(Clone, Debug)]
pub struct TrackSet {
    pub train: Vec<Arc<Track>>,
    pub test: Vec<Arc<Track>>,
}

impl TrackSet {
    /// The ten tracks shipped with the crate (seven training, three test).
    pub fn builtin() -> TrackSet {
        let specs = BUILTIN
            .iter()
            .map(|(id, text)| text.parse::<TrackSpec>().unwrap_or_else(|e| panic!("builtin track {id}: {e}")));
        Self::from_specs(specs).expect("builtin tracks are valid")
    }

    /// Loads every `*.track` file in `dir`, sorted by file name.
    pub fn load_dir(dir: &Path) -> Result<TrackSet> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "track"))
            .collect();
        paths.sort();
        let specs = paths.iter().map(|p| TrackSpec::load(p)).collect::<Result<Vec<_>>>()?;
        Self::from_specs(specs)
    }

    pub fn from_specs(specs: impl IntoIterator<Item = TrackSpec>) -> Result<TrackSet> {
        let mut set = TrackSet { train: Vec::new(), test: Vec::new() };
        for spec in specs {
            let split = spec.split;
            let track = Arc::new(Track::build(spec)?);
            match split {
                TrackSplit::Train => set.train.push(track),
                TrackSplit::Test => set.test.push(track),
            }
        }
        Ok(set)
    }

    pub fn all(&self) -> impl Iterator<Item = &Arc<Track>> {
        self.train.iter().chain(self.test.iter())
    }

    /// Raw text of the shipped track files, in id order.
    pub fn builtin_sources() -> impl Iterator<Item = (&'static str, &'static str)> {
        BUILTIN.iter().copied()
    }
}
