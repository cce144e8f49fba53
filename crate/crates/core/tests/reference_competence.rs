use std::sync::Arc;

use safedagger_core::reference::reference_action;
use safedagger_core::sim::{step, CarId, Halt, Track, TrackSet, WorldState, DT};

/// Drives the ego with the reference for `laps` laps; returns (laps driven, damage, halt).
fn drive(track: &Arc<Track>, cars: usize, seed: u64, laps: f64) -> (f64, u64, Halt) {
    let mut w = WorldState::spawn(Arc::clone(track), cars, seed).unwrap();
    let max_steps = (laps * track.length() / (0.25 * track.speed_limit() * DT)) as u64;
    while w.is_running() && w.laps() < laps && w.time_step < max_steps {
        let a = reference_action(&w, CarId::Ego);
        w = step(&w, a).unwrap();
    }
    (w.laps(), w.damage, w.halted)
}

#[test]
fn reference_completes_three_laps_everywhere() {
    let set = TrackSet::builtin();
    for track in set.all() {
        for &(cars, seed) in &[(0usize, 1u64), (12, 1), (12, 2), (12, 3)] {
            let (laps, damage, halt) = drive(track, cars, seed, 3.0);
            assert_eq!(halt, Halt::Running, "{} cars {cars} seed {seed}", track.id());
            assert_eq!(damage, 0, "{} cars {cars} seed {seed}", track.id());
            assert!(laps >= 3.0, "{} cars {cars} seed {seed}: {laps} laps", track.id());
        }
    }
}
