//! Partial observation of the world and privileged label extraction.
//!
//! The observation is a 3 × 12 × 24 raster of the road ahead in the ego
//! frame: 60 m forward (row 0 nearest, 5 m per row) by 24 m lateral (column 0
//! leftmost, 1 m per column). Channels hold road, lane-marking and car
//! occupancy as area coverage in `[0, 1]`, integrated over four longitudinal
//! sub-samples per row and analytically across each column's width.

use std::f64::consts::FRAC_PI_4;
use std::fmt::Write as _;

use crate::sim::{Action, WorldState, CAR_HALF_LENGTH, CAR_HALF_WIDTH};

pub const CHANNELS: usize = 3;
pub const ROWS: usize = 12;
pub const COLS: usize = 24;
pub const OBS_LEN: usize = CHANNELS * ROWS * COLS;

pub const VIEW_FORWARD: f64 = 60.0;
pub const VIEW_LATERAL: f64 = 24.0;
/// Distance labels are normalised by this horizon; farther cars read as absent.
pub const HORIZON: f64 = 60.0;

pub const ROAD: usize = 0;
pub const MARKING: usize = 1;
pub const CARS: usize = 2;

const ROW_DEPTH: f64 = VIEW_FORWARD / ROWS as f64;
const COL_WIDTH: f64 = VIEW_LATERAL / COLS as f64;
const SUBSAMPLES: usize = 4;
const MARKING_HALF_WIDTH: f64 = 0.25;

/// Flattened channel-major raster (`[channel][row][col]`).
#[derive(Clone, Debug, PartialEq)]
pub struct Observation(Vec<f32>);

impl Observation {
    pub fn zeros() -> Observation {
        Observation(vec![0.0; OBS_LEN])
    }

    pub fn from_vec(v: Vec<f32>) -> Option<Observation> {
        (v.len() == OBS_LEN).then_some(Observation(v))
    }

    pub fn index(channel: usize, row: usize, col: usize) -> usize {
        (channel * ROWS + row) * COLS + col
    }

    pub fn at(&self, channel: usize, row: usize, col: usize) -> f32 {
        self.0[Self::index(channel, row, col)]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&v| f64::from(v)).collect()
    }
}

fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

/// Rasterises the forward view of the ego car.
pub fn observe(state: &WorldState) -> Observation {
    let track = &state.track;
    let ego = &state.ego;
    let pose = track.world_pose(ego.arc_position, ego.lateral_offset, ego.heading_error);
    let (sin_h, cos_h) = pose.heading.sin_cos();
    let hw = track.half_width();
    let markings: Vec<f64> = (0..=track.lane_count()).map(|j| hw - j as f64 * track.lane_width()).collect();

    // traffic strictly ahead of the ego, within reach of the window
    let ahead: Vec<(f64, f64)> = state
        .traffic
        .iter()
        .map(|c| (track.gap(ego.arc_position, c.arc_position), c.lateral_offset))
        .filter(|&(g, _)| g > 0.0 && g < VIEW_FORWARD + 2.0 * CAR_HALF_LENGTH + 10.0)
        .collect();

    let mut grid = vec![0.0f64; OBS_LEN];
    let sub_depth = ROW_DEPTH / SUBSAMPLES as f64;
    let half_col = 0.5 * COL_WIDTH;
    for row in 0..ROWS {
        for k in 0..SUBSAMPLES {
            let x = row as f64 * ROW_DEPTH + (k as f64 + 0.5) * sub_depth;
            for col in 0..COLS {
                let y = 0.5 * VIEW_LATERAL - (col as f64 + 0.5) * COL_WIDTH;
                let wx = pose.x + x * cos_h - y * sin_h;
                let wy = pose.y + x * sin_h + y * cos_h;
                let (s, d) = track.project(wx, wy, ego.arc_position + x, 20.0, 20.0);
                let (d0, d1) = (d - half_col, d + half_col);

                let road = overlap(d0, d1, -hw, hw) / COL_WIDTH;
                let marking: f64 = markings
                    .iter()
                    .map(|&m| overlap(d0, d1, m - MARKING_HALF_WIDTH, m + MARKING_HALF_WIDTH))
                    .sum::<f64>()
                    / COL_WIDTH;
                let rel = track.gap(ego.arc_position, s);
                let cars: f64 = ahead
                    .iter()
                    .map(|&(g, dc)| {
                        let lat = overlap(d0, d1, dc - CAR_HALF_WIDTH, dc + CAR_HALF_WIDTH) / COL_WIDTH;
                        if lat == 0.0 {
                            return 0.0;
                        }
                        let lon = overlap(rel - 0.5 * sub_depth, rel + 0.5 * sub_depth, g - CAR_HALF_LENGTH, g + CAR_HALF_LENGTH)
                            / sub_depth;
                        lat * lon
                    })
                    .sum();

                let w = 1.0 / SUBSAMPLES as f64;
                grid[Observation::index(ROAD, row, col)] += w * road;
                grid[Observation::index(MARKING, row, col)] += w * marking.min(1.0);
                grid[Observation::index(CARS, row, col)] += w * cars.min(1.0);
            }
        }
    }
    Observation(grid.into_iter().map(|v| v.clamp(0.0, 1.0) as f32).collect())
}

/// The twelve per-frame variables: ten privileged state descriptors and the
/// two control variables.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct LabelVector {
    /// Lane exists to the left.
    pub i_ll: f64,
    /// Lane exists to the right.
    pub i_lr: f64,
    /// Car ahead in the left / same / right lane.
    pub i_cl: f64,
    pub i_cm: f64,
    pub i_cr: f64,
    /// Normalised distance to that car (1.0 when none within the horizon).
    pub d_cl: f64,
    pub d_cm: f64,
    pub d_cr: f64,
    /// Position within the lane, `[-1, 1]`, positive to the left.
    pub p_c: f64,
    /// Heading relative to the lane, normalised by π/4.
    pub a_c: f64,
    /// Steering.
    pub s_c: f64,
    /// Brake indicator.
    pub i_b: f64,
}

pub const LABEL_NAMES: [&str; 12] =
    ["I_ll", "I_lr", "I_cl", "I_cm", "I_cr", "D_cl", "D_cm", "D_cr", "P_c", "A_c", "S_c", "I_b"];

impl LabelVector {
    pub fn to_array(&self) -> [f64; 12] {
        [
            self.i_ll, self.i_lr, self.i_cl, self.i_cm, self.i_cr, self.d_cl, self.d_cm, self.d_cr, self.p_c,
            self.a_c, self.s_c, self.i_b,
        ]
    }

    pub fn from_array(a: [f64; 12]) -> LabelVector {
        LabelVector {
            i_ll: a[0],
            i_lr: a[1],
            i_cl: a[2],
            i_cm: a[3],
            i_cr: a[4],
            d_cl: a[5],
            d_cm: a[6],
            d_cr: a[7],
            p_c: a[8],
            a_c: a[9],
            s_c: a[10],
            i_b: a[11],
        }
    }

    pub fn with_control(mut self, action: Action) -> LabelVector {
        self.s_c = action.steer();
        self.i_b = f64::from(u8::from(action.brake()));
        self
    }

    /// Checks the declared ranges and the indicator/distance consistency rules.
    pub fn is_consistent(&self) -> bool {
        let binary = |v: f64| v == 0.0 || v == 1.0;
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        let signed = |v: f64| (-1.0..=1.0).contains(&v);
        let pair = |i: f64, d: f64| (d < 1.0) == (i == 1.0);
        [self.i_ll, self.i_lr, self.i_cl, self.i_cm, self.i_cr, self.i_b].into_iter().all(binary)
            && [self.d_cl, self.d_cm, self.d_cr].into_iter().all(unit)
            && [self.p_c, self.a_c, self.s_c].into_iter().all(signed)
            && pair(self.i_cl, self.d_cl)
            && pair(self.i_cm, self.d_cm)
            && pair(self.i_cr, self.d_cr)
            && (self.i_ll == 1.0 || self.i_cl == 0.0)
            && (self.i_lr == 1.0 || self.i_cr == 0.0)
    }
}

/// State descriptors from privileged state. `s_c` and `i_b` are left at zero;
/// fill them with [`LabelVector::with_control`].
pub fn extract_labels(state: &WorldState) -> LabelVector {
    let track = &state.track;
    let ego = &state.ego;
    let lane = track.lane_of(ego.lateral_offset);
    let has_left = lane > 0;
    let has_right = lane + 1 < track.lane_count();

    let front = |target: Option<usize>| -> (f64, f64) {
        let Some(target) = target else { return (0.0, 1.0) };
        let nearest = state
            .traffic
            .iter()
            .filter(|c| c.lane_index == target)
            .map(|c| track.gap(ego.arc_position, c.arc_position))
            .filter(|&g| g > 0.0 && g < HORIZON)
            .min_by(f64::total_cmp);
        match nearest {
            Some(g) => (1.0, g / HORIZON),
            None => (0.0, 1.0),
        }
    };
    let (i_cl, d_cl) = front(lane.checked_sub(1));
    let (i_cm, d_cm) = front(Some(lane));
    let (i_cr, d_cr) = front(has_right.then_some(lane + 1));

    let p_c = ((ego.lateral_offset - track.lane_center(lane)) / (0.5 * track.lane_width())).clamp(-1.0, 1.0);
    let a_c = (ego.heading_error / FRAC_PI_4).clamp(-1.0, 1.0);
    LabelVector {
        i_ll: f64::from(u8::from(has_left)),
        i_lr: f64::from(u8::from(has_right)),
        i_cl,
        i_cm,
        i_cr,
        d_cl,
        d_cm,
        d_cr,
        p_c,
        a_c,
        s_c: 0.0,
        i_b: 0.0,
    }
}

/// Header of the observation dump: 864 raster cells then the 12 labels.
pub fn csv_header() -> String {
    let mut h = String::new();
    for c in 0..CHANNELS {
        for r in 0..ROWS {
            for k in 0..COLS {
                let _ = write!(h, "c{c}r{r}k{k},");
            }
        }
    }
    h.push_str(&LABEL_NAMES.join(","));
    h
}

/// One dump row: the flattened observation followed by the labels.
pub fn csv_row(obs: &Observation, labels: &LabelVector) -> String {
    let mut row = String::with_capacity(OBS_LEN * 6);
    for v in obs.as_slice() {
        let _ = write!(row, "{v},");
    }
    let labels: Vec<String> = labels.to_array().iter().map(|v| v.to_string()).collect();
    row.push_str(&labels.join(","));
    row
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{CarState, Segment, Track, TrackSpec, TrackSplit};
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn stadium(lanes: usize) -> Arc<Track> {
        Arc::new(
            Track::build(TrackSpec {
                id: "stadium".into(),
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

    fn centered(t: &Arc<Track>, traffic: Vec<CarState>) -> WorldState {
        let mut ego = CarState::in_lane(t, 100.0, 0, 15.0, 20.0);
        ego.lateral_offset = 0.0;
        WorldState::new(Arc::clone(t), ego, traffic)
    }

    #[test]
    fn empty_straight_is_mirror_symmetric() {
        let t = stadium(2);
        let obs = observe(&centered(&t, vec![]));
        for r in 0..ROWS {
            for c in 0..COLS {
                assert!((obs.at(ROAD, r, c) - obs.at(ROAD, r, COLS - 1 - c)).abs() < 1e-6);
                assert!((obs.at(MARKING, r, c) - obs.at(MARKING, r, COLS - 1 - c)).abs() < 1e-6);
                assert_eq!(obs.at(CARS, r, c), 0.0);
            }
        }
        // 7 m of road across 24 one-metre columns: 3.5 columns each side of center
        let row_sum: f32 = (0..COLS).map(|c| obs.at(ROAD, 0, c)).sum();
        assert!((row_sum - 7.0).abs() < 1e-5);
    }

    #[test]
    fn car_ahead_lands_at_expected_row() {
        let t = stadium(2);
        let mut ego = CarState::in_lane(&t, 100.0, 1, 15.0, 20.0);
        ego.heading_error = 0.0;
        let car = CarState::in_lane(&t, 130.0, 1, 10.0, 10.0);
        let obs = observe(&WorldState::new(Arc::clone(&t), ego, vec![car]));

        // oracle: footprint [27.75, 32.25] m ahead split across 5 m rows, and
        // laterally centred on the ego (same lane), 2 m wide over 1 m columns
        let mut expected_rows = [0.0f64; ROWS];
        for (r, e) in expected_rows.iter_mut().enumerate() {
            let (a, b) = (r as f64 * 5.0, r as f64 * 5.0 + 5.0);
            *e = (b.min(32.25) - a.max(27.75)).max(0.0) / 5.0;
        }
        let mass: Vec<f64> =
            (0..ROWS).map(|r| (0..COLS).map(|c| f64::from(obs.at(CARS, r, c))).sum::<f64>()).collect();
        for r in 0..ROWS {
            // two full columns wide
            assert!((mass[r] - 2.0 * expected_rows[r]).abs() < 1e-5, "row {r}: {} vs {}", mass[r], expected_rows[r]);
        }
        let total: f64 = mass.iter().sum();
        let centroid: f64 = mass.iter().enumerate().map(|(r, m)| (r as f64 + 0.5) * m).sum::<f64>() / total;
        assert!((centroid - 30.0 / 60.0 * 12.0).abs() < 1e-6);
    }

    #[test]
    fn traffic_behind_is_invisible() {
        let t = stadium(2);
        let behind = CarState::in_lane(&t, 90.0, 1, 10.0, 10.0);
        let far_behind = CarState::in_lane(&t, 40.0, 0, 10.0, 10.0);
        let a = observe(&centered(&t, vec![]));
        let b = observe(&centered(&t, vec![behind, far_behind]));
        assert_eq!(a, b);
    }

    #[test]
    fn cells_in_unit_range_on_a_curve() {
        let t = stadium(3);
        let mut ego = CarState::in_lane(&t, 320.0, 2, 15.0, 20.0);
        ego.heading_error = 0.2;
        let cars = vec![CarState::in_lane(&t, 340.0, 0, 10.0, 10.0), CarState::in_lane(&t, 345.0, 1, 10.0, 10.0)];
        let obs = observe(&WorldState::new(Arc::clone(&t), ego, cars));
        assert!(obs.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(obs.as_slice()[Observation::index(CARS, 0, 0)..].iter().any(|&v| v > 0.0));
    }

    #[test]
    fn leftmost_lane_indicators() {
        let t = stadium(2);
        let w = WorldState::new(Arc::clone(&t), CarState::in_lane(&t, 100.0, 0, 15.0, 20.0), vec![]);
        let l = extract_labels(&w);
        assert_eq!((l.i_ll, l.i_lr), (0.0, 1.0));
        assert_eq!((l.i_cl, l.i_cm, l.i_cr), (0.0, 0.0, 0.0));
        assert_eq!((l.d_cl, l.d_cm, l.d_cr), (1.0, 1.0, 1.0));
        assert!(l.is_consistent());
    }

    #[test]
    fn car_thirty_metres_ahead() {
        let t = stadium(2);
        let ego = CarState::in_lane(&t, 100.0, 1, 15.0, 20.0);
        let car = CarState::in_lane(&t, 130.0, 1, 10.0, 10.0);
        let l = extract_labels(&WorldState::new(Arc::clone(&t), ego, vec![car]));
        assert_eq!(l.i_cm, 1.0);
        assert!((l.d_cm - 0.5).abs() < 1e-12);
        assert_eq!(l.i_cl, 0.0);
        assert!(l.is_consistent());
    }

    #[test]
    fn lane_position_and_angle_normalisation() {
        let t = stadium(2);
        let mut ego = CarState::in_lane(&t, 100.0, 1, 15.0, 20.0);
        ego.lateral_offset += 0.875;
        ego.heading_error = PI / 8.0;
        let l = extract_labels(&WorldState::new(Arc::clone(&t), ego, vec![])).with_control(Action::new(-0.3, true));
        assert!((l.p_c - 0.5).abs() < 1e-12);
        assert!((l.a_c - 0.5).abs() < 1e-12);
        assert_eq!((l.s_c, l.i_b), (-0.3, 1.0));
    }

    #[test]
    fn csv_row_width() {
        let row = csv_row(&Observation::zeros(), &LabelVector::default());
        assert_eq!(row.split(',').count(), OBS_LEN + 12);
        assert_eq!(csv_header().split(',').count(), OBS_LEN + 12);
    }
}
