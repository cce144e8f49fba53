//! Closed-loop multi-lane tracks with an arc-length parameterisation.
//!
//! Tracks are described by a [`TrackSpec`], an ordered list of straights and
//! circular arcs, and compiled into a [`Track`] that answers centerline,
//! lane-center and projection queries. Lanes are indexed from the left edge
//! (lane 0 is leftmost in the driving direction); lateral offsets are
//! positive to the left of the centerline.
//!
//! # Text format
//!
//! One track per file, `key = value` lines, `#` starts a comment:
//!
//! ```text
//! id = train-01
//! split = train            # train | test
//! lane_count = 2
//! lane_width = 3.5         # metres
//! speed_limit = 20         # metres per second
//! segment = straight 220   # length in metres
//! segment = arc 60 180     # radius in metres, sweep in degrees (positive turns left)
//! ```
//!
//! Segments are listed in driving order and must close the loop.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Position tolerance for loop closure, metres.
pub const CLOSURE_TOLERANCE_M: f64 = 1e-6;
/// Heading tolerance for loop closure, radians.
pub const CLOSURE_TOLERANCE_RAD: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Segment {
    Straight { length: f64 },
    /// `sweep` is signed: positive turns left.
    Arc { radius: f64, sweep: f64 },
}

impl Segment {
    pub fn length(&self) -> f64 {
        match *self {
            Segment::Straight { length } => length,
            Segment::Arc { radius, sweep } => radius * sweep.abs(),
        }
    }

    pub fn curvature(&self) -> f64 {
        match *self {
            Segment::Straight { .. } => 0.0,
            Segment::Arc { radius, sweep } => sweep.signum() / radius,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TrackSplit {
    Train,
    Test,
}

impl fmt::Display for TrackSplit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrackSplit::Train => "train",
            TrackSplit::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackSpec {
    pub id: String,
    pub split: TrackSplit,
    pub lane_count: usize,
    pub lane_width: f64,
    pub speed_limit: f64,
    pub segments: Vec<Segment>,
}

/// Pose of a point in world coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    /// Advances the pose along `segment`.
    fn advance(self, segment: &Segment, distance: f64) -> Pose {
        let kappa = segment.curvature();
        if kappa == 0.0 {
            Pose {
                x: self.x + distance * self.heading.cos(),
                y: self.y + distance * self.heading.sin(),
                heading: self.heading,
            }
        } else {
            let turned = self.heading + kappa * distance;
            Pose {
                x: self.x + (turned.sin() - self.heading.sin()) / kappa,
                y: self.y + (self.heading.cos() - turned.cos()) / kappa,
                heading: turned,
            }
        }
    }
}

fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

impl TrackSpec {
    pub fn road_half_width(&self) -> f64 {
        0.5 * self.lane_count as f64 * self.lane_width
    }

    /// Residual of the loop closure: (position error in metres, heading error in radians).
    pub fn closure_residual(&self) -> (f64, f64) {
        let start = Pose { x: 0.0, y: 0.0, heading: 0.0 };
        let end = self
            .segments
            .iter()
            .fold(start, |pose, seg| pose.advance(seg, seg.length()));
        let pos = end.x.hypot(end.y);
        (pos, wrap_angle(end.heading).abs())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Error::InvalidTrack { id: self.id.clone(), reason };
        if self.lane_count < 1 {
            return Err(bad("lane_count must be at least 1".into()));
        }
        if !(self.lane_width > 0.0 && self.lane_width.is_finite()) {
            return Err(bad(format!("lane_width must be positive, got {}", self.lane_width)));
        }
        if !(self.speed_limit > 0.0 && self.speed_limit.is_finite()) {
            return Err(bad(format!("speed_limit must be positive, got {}", self.speed_limit)));
        }
        if self.segments.is_empty() {
            return Err(bad("no segments".into()));
        }
        let road_width = self.lane_count as f64 * self.lane_width;
        for (i, seg) in self.segments.iter().enumerate() {
            match *seg {
                Segment::Straight { length } if !(length > 0.0 && length.is_finite()) => {
                    return Err(bad(format!("segment {i}: straight length must be positive")));
                }
                Segment::Arc { radius, sweep } => {
                    if !(radius > road_width && radius.is_finite()) {
                        return Err(bad(format!(
                            "segment {i}: arc radius {radius} must exceed road width {road_width}"
                        )));
                    }
                    if !(sweep != 0.0 && sweep.is_finite()) {
                        return Err(bad(format!("segment {i}: arc sweep must be non-zero")));
                    }
                }
                _ => {}
            }
        }
        let (pos, heading) = self.closure_residual();
        if pos > CLOSURE_TOLERANCE_M || heading > CLOSURE_TOLERANCE_RAD {
            return Err(Error::OpenTrack { id: self.id.clone(), position_residual: pos, heading_residual: heading });
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<TrackSpec> {
        let text = std::fs::read_to_string(path)?;
        text.parse()
    }

    /// Serialises the spec in the documented text format.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "id = {}\nsplit = {}\nlane_count = {}\nlane_width = {}\nspeed_limit = {}\n",
            self.id, self.split, self.lane_count, self.lane_width, self.speed_limit
        );
        for seg in &self.segments {
            match *seg {
                Segment::Straight { length } => out.push_str(&format!("segment = straight {length}\n")),
                Segment::Arc { radius, sweep } => {
                    out.push_str(&format!("segment = arc {radius} {}\n", sweep.to_degrees()))
                }
            }
        }
        out
    }
}

impl FromStr for TrackSpec {
    type Err = Error;

    fn from_str(text: &str) -> Result<TrackSpec> {
        let mut id = None;
        let mut split = TrackSplit::Train;
        let mut lane_count = None;
        let mut lane_width = None;
        let mut speed_limit = None;
        let mut segments = Vec::new();

        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |reason: String| Error::TrackParse { line: n + 1, reason };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let num = |v: &str| -> Result<f64> {
                v.parse::<f64>().map_err(|_| parse_err(format!("`{key}`: not a number: `{v}`")))
            };
            match key {
                "id" => id = Some(value.to_string()),
                "split" => {
                    split = match value {
                        "train" => TrackSplit::Train,
                        "test" => TrackSplit::Test,
                        other => return Err(parse_err(format!("unknown split `{other}`"))),
                    }
                }
                "lane_count" => {
                    lane_count = Some(
                        value
                            .parse::<usize>()
                            .map_err(|_| parse_err(format!("lane_count: not an integer: `{value}`")))?,
                    )
                }
                "lane_width" => lane_width = Some(num(value)?),
                "speed_limit" => speed_limit = Some(num(value)?),
                "segment" => {
                    let parts: Vec<&str> = value.split_whitespace().collect();
                    let seg = match parts.as_slice() {
                        ["straight", len] => Segment::Straight { length: num(len)? },
                        ["arc", radius, sweep_deg] => Segment::Arc {
                            radius: num(radius)?,
                            sweep: num(sweep_deg)?.to_radians(),
                        },
                        _ => return Err(parse_err(format!("malformed segment `{value}`"))),
                    };
                    segments.push(seg);
                }
                other => return Err(parse_err(format!("unknown key `{other}`"))),
            }
        }

        let missing = |k: &str| Error::TrackParse { line: 0, reason: format!("missing `{k}`") };
        Ok(TrackSpec {
            id: id.ok_or_else(|| missing("id"))?,
            split,
            lane_count: lane_count.ok_or_else(|| missing("lane_count"))?,
            lane_width: lane_width.ok_or_else(|| missing("lane_width"))?,
            speed_limit: speed_limit.ok_or_else(|| missing("speed_limit"))?,
            segments,
        })
    }
}

#[derive(Clone, Debug)]
struct CompiledSegment {
    start_s: f64,
    length: f64,
    start: Pose,
    curvature: f64,
}

/// Compiled track geometry.
#[derive(Clone, Debug)]
pub struct Track {
    spec: TrackSpec,
    segments: Vec<CompiledSegment>,
    length: f64,
}

impl Track {
    pub fn build(spec: TrackSpec) -> Result<Track> {
        spec.validate()?;
        let mut pose = Pose { x: 0.0, y: 0.0, heading: 0.0 };
        let mut s = 0.0;
        let mut segments = Vec::with_capacity(spec.segments.len());
        for seg in &spec.segments {
            let length = seg.length();
            segments.push(CompiledSegment { start_s: s, length, start: pose, curvature: seg.curvature() });
            pose = pose.advance(seg, length);
            s += length;
        }
        Ok(Track { spec, segments, length: s })
    }

    pub fn spec(&self) -> &TrackSpec {
        &self.spec
    }

    pub fn id(&self) -> &str {
        &self.spec.id
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn lane_count(&self) -> usize {
        self.spec.lane_count
    }

    pub fn lane_width(&self) -> f64 {
        self.spec.lane_width
    }

    pub fn speed_limit(&self) -> f64 {
        self.spec.speed_limit
    }

    pub fn half_width(&self) -> f64 {
        self.spec.road_half_width()
    }

    /// Lateral offset of the center of `lane` (0 = leftmost).
    pub fn lane_center(&self, lane: usize) -> f64 {
        self.half_width() - (lane as f64 + 0.5) * self.spec.lane_width
    }

    /// Lane whose center is nearest to lateral offset `d`.
    pub fn lane_of(&self, d: f64) -> usize {
        let idx = ((self.half_width() - d) / self.spec.lane_width).floor();
        idx.clamp(0.0, (self.spec.lane_count - 1) as f64) as usize
    }

    pub fn wrap(&self, s: f64) -> f64 {
        let w = s.rem_euclid(self.length);
        // rem_euclid can return `length` itself for tiny negative inputs
        if w >= self.length {
            0.0
        } else {
            w
        }
    }

    /// Signed arc distance from `from` to `to`, in `(-L/2, L/2]`.
    pub fn gap(&self, from: f64, to: f64) -> f64 {
        let g = self.wrap(to - from);
        if g > 0.5 * self.length {
            g - self.length
        } else {
            g
        }
    }

    fn segment_index(&self, s: f64) -> usize {
        let s = self.wrap(s);
        match self.segments.binary_search_by(|seg| seg.start_s.partial_cmp(&s).unwrap()) {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        }
    }

    pub fn curvature_at(&self, s: f64) -> f64 {
        self.segments[self.segment_index(s)].curvature
    }

    pub fn centerline_pose(&self, s: f64) -> Pose {
        let s = self.wrap(s);
        let seg = &self.segments[self.segment_index(s)];
        let local = s - seg.start_s;
        let shape = if seg.curvature == 0.0 {
            Segment::Straight { length: seg.length }
        } else {
            Segment::Arc { radius: 1.0 / seg.curvature.abs(), sweep: seg.curvature.signum() }
        };
        seg.start.advance(&shape, local)
    }

    /// World pose of a point at arc position `s`, lateral offset `d` and
    /// heading relative to the centerline tangent.
    pub fn world_pose(&self, s: f64, d: f64, heading_error: f64) -> Pose {
        let c = self.centerline_pose(s);
        Pose {
            x: c.x - d * c.heading.sin(),
            y: c.y + d * c.heading.cos(),
            heading: c.heading + heading_error,
        }
    }

    /// Projects a world point onto the track, searching segments that overlap
    /// `[hint - behind, hint + ahead]`. Returns `(s, d)`.
    pub fn project(&self, x: f64, y: f64, hint: f64, behind: f64, ahead: f64) -> (f64, f64) {
        let n = self.segments.len();
        let first = self.segment_index(hint - behind);
        let span = behind + ahead;
        let mut best: Option<(f64, f64, f64)> = None; // (score, s, d)
        let mut covered = 0.0;
        let mut i = first;
        let mut visited = 0;
        loop {
            let seg = &self.segments[i];
            let (t, d, outside) = project_on_segment(seg, x, y);
            // penalise points beyond the segment ends by their longitudinal overshoot
            let score = d.abs() + outside;
            let s = self.wrap(seg.start_s + t.clamp(0.0, seg.length));
            if best.is_none_or(|b| score < b.0) {
                best = Some((score, s, d));
            }
            covered += if visited == 0 {
                seg.start_s + seg.length - self.wrap(hint - behind)
            } else {
                seg.length
            };
            visited += 1;
            if covered >= span || visited >= n {
                break;
            }
            i = (i + 1) % n;
        }
        let (_, s, d) = best.expect("track has at least one segment");
        (s, d)
    }
}

/// Returns (arc parameter along the segment, signed lateral offset, overshoot beyond ends).
fn project_on_segment(seg: &CompiledSegment, x: f64, y: f64) -> (f64, f64, f64) {
    let (hs, hc) = seg.start.heading.sin_cos();
    if seg.curvature == 0.0 {
        let (dx, dy) = (x - seg.start.x, y - seg.start.y);
        let t = dx * hc + dy * hs;
        let d = -dx * hs + dy * hc;
        let outside = (-t).max(t - seg.length).max(0.0);
        (t, d, outside)
    } else {
        let r_signed = 1.0 / seg.curvature;
        let cx = seg.start.x - r_signed * hs;
        let cy = seg.start.y + r_signed * hc;
        let (px, py) = (x - cx, y - cy);
        let dist = px.hypot(py);
        let radius = r_signed.abs();
        let d = seg.curvature.signum() * (radius - dist);
        // angle of the start point about the center
        let a0 = (seg.start.y - cy).atan2(seg.start.x - cx);
        let a = py.atan2(px);
        // travelled angle in the turning direction, in [0, 2pi)
        let swept = (seg.curvature.signum() * (a - a0)).rem_euclid(TAU);
        let sweep = seg.length / radius;
        let (t, outside) = if swept <= sweep {
            (swept * radius, 0.0)
        } else {
            // closer to the start or the end of the arc?
            let past_end = (swept - sweep) * radius;
            let before_start = (TAU - swept) * radius;
            if past_end < before_start {
                (seg.length + past_end, past_end)
            } else {
                (-before_start, before_start)
            }
        };
        (t, d, outside)
    }
}
