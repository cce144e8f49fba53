//! Driving learned policies on held-out tracks and the lap / damage /
//! steering-error / takeover metrics.

mod plot;
mod summary;

use std::io::Write;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::imitation::{derive_seed, Dataset};
use crate::perception::{csv_header, csv_row};
use crate::policies::{PolicyBundle, PrimaryPolicy, QueryKind, QueryLedger, SafetyPolicy, Strategy};
use crate::reference::query_reference;
use crate::sim::{step, ControllerTag, Halt, Track, Trajectory, WorldState, DT};
use crate::{Error, Result};

pub use plot::{line_plot_svg, Series};
pub use summary::{summarize_run, IterationEval, RunCurves, CURVE_COLUMNS};

/// Laps below this count as this much when dividing damage by laps.
pub const MIN_LAPS_FOR_DAMAGE: f64 = 0.01;
/// Episodes time out once the ego would have needed this fraction of the speed limit on average.
pub const MIN_AVERAGE_SPEED_FRACTION: f64 = 0.25;

#[derive(Clone, Debug)]
pub struct EvalConfig {
    pub tracks: Vec<Arc<Track>>,
    pub laps_target: u32,
    /// Traffic cars per track (0: empty road).
    pub traffic: usize,
    pub strategy: Strategy,
    pub seed: u64,
    pub record_trajectories: bool,
}

impl EvalConfig {
    pub fn new(tracks: Vec<Arc<Track>>, strategy: Strategy, traffic: usize, seed: u64) -> EvalConfig {
        EvalConfig { tracks, laps_target: 3, traffic, strategy, seed, record_trajectories: false }
    }
}

#[derive(Clone, Debug)]
pub struct TrackEval {
    pub track_id: String,
    /// Laps driven, fractional, capped at the target.
    pub laps: f64,
    pub damage: u64,
    pub damage_per_lap: f64,
    pub halt: Halt,
    pub steps: u64,
    pub reference_steps: u64,
    pub primary_steps: u64,
    /// Sum of squared steering errors over primary-driven steps.
    pub steer_error_sum: f64,
    pub trajectory: Option<Trajectory>,
}

impl TrackEval {
    pub fn steering_mse(&self) -> Option<f64> {
        (self.primary_steps > 0).then(|| self.steer_error_sum / self.primary_steps as f64)
    }

    pub fn takeover_fraction(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.reference_steps as f64 / self.steps as f64
        }
    }
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub strategy: Strategy,
    pub traffic: usize,
    pub laps_target: u32,
    pub tracks: Vec<TrackEval>,
    /// Mean laps over tracks.
    pub avg_laps: f64,
    /// Total damage over total laps.
    pub damage_per_lap: f64,
    /// Over all primary-driven steps; `None` if the primary never drove.
    pub steering_mse: Option<f64>,
    /// Reference-driven steps over all steps.
    pub takeover_fraction: f64,
    /// Takeover queries (driving) and metric queries (steering comparisons).
    pub ledger: QueryLedger,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str =
        "track,strategy,traffic,laps,damage,damage_per_lap,steering_mse,takeover_fraction,halt,steps";

    /// Per-track rows followed by an `all` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for t in &self.tracks {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{:?},{}\n",
                t.track_id,
                self.strategy.as_str(),
                self.traffic,
                t.laps,
                t.damage,
                t.damage_per_lap,
                opt(t.steering_mse()),
                t.takeover_fraction(),
                t.halt,
                t.steps
            ));
        }
        let damage: u64 = self.tracks.iter().map(|t| t.damage).sum();
        let steps: u64 = self.tracks.iter().map(|t| t.steps).sum();
        s.push_str(&format!(
            "all,{},{},{},{},{},{},{},,{}\n",
            self.strategy.as_str(),
            self.traffic,
            self.avg_laps,
            damage,
            self.damage_per_lap,
            opt(self.steering_mse),
            self.takeover_fraction,
            steps
        ));
        s
    }
}

fn drive_track(bundle: &PolicyBundle, cfg: &EvalConfig, index: usize) -> Result<(TrackEval, QueryLedger)> {
    let track = &cfg.tracks[index];
    let seed = derive_seed(cfg.seed, "eval", index as u64);
    let mut world = WorldState::spawn(Arc::clone(track), cfg.traffic, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "eval-mixture", index as u64));
    let mut ledger = QueryLedger::new();
    let target = f64::from(cfg.laps_target);
    let max_steps =
        (target * track.length() / (MIN_AVERAGE_SPEED_FRACTION * track.speed_limit() * DT)).ceil() as u64;
    let mut trajectory = cfg.record_trajectories.then(|| Trajectory::start(world.clone()));
    let (mut steps, mut reference_steps, mut primary_steps, mut err_sum) = (0u64, 0u64, 0u64, 0.0);
    while world.is_running() && steps < max_steps {
        if world.laps() >= target {
            world.finish();
            break;
        }
        let out = bundle.act(cfg.strategy, &world, None, &mut rng, &mut ledger)?;
        match out.tag {
            ControllerTag::Reference => reference_steps += 1,
            ControllerTag::Primary => {
                primary_steps += 1;
                let r = query_reference(&world, &mut ledger, QueryKind::Metric);
                let d = out.action.steer() - r.steer();
                err_sum += d * d;
            }
        }
        steps += 1;
        world = match trajectory.as_mut() {
            Some(t) => {
                t.push(out.action, out.tag)?;
                t.terminal.clone()
            }
            None => step(&world, out.action)?,
        };
    }
    if world.is_running() && world.laps() >= target {
        world.finish();
    }
    if let Some(t) = trajectory.as_mut() {
        t.terminal = world.clone();
    }
    let laps = world.laps().clamp(0.0, target);
    Ok((
        TrackEval {
            track_id: track.id().to_string(),
            laps,
            damage: world.damage,
            damage_per_lap: world.damage as f64 / laps.max(MIN_LAPS_FOR_DAMAGE),
            halt: world.halted,
            steps,
            reference_steps,
            primary_steps,
            steer_error_sum: err_sum,
            trajectory,
        },
        ledger,
    ))
}

/// Drives `bundle` on every track of `cfg` (tracks in parallel) and aggregates the metrics.
pub fn evaluate(bundle: &PolicyBundle, cfg: &EvalConfig) -> Result<EvalReport> {
    bundle.check(cfg.strategy)?;
    if cfg.tracks.is_empty() {
        return Err(Error::Empty("evaluation tracks"));
    }
    if cfg.laps_target == 0 {
        return Err(Error::InvalidArgument("laps_target must be at least 1".into()));
    }
    let results: Vec<Result<(TrackEval, QueryLedger)>> =
        (0..cfg.tracks.len()).into_par_iter().map(|i| drive_track(bundle, cfg, i)).collect();
    let mut tracks = Vec::with_capacity(results.len());
    let mut ledger = QueryLedger::new();
    for r in results {
        let (t, l) = r?;
        ledger.merge(&l);
        tracks.push(t);
    }
    let n = tracks.len() as f64;
    let avg_laps = tracks.iter().map(|t| t.laps).sum::<f64>() / n;
    let total_laps: f64 = tracks.iter().map(|t| t.laps).sum();
    let damage: u64 = tracks.iter().map(|t| t.damage).sum();
    let primary_steps: u64 = tracks.iter().map(|t| t.primary_steps).sum();
    let steps: u64 = tracks.iter().map(|t| t.steps).sum();
    let reference_steps: u64 = tracks.iter().map(|t| t.reference_steps).sum();
    Ok(EvalReport {
        strategy: cfg.strategy,
        traffic: cfg.traffic,
        laps_target: cfg.laps_target,
        avg_laps,
        damage_per_lap: damage as f64 / total_laps.max(MIN_LAPS_FOR_DAMAGE),
        steering_mse: (primary_steps > 0)
            .then(|| tracks.iter().map(|t| t.steer_error_sum).sum::<f64>() / primary_steps as f64),
        takeover_fraction: if steps == 0 { 0.0 } else { reference_steps as f64 / steps as f64 },
        tracks,
        ledger,
    })
}

/// One example with the safety policy's p(safe).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ranked {
    pub index: usize,
    pub p_safe: f64,
}

/// All examples sorted by ascending p(safe); ties keep input order.
pub fn rank_observations(data: &Dataset, primary: &PrimaryPolicy, safety: &SafetyPolicy) -> Vec<Ranked> {
    let mut ranked: Vec<Ranked> = data
        .examples
        .iter()
        .enumerate()
        .map(|(index, e)| Ranked { index, p_safe: safety.p_safe(&primary.act(&e.observation).features) })
        .collect();
    ranked.sort_by(|a, b| a.p_safe.total_cmp(&b.p_safe));
    ranked
}

/// Writes the `n` least-safe and `n` most-safe examples: rank, group, example
/// index, p(safe), then the observation dump row (864 cells and 12 labels).
pub fn export_ranked<W: Write>(mut out: W, data: &Dataset, ranked: &[Ranked], n: usize) -> Result<usize> {
    writeln!(out, "rank,group,index,p_safe,{}", csv_header())?;
    let n = n.min(ranked.len() / 2);
    let picks = ranked[..n].iter().enumerate().map(|(r, x)| (r, "unsafe", x)).chain(
        ranked[ranked.len() - n..].iter().enumerate().map(|(r, x)| (ranked.len() - n + r, "safe", x)),
    );
    let mut rows = 0;
    for (rank, group, x) in picks {
        let e = &data.examples[x.index];
        writeln!(out, "{rank},{group},{},{},{}", x.index, x.p_safe, csv_row(&e.observation, &e.labels))?;
        rows += 1;
    }
    Ok(rows)
}
