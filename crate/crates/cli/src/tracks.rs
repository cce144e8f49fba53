use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Subcommand;
use safedagger_core::sim::{Track, TrackSet, TrackSpec, CLOSURE_TOLERANCE_M, CLOSURE_TOLERANCE_RAD};

use crate::Invalid;

#[derive(Subcommand, Debug)]
pub enum TracksCommand {
    /// Print id, split, geometry and length of every track.
    List {
        /// Directory of `*.track` files (default: the shipped tracks).
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Check track files and print their loop-closure residuals.
    Validate {
        /// Track files or directories (default: the shipped tracks).
        paths: Vec<PathBuf>,
    },
    /// Draw a track's road outline as text.
    RenderAscii {
        id: String,
        #[arg(long)]
        dir: Option<PathBuf>,
        #[arg(long, default_value_t = 78)]
        width: usize,
        #[arg(long, default_value_t = 36)]
        height: usize,
    },
}

fn track_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Invalid(format!("{} is not a directory", dir.display())).into());
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "track"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Invalid(format!("no *.track files in {}", dir.display())).into());
    }
    Ok(paths)
}

/// File name and text of every track in `dir`, or of the shipped tracks.
pub fn track_sources(dir: Option<&Path>) -> Result<Vec<(String, String)>> {
    match dir {
        None => Ok(TrackSet::builtin_sources().map(|(id, text)| (format!("{id}.track"), text.to_string())).collect()),
        Some(dir) => track_files(dir)?
            .into_iter()
            .map(|p| {
                let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                Ok((name, text))
            })
            .collect(),
    }
}

/// Parses and compiles the tracks named by `sources`.
pub fn build_tracks(sources: &[(String, String)]) -> Result<TrackSet> {
    let specs = sources
        .iter()
        .map(|(name, text)| text.parse::<TrackSpec>().with_context(|| name.clone()))
        .collect::<Result<Vec<_>>>()?;
    let mut ids: Vec<&str> = specs.iter().map(|s| s.id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Invalid(format!("duplicate track id {}", w[0])).into());
    }
    Ok(TrackSet::from_specs(specs)?)
}

pub fn load_tracks(dir: Option<&Path>) -> Result<TrackSet> {
    build_tracks(&track_sources(dir)?)
}

pub fn cmd_tracks(cmd: TracksCommand) -> Result<()> {
    match cmd {
        TracksCommand::List { dir } => list(dir.as_deref()),
        TracksCommand::Validate { paths } => validate(&paths),
        TracksCommand::RenderAscii { id, dir, width, height } => {
            let set = load_tracks(dir.as_deref())?;
            let track = set.all().find(|t| t.id() == id).ok_or_else(|| Invalid(format!("no track with id {id}")))?;
            print!("{}", render_ascii(track, width, height)?);
            Ok(())
        }
    }
}

fn list(dir: Option<&Path>) -> Result<()> {
    let set = load_tracks(dir)?;
    println!("{:<12} {:<5} {:>5} {:>10} {:>12} {:>10} {:>8}", "id", "split", "lanes", "lane_width", "speed_limit", "length", "segments");
    for t in set.all() {
        println!(
            "{:<12} {:<5} {:>5} {:>10.2} {:>12.2} {:>10.1} {:>8}",
            t.id(),
            t.spec().split,
            t.lane_count(),
            t.lane_width(),
            t.speed_limit(),
            t.length(),
            t.spec().segments.len()
        );
    }
    println!("{} tracks ({} train, {} test)", set.train.len() + set.test.len(), set.train.len(), set.test.len());
    Ok(())
}

fn validate(paths: &[PathBuf]) -> Result<()> {
    let mut sources = Vec::new();
    if paths.is_empty() {
        sources = track_sources(None)?;
    }
    for p in paths {
        if p.is_dir() {
            sources.extend(track_sources(Some(p))?);
        } else {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            sources.push((p.display().to_string(), text));
        }
    }
    let mut failures = 0;
    for (name, text) in &sources {
        match text.parse::<TrackSpec>().and_then(|spec| spec.validate().map(|()| spec)) {
            Ok(spec) => {
                let (pos, heading) = spec.closure_residual();
                println!("ok      {name}: id {}, closure residual {pos:.2e} m, {heading:.2e} rad", spec.id);
            }
            Err(e) => {
                failures += 1;
                println!("invalid {name}: {e}");
            }
        }
    }
    println!(
        "{} of {} track files valid (closure tolerance {CLOSURE_TOLERANCE_M:e} m, {CLOSURE_TOLERANCE_RAD:e} rad)",
        sources.len() - failures,
        sources.len()
    );
    if failures > 0 {
        return Err(Invalid(format!("{failures} invalid track file(s)")).into());
    }
    Ok(())
}

/// Road edges as `#`, centreline as `.`, start as `S`.
pub fn render_ascii(track: &Track, width: usize, height: usize) -> Result<String> {
    if width < 4 || height < 4 {
        return Err(Invalid("render size must be at least 4x4".into()).into());
    }
    let n = ((track.length() / 0.5).ceil() as usize).max(64);
    let hw = track.half_width();
    let mut points = Vec::with_capacity(3 * n);
    for i in 0..n {
        let s = track.length() * i as f64 / n as f64;
        for (d, c) in [(-hw, '#'), (hw, '#'), (0.0, '.')] {
            let p = track.world_pose(s, d, 0.0);
            points.push((p.x, p.y, c));
        }
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y, _) in &points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    // Terminal cells are about twice as tall as wide.
    let scale = ((x1 - x0) / (width - 1) as f64).max((y1 - y0) / (2.0 * (height - 1) as f64)).max(1e-9);
    let mut grid = vec![vec![' '; width]; height];
    let mut put = |x: f64, y: f64, c: char| {
        let col = ((x - x0) / scale).round() as usize;
        let row = ((y1 - y) / (2.0 * scale)).round() as usize;
        if let Some(cell) = grid.get_mut(row).and_then(|r| r.get_mut(col)) {
            if *cell == ' ' || c == 'S' || (c == '#' && *cell == '.') {
                *cell = c;
            }
        }
    };
    for &(x, y, c) in &points {
        put(x, y, c);
    }
    let start = track.world_pose(0.0, 0.0, 0.0);
    put(start.x, start.y, 'S');
    let mut out = format!("{} ({}, {:.0} m)\n", track.id(), track.spec().split, track.length());
    for row in grid {
        let line: String = row.into_iter().collect();
        out.push_str(line.trim_end());
        out.push('\n');
    }
    Ok(out)
}
