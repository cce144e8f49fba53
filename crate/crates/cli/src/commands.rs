use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use safedagger_core::eval::{evaluate, export_ranked, rank_observations, EvalConfig};
use safedagger_core::imitation::read_dataset;
use safedagger_core::nn::{read_model, Model};
use safedagger_core::policies::{PolicyBundle, Primary, PrimaryPolicy, Safety, SafetyPolicy, Strategy};

use crate::tracks::load_tracks;
use crate::Invalid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Naive,
    Safe,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Strategy {
        match s {
            StrategyArg::Naive => Strategy::Naive,
            StrategyArg::Safe => Strategy::Safe,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Primary policy model file.
    #[arg(long, required_unless_present = "reference_primary", conflicts_with = "reference_primary")]
    pub primary: Option<PathBuf>,
    /// Let the reference driver act as the primary.
    #[arg(long)]
    pub reference_primary: bool,
    /// Safety policy model file (required by the safe strategy).
    #[arg(long)]
    pub safety: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = StrategyArg::Naive)]
    pub strategy: StrategyArg,
    /// Traffic cars per track; repeat for several conditions.
    #[arg(long, default_values_t = [0])]
    pub traffic: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub laps: u32,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Directory of `*.track` files (default: the shipped tracks).
    #[arg(long)]
    pub tracks_dir: Option<PathBuf>,
    /// Write per-condition CSVs (and trajectories) here.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Also write every track's trajectory (needs --out-dir).
    #[arg(long, requires = "out_dir")]
    pub trajectories: bool,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    /// Run directories written by `safedagger run`.
    #[arg(required = true)]
    pub run_dirs: Vec<PathBuf>,
    /// Output CSV (default: standard output).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RankArgs {
    #[arg(long)]
    pub primary: PathBuf,
    #[arg(long)]
    pub safety: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Examples exported from each end of the ranking.
    #[arg(short, default_value_t = 20)]
    pub n: usize,
    /// Output CSV (default: standard output).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn open(path: &Path, what: &str) -> Result<File> {
    if !path.is_file() {
        return Err(Invalid(format!("{what} file {} not found", path.display())).into());
    }
    File::open(path).with_context(|| format!("opening {}", path.display()))
}

fn load_model(path: &Path, what: &str) -> Result<Model> {
    let f = open(path, what)?;
    read_model(std::io::BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

pub fn load_primary(path: &Path) -> Result<PrimaryPolicy> {
    PrimaryPolicy::from_model(load_model(path, "primary model")?).with_context(|| path.display().to_string())
}

pub fn load_safety(path: &Path) -> Result<SafetyPolicy> {
    SafetyPolicy::from_model(load_model(path, "safety model")?).with_context(|| path.display().to_string())
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        None => Box::new(std::io::stdout().lock()),
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?))
        }
    })
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let primary = match &args.primary {
        Some(p) => Primary::Learned(load_primary(p)?),
        None => Primary::Reference,
    };
    let safety = args.safety.as_deref().map(load_safety).transpose()?.map(Safety::Learned);
    let bundle = PolicyBundle { primary, safety };
    let strategy = Strategy::from(args.strategy);
    bundle.check(strategy)?;

    let set = load_tracks(args.tracks_dir.as_deref())?;
    let tracks = match args.split {
        SplitArg::Train => set.train.clone(),
        SplitArg::Test => set.test.clone(),
        SplitArg::All => set.all().cloned().collect(),
    };
    if let Some(dir) = &args.out_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut traffic = args.traffic.clone();
    traffic.sort_unstable();
    traffic.dedup();
    println!("strategy,traffic,avg_laps,damage_per_lap,steering_mse,takeover_fraction,takeover_queries");
    for t in traffic {
        let mut cfg = EvalConfig::new(tracks.clone(), strategy, t, args.seed);
        cfg.laps_target = args.laps;
        cfg.record_trajectories = args.trajectories;
        let report = evaluate(&bundle, &cfg)?;
        println!(
            "{},{t},{},{},{},{},{}",
            strategy.as_str(),
            report.avg_laps,
            report.damage_per_lap,
            report.steering_mse.map(|v| v.to_string()).unwrap_or_default(),
            report.takeover_fraction,
            report.ledger.takeover_queries()
        );
        if let Some(dir) = &args.out_dir {
            let stem = format!("{}-traffic{t}", strategy.as_str());
            fs::write(dir.join(format!("{stem}.csv")), report.to_csv())?;
            for track in &report.tracks {
                if let Some(traj) = &track.trajectory {
                    let path = dir.join(format!("{stem}-{}.trajectory.csv", track.track_id));
                    let mut w = BufWriter::new(File::create(&path)?);
                    traj.write_csv(&mut w)?;
                    w.flush()?;
                }
            }
        }
    }
    Ok(())
}

/// `key: value` lines of a run's summary.txt.
fn summary_field(summary: &str, key: &str) -> Option<String> {
    summary.lines().find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(": ")).map(|v| v.trim().to_string()))
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn parse(text: &str, path: &Path) -> Result<Table> {
        let mut lines = text.lines();
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| Invalid(format!("{} is empty", path.display())))?
            .split(',')
            .map(str::to_string)
            .collect();
        let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
        if let Some(bad) = rows.iter().position(|r| r.len() != header.len()) {
            return Err(Invalid(format!("{} row {}: expected {} cells", path.display(), bad + 2, header.len())).into());
        }
        Ok(Table { header, rows })
    }

    fn column(&self, name: &str, path: &Path) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Invalid(format!("{} has no column {name}", path.display())).into())
    }
}

fn read_text(path: &Path) -> Result<String> {
    if !path.is_file() {
        return Err(Invalid(format!("{} not found", path.display())).into());
    }
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn sum_column(t: &Table, col: usize, path: &Path) -> Result<u64> {
    t.rows.iter().try_fold(0u64, |acc, r| {
        r[col].parse::<u64>().map(|v| acc + v).map_err(|_| Invalid(format!("{}: bad count {:?}", path.display(), r[col])).into())
    })
}

const COMPARE_COLUMNS: [&str; 14] = [
    "run",
    "regime",
    "seed",
    "iterations",
    "label_queries",
    "label_queries_after_bootstrap",
    "takeover_queries",
    "final_steer_mse_valid",
    "strategy",
    "traffic",
    "avg_laps",
    "damage_per_lap",
    "steering_mse",
    "takeover_fraction",
];

/// One row per final-iteration evaluation condition of each run (or one row
/// with empty metric cells when the run was not evaluated).
fn compare_rows(dir: &Path) -> Result<Vec<Vec<String>>> {
    let summary = read_text(&dir.join("summary.txt"))?;
    let regime = summary_field(&summary, "regime").ok_or_else(|| Invalid(format!("{}: no regime", dir.display())))?;
    let seed = summary_field(&summary, "seed").ok_or_else(|| Invalid(format!("{}: no seed", dir.display())))?;
    let report_path = dir.join("report.csv");
    let report = Table::parse(&read_text(&report_path)?, &report_path)?;
    let it = report.column("iteration", &report_path)?;
    let lq = report.column("label_queries", &report_path)?;
    let tq = report.column("takeover_queries", &report_path)?;
    let mse = report.column("steer_mse_valid", &report_path)?;
    let last = report.rows.last().ok_or_else(|| Invalid(format!("{} has no rows", report_path.display())))?;
    let bootstrap: u64 = report
        .rows
        .iter()
        .filter(|r| r[it] == "0")
        .map(|r| r[lq].parse::<u64>().unwrap_or(0))
        .sum();
    let total = sum_column(&report, lq, &report_path)?;
    let base = vec![
        dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        regime,
        seed,
        last[it].clone(),
        total.to_string(),
        (total - bootstrap).to_string(),
        sum_column(&report, tq, &report_path)?.to_string(),
        last[mse].clone(),
    ];

    let curves_path = dir.join("curves.csv");
    if !curves_path.is_file() {
        let mut row = base;
        row.resize(COMPARE_COLUMNS.len(), String::new());
        return Ok(vec![row]);
    }
    let curves = Table::parse(&read_text(&curves_path)?, &curves_path)?;
    let cols: HashMap<&str, usize> = ["iteration", "strategy", "traffic", "avg_laps", "damage_per_lap", "steering_mse", "takeover_fraction"]
        .into_iter()
        .map(|c| curves.column(c, &curves_path).map(|i| (c, i)))
        .collect::<Result<_>>()?;
    let final_it = &last[it];
    Ok(curves
        .rows
        .iter()
        .filter(|r| &r[cols["iteration"]] == final_it)
        .map(|r| {
            let mut row = base.clone();
            for c in ["strategy", "traffic", "avg_laps", "damage_per_lap", "steering_mse", "takeover_fraction"] {
                row.push(r[cols[c]].clone());
            }
            row
        })
        .collect())
}

pub fn cmd_compare(args: &CompareArgs) -> Result<()> {
    let mut rows = Vec::new();
    for dir in &args.run_dirs {
        if !dir.is_dir() {
            return Err(Invalid(format!("{} is not a run directory", dir.display())).into());
        }
        rows.extend(compare_rows(dir)?);
    }
    let mut out = output(args.out.as_deref())?;
    writeln!(out, "{}", COMPARE_COLUMNS.join(","))?;
    for r in rows {
        writeln!(out, "{}", r.join(","))?;
    }
    out.flush()?;
    Ok(())
}

pub fn cmd_rank(args: &RankArgs) -> Result<()> {
    let primary = load_primary(&args.primary)?;
    let safety = load_safety(&args.safety)?;
    let data = read_dataset(std::io::BufReader::new(open(&args.dataset, "dataset")?))
        .with_context(|| format!("reading {}", args.dataset.display()))?;
    if data.is_empty() {
        return Err(Invalid(format!("{} holds no examples", args.dataset.display())).into());
    }
    let ranked = rank_observations(&data, &primary, &safety);
    let mut out = output(args.out.as_deref())?;
    let rows = export_ranked(&mut out, &data, &ranked, args.n)?;
    out.flush()?;
    eprintln!("exported {rows} of {} examples", data.len());
    Ok(())
}
