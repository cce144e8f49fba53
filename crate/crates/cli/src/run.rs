use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use clap::Args;
use safedagger_core::eval::{evaluate, summarize_run, EvalConfig, IterationEval};
use safedagger_core::imitation::{self, write_dataset, Dataset, Regime, RunOutput};
use safedagger_core::nn::{write_model, Model};
use safedagger_core::policies::{PolicyBundle, Strategy};
use safedagger_core::sim::TrackSet;
use sha2::{Digest, Sha256};

use crate::config::{self, Preset, RunConfig};
use crate::tracks::{build_tracks, track_sources};
use crate::{Invalid, RegimeArg};

#[derive(Args, Debug)]
pub struct RunArgs {
    #[arg(long, value_enum)]
    pub regime: RegimeArg,
    /// TOML file layered over the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config file's preset.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Overrides the config file's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "runs")]
    pub out_dir: PathBuf,
}

pub fn read_config(path: Option<&Path>) -> Result<String> {
    match path {
        None => Ok(String::new()),
        Some(p) => {
            if !p.is_file() {
                return Err(Invalid(format!("config file {} not found", p.display())).into());
            }
            fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))
        }
    }
}

fn unix_time() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn create_run_dir(out: &Path, regime: Regime, seed: u64) -> Result<PathBuf> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let stem = format!("{}-seed{seed}-{}", regime.as_str(), unix_time());
    let mut dir = out.join(&stem);
    let mut n = 1;
    while dir.exists() {
        dir = out.join(format!("{stem}-{n}"));
        n += 1;
    }
    fs::create_dir(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn inputs_digest(resolved: &str, sources: &[(String, String)], regime: Regime) -> String {
    let hex = |bytes: &[u8]| format!("{:x}", Sha256::digest(bytes));
    let mut all = Sha256::new();
    let mut lines = Vec::new();
    all.update(b"regime\0");
    all.update(regime.as_str().as_bytes());
    all.update(b"\0config.toml\0");
    all.update(resolved.as_bytes());
    lines.push(format!("{}  config.toml", hex(resolved.as_bytes())));
    for (name, text) in sources {
        all.update(b"\0");
        all.update(name.as_bytes());
        all.update(b"\0");
        all.update(text.as_bytes());
        lines.push(format!("{}  tracks/{name}", hex(text.as_bytes())));
    }
    let mut out = format!("{:x}  inputs (regime {})\n", all.finalize(), regime.as_str());
    for l in lines {
        out.push_str(&l);
        out.push('\n');
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn save_model(path: &Path, model: &Model) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    write_model(&mut w, model)?;
    w.flush()?;
    Ok(())
}

fn save_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    write_dataset(&mut w, data)?;
    w.flush()?;
    Ok(())
}

fn save_outputs(dir: &Path, out: &RunOutput) -> Result<()> {
    let models = dir.join("models");
    fs::create_dir_all(&models)?;
    for (i, p) in out.primaries.iter().enumerate() {
        save_model(&models.join(format!("primary-{i:02}.model")), &p.to_model())?;
    }
    for (i, s) in out.safeties.iter().enumerate() {
        save_model(&models.join(format!("safety-{i:02}.model")), &s.to_model())?;
    }
    let data = dir.join("datasets");
    fs::create_dir_all(&data)?;
    save_dataset(&data.join("train.dataset"), &out.train)?;
    save_dataset(&data.join("valid.dataset"), &out.valid)?;
    if !out.safety_train.is_empty() || !out.safety_valid.is_empty() {
        save_dataset(&data.join("safety-train.dataset"), &out.safety_train)?;
        save_dataset(&data.join("safety-valid.dataset"), &out.safety_valid)?;
    }
    for (i, b) in out.batches.iter().enumerate() {
        save_dataset(&data.join(format!("batch-{i:02}.dataset")), b)?;
    }
    write_file(&dir.join("report.csv"), &out.report.to_csv())?;
    write_file(&dir.join("summary.txt"), &out.report.summary())?;
    Ok(())
}

/// Evaluates every iteration's policies on the test tracks and writes per-condition
/// CSVs, the metric curves and their plots.
fn evaluate_run(dir: &Path, cfg: &RunConfig, tracks: &TrackSet, out: &RunOutput) -> Result<()> {
    let eval_dir = dir.join("eval");
    let plots = dir.join("plots");
    fs::create_dir_all(&eval_dir)?;
    fs::create_dir_all(&plots)?;
    let mut evals = Vec::new();
    for (i, primary) in out.primaries.iter().enumerate() {
        let mut bundles = vec![(Strategy::Naive, PolicyBundle::naive(primary.clone()))];
        if let Some(safety) = out.safeties.get(i) {
            bundles.push((Strategy::Safe, PolicyBundle::safe(primary.clone(), safety.clone())));
        }
        for (strategy, bundle) in &bundles {
            for &traffic in &cfg.eval.traffic {
                let mut ec = EvalConfig::new(tracks.test.clone(), *strategy, traffic, cfg.eval.seed);
                ec.laps_target = cfg.eval.laps;
                let report = evaluate(bundle, &ec)?;
                let name = format!("iter-{i:02}-{}-traffic{traffic}.csv", strategy.as_str());
                write_file(&eval_dir.join(name), &report.to_csv())?;
                evals.push(IterationEval { iteration: i as u32, report });
            }
        }
    }
    let curves = summarize_run(&evals, &out.report);
    write_file(&dir.join("curves.csv"), &curves.csv)?;
    for (name, svg) in &curves.plots {
        write_file(&plots.join(format!("{name}.svg")), svg)?;
    }
    Ok(())
}

fn execute(dir: &Path, regime: Regime, cfg: &RunConfig, tracks: &TrackSet) -> Result<RunOutput> {
    let out = imitation::run(regime, &cfg.plan, &tracks.train)?;
    save_outputs(dir, &out)?;
    if cfg.eval.enabled {
        evaluate_run(dir, cfg, tracks, &out)?;
    }
    Ok(out)
}

/// Trains one regime and writes the run directory; returns its path.
pub fn cmd_run(args: &RunArgs) -> Result<PathBuf> {
    let source = read_config(args.config.as_deref())?;
    let mut file = config::parse(&source)?;
    if args.preset.is_some() {
        file.preset = args.preset;
    }
    let cfg = RunConfig::resolve(&file, args.seed)?;
    let sources = track_sources(cfg.tracks_dir.as_deref())?;
    let tracks = build_tracks(&sources)?;
    if tracks.train.is_empty() || tracks.test.is_empty() {
        return Err(Invalid("the track set needs at least one train and one test track".into()).into());
    }
    let regime = Regime::from(args.regime);
    let resolved = cfg.to_toml();

    let dir = create_run_dir(&args.out_dir, regime, cfg.plan.seed)?;
    write_file(&dir.join("config.toml"), &resolved)?;
    write_file(&dir.join("config.source.toml"), &source)?;
    write_file(&dir.join("seed"), &format!("{}\n", cfg.plan.seed))?;
    write_file(&dir.join("inputs.sha256"), &inputs_digest(&resolved, &sources, regime))?;
    let running = dir.join("RUNNING");
    write_file(&running, "")?;
    eprintln!("run directory: {}", dir.display());

    match execute(&dir, regime, &cfg, &tracks) {
        Ok(out) => {
            fs::remove_file(&running)?;
            let totals = out.report.ledger.totals();
            println!("regime: {}", regime.as_str());
            println!("seed: {}", cfg.plan.seed);
            println!(
                "label queries: {} (after bootstrap: {})",
                totals.label,
                out.report.iteration_label_queries()
            );
            println!("takeover queries: {}", totals.takeover);
            println!("run directory: {}", dir.display());
            Ok(dir)
        }
        Err(e) => {
            let _ = fs::remove_file(&running);
            let _ = fs::write(dir.join("FAILED"), format!("{e:#}\n"));
            Err(e.context(format!("run in {} failed", dir.display())))
        }
    }
}
