use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use safedagger_core::sim::TrackSet;
use tempfile::TempDir;

const TINY: &str = "\
[imitation]
iterations = 2
initial_size = 150
safety_size = 60
iteration_sizes = [120, 90]
traffic = 4
episode_steps = 300

[train]
max_epochs = 3

[eval]
traffic = [0]
laps = 1
";

fn safedagger(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_safedagger")).args(args).current_dir(cwd).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run_dir(o: &Output) -> PathBuf {
    let out = stdout(o);
    PathBuf::from(out.lines().find_map(|l| l.strip_prefix("run directory: ")).unwrap())
}

fn tiny_run(tmp: &Path, regime: &str, out_dir: &str) -> PathBuf {
    fs::write(tmp.join("tiny.toml"), TINY).unwrap();
    let o = safedagger(&["run", "--regime", regime, "--config", "tiny.toml", "--seed", "5", "--out-dir", out_dir], tmp);
    assert!(o.status.success(), "{}", stderr(&o));
    tmp.join(run_dir(&o))
}

fn files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> =
        fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    names.sort();
    names
}

#[test]
fn tracks_list_shows_the_shipped_split() {
    let tmp = TempDir::new().unwrap();
    let o = safedagger(&["tracks", "list"], tmp.path());
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("10 tracks (7 train, 3 test)"), "{out}");
    assert_eq!(out.lines().filter(|l| l.starts_with("test-")).count(), 3);
}

#[test]
fn validate_flags_an_open_track() {
    let tmp = TempDir::new().unwrap();
    for (id, text) in TrackSet::builtin_sources() {
        fs::write(tmp.path().join(format!("{id}.track")), text).unwrap();
    }
    let ok = safedagger(&["tracks", "validate", "."], tmp.path());
    assert!(ok.status.success(), "{}", stdout(&ok));

    let broken = TrackSet::builtin_sources().find(|(id, _)| *id == "test-01").unwrap().1.replacen("straight 170", "straight 171", 1);
    fs::write(tmp.path().join("test-01.track"), broken).unwrap();
    let bad = safedagger(&["tracks", "validate", "."], tmp.path());
    assert_eq!(bad.status.code(), Some(1));
    assert!(stdout(&bad).contains("invalid test-01.track"), "{}", stdout(&bad));
    // a run over the broken directory is rejected before any work
    fs::write(tmp.path().join("c.toml"), "[tracks]\ndir = \".\"\n").unwrap();
    let run = safedagger(&["run", "--regime", "supervised", "--config", "c.toml"], tmp.path());
    assert_eq!(run.status.code(), Some(1));
    assert!(!tmp.path().join("runs").exists());
}

#[test]
fn render_draws_the_start() {
    let tmp = TempDir::new().unwrap();
    let o = safedagger(&["tracks", "render-ascii", "train-03"], tmp.path());
    assert!(o.status.success());
    assert_eq!(stdout(&o).matches('S').count(), 1);
    assert_eq!(safedagger(&["tracks", "render-ascii", "nope"], tmp.path()).status.code(), Some(1));
}

#[test]
fn safedagger_run_writes_a_complete_and_reproducible_directory() {
    let tmp = TempDir::new().unwrap();
    let a = tiny_run(tmp.path(), "safedagger", "a");
    let b = tiny_run(tmp.path(), "safedagger", "b");

    let models = files(&a.join("models"));
    assert_eq!(models.iter().filter(|m| m.starts_with("primary-")).count(), 3);
    assert_eq!(models.iter().filter(|m| m.starts_with("safety-")).count(), 3);
    let top = files(&a);
    for f in ["config.toml", "config.source.toml", "seed", "inputs.sha256", "report.csv", "summary.txt", "curves.csv"] {
        assert!(top.contains(&f.to_string()), "{f} missing from {top:?}");
    }
    assert!(!top.contains(&"RUNNING".to_string()));
    assert_eq!(fs::read_to_string(a.join("seed")).unwrap().trim(), "5");
    assert_eq!(files(&a.join("plots")).len(), 4);
    assert_eq!(files(&a.join("eval")).len(), 3 * 2);

    for f in ["report.csv", "curves.csv", "inputs.sha256", "config.toml", "models/primary-02.model", "models/safety-02.model", "datasets/train.dataset"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs between reruns");
    }

    // compare reads both runs; rank exports from the final models
    let cmp = safedagger(&["compare", a.to_str().unwrap(), b.to_str().unwrap()], tmp.path());
    assert!(cmp.status.success(), "{}", stderr(&cmp));
    let rows: Vec<String> = stdout(&cmp).lines().skip(1).map(|l| l.split_once(',').unwrap().1.to_string()).collect();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[..2], rows[2..]);

    let rank = safedagger(
        &[
            "rank",
            "--primary",
            a.join("models/primary-02.model").to_str().unwrap(),
            "--safety",
            a.join("models/safety-02.model").to_str().unwrap(),
            "--dataset",
            a.join("datasets/valid.dataset").to_str().unwrap(),
            "-n",
            "4",
        ],
        tmp.path(),
    );
    assert!(rank.status.success(), "{}", stderr(&rank));
    assert_eq!(stdout(&rank).lines().count(), 1 + 8);

    let eval = safedagger(
        &[
            "eval",
            "--primary",
            a.join("models/primary-01.model").to_str().unwrap(),
            "--safety",
            a.join("models/safety-01.model").to_str().unwrap(),
            "--strategy",
            "safe",
            "--laps",
            "1",
        ],
        tmp.path(),
    );
    assert!(eval.status.success(), "{}", stderr(&eval));
    // swapped roles are a validation error
    let swapped = safedagger(&["eval", "--primary", a.join("models/safety-01.model").to_str().unwrap()], tmp.path());
    assert_eq!(swapped.status.code(), Some(1));
}

#[test]
fn dagger_run_has_no_safety_models() {
    let tmp = TempDir::new().unwrap();
    let d = tiny_run(tmp.path(), "dagger", "runs");
    let models = files(&d.join("models"));
    assert_eq!(models, ["primary-00.model", "primary-01.model", "primary-02.model"]);
    let summary = fs::read_to_string(d.join("summary.txt")).unwrap();
    assert!(summary.contains("regime: dagger"));
}

#[test]
fn reference_primary_completes_every_lap() {
    let tmp = TempDir::new().unwrap();
    let o = safedagger(&["eval", "--reference-primary", "--traffic", "0", "--traffic", "6", "--out-dir", "ev", "--trajectories"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let rows: Vec<&str> = out.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    for r in rows {
        let cells: Vec<&str> = r.split(',').collect();
        assert_eq!((cells[2], cells[3]), ("3", "0"), "{r}");
    }
    assert_eq!(files(&tmp.path().join("ev")).len(), 2 * (1 + 3));
}

#[test]
fn safe_strategy_without_a_safety_model_fails() {
    let tmp = TempDir::new().unwrap();
    let o = safedagger(&["eval", "--reference-primary", "--strategy", "safe"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("safety"));
    let missing = safedagger(&["eval", "--primary", "nowhere.model"], tmp.path());
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn bad_configs_exit_with_one() {
    let tmp = TempDir::new().unwrap();
    let cases = [
        ("[imitation]\nvalidation_fraction = 2.0\n", "imitation.validation_fraction"),
        ("[imitation]\niterations = 4\n", "imitation.iteration_sizes"),
        ("[train]\nspeed = 1\n", "speed"),
        ("seed = \"zero\"\n", "seed"),
    ];
    for (text, needle) in cases {
        fs::write(tmp.path().join("bad.toml"), text).unwrap();
        let o = safedagger(&["run", "--regime", "dagger", "--config", "bad.toml"], tmp.path());
        assert_eq!(o.status.code(), Some(1), "{text}");
        assert!(stderr(&o).contains(needle), "{text}: {}", stderr(&o));
    }
    let o = safedagger(&["run", "--regime", "nonsense"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(!tmp.path().join("runs").exists());
}
