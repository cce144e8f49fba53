//! Run configuration: a TOML file layered over a named preset.
//!
//! Every key is optional; missing keys take the preset's value. Unknown keys
//! are rejected. See `configs/desk.toml` for the documented schema.

use std::path::PathBuf;

use anyhow::Result;
use safedagger_core::imitation::{IterationPlan, TauRule};
use safedagger_core::nn::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::Invalid;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// 3000/1000 bootstrap, 3000/3000/1000 iterations, 12 traffic cars
    #[default]
    Desk,
    /// 30000/10000 bootstrap, 30000/30000/10000 iterations, 40 traffic cars
    Full,
}

impl Preset {
    pub fn plan(self, seed: u64) -> IterationPlan {
        match self {
            Preset::Desk => IterationPlan::desk(seed),
            Preset::Full => IterationPlan::full(seed),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub preset: Option<Preset>,
    pub seed: Option<u64>,
    pub tracks: Option<TracksSection>,
    pub imitation: Option<ImitationSection>,
    pub train: Option<TrainSection>,
    pub eval: Option<EvalSection>,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TracksSection {
    /// Directory of `*.track` files replacing the shipped set.
    pub dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ImitationSection {
    pub iterations: Option<usize>,
    pub initial_size: Option<usize>,
    pub safety_size: Option<usize>,
    pub iteration_sizes: Option<Vec<usize>>,
    pub validation_fraction: Option<f64>,
    pub betas: Option<Vec<f64>>,
    pub dagger_oversample: Option<f64>,
    pub tau: Option<f64>,
    pub target_safe_fraction: Option<f64>,
    pub traffic: Option<usize>,
    pub lookahead_steps: Option<usize>,
    pub frame_stride: Option<usize>,
    pub episode_steps: Option<usize>,
    pub aux_weight: Option<f64>,
    pub reduce_to_dagger: Option<bool>,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: Option<usize>,
    pub momentum: Option<f64>,
    pub weight_decay: Option<f64>,
    pub lr: Option<f64>,
    pub lr_drop_factor: Option<f64>,
    pub plateau_patience: Option<usize>,
    pub min_improvement: Option<f64>,
    pub early_stop_ratio: Option<f64>,
    pub max_lr_drops: Option<usize>,
    pub max_epochs: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Evaluate every iteration's policies on the test tracks after training.
    pub enabled: Option<bool>,
    /// Traffic conditions (cars per track); 0 is an empty road.
    pub traffic: Option<Vec<usize>>,
    pub laps: Option<u32>,
    pub seed: Option<u64>,
}

/// Evaluation settings after defaults are applied.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSettings {
    pub enabled: bool,
    pub traffic: Vec<usize>,
    pub laps: u32,
    pub seed: u64,
}

/// A fully resolved configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    pub tracks_dir: Option<PathBuf>,
    pub plan: IterationPlan,
    pub eval: EvalSettings,
}

pub fn parse(text: &str) -> Result<ConfigFile> {
    toml::from_str(text).map_err(|e| Invalid(format!("config: {}", e.to_string().trim_end())).into())
}

macro_rules! set {
    ($errors:ident, $section:literal, $dst:expr, $src:expr, $key:ident, $ok:expr, $why:literal) => {
        if let Some(v) = $src.$key.clone() {
            #[allow(clippy::redundant_closure_call)]
            if ($ok)(&v) {
                $dst = v;
            } else {
                $errors.push(format!("{}.{}: {:?} {}", $section, stringify!($key), v, $why));
            }
        }
    };
}

impl RunConfig {
    /// Applies `file` over its preset; `seed` overrides the file's seed.
    pub fn resolve(file: &ConfigFile, seed: Option<u64>) -> Result<RunConfig> {
        let preset = file.preset.unwrap_or_default();
        let seed = seed.or(file.seed).unwrap_or(0);
        let mut plan = preset.plan(seed);
        let mut eval = EvalSettings { enabled: true, traffic: Vec::new(), laps: 3, seed };
        let mut errors = Vec::new();
        let positive = |v: &usize| *v > 0;
        let unit = |v: &f64| *v > 0.0 && *v < 1.0;

        if let Some(im) = &file.imitation {
            set!(errors, "imitation", plan.iterations, im, iterations, |_: &usize| true, "");
            set!(errors, "imitation", plan.initial_size, im, initial_size, |v: &usize| *v >= 2, "must be at least 2");
            set!(errors, "imitation", plan.safety_size, im, safety_size, |v: &usize| *v >= 2, "must be at least 2");
            set!(errors, "imitation", plan.iteration_sizes, im, iteration_sizes, |v: &Vec<usize>| !v.contains(&0), "must all be positive");
            set!(errors, "imitation", plan.validation_fraction, im, validation_fraction, unit, "must lie in (0, 1)");
            set!(errors, "imitation", plan.betas, im, betas, |v: &Vec<f64>| v.iter().all(|b| (0.0..=1.0).contains(b)), "must all lie in [0, 1]");
            set!(errors, "imitation", plan.dagger_oversample, im, dagger_oversample, |v: &f64| *v >= 1.0, "must be at least 1");
            set!(errors, "imitation", plan.traffic, im, traffic, |_: &usize| true, "");
            set!(errors, "imitation", plan.lookahead_steps, im, lookahead_steps, |_: &usize| true, "");
            set!(errors, "imitation", plan.frame_stride, im, frame_stride, positive, "must be positive");
            set!(errors, "imitation", plan.episode_steps, im, episode_steps, positive, "must be positive");
            set!(errors, "imitation", plan.aux_weight, im, aux_weight, |v: &f64| *v >= 0.0, "must be non-negative");
            set!(errors, "imitation", plan.reduce_to_dagger, im, reduce_to_dagger, |_: &bool| true, "");
            match (im.tau, im.target_safe_fraction) {
                (Some(_), Some(_)) => {
                    errors.push("imitation.tau, imitation.target_safe_fraction: set at most one".into())
                }
                (Some(t), None) if t > 0.0 => plan.tau = TauRule::Fixed(t),
                (Some(t), None) => errors.push(format!("imitation.tau: {t} must be positive")),
                (None, Some(f)) if unit(&f) => plan.tau = TauRule::Calibrate { target_safe_fraction: f },
                (None, Some(f)) => errors.push(format!("imitation.target_safe_fraction: {f} must lie in (0, 1)")),
                (None, None) => {}
            }
            if im.iterations.is_some() && im.betas.is_none() {
                plan.betas = vec![0.0; plan.iterations];
            }
        }
        if plan.iteration_sizes.len() != plan.iterations {
            errors.push(format!(
                "imitation.iteration_sizes: {} entries for {} iterations",
                plan.iteration_sizes.len(),
                plan.iterations
            ));
        }
        if plan.betas.len() != plan.iterations {
            errors.push(format!("imitation.betas: {} entries for {} iterations", plan.betas.len(), plan.iterations));
        }

        if let Some(tr) = &file.train {
            let t: &mut TrainConfig = &mut plan.train;
            set!(errors, "train", t.batch_size, tr, batch_size, positive, "must be positive");
            set!(errors, "train", t.momentum, tr, momentum, |v: &f64| (0.0..1.0).contains(v), "must lie in [0, 1)");
            set!(errors, "train", t.weight_decay, tr, weight_decay, |v: &f64| *v >= 0.0, "must be non-negative");
            set!(errors, "train", t.lr, tr, lr, |v: &f64| *v > 0.0, "must be positive");
            set!(errors, "train", t.lr_drop_factor, tr, lr_drop_factor, |v: &f64| *v > 1.0, "must exceed 1");
            set!(errors, "train", t.plateau_patience, tr, plateau_patience, positive, "must be positive");
            set!(errors, "train", t.min_improvement, tr, min_improvement, |v: &f64| *v >= 0.0, "must be non-negative");
            set!(errors, "train", t.early_stop_ratio, tr, early_stop_ratio, |v: &f64| *v >= 1.0, "must be at least 1");
            set!(errors, "train", t.max_lr_drops, tr, max_lr_drops, |_: &usize| true, "");
            set!(errors, "train", t.max_epochs, tr, max_epochs, positive, "must be positive");
        }

        eval.traffic = vec![0, plan.traffic];
        if let Some(ev) = &file.eval {
            set!(errors, "eval", eval.enabled, ev, enabled, |_: &bool| true, "");
            set!(errors, "eval", eval.traffic, ev, traffic, |v: &Vec<usize>| !v.is_empty(), "must list at least one condition");
            set!(errors, "eval", eval.laps, ev, laps, |v: &u32| *v > 0, "must be positive");
            set!(errors, "eval", eval.seed, ev, seed, |_: &u64| true, "");
        }
        eval.traffic.sort_unstable();
        eval.traffic.dedup();

        if errors.is_empty() {
            if let Err(e) = plan.validate() {
                errors.push(format!("imitation: {e}"));
            }
        }
        if !errors.is_empty() {
            return Err(Invalid(format!("config has {} error(s):\n  {}", errors.len(), errors.join("\n  "))).into());
        }
        let tracks_dir = file.tracks.as_ref().and_then(|t| t.dir.clone());
        Ok(RunConfig { preset, tracks_dir, plan, eval })
    }

    /// The complete configuration with every key spelled out.
    pub fn to_file(&self) -> ConfigFile {
        let p = &self.plan;
        let t = &p.train;
        let (tau, target) = match p.tau {
            TauRule::Fixed(t) => (Some(t), None),
            TauRule::Calibrate { target_safe_fraction } => (None, Some(target_safe_fraction)),
        };
        ConfigFile {
            preset: Some(self.preset),
            seed: Some(p.seed),
            tracks: Some(TracksSection { dir: self.tracks_dir.clone() }),
            imitation: Some(ImitationSection {
                iterations: Some(p.iterations),
                initial_size: Some(p.initial_size),
                safety_size: Some(p.safety_size),
                iteration_sizes: Some(p.iteration_sizes.clone()),
                validation_fraction: Some(p.validation_fraction),
                betas: Some(p.betas.clone()),
                dagger_oversample: Some(p.dagger_oversample),
                tau,
                target_safe_fraction: target,
                traffic: Some(p.traffic),
                lookahead_steps: Some(p.lookahead_steps),
                frame_stride: Some(p.frame_stride),
                episode_steps: Some(p.episode_steps),
                aux_weight: Some(p.aux_weight),
                reduce_to_dagger: Some(p.reduce_to_dagger),
            }),
            train: Some(TrainSection {
                batch_size: Some(t.batch_size),
                momentum: Some(t.momentum),
                weight_decay: Some(t.weight_decay),
                lr: Some(t.lr),
                lr_drop_factor: Some(t.lr_drop_factor),
                plateau_patience: Some(t.plateau_patience),
                min_improvement: Some(t.min_improvement),
                early_stop_ratio: Some(t.early_stop_ratio),
                max_lr_drops: Some(t.max_lr_drops),
                max_epochs: Some(t.max_epochs),
            }),
            eval: Some(EvalSection {
                enabled: Some(self.eval.enabled),
                traffic: Some(self.eval.traffic.clone()),
                laps: Some(self.eval.laps),
                seed: Some(self.eval.seed),
            }),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_file()).expect("config serializes")
    }
}
