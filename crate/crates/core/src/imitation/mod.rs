//! Supervised learning, DAgger and SafeDAgger over the driving world.
//!
//! All three regimes share a bootstrap: `D_0` is collected with the reference
//! driving, labeled, split into training and validation parts and used to fit
//! `π_0`. Seeds are derived from the run seed and a purpose string, so the
//! bootstrap (and everything else that shares a purpose) is identical across
//! regimes run with the same seed.

mod collect;
mod dataset;
mod report;

use std::sync::Arc;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::nn::{fit, mean_loss, LossKind, LossSpec, LossTerm, Samples, TrainConfig, TrainingHistory};
use crate::policies::{
    calibrate_tau, deviation, primary_spec, safety_input, safety_loss_spec, safety_spec, safety_target, slot,
    supervised_loss_spec, Calibration, PolicyBundle, Primary, PrimaryPolicy, QueryLedger, Safety, SafetyPolicy,
    Strategy, AUX_WEIGHT,
};
use crate::sim::Track;
use crate::{Error, Result};

pub use collect::{
    collect, label_with_reference, make_safety_labels, subset_select, CollectConfig, CollectedState, Collection,
};
pub use dataset::{read_dataset, write_dataset, Dataset, LabeledExample, Lookahead, DATASET_MAGIC, DATASET_VERSION};
pub use report::{IterationRecord, RunReport, REPORT_COLUMNS};

/// Mixes a purpose string and an index into the run seed (FNV-1a then a splitmix64 finaliser).
pub fn derive_seed(seed: u64, purpose: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in purpose.bytes() {
        h = (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = seed ^ h.rotate_left(17) ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    Supervised,
    Dagger,
    SafeDagger,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Supervised => "supervised",
            Regime::Dagger => "dagger",
            Regime::SafeDagger => "safedagger",
        }
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;
    fn from_str(s: &str) -> Result<Regime> {
        match s {
            "supervised" => Ok(Regime::Supervised),
            "dagger" => Ok(Regime::Dagger),
            "safedagger" => Ok(Regime::SafeDagger),
            other => Err(Error::InvalidArgument(format!("unknown regime {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TauRule {
    Fixed(f64),
    /// Calibrate on `π_0`'s deviations over the `D_0` training part.
    Calibrate { target_safe_fraction: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationPlan {
    /// Number of iterations M after the bootstrap.
    pub iterations: usize,
    /// `|D_0|` including its validation part.
    pub initial_size: usize,
    /// `|D_safe|` including its validation part.
    pub safety_size: usize,
    /// Per-iteration collection sizes (DAgger: kept examples; SafeDAgger: states driven
    /// past the safety gate before subset selection).
    pub iteration_sizes: Vec<usize>,
    /// Share of every labeled batch held out for validation.
    pub validation_fraction: f64,
    /// DAgger mixture weights β_1..β_M; β_0 = 1 is the reference-driven bootstrap.
    pub betas: Vec<f64>,
    /// DAgger collects `oversample × size` states per iteration and keeps a uniform sample of `size`.
    pub dagger_oversample: f64,
    pub tau: TauRule,
    pub traffic: usize,
    pub lookahead_steps: usize,
    pub frame_stride: usize,
    pub episode_steps: usize,
    pub aux_weight: f64,
    pub train: TrainConfig,
    pub seed: u64,
    /// SafeDAgger only: the primary always drives and every collected state is
    /// selected, the configuration under which SafeDAgger coincides with DAgger (β_i = 0).
    pub reduce_to_dagger: bool,
}

impl IterationPlan {
    /// Desk-scale defaults: one tenth of the full-scale example counts.
    pub fn desk(seed: u64) -> IterationPlan {
        IterationPlan {
            iterations: 3,
            initial_size: 3000,
            safety_size: 1000,
            iteration_sizes: vec![3000, 3000, 1000],
            validation_fraction: 0.1,
            betas: vec![0.0; 3],
            dagger_oversample: 1.0,
            tau: TauRule::Calibrate { target_safe_fraction: 0.777 },
            traffic: 12,
            lookahead_steps: 0,
            frame_stride: 6,
            episode_steps: 900,
            aux_weight: AUX_WEIGHT,
            train: TrainConfig::default(),
            seed,
            reduce_to_dagger: false,
        }
    }

    /// Full-scale sizes: 30k/10k bootstrap, 30k/30k/10k iterations, 40 cars, 13× DAgger oversampling.
    pub fn full(seed: u64) -> IterationPlan {
        IterationPlan {
            initial_size: 30_000,
            safety_size: 10_000,
            iteration_sizes: vec![30_000, 30_000, 10_000],
            dagger_oversample: 13.0,
            traffic: 40,
            ..IterationPlan::desk(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.iteration_sizes.len() != self.iterations {
            return bad(format!("{} iteration sizes for {} iterations", self.iteration_sizes.len(), self.iterations));
        }
        if self.betas.len() != self.iterations {
            return bad(format!("{} betas for {} iterations", self.betas.len(), self.iterations));
        }
        if self.initial_size < 2 || self.safety_size < 2 || self.iteration_sizes.contains(&0) {
            return bad("dataset sizes must be positive (bootstrap sets at least 2)".into());
        }
        if let Some(b) = self.betas.iter().find(|b| !(0.0..=1.0).contains(*b)) {
            return bad(format!("beta {b} not in [0, 1]"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad(format!("validation_fraction {} not in (0, 1)", self.validation_fraction));
        }
        if !(1.0..).contains(&self.dagger_oversample) {
            return bad(format!("dagger_oversample {} must be at least 1", self.dagger_oversample));
        }
        match self.tau {
            TauRule::Fixed(t) if t.is_nan() || t <= 0.0 => return bad(format!("tau {t} must be positive")),
            TauRule::Calibrate { target_safe_fraction: f } if !(f > 0.0 && f < 1.0) => {
                return bad(format!("target safe fraction {f} not in (0, 1)"))
            }
            _ => {}
        }
        if self.frame_stride == 0 || self.episode_steps == 0 {
            return bad("frame_stride and episode_steps must be positive".into());
        }
        if !(0.0..).contains(&self.aux_weight) {
            return bad(format!("aux_weight {} must be non-negative", self.aux_weight));
        }
        self.train.validate()
    }

    fn collect_config(&self, n_examples: usize, purpose: &str, index: u64) -> CollectConfig {
        CollectConfig {
            n_examples,
            traffic: self.traffic,
            frame_stride: self.frame_stride,
            episode_steps: self.episode_steps,
            lookahead_steps: self.lookahead_steps,
            seed: derive_seed(self.seed, purpose, index),
        }
    }

    fn train_config(&self, purpose: &str, index: u64) -> TrainConfig {
        TrainConfig { shuffle_seed: derive_seed(self.seed, purpose, index), ..self.train.clone() }
    }
}

/// Splits a labeled batch into (training, validation) parts, preserving order within each.
pub fn split_validation(examples: Vec<LabeledExample>, fraction: f64, seed: u64) -> (Dataset, Dataset) {
    let n = examples.len();
    let n_valid = ((n as f64 * fraction).round() as usize).min(n.saturating_sub(1));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_valid = vec![false; n];
    for i in sample(&mut rng, n, n_valid) {
        is_valid[i] = true;
    }
    let (mut train, mut valid) = (Vec::with_capacity(n - n_valid), Vec::with_capacity(n_valid));
    for (e, v) in examples.into_iter().zip(is_valid) {
        if v {
            valid.push(e);
        } else {
            train.push(e);
        }
    }
    (Dataset::new(train), Dataset::new(valid))
}

/// Mean composite loss of `primary` over `data`, plus the pure control error
/// (squared steering error plus squared error of the brake output) and the
/// steering part alone.
pub fn supervised_loss(primary: &PrimaryPolicy, data: &Dataset, aux_weight: f64) -> Result<SupervisedLoss> {
    if data.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let samples = data.primary_samples();
    let composite = mean_loss(&primary.net, &samples, &supervised_loss_spec(aux_weight))?;
    let steer = LossSpec { terms: vec![LossTerm { head: slot::STEER, kind: LossKind::SquaredError, weight: 1.0 }] };
    let steer_mse = mean_loss(&primary.net, &samples, &steer)?;
    let mut control = steer;
    control.terms.push(LossTerm { head: slot::BRAKE, kind: LossKind::SquaredError, weight: 1.0 });
    let control_mse = mean_loss(&primary.net, &samples, &control)?;
    Ok(SupervisedLoss { composite, control_mse, steer_mse })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SupervisedLoss {
    pub composite: f64,
    pub control_mse: f64,
    pub steer_mse: f64,
}

/// Fits a fresh primary on `train`, selecting on `valid`.
pub fn fit_primary(
    train: &Dataset,
    valid: &Dataset,
    init_seed: u64,
    aux_weight: f64,
    cfg: &TrainConfig,
) -> Result<(PrimaryPolicy, TrainingHistory)> {
    let (net, hist) = fit(
        &train.primary_samples(),
        &valid.primary_samples(),
        primary_spec(init_seed),
        &supervised_loss_spec(aux_weight),
        cfg,
    )?;
    Ok((PrimaryPolicy::new(net)?, hist))
}

/// Safety-network samples: primary features in, one-hot optimal label out.
pub fn safety_samples(
    examples: &[LabeledExample],
    primary: &PrimaryPolicy,
    tau: f64,
    lookahead_steps: usize,
) -> (Samples, usize) {
    let labels = make_safety_labels(examples, primary, tau, lookahead_steps);
    let mut s = Samples::new(safety_spec(0).input, 2);
    let mut safe = 0;
    for (i, label) in labels {
        let features = primary.act(&examples[i].observation).features;
        s.push(&safety_input(&features), &safety_target(label)).expect("fixed widths");
        safe += usize::from(label);
    }
    (s, safe)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SafetyFit {
    pub policy: SafetyPolicy,
    pub history: TrainingHistory,
    pub train_size: usize,
    /// Share of safe labels in the training part.
    pub safe_fraction: f64,
    /// Accuracy on the validation part.
    pub valid_accuracy: f64,
}

/// Fits a fresh safety policy against `primary` on recomputed optimal labels.
pub fn fit_safety(
    train: &[LabeledExample],
    valid: &[LabeledExample],
    primary: &PrimaryPolicy,
    tau: f64,
    lookahead_steps: usize,
    init_seed: u64,
    cfg: &TrainConfig,
) -> Result<SafetyFit> {
    let (train_s, safe) = safety_samples(train, primary, tau, lookahead_steps);
    let (valid_s, _) = safety_samples(valid, primary, tau, lookahead_steps);
    let (net, history) = fit(&train_s, &valid_s, safety_spec(init_seed), &safety_loss_spec(), cfg)?;
    let policy = SafetyPolicy::new(net, tau)?;
    let correct = (0..valid_s.len())
        .filter(|&i| {
            let p = policy.net.forward(valid_s.input(i)).expect("fixed widths").outputs[1];
            (p >= 0.5) == (valid_s.target(i)[1] == 1.0)
        })
        .count();
    Ok(SafetyFit {
        policy,
        history,
        train_size: train_s.len(),
        safe_fraction: safe as f64 / train_s.len().max(1) as f64,
        valid_accuracy: correct as f64 / valid_s.len().max(1) as f64,
    })
}

/// Accuracy of `safety` against optimal labels computed for `primary` over `data`.
pub fn safety_accuracy(
    data: &[LabeledExample],
    primary: &PrimaryPolicy,
    safety: &SafetyPolicy,
    lookahead_steps: usize,
) -> Option<f64> {
    let labels = make_safety_labels(data, primary, safety.tau, lookahead_steps);
    if labels.is_empty() {
        return None;
    }
    let correct = labels
        .iter()
        .filter(|(i, label)| safety.classify(&primary.act(&data[*i].observation).features) == *label)
        .count();
    Some(correct as f64 / labels.len() as f64)
}

/// Everything a run produces.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: RunReport,
    /// `π_0 … π_M`.
    pub primaries: Vec<PrimaryPolicy>,
    /// `π_safe,0 … π_safe,M` (SafeDAgger only).
    pub safeties: Vec<SafetyPolicy>,
    /// Final aggregated training and validation parts of `D_M`.
    pub train: Dataset,
    pub valid: Dataset,
    /// `D_safe` (SafeDAgger only), training and validation parts.
    pub safety_train: Dataset,
    pub safety_valid: Dataset,
    /// The labeled batch added at each iteration (index 0: `D_0`).
    pub batches: Vec<Dataset>,
}

struct Bootstrap {
    train: Dataset,
    valid: Dataset,
    collection: Collection,
    label_queries: u64,
}

fn labeled_batch(plan: &IterationPlan, states: &[CollectedState], iteration: u32, purpose: &str, ledger: &mut QueryLedger) -> (Dataset, Dataset, Dataset) {
    let examples = label_with_reference(states, iteration, ledger);
    let all = Dataset::new(examples.clone());
    let (train, valid) = split_validation(examples, plan.validation_fraction, derive_seed(plan.seed, purpose, u64::from(iteration)));
    (all, train, valid)
}

fn reference_bootstrap(
    plan: &IterationPlan,
    tracks: &[Arc<Track>],
    n: usize,
    purpose: &str,
    ledger: &mut QueryLedger,
) -> Result<(Bootstrap, Dataset)> {
    let before = ledger.label_queries();
    let bundle = PolicyBundle { primary: Primary::Reference, safety: None };
    let collection = collect(&bundle, Strategy::Reference, tracks, &plan.collect_config(n, purpose, 0), ledger)?;
    let (all, train, valid) = labeled_batch(plan, &collection.states, 0, &format!("split-{purpose}"), ledger);
    let label_queries = ledger.label_queries() - before;
    Ok((Bootstrap { train, valid, collection, label_queries }, all))
}

fn primary_record(iteration: u32, hist: &TrainingHistory, primary: &PrimaryPolicy, train: &Dataset, valid: &Dataset, plan: &IterationPlan) -> Result<IterationRecord> {
    let loss = supervised_loss(primary, valid, plan.aux_weight)?;
    Ok(IterationRecord {
        iteration,
        train_size: train.len(),
        valid_size: valid.len(),
        primary_epochs: hist.epochs.len(),
        primary_best_valid: hist.best_valid_loss,
        primary_lr_drops: hist.lr_drops(),
        steer_mse_valid: loss.steer_mse,
        control_mse_valid: loss.control_mse,
        ..IterationRecord::default()
    })
}

fn check_tracks(tracks: &[Arc<Track>]) -> Result<()> {
    if tracks.is_empty() {
        Err(Error::Empty("training tracks"))
    } else {
        Ok(())
    }
}

/// Reference-driven `D_0`, one fit.
pub fn run_supervised(plan: &IterationPlan, tracks: &[Arc<Track>]) -> Result<RunOutput> {
    plan.validate()?;
    check_tracks(tracks)?;
    let mut ledger = QueryLedger::new();
    ledger.set_iteration(0);
    let (boot, all) = reference_bootstrap(plan, tracks, plan.initial_size, "d0", &mut ledger)?;
    let (primary, hist) =
        fit_primary(&boot.train, &boot.valid, derive_seed(plan.seed, "init-primary", 0), plan.aux_weight, &plan.train_config("fit-primary", 0))?;
    let mut rec = primary_record(0, &hist, &primary, &boot.train, &boot.valid, plan)?;
    rec.collected = boot.collection.states.len();
    rec.selected = boot.collection.states.len();
    rec.selection_fraction = 1.0;
    rec.label_queries = boot.label_queries;
    rec.collection_steps = boot.collection.steps;
    rec.takeover_fraction = boot.collection.takeover_fraction();
    Ok(RunOutput {
        report: RunReport { regime: Regime::Supervised, seed: plan.seed, records: vec![rec], ledger, calibration: None },
        primaries: vec![primary],
        safeties: vec![],
        train: boot.train,
        valid: boot.valid,
        safety_train: Dataset::default(),
        safety_valid: Dataset::default(),
        batches: vec![all],
    })
}

/// DAgger with per-step mixture collection, uniform down-selection and refits from scratch.
pub fn run_dagger(plan: &IterationPlan, tracks: &[Arc<Track>]) -> Result<RunOutput> {
    let mut out = run_supervised(plan, tracks)?;
    out.report.regime = Regime::Dagger;
    let mut ledger = std::mem::take(&mut out.report.ledger);
    for i in 1..=plan.iterations {
        let it = i as u32;
        ledger.set_iteration(it);
        let kept_size = plan.iteration_sizes[i - 1];
        let raw_size = ((kept_size as f64) * plan.dagger_oversample).round() as usize;
        let bundle = PolicyBundle::naive(out.primaries[i - 1].clone());
        let strategy = Strategy::Mixture { beta: plan.betas[i - 1] };
        let collection = collect(&bundle, strategy, tracks, &plan.collect_config(raw_size, "collect", i as u64), &mut ledger)?;
        let kept: Vec<CollectedState> = if raw_size > kept_size {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(plan.seed, "downselect", i as u64));
            let mut idx = sample(&mut rng, collection.states.len(), kept_size).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|k| collection.states[k].clone()).collect()
        } else {
            collection.states.clone()
        };
        let before = ledger.totals();
        let (batch, train, valid) = labeled_batch(plan, &kept, it, "split", &mut ledger);
        out.train.extend(&train);
        out.valid.extend(&valid);
        let (primary, hist) = fit_primary(
            &out.train,
            &out.valid,
            derive_seed(plan.seed, "init-primary", i as u64),
            plan.aux_weight,
            &plan.train_config("fit-primary", i as u64),
        )?;
        let mut rec = primary_record(it, &hist, &primary, &out.train, &out.valid, plan)?;
        rec.collected = collection.states.len();
        rec.selected = kept.len();
        rec.selection_fraction = kept.len() as f64 / collection.states.len() as f64;
        rec.label_queries = ledger.label_queries() - before.label;
        rec.takeover_queries = ledger.at_iteration(it).takeover;
        rec.collection_steps = collection.steps;
        rec.takeover_fraction = collection.takeover_fraction();
        out.report.records.push(rec);
        out.primaries.push(primary);
        out.batches.push(batch);
    }
    out.report.ledger = ledger;
    Ok(out)
}

/// SafeDAgger: safe-strategy collection, subset selection, aggregation and refits.
pub fn run_safedagger(plan: &IterationPlan, tracks: &[Arc<Track>]) -> Result<RunOutput> {
    let mut out = run_supervised(plan, tracks)?;
    out.report.regime = Regime::SafeDagger;
    let mut ledger = std::mem::take(&mut out.report.ledger);
    ledger.set_iteration(0);
    let (safe_boot, _) = reference_bootstrap(plan, tracks, plan.safety_size, "dsafe", &mut ledger)?;
    out.report.records[0].label_queries += safe_boot.label_queries;

    let calibration = match plan.tau {
        TauRule::Fixed(tau) => {
            let labels = make_safety_labels(&out.train.examples, &out.primaries[0], tau, plan.lookahead_steps);
            let safe = labels.iter().filter(|(_, l)| *l == 1).count();
            Calibration { tau, safe_fraction: safe as f64 / labels.len().max(1) as f64 }
        }
        TauRule::Calibrate { target_safe_fraction } => {
            let deviations = initial_deviations(&out.train, &out.primaries[0], plan.lookahead_steps);
            calibrate_tau(&deviations, target_safe_fraction)?
        }
    };
    out.report.calibration = Some(calibration);
    let tau = calibration.tau;

    let safety_fit = |primary: &PrimaryPolicy, train: &Dataset, valid: &Dataset, i: u64| {
        let mut t = safe_boot.train.examples.clone();
        t.extend_from_slice(&train.examples);
        let mut v = safe_boot.valid.examples.clone();
        v.extend_from_slice(&valid.examples);
        fit_safety(
            &t,
            &v,
            primary,
            tau,
            plan.lookahead_steps,
            derive_seed(plan.seed, "init-safety", i),
            &plan.train_config("fit-safety", i),
        )
    };
    let fit0 = safety_fit(&out.primaries[0], &out.train, &out.valid, 0)?;
    annotate_safety(&mut out.report.records[0], &fit0, tau);
    out.safeties.push(fit0.policy);

    for i in 1..=plan.iterations {
        let it = i as u32;
        ledger.set_iteration(it);
        let (prev_primary, prev_safety) = (out.primaries[i - 1].clone(), out.safeties[i - 1].clone());
        let gate = if plan.reduce_to_dagger { Safety::AlwaysSafe } else { Safety::Learned(prev_safety.clone()) };
        let bundle = PolicyBundle { primary: Primary::Learned(prev_primary.clone()), safety: Some(gate) };
        let cfg = plan.collect_config(plan.iteration_sizes[i - 1], "collect", i as u64);
        let collection = collect(&bundle, Strategy::Safe, tracks, &cfg, &mut ledger)?;
        let selected = if plan.reduce_to_dagger {
            collection.states.clone()
        } else {
            subset_select(&collection.states, &prev_primary, &prev_safety)
        };
        let before = ledger.totals();
        let (batch, train, valid) = labeled_batch(plan, &selected, it, "split", &mut ledger);
        out.train.extend(&train);
        out.valid.extend(&valid);
        let (primary, hist) = fit_primary(
            &out.train,
            &out.valid,
            derive_seed(plan.seed, "init-primary", i as u64),
            plan.aux_weight,
            &plan.train_config("fit-primary", i as u64),
        )?;
        let fit_i = safety_fit(&primary, &out.train, &out.valid, i as u64)?;
        let mut rec = primary_record(it, &hist, &primary, &out.train, &out.valid, plan)?;
        rec.collected = collection.states.len();
        rec.selected = selected.len();
        rec.selection_fraction = selected.len() as f64 / collection.states.len() as f64;
        rec.label_queries = ledger.label_queries() - before.label;
        rec.takeover_queries = ledger.at_iteration(it).takeover;
        rec.collection_steps = collection.steps;
        rec.takeover_fraction = collection.takeover_fraction();
        annotate_safety(&mut rec, &fit_i, tau);
        out.report.records.push(rec);
        out.primaries.push(primary);
        out.safeties.push(fit_i.policy);
        out.batches.push(batch);
    }
    out.safety_train = safe_boot.train;
    out.safety_valid = safe_boot.valid;
    out.report.ledger = ledger;
    Ok(out)
}

fn annotate_safety(rec: &mut IterationRecord, fit: &SafetyFit, tau: f64) {
    rec.tau = Some(tau);
    rec.safe_fraction = Some(fit.safe_fraction);
    rec.safety_accuracy = Some(fit.valid_accuracy);
    rec.safety_epochs = Some(fit.history.epochs.len());
}

/// Deviations of `primary` over `data` (at the lookahead snapshot when `lookahead_steps > 0`).
pub fn initial_deviations(data: &Dataset, primary: &PrimaryPolicy, lookahead_steps: usize) -> Vec<f64> {
    data.examples
        .iter()
        .filter_map(|e| {
            if lookahead_steps == 0 {
                Some(deviation(primary.act(&e.observation).action, e.action))
            } else {
                e.lookahead.as_ref().map(|l| deviation(primary.act(&l.observation).action, l.action))
            }
        })
        .collect()
}

/// Dispatches on the regime.
pub fn run(regime: Regime, plan: &IterationPlan, tracks: &[Arc<Track>]) -> Result<RunOutput> {
    match regime {
        Regime::Supervised => run_supervised(plan, tracks),
        Regime::Dagger => run_dagger(plan, tracks),
        Regime::SafeDagger => run_safedagger(plan, tracks),
    }
}
