use std::sync::Arc;

use safedagger_core::imitation::{
    collect, label_with_reference, make_safety_labels, read_dataset, run_dagger, run_safedagger, run_supervised,
    subset_select, write_dataset, CollectConfig, Collection, Dataset, IterationPlan, Regime,
};
use safedagger_core::nn::{Network, TrainConfig};
use safedagger_core::policies::{
    primary_spec, safety_spec, PolicyBundle, Primary, PrimaryPolicy, QueryLedger, Safety, SafetyPolicy, Strategy,
};
use safedagger_core::sim::{CarState, ControllerTag, Track, TrackSet, WorldState};

fn train_tracks() -> Vec<Arc<Track>> {
    TrackSet::builtin().train
}

type Snapshot = (String, CarState, Vec<CarState>, u64, u64);

fn key(w: &WorldState) -> Snapshot {
    (w.track.id().to_string(), w.ego, w.traffic.clone(), w.time_step, w.damage)
}

fn cfg(n: usize, seed: u64) -> CollectConfig {
    CollectConfig { n_examples: n, traffic: 4, frame_stride: 6, episode_steps: 300, lookahead_steps: 0, seed }
}

fn random_primary(seed: u64) -> PrimaryPolicy {
    PrimaryPolicy::new(Network::init(primary_spec(seed)).unwrap()).unwrap()
}

fn constant_safety(p_safe: f64) -> SafetyPolicy {
    let mut net = Network::zeros(safety_spec(0)).unwrap();
    let n = net.params.len();
    net.params[n - 1] = (p_safe / (1.0 - p_safe)).ln();
    SafetyPolicy::new(net, 0.0025).unwrap()
}

fn reference_collection(n: usize, seed: u64, ledger: &mut QueryLedger) -> Collection {
    let bundle = PolicyBundle { primary: Primary::Reference, safety: None };
    collect(&bundle, Strategy::Reference, &train_tracks(), &cfg(n, seed), ledger).unwrap()
}

fn tiny_plan(seed: u64) -> IterationPlan {
    IterationPlan {
        iterations: 2,
        initial_size: 150,
        safety_size: 60,
        iteration_sizes: vec![120, 90],
        betas: vec![0.0; 2],
        traffic: 4,
        episode_steps: 300,
        train: TrainConfig { max_epochs: 3, ..TrainConfig::default() },
        ..IterationPlan::desk(seed)
    }
}

#[test]
fn reference_collection_is_free_and_reference_tagged() {
    let mut ledger = QueryLedger::new();
    let c = reference_collection(100, 5, &mut ledger);
    assert_eq!(c.states.len(), 100);
    assert!(c.states.iter().all(|s| s.tag == ControllerTag::Reference));
    assert_eq!(ledger.total(), 0);
    assert_eq!(c.takeover_fraction(), 1.0);
    assert_eq!(c.off_road_halts, 0);
}

#[test]
fn collection_is_deterministic() {
    let (mut l1, mut l2) = (QueryLedger::new(), QueryLedger::new());
    let (a, b) = (reference_collection(80, 9, &mut l1), reference_collection(80, 9, &mut l2));
    for (x, y) in a.states.iter().zip(&b.states) {
        assert_eq!(x.observation, y.observation);
        assert_eq!(key(&x.state), key(&y.state));
        assert_eq!((x.episode, x.step, x.tag), (y.episode, y.step, y.tag));
    }
    let c = reference_collection(80, 10, &mut l1);
    assert!(a.states.iter().zip(&c.states).any(|(x, y)| key(&x.state) != key(&y.state)));
}

#[test]
fn always_unsafe_gate_drives_like_the_reference() {
    let mut free = QueryLedger::new();
    let reference = reference_collection(60, 3, &mut free);
    let bundle = PolicyBundle { primary: Primary::Learned(random_primary(1)), safety: Some(Safety::AlwaysUnsafe) };
    let mut ledger = QueryLedger::new();
    let gated = collect(&bundle, Strategy::Safe, &train_tracks(), &cfg(60, 3), &mut ledger).unwrap();
    assert!(gated.states.iter().all(|s| s.tag == ControllerTag::Reference));
    for (x, y) in reference.states.iter().zip(&gated.states) {
        assert_eq!(key(&x.state), key(&y.state));
    }
    assert_eq!(ledger.takeover_queries(), gated.steps);
    assert_eq!(ledger.label_queries(), 0);
}

#[test]
fn naive_collection_makes_no_queries() {
    let bundle = PolicyBundle::naive(random_primary(2));
    let mut ledger = QueryLedger::new();
    let c = collect(&bundle, Strategy::Naive, &train_tracks(), &cfg(40, 4), &mut ledger).unwrap();
    assert!(c.states.iter().all(|s| s.tag == ControllerTag::Primary));
    assert_eq!(ledger.label_queries() + ledger.takeover_queries(), 0);
}

#[test]
fn subset_selection_follows_the_gate() {
    let mut ledger = QueryLedger::new();
    let c = reference_collection(50, 6, &mut ledger);
    let p = random_primary(3);
    assert!(subset_select(&c.states, &p, &constant_safety(0.99)).is_empty());
    assert_eq!(subset_select(&c.states, &p, &constant_safety(0.01)).len(), c.states.len());

    let s = SafetyPolicy::new(Network::init(safety_spec(8)).unwrap(), 0.01).unwrap();
    let picked = subset_select(&c.states, &p, &s);
    let expected: Vec<_> =
        c.states.iter().filter(|x| s.p_safe(&p.act(&x.observation).features) < 0.5).map(|x| key(&x.state)).collect();
    assert_eq!(picked.iter().map(|x| key(&x.state)).collect::<Vec<_>>(), expected);
}

#[test]
fn one_label_query_per_state() {
    let mut ledger = QueryLedger::new();
    let c = reference_collection(70, 7, &mut ledger);
    let examples = label_with_reference(&c.states, 2, &mut ledger);
    assert_eq!(examples.len(), 70);
    assert_eq!(ledger.label_queries(), 70);
    assert!(examples.iter().all(|e| e.source_iteration == 2 && e.lookahead.is_none()));
    assert!(label_with_reference(&[], 0, &mut ledger).is_empty());
    assert_eq!(ledger.label_queries(), 70);
}

#[test]
fn lookahead_snapshots_cost_a_second_query() {
    let bundle = PolicyBundle { primary: Primary::Reference, safety: None };
    let c = collect(
        &bundle,
        Strategy::Reference,
        &train_tracks(),
        &CollectConfig { lookahead_steps: 30, ..cfg(40, 8) },
        &mut QueryLedger::new(),
    )
    .unwrap();
    let with_future = c.states.iter().filter(|s| s.future.is_some()).count();
    assert!(with_future > 30);
    let mut ledger = QueryLedger::new();
    let examples = label_with_reference(&c.states, 0, &mut ledger);
    assert_eq!(ledger.label_queries(), (c.states.len() + with_future) as u64);
    let labels = make_safety_labels(&examples, &random_primary(1), 0.01, 30);
    assert_eq!(labels.len(), with_future);
}

#[test]
fn safety_labels_match_the_threshold() {
    let mut ledger = QueryLedger::new();
    let c = reference_collection(60, 11, &mut ledger);
    let mut examples = label_with_reference(&c.states, 0, &mut ledger);
    let p = random_primary(5);
    let eps: Vec<f64> =
        examples.iter().map(|e| safedagger_core::policies::deviation(p.act(&e.observation).action, e.action)).collect();
    let min = eps.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = eps.iter().cloned().fold(0.0, f64::max);
    assert!(make_safety_labels(&examples, &p, min * 0.5, 0).iter().all(|&(_, l)| l == 0));
    assert!(make_safety_labels(&examples, &p, max * 2.0 + 1e-9, 0).iter().all(|&(_, l)| l == 1));
    let mut sorted = eps.clone();
    sorted.sort_by(f64::total_cmp);
    let mid = make_safety_labels(&examples, &p, sorted[30], 0);
    assert!(mid.iter().any(|&(_, l)| l == 0) && mid.iter().any(|&(_, l)| l == 1));
    for &(i, l) in &mid {
        assert_eq!(l == 1, eps[i] <= sorted[30]);
    }

    for e in &mut examples {
        e.action = p.act(&e.observation).action;
    }
    assert!(make_safety_labels(&examples, &p, 1e-12, 0).iter().all(|&(_, l)| l == 1));
}

#[test]
fn dataset_round_trip_keeps_provenance() {
    let mut ledger = QueryLedger::new();
    let c = reference_collection(30, 12, &mut ledger);
    let mut examples = label_with_reference(&c.states, 0, &mut ledger);
    examples.extend(label_with_reference(&c.states[..5], 3, &mut ledger));
    let data = Dataset::new(examples);
    let mut bytes = Vec::new();
    write_dataset(&mut bytes, &data).unwrap();
    let back = read_dataset(bytes.as_slice()).unwrap();
    assert_eq!(back, data);
    assert_eq!(back.iteration_counts(), vec![(0, 30), (3, 5)]);
    let mut again = Vec::new();
    write_dataset(&mut again, &back).unwrap();
    assert_eq!(again, bytes);

    assert!(read_dataset(&bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    assert!(read_dataset(bad.as_slice()).is_err());
}

#[test]
fn supervised_run_queries_exactly_the_initial_set() {
    let plan = tiny_plan(1);
    let out = run_supervised(&plan, &train_tracks()).unwrap();
    assert_eq!(out.report.regime, Regime::Supervised);
    assert_eq!(out.report.total_label_queries(), plan.initial_size as u64);
    assert_eq!(out.report.ledger.label_queries(), plan.initial_size as u64);
    assert_eq!(out.train.len() + out.valid.len(), plan.initial_size);
    assert_eq!(out.primaries.len(), 1);
}

#[test]
fn dagger_labels_every_kept_example() {
    let plan = tiny_plan(2);
    let out = run_dagger(&plan, &train_tracks()).unwrap();
    assert_eq!(out.primaries.len(), 3);
    for (i, rec) in out.report.records.iter().enumerate().skip(1) {
        assert_eq!(rec.selected, plan.iteration_sizes[i - 1]);
        assert_eq!(rec.label_queries, rec.selected as u64);
        // β = 0 after the bootstrap: the learner drives every step
        assert!(out.batches[i].examples.iter().all(|e| e.tag == ControllerTag::Primary));
        assert_eq!(rec.takeover_queries, 0);
    }
    assert_eq!(out.report.iteration_label_queries(), 210);
}

#[test]
fn safedagger_cost_identity_and_aggregation() {
    let plan = tiny_plan(3);
    let out = run_safedagger(&plan, &train_tracks()).unwrap();
    let r = &out.report;
    assert_eq!(out.primaries.len(), 3);
    assert_eq!(out.safeties.len(), 3);
    assert_eq!(r.records[0].label_queries, (plan.initial_size + plan.safety_size) as u64);
    let mut size = out.batches[0].len();
    for (i, rec) in r.records.iter().enumerate().skip(1) {
        assert_eq!(rec.collected, plan.iteration_sizes[i - 1]);
        assert_eq!(rec.label_queries, rec.selected as u64);
        assert_eq!(out.batches[i].len(), rec.selected);
        assert!(out.batches[i].examples.iter().all(|e| e.source_iteration == i as u32));
        let grown = size + rec.selected;
        assert_eq!(rec.train_size + rec.valid_size, grown);
        size = grown;
        assert!(rec.tau.is_some() && rec.safety_accuracy.is_some());
    }
    assert_eq!(out.train.len() + out.valid.len(), size);
    assert_eq!(r.ledger.label_queries(), r.total_label_queries());
    let c = r.calibration.unwrap();
    assert!(c.safe_fraction >= 0.777 && c.tau > 0.0, "{c:?}");
}

#[test]
fn seeded_reruns_are_identical() {
    let plan = tiny_plan(4);
    let a = run_safedagger(&plan, &train_tracks()).unwrap();
    let b = run_safedagger(&plan, &train_tracks()).unwrap();
    assert_eq!(a.report.to_csv(), b.report.to_csv());
    assert_eq!(a.primaries, b.primaries);
    assert_eq!(a.safeties, b.safeties);
    assert_eq!(a.train, b.train);
}

#[test]
fn reduction_mode_matches_dagger() {
    let plan = tiny_plan(5);
    let dagger = run_dagger(&plan, &train_tracks()).unwrap();
    let reduced = run_safedagger(&IterationPlan { reduce_to_dagger: true, ..plan.clone() }, &train_tracks()).unwrap();
    for i in 0..=plan.iterations {
        assert_eq!(dagger.batches[i].canonical_records(), reduced.batches[i].canonical_records(), "batch {i}");
    }
    assert_eq!(dagger.report.iteration_label_queries(), reduced.report.iteration_label_queries());
    assert_eq!(dagger.primaries, reduced.primaries);
}

#[test]
fn invalid_plans_are_rejected() {
    let tracks = train_tracks();
    let mut plan = tiny_plan(6);
    plan.betas = vec![0.0];
    assert!(run_safedagger(&plan, &tracks).is_err());
    let plan = IterationPlan { dagger_oversample: 0.5, ..tiny_plan(6) };
    assert!(run_dagger(&plan, &tracks).is_err());
    assert!(run_supervised(&tiny_plan(6), &[]).is_err());
}
